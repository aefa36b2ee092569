#include "pbrl/harness/labeling_service.hpp"

#include <algorithm>

#include <httplib.h>

#include "pbrl/error.hpp"

namespace pbrl::harness {

using nlohmann::json;

Choice parse_choice(std::string_view text) {
  if (text == "first") return Choice::first;
  if (text == "second") return Choice::second;
  if (text == "equal") return Choice::equal;
  if (text == "skip") return Choice::skip;
  throw InputError("prefer must be one of first, second, equal, skip");
}

std::string to_string(Choice choice) {
  switch (choice) {
    case Choice::first: return "first";
    case Choice::second: return "second";
    case Choice::equal: return "equal";
    case Choice::skip: return "skip";
  }
  return "?";
}

std::optional<experience::PreferenceLabel> label_for(Choice choice) {
  switch (choice) {
    case Choice::first: return experience::PreferenceLabel::first_preferred();
    case Choice::second: return experience::PreferenceLabel::second_preferred();
    case Choice::equal: return experience::PreferenceLabel::equal();
    case Choice::skip: return std::nullopt;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- channel

std::vector<std::uint64_t> HumanChannel::post(std::vector<experience::SegmentPair> pairs) {
  std::vector<std::uint64_t> ids;
  {
    std::lock_guard lock(mutex_);
    for (auto& p : pairs) {
      ids.push_back(next_id_);
      pending_.push_back({next_id_++, std::move(p)});
    }
  }
  cv_.notify_all();
  return ids;
}

std::optional<HumanChannel::Pending> HumanChannel::next() const {
  std::lock_guard lock(mutex_);
  if (pending_.empty()) return std::nullopt;
  return pending_.front();
}

void HumanChannel::submit(std::uint64_t id, Choice choice) {
  {
    std::lock_guard lock(mutex_);
    if (answered_.count(id) != 0) throw ConflictError("query " + std::to_string(id) + " is already labeled");
    auto it = std::find_if(pending_.begin(), pending_.end(), [&](const Pending& p) { return p.id == id; });
    if (it == pending_.end()) throw NotFoundError("no pending query " + std::to_string(id));
    pending_.erase(it);
    answered_[id] = choice;
    receipts_.push_back({id, choice});
  }
  cv_.notify_all();
}

std::vector<HumanChannel::Answer> HumanChannel::wait(const std::vector<std::uint64_t>& ids,
                                                     std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  const auto all_done = [&] {
    return std::all_of(ids.begin(), ids.end(), [&](std::uint64_t id) { return answered_.count(id) != 0; });
  };
  cv_.wait_for(lock, timeout, all_done);
  for (std::uint64_t id : ids) {
    if (answered_.count(id) != 0) continue;
    auto it = std::find_if(pending_.begin(), pending_.end(), [&](const Pending& p) { return p.id == id; });
    if (it != pending_.end()) pending_.erase(it);
    expired_[id] = true;
    ++progress_.expired;
  }
  std::vector<Answer> out;
  for (const auto& r : receipts_) {
    if (std::find(ids.begin(), ids.end(), r.id) != ids.end()) out.push_back(r);
  }
  return out;
}

void HumanChannel::set_progress(std::size_t session, std::size_t budget_used, std::size_t budget) {
  std::lock_guard lock(mutex_);
  progress_.session = session;
  progress_.budget_used = budget_used;
  progress_.budget = budget;
}

HumanChannel::Status HumanChannel::status() const {
  std::lock_guard lock(mutex_);
  Status s = progress_;
  s.pending = pending_.size();
  s.answered = receipts_.size();
  s.skipped = static_cast<std::size_t>(
      std::count_if(receipts_.begin(), receipts_.end(), [](const Answer& a) { return a.choice == Choice::skip; }));
  s.labeled = s.answered - s.skipped;
  return s;
}

// ---------------------------------------------------------------- payloads

json env_metadata(const envsim::Environment& env) {
  const auto& spec = env.spec();
  json meta{{"name", spec.name},
            {"state_dim", spec.state_dim},
            {"action_kind", spec.action_kind == envsim::ActionKind::discrete ? "discrete" : "continuous"},
            {"action_count", spec.action_count},
            {"action_dim", spec.action_dim},
            {"state_low", std::vector<double>(spec.state_low.data(), spec.state_low.data() + spec.state_low.size())},
            {"state_high", std::vector<double>(spec.state_high.data(), spec.state_high.data() + spec.state_high.size())}};
  if (const auto* g = env.as_grid()) {
    json hazards = json::array();
    for (std::size_t i = 0; i < g->cells(); ++i) {
      const auto c = g->cell_at(i);
      if (g->is_hazard(c)) hazards.push_back({c.x, c.y});
    }
    meta["grid"] = {{"width", g->width()},
                    {"height", g->height()},
                    {"start", {g->start().x, g->start().y}},
                    {"goal", {g->goal().x, g->goal().y}},
                    {"hazards", hazards},
                    {"actions", {"up", "down", "left", "right"}}};
  }
  return meta;
}

namespace {

json segment_json(const experience::Segment& s, const envsim::Environment* env) {
  json states = json::array();
  json actions = json::array();
  json cells = json::array();
  const bool discrete = env == nullptr || env->spec().action_kind == envsim::ActionKind::discrete;
  for (Eigen::Index t = 0; t < s.states.cols(); ++t) {
    const Eigen::VectorXd st = s.states.col(t);
    states.push_back(std::vector<double>(st.data(), st.data() + st.size()));
    const Eigen::VectorXd a = s.actions.col(t);
    if (discrete) {
      Eigen::Index idx = 0;
      a.maxCoeff(&idx);
      actions.push_back(idx);
    } else {
      actions.push_back(std::vector<double>(a.data(), a.data() + a.size()));
    }
    if (env != nullptr && env->as_grid() != nullptr) {
      const auto c = env->as_grid()->decode(st);
      cells.push_back({c.x, c.y});
    }
  }
  json out{{"length", s.length()}, {"states", states}, {"actions", actions}};
  if (!cells.empty()) out["cells"] = cells;
  return out;
}

}  // namespace

json query_payload(const HumanChannel::Pending& q, const json& env_meta, const envsim::Environment* env) {
  return json{{"schema", kTrajectorySchema},
              {"id", q.id},
              {"env", env_meta},
              {"first", segment_json(q.pair.first, env)},
              {"second", segment_json(q.pair.second, env)}};
}

// ---------------------------------------------------------------- server

struct LabelingService::Impl {
  HumanChannel& channel;
  const envsim::Environment& env;
  json meta;
  httplib::Server server;
  std::thread thread;
  bool running = false;

  Impl(HumanChannel& c, const envsim::Environment& e) : channel(c), env(e), meta(env_metadata(e)) {}
};

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

LabelingService::LabelingService(HumanChannel& channel, const envsim::Environment& env,
                                 std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(channel, env)) {
  Impl* self = impl_.get();
  auto& srv = impl_->server;
  srv.Get("/queries/next", [self](const httplib::Request&, httplib::Response& res) {
    const auto q = self->channel.next();
    if (!q) {
      res.status = 204;
      res.set_header("Retry-After", "1");
      return;
    }
    reply(res, 200, query_payload(*q, self->meta, &self->env));
  });
  srv.Post(R"(/queries/(\d+)/label)", [self](const httplib::Request& req, httplib::Response& res) {
    std::uint64_t id = 0;
    try {
      id = std::stoull(req.matches[1].str());
    } catch (const std::exception&) {
      reply(res, 404, {{"error", "unknown query id"}});
      return;
    }
    const json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("prefer") || !body["prefer"].is_string()) {
      reply(res, 400, {{"error", "body must be {\"prefer\": \"first|second|equal|skip\"}"}});
      return;
    }
    try {
      const Choice c = parse_choice(body["prefer"].get<std::string>());
      self->channel.submit(id, c);
      json stored = nullptr;
      if (const auto l = label_for(c)) stored = {l->p_first, l->p_second};
      reply(res, 200, {{"id", id}, {"prefer", to_string(c)}, {"stored", stored}});
    } catch (const InputError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const ConflictError& e) {
      reply(res, 409, {{"error", e.what()}});
    } catch (const NotFoundError& e) {
      reply(res, 404, {{"error", e.what()}});
    }
  });
  srv.Get("/status", [self](const httplib::Request&, httplib::Response& res) {
    const auto s = self->channel.status();
    reply(res, 200,
          {{"pending", s.pending},
           {"answered", s.answered},
           {"labeled", s.labeled},
           {"skipped", s.skipped},
           {"expired", s.expired},
           {"session", s.session},
           {"budget_used", s.budget_used},
           {"budget", s.budget}});
  });
  if (static_dir) {
    if (!srv.set_mount_point("/", static_dir->string())) {
      throw ConfigError("static directory " + static_dir->string() + " does not exist");
    }
  }
}

LabelingService::~LabelingService() { stop(); }

int LabelingService::start(const std::string& host, int port) {
  if (impl_->running) throw StateError("labeling service already running");
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw StateError("cannot bind labeling service to " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  impl_->running = true;
  return bound;
}

void LabelingService::stop() {
  if (!impl_ || !impl_->running) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
  impl_->running = false;
}

}  // namespace pbrl::harness
