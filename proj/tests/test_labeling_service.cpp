#include <doctest.h>

#include <atomic>
#include <thread>

#include "pbrl/error.hpp"
#include "pbrl/harness/experiment.hpp"
#include "pbrl/harness/labeling_service.hpp"

// after Eigen: resolv.h defines _res
#include <httplib.h>

using namespace pbrl;
using namespace pbrl::harness;
using nlohmann::json;

namespace {

experience::SegmentPair grid_pair(const envsim::Environment& env, std::size_t h) {
  experience::ReplayBuffer b(1000, env.spec());
  auto e = envsim::make_env("grid-hazard", 0);
  auto s = e->reset();
  // a loop over the top two rows, clear of the hazards
  const std::size_t moves[] = {envsim::GridHazard::right, envsim::GridHazard::right, envsim::GridHazard::down,
                               envsim::GridHazard::right, envsim::GridHazard::up, envsim::GridHazard::left};
  for (std::size_t t = 0; t < 6; ++t) {
    const auto a = envsim::EnvAction::discrete(moves[t]);
    const auto r = e->step(a);
    b.push(experience::Transition(s, a, r.state, 0.0, r.reward, 0, t));
    s = r.state;
  }
  return {b.segment(0, 0, h), b.segment(0, 6 - h, h)};
}

json post_label(httplib::Client& c, std::uint64_t id, const std::string& body) {
  auto res = c.Post("/queries/" + std::to_string(id) + "/label", body, "application/json");
  REQUIRE(res);
  json out = json::parse(res->body, nullptr, false);
  out["_status"] = res->status;
  return out;
}

struct Served {
  HumanChannel channel;
  std::unique_ptr<envsim::Environment> env = envsim::make_env("grid-hazard", 0);
  LabelingService service{channel, *env};
  int port = service.start("127.0.0.1", 0);
  httplib::Client client{"127.0.0.1", port};
};

}  // namespace

TEST_CASE("choices map to stored labels") {
  CHECK(parse_choice("first") == Choice::first);
  CHECK(parse_choice(to_string(Choice::skip)) == Choice::skip);
  CHECK_THROWS_AS(parse_choice("left"), InputError);
  CHECK(*label_for(Choice::first) == experience::PreferenceLabel::first_preferred());
  CHECK(*label_for(Choice::second) == experience::PreferenceLabel::second_preferred());
  CHECK(*label_for(Choice::equal) == experience::PreferenceLabel::equal());
  CHECK_FALSE(label_for(Choice::skip));
}

TEST_CASE("channel hand-off, conflicts and expiry") {
  auto env = envsim::make_env("grid-hazard", 0);
  HumanChannel ch;
  CHECK_FALSE(ch.next());
  const auto ids = ch.post({grid_pair(*env, 3), grid_pair(*env, 3), grid_pair(*env, 3)});
  REQUIRE(ids.size() == 3);
  CHECK(ch.next()->id == ids[0]);
  ch.submit(ids[1], Choice::second);
  CHECK(ch.next()->id == ids[0]);
  CHECK_THROWS_AS(ch.submit(ids[1], Choice::first), ConflictError);
  CHECK_THROWS_AS(ch.submit(999, Choice::first), NotFoundError);
  std::thread late([&] { ch.submit(ids[0], Choice::skip); });
  late.join();
  const auto answers = ch.wait(ids, std::chrono::milliseconds(20));
  REQUIRE(answers.size() == 2);
  CHECK(answers[0].id == ids[1]);
  CHECK(answers[1].choice == Choice::skip);
  const auto s = ch.status();
  CHECK(s.pending == 0);
  CHECK(s.expired == 1);
  CHECK(s.labeled == 1);
  CHECK(s.skipped == 1);
  CHECK_THROWS_AS(ch.submit(ids[2], Choice::first), NotFoundError);
}

TEST_CASE("the HTTP front serves, labels and reports") {
  Served s;
  auto none = s.client.Get("/queries/next");
  REQUIRE(none);
  CHECK(none->status == 204);
  CHECK(none->get_header_value("Retry-After") == "1");

  const auto ids = s.channel.post({grid_pair(*s.env, 4), grid_pair(*s.env, 2)});
  s.channel.set_progress(3, 10, 100);
  auto next = s.client.Get("/queries/next");
  REQUIRE(next);
  REQUIRE(next->status == 200);
  const json q = json::parse(next->body);
  CHECK(q["schema"] == "trajectory v1");
  CHECK(q["id"] == ids[0]);
  CHECK(q["first"]["length"] == 4);
  CHECK(q["first"]["actions"] == json::array({3, 3, 1, 3}));
  CHECK(q["first"]["cells"][0] == json::array({0, 0}));
  CHECK(q["second"]["cells"][0] == json::array({2, 0}));
  CHECK(q["second"]["actions"] == json::array({1, 3, 0, 2}));
  CHECK(q["env"]["grid"]["width"] == 6);
  CHECK(q["env"]["grid"]["hazards"].size() == 6);
  CHECK(q["env"]["grid"]["actions"] == json::array({"up", "down", "left", "right"}));

  const auto first = post_label(s.client, ids[0], R"({"prefer": "first"})");
  CHECK(first["_status"] == 200);
  CHECK(first["stored"] == json::array({1.0, 0.0}));
  CHECK(post_label(s.client, ids[0], R"({"prefer": "second"})")["_status"] == 409);
  CHECK(post_label(s.client, 4242, R"({"prefer": "first"})")["_status"] == 404);
  CHECK(post_label(s.client, ids[1], R"({"prefer": "sideways"})")["_status"] == 400);
  CHECK(post_label(s.client, ids[1], "not json")["_status"] == 400);
  const auto skip = post_label(s.client, ids[1], R"({"prefer": "skip"})");
  CHECK(skip["_status"] == 200);
  CHECK(skip["stored"].is_null());

  auto status = s.client.Get("/status");
  REQUIRE(status);
  const json st = json::parse(status->body);
  CHECK(st["answered"] == 2);
  CHECK(st["labeled"] == 1);
  CHECK(st["skipped"] == 1);
  CHECK(st["pending"] == 0);
  CHECK(st["session"] == 3);
  CHECK(st["budget_used"] == 10);
  CHECK(st["budget"] == 100);
  s.service.stop();
  CHECK_FALSE(s.client.Get("/status"));
}

TEST_CASE("a human-labeled run stores what the client posted") {
  Served s;
  ExperimentConfig cfg;
  cfg.annotator_kind = AnnotatorKind::human;
  cfg.reward.hidden = 16;
  cfg.reward.ensemble = 2;
  cfg.ssl.train_steps = 10;
  cfg.agent.steps_per_session = 100;
  cfg.schedule.warmup_steps = 500;
  cfg.schedule.segment_length = 5;
  cfg.schedule.budget = 8;
  cfg.schedule.queries_per_session = 4;
  cfg.schedule.relabel_sweeps = 100;
  cfg.schedule.human_timeout_s = 30.0;
  cfg.eval.pairs = 20;
  cfg.eval.episodes = 1;

  // answers first, first, then skip, repeating; skips do not consume budget
  std::atomic<bool> done{false};
  std::atomic<int> posted{0};
  std::thread labeler([&] {
    httplib::Client c("127.0.0.1", s.port);
    while (!done) {
      auto res = c.Get("/queries/next");
      if (!res || res->status != 200) {
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
        continue;
      }
      const auto id = json::parse(res->body)["id"].get<std::uint64_t>();
      const int k = posted++;
      c.Post("/queries/" + std::to_string(id) + "/label",
             k % 3 == 2 ? R"({"prefer": "skip"})" : R"({"prefer": "first"})", "application/json");
    }
  });
  RunOptions opts;
  opts.human = &s.channel;
  const auto r = run_experiment(cfg, opts);
  done = true;
  labeler.join();

  CHECK(r.queries_used == 8);
  CHECK(r.labeled.size() == 8);
  for (std::size_t i = 0; i < r.labeled.size(); ++i) {
    CHECK(r.labeled[i].label == experience::PreferenceLabel::first_preferred());
    CHECK(r.labeled[i].provenance == experience::Provenance::human);
  }
  const auto st = s.channel.status();
  CHECK(st.labeled == 8);
  CHECK(st.skipped == static_cast<std::size_t>(posted.load()) - 8);
  CHECK(st.skipped >= 3);
  CHECK(st.budget_used == 8);
}
