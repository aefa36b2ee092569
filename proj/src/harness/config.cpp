#include "pbrl/harness/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "pbrl/error.hpp"

namespace pbrl::harness {

using nlohmann::json;

AnnotatorKind parse_annotator_kind(std::string_view name) {
  if (name == "oracle") return AnnotatorKind::oracle;
  if (name == "noisy") return AnnotatorKind::noisy;
  if (name == "human") return AnnotatorKind::human;
  throw ConfigError("unknown annotator.kind '" + std::string(name) + "'");
}

std::string to_string(AnnotatorKind kind) {
  switch (kind) {
    case AnnotatorKind::oracle: return "oracle";
    case AnnotatorKind::noisy: return "noisy";
    case AnnotatorKind::human: return "human";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  env.validate();
  annotator.validate();
  resolved_ssl().validate();
  agent.validate();
  if (reward.layers == 0 || reward.hidden == 0) throw ConfigError("reward network needs layers and units");
  if (reward.ensemble == 0) throw ConfigError("reward.ensemble must be at least 1");
  if (sampler.candidates_per_query == 0) throw ConfigError("sampler.candidates_per_query must be positive");
  if (schedule.segment_length == 0) throw ConfigError("schedule.segment_length must be positive");
  if (schedule.budget > 0) {
    if (schedule.queries_per_session == 0) throw ConfigError("schedule.queries_per_session must be positive");
    if (schedule.budget < schedule.queries_per_session) {
      throw ConfigError("schedule.budget must be at least schedule.queries_per_session");
    }
  }
  if (schedule.buffer_capacity == 0) throw ConfigError("schedule.buffer_capacity must be positive");
  if (!(schedule.human_timeout_s > 0.0)) throw ConfigError("schedule.human_timeout_s must be positive");
  if (!(traps.unlabeled_fraction >= 0.0 && traps.unlabeled_fraction <= 1.0)) {
    throw ConfigError("traps.unlabeled_fraction must lie in [0, 1]");
  }
  if (traps.unlabeled_fraction > 0.0 && traps.pool == 0) {
    throw ConfigError("traps.unlabeled_fraction needs traps.pool > 0");
  }
  if ((traps.pool > 0 || eval.trap_pairs > 0) && env.name != "grid-hazard") {
    throw ConfigError("trap pairs need the grid-hazard environment");
  }
  if (eval.episodes == 0) throw ConfigError("eval.episodes must be positive");
}

ssl::SSLConfig ExperimentConfig::resolved_ssl() const {
  ssl::SSLConfig out = ssl;
  out.unlabeled_ratio = unlabeled_ratio ? *unlabeled_ratio : ssl::default_unlabeled_ratio(schedule.budget);
  out.optimizer.lr = reward.lr;
  return out;
}

// ---------------------------------------------------------------- registry

namespace {

struct Entry {
  ConfigKey key;
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> set;
};

[[noreturn]] void bad(const std::string& key, const std::string& want) {
  throw ConfigError("config key '" + key + "' expects " + want);
}

json real_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double real_from_json(const std::string& key, const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "+inf" || s == "infinity") return std::numeric_limits<double>::infinity();
    if (s == "-inf" || s == "-infinity") return -std::numeric_limits<double>::infinity();
  }
  bad(key, "a number or \"inf\"/\"-inf\"");
}

std::uint64_t uint_from_json(const std::string& key, const json& j) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  if (j.is_number_float()) {
    const double d = j.get<double>();
    if (d >= 0 && std::floor(d) == d && d < 1.8e19) return static_cast<std::uint64_t>(d);
  }
  bad(key, "a non-negative integer");
}

template <typename Access>
Entry real(std::string name, std::string help, Access access) {
  return {{name, std::move(help)},
          [access](const ExperimentConfig& c) { return real_to_json(access(const_cast<ExperimentConfig&>(c))); },
          [access, name](ExperimentConfig& c, const json& j) { access(c) = real_from_json(name, j); }};
}

template <typename Access>
Entry count(std::string name, std::string help, Access access) {
  return {{name, std::move(help)},
          [access](const ExperimentConfig& c) { return json(access(const_cast<ExperimentConfig&>(c))); },
          [access, name](ExperimentConfig& c, const json& j) {
            using T = std::remove_reference_t<decltype(access(c))>;
            access(c) = static_cast<T>(uint_from_json(name, j));
          }};
}

template <typename Access>
Entry text(std::string name, std::string help, Access access) {
  return {{name, std::move(help)},
          [access](const ExperimentConfig& c) { return json(access(const_cast<ExperimentConfig&>(c))); },
          [access, name](ExperimentConfig& c, const json& j) {
            if (!j.is_string()) bad(name, "a string");
            access(c) = j.get<std::string>();
          }};
}

template <typename Access>
Entry flag(std::string name, std::string help, Access access) {
  return {{name, std::move(help)},
          [access](const ExperimentConfig& c) { return json(access(const_cast<ExperimentConfig&>(c))); },
          [access, name](ExperimentConfig& c, const json& j) {
            if (!j.is_boolean()) bad(name, "true or false");
            access(c) = j.get<bool>();
          }};
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    using C = ExperimentConfig;
    std::vector<Entry> e;
    e.push_back(count("seed", "master seed; every stream derives from it", [](C& c) -> auto& { return c.seed; }));

    e.push_back(text("env.name", "grid-hazard | line-world | point-mass", [](C& c) -> auto& { return c.env.name; }));
    e.push_back(count("env.seed", "environment seed (continuous resets)", [](C& c) -> auto& { return c.env.seed; }));
    e.push_back(real("env.hazard_reward", "reward for entering a hazard cell", [](C& c) -> auto& { return c.env.hazard_reward; }));
    e.push_back(real("env.goal_reward", "reward for entering the goal", [](C& c) -> auto& { return c.env.goal_reward; }));
    e.push_back(real("env.step_cost", "reward of every other grid step", [](C& c) -> auto& { return c.env.step_cost; }));
    e.push_back(real("env.progress_reward", "grid: reward per unit of Euclidean progress toward the goal", [](C& c) -> auto& { return c.env.progress_reward; }));
    e.push_back(count("env.max_episode_steps", "time limit; 0 = environment default", [](C& c) -> auto& { return c.env.max_episode_steps; }));
    e.push_back({{"env.layout", "grid rows (S start, G goal, H hazard, . free); empty = built-in"},
                 [](const C& c) { return json(c.env.layout); },
                 [](C& c, const json& j) {
                   if (!j.is_array()) bad("env.layout", "an array of strings");
                   std::vector<std::string> rows;
                   for (const auto& r : j) {
                     if (!r.is_string()) bad("env.layout", "an array of strings");
                     rows.push_back(r.get<std::string>());
                   }
                   c.env.layout = std::move(rows);
                 }});
    e.push_back(real("env.drift", "line-world drift per step", [](C& c) -> auto& { return c.env.drift; }));

    e.push_back({{"annotator.kind", "oracle | noisy | human"},
                 [](const C& c) { return json(to_string(c.annotator_kind)); },
                 [](C& c, const json& j) {
                   if (!j.is_string()) bad("annotator.kind", "a string");
                   c.annotator_kind = parse_annotator_kind(j.get<std::string>());
                 }});
    e.push_back(real("annotator.beta", "rationality; inf = deterministic", [](C& c) -> auto& { return c.annotator.beta; }));
    e.push_back(real("annotator.gamma", "myopic discount in (0, 1]", [](C& c) -> auto& { return c.annotator.gamma; }));
    e.push_back(real("annotator.epsilon", "mistake probability", [](C& c) -> auto& { return c.annotator.epsilon; }));
    e.push_back(real("annotator.delta_skip", "skip when both returns fall below", [](C& c) -> auto& { return c.annotator.delta_skip; }));
    e.push_back(real("annotator.delta_equal", "equal label when |return gap| is below", [](C& c) -> auto& { return c.annotator.delta_equal; }));

    e.push_back(count("reward.layers", "hidden layers", [](C& c) -> auto& { return c.reward.layers; }));
    e.push_back(count("reward.hidden", "units per hidden layer", [](C& c) -> auto& { return c.reward.hidden; }));
    e.push_back(real("reward.lr", "Adam learning rate", [](C& c) -> auto& { return c.reward.lr; }));
    e.push_back(count("reward.ensemble", "ensemble size", [](C& c) -> auto& { return c.reward.ensemble; }));

    e.push_back({{"ssl.method", "supervised | pl | cr | fm | ns | strapper"},
                 [](const C& c) { return json(ssl::to_string(c.ssl.method)); },
                 [](C& c, const json& j) {
                   if (!j.is_string()) bad("ssl.method", "a string");
                   c.ssl.method = ssl::parse_method(j.get<std::string>());
                 }});
    e.push_back(real("ssl.tau", "confidence threshold for hard pseudo-labels", [](C& c) -> auto& { return c.ssl.tau; }));
    e.push_back(real("ssl.peer_weight", "peer regularization weight alpha", [](C& c) -> auto& { return c.ssl.peer_weight; }));
    e.push_back({{"ssl.unlabeled_ratio", "pseudo-labels per new label; \"auto\" = 10, or 100 at budget >= 1000"},
                 [](const C& c) { return c.unlabeled_ratio ? json(*c.unlabeled_ratio) : json("auto"); },
                 [](C& c, const json& j) {
                   if (j.is_string() && j.get<std::string>() == "auto") {
                     c.unlabeled_ratio.reset();
                     return;
                   }
                   c.unlabeled_ratio = static_cast<std::size_t>(uint_from_json("ssl.unlabeled_ratio", j));
                 }});
    e.push_back(real("ssl.consistency_weight", "CR two-view MSE weight", [](C& c) -> auto& { return c.ssl.consistency_weight; }));
    e.push_back(real("ssl.dropout", "student dropout for ns / strapper", [](C& c) -> auto& { return c.ssl.dropout; }));
    e.push_back(count("ssl.batch_size", "pairs per gradient step", [](C& c) -> auto& { return c.ssl.batch_size; }));
    e.push_back(count("ssl.train_steps", "gradient steps per member per session", [](C& c) -> auto& { return c.ssl.train_steps; }));
    e.push_back(real("ssl.augment.amplitude_low", "amplitude scaling lower bound", [](C& c) -> auto& { return c.ssl.augment.amplitude_low; }));
    e.push_back(real("ssl.augment.amplitude_high", "amplitude scaling upper bound", [](C& c) -> auto& { return c.ssl.augment.amplitude_high; }));
    e.push_back(real("ssl.augment.strong_low", "strong amplitude lower bound (fm)", [](C& c) -> auto& { return c.ssl.augment.strong_low; }));
    e.push_back(real("ssl.augment.strong_high", "strong amplitude upper bound (fm)", [](C& c) -> auto& { return c.ssl.augment.strong_high; }));
    e.push_back(count("ssl.augment.crop_min", "temporal crop minimum length; 0 = H", [](C& c) -> auto& { return c.ssl.augment.crop_min; }));
    e.push_back(count("ssl.augment.crop_max", "temporal crop maximum length; 0 = H", [](C& c) -> auto& { return c.ssl.augment.crop_max; }));

    e.push_back({{"sampler.scheme", "uniform | disagreement"},
                 [](const C& c) { return json(sampler::to_string(c.sampler.scheme)); },
                 [](C& c, const json& j) {
                   if (!j.is_string()) bad("sampler.scheme", "a string");
                   c.sampler.scheme = sampler::parse_scheme(j.get<std::string>());
                 }});
    e.push_back(count("sampler.candidates_per_query", "candidate pairs drawn per selected query", [](C& c) -> auto& { return c.sampler.candidates_per_query; }));
    e.push_back(flag("sampler.first_uniform", "first session samples uniformly", [](C& c) -> auto& { return c.sampler.first_uniform; }));

    e.push_back(real("agent.epsilon", "exploration rate", [](C& c) -> auto& { return c.agent.epsilon; }));
    e.push_back(real("agent.q_lr", "Q-learning rate", [](C& c) -> auto& { return c.agent.q_lr; }));
    e.push_back(real("agent.gamma", "discount", [](C& c) -> auto& { return c.agent.gamma; }));
    e.push_back(count("agent.steps_per_session", "environment steps between feedback sessions", [](C& c) -> auto& { return c.agent.steps_per_session; }));
    e.push_back(count("agent.replay_updates", "replayed Q updates per environment step", [](C& c) -> auto& { return c.agent.replay_updates; }));

    e.push_back(count("schedule.warmup_steps", "random exploration steps before the first session", [](C& c) -> auto& { return c.schedule.warmup_steps; }));
    e.push_back(count("schedule.queries_per_session", "queries per session (M)", [](C& c) -> auto& { return c.schedule.queries_per_session; }));
    e.push_back(count("schedule.budget", "maximum number of queries", [](C& c) -> auto& { return c.schedule.budget; }));
    e.push_back(count("schedule.total_steps", "policy steps after warmup; 0 = until the budget is spent", [](C& c) -> auto& { return c.schedule.total_steps; }));
    e.push_back(count("schedule.segment_length", "segment length H", [](C& c) -> auto& { return c.schedule.segment_length; }));
    e.push_back(count("schedule.buffer_capacity", "replay buffer capacity", [](C& c) -> auto& { return c.schedule.buffer_capacity; }));
    e.push_back(count("schedule.relabel_sweeps", "replayed Q updates after each relabel", [](C& c) -> auto& { return c.schedule.relabel_sweeps; }));
    e.push_back(real("schedule.human_timeout_s", "seconds to wait for human labels per session", [](C& c) -> auto& { return c.schedule.human_timeout_s; }));
    e.push_back(flag("schedule.skip_counts", "human skips consume budget", [](C& c) -> auto& { return c.schedule.skip_counts; }));

    e.push_back(count("traps.pool", "similarity-trap items generated once per run", [](C& c) -> auto& { return c.traps.pool; }));
    e.push_back(real("traps.unlabeled_fraction", "share of unlabeled draws taken from the trap pool", [](C& c) -> auto& { return c.traps.unlabeled_fraction; }));
    e.push_back(count("traps.segment_length", "trap segment length; 0 = schedule.segment_length", [](C& c) -> auto& { return c.traps.segment_length; }));

    e.push_back(count("eval.pairs", "frozen held-out oracle pairs", [](C& c) -> auto& { return c.eval.pairs; }));
    e.push_back(count("eval.trap_pairs", "trap items in the held-out set", [](C& c) -> auto& { return c.eval.trap_pairs; }));
    e.push_back(count("eval.episodes", "greedy evaluation episodes per session", [](C& c) -> auto& { return c.eval.episodes; }));
    e.push_back(count("eval.correlation_samples", "(s, a) samples for the reward rank correlation", [](C& c) -> auto& { return c.eval.correlation_samples; }));
    return e;
  }();
  return entries;
}

const Entry* find_entry(std::string_view key) {
  for (const auto& e : registry()) {
    if (e.key.name == key) return &e;
  }
  return nullptr;
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object() && find_entry(key) == nullptr) {
      flatten(*it, key, out);
    } else {
      out.emplace_back(key, *it);
    }
  }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : registry()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

json to_json(const ExperimentConfig& cfg) {
  json j = json::object();
  for (const auto& e : registry()) j[e.key.name] = e.get(cfg);
  return j;
}

void apply_json(ExperimentConfig& cfg, const json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  std::vector<std::pair<std::string, json>> flat;
  flatten(j, "", flat);
  for (const auto& [key, value] : flat) {
    const Entry* e = find_entry(key);
    if (e == nullptr) throw ConfigError("unknown config key '" + key + "'");
    e->set(cfg, value);
  }
}

void set_key(ExperimentConfig& cfg, std::string_view key, std::string_view text) {
  const Entry* e = find_entry(key);
  if (e == nullptr) throw ConfigError("unknown config key '" + std::string(key) + "'");
  json value = json::parse(text.begin(), text.end(), nullptr, false);
  if (value.is_discarded()) value = std::string(text);
  e->set(cfg, value);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  ExperimentConfig cfg;
  apply_json(cfg, j);
  return cfg;
}

std::string print_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "{\n";
  const auto& entries = registry();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out << "  " << json(entries[i].key.name).dump() << ": " << entries[i].get(cfg).dump()
        << (i + 1 < entries.size() ? "," : "") << "\n";
  }
  out << "}\n";
  return out.str();
}

const std::vector<std::pair<std::size_t, std::size_t>>& schedule_presets() {
  static const std::vector<std::pair<std::size_t, std::size_t>> presets = {
      {100, 10}, {1000, 100}, {400, 10}, {2000, 25}, {4000, 20}, {10000, 50}};
  return presets;
}

void apply_preset(ExperimentConfig& cfg, std::string_view preset) {
  for (const auto& [budget, m] : schedule_presets()) {
    if (preset == std::to_string(budget) + "/" + std::to_string(m)) {
      cfg.schedule.budget = budget;
      cfg.schedule.queries_per_session = m;
      return;
    }
  }
  throw ConfigError("unknown schedule preset '" + std::string(preset) + "'");
}

}  // namespace pbrl::harness
