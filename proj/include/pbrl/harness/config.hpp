#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pbrl/agent.hpp"
#include "pbrl/annotators.hpp"
#include "pbrl/envsim.hpp"
#include "pbrl/sampler.hpp"
#include "pbrl/ssl.hpp"

namespace pbrl::harness {

enum class AnnotatorKind { oracle, noisy, human };

AnnotatorKind parse_annotator_kind(std::string_view name);
std::string to_string(AnnotatorKind kind);

struct RewardConfig {
  std::size_t layers = 2;
  std::size_t hidden = 64;
  double lr = 3e-4;
  std::size_t ensemble = 3;
};

struct SamplerConfig {
  sampler::Scheme scheme = sampler::Scheme::disagreement;
  std::size_t candidates_per_query = 10;
  bool first_uniform = true;  // the first session samples uniformly
};

struct ScheduleConfig {
  std::size_t warmup_steps = 2000;      // random exploration before the first session
  std::size_t queries_per_session = 10; // M
  std::size_t budget = 100;             // total human/oracle queries
  std::size_t total_steps = 0;          // policy steps after warmup; 0 = until budget is spent
  std::size_t segment_length = 50;
  std::size_t buffer_capacity = 100000;
  std::size_t relabel_sweeps = 20000;   // replayed Q updates right after each relabel
  double human_timeout_s = 600.0;
  bool skip_counts = false;             // whether a human "skip" consumes budget
};

// Constructed similarity-trap pairs mixed into the unlabeled pool and the
// held-out evaluation set.
struct TrapConfig {
  std::size_t pool = 0;
  double unlabeled_fraction = 0.0;
  std::size_t segment_length = 0;  // 0 = schedule.segment_length
};

struct EvalConfig {
  std::size_t pairs = 500;           // frozen oracle-labeled pairs (ties excluded)
  std::size_t trap_pairs = 0;        // trap items added to the frozen set (two triples each)
  std::size_t episodes = 10;
  std::size_t correlation_samples = 2000;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  envsim::EnvConfig env;
  AnnotatorKind annotator_kind = AnnotatorKind::oracle;
  annotators::AnnotatorConfig annotator;
  RewardConfig reward;
  ssl::SSLConfig ssl;
  std::optional<std::size_t> unlabeled_ratio;  // unset = 10, or 100 once budget >= 1000
  SamplerConfig sampler;
  agent::AgentConfig agent;
  ScheduleConfig schedule;
  TrapConfig traps;
  EvalConfig eval;

  // Throws ConfigError describing the first invalid setting.
  void validate() const;
  // SSL settings with the ratio and optimizer resolved.
  ssl::SSLConfig resolved_ssl() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

// Every dotted key, in print order.
const std::vector<ConfigKey>& config_keys();

// Flat {"dotted.key": value} form. Infinite reals are written as "inf"/"-inf".
nlohmann::json to_json(const ExperimentConfig& cfg);
// Accepts flat dotted keys or nested objects; unknown keys throw ConfigError.
void apply_json(ExperimentConfig& cfg, const nlohmann::json& j);
// Command-line style assignment; the text is read as JSON when it parses,
// else as a string.
void set_key(ExperimentConfig& cfg, std::string_view key, std::string_view text);

ExperimentConfig load_config(const std::filesystem::path& path);
std::string print_config(const ExperimentConfig& cfg);

// Budget / queries-per-session pairs listed for the benchmark suites.
const std::vector<std::pair<std::size_t, std::size_t>>& schedule_presets();
// "1000/100" style preset; throws ConfigError for unknown pairs.
void apply_preset(ExperimentConfig& cfg, std::string_view preset);

}  // namespace pbrl::harness
