#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "pbrl/agent.hpp"
#include "pbrl/annotators.hpp"
#include "pbrl/experience.hpp"
#include "pbrl/harness/config.hpp"
#include "pbrl/harness/labeling_service.hpp"
#include "pbrl/harness/metrics.hpp"
#include "pbrl/rewardnet.hpp"

namespace pbrl::harness {

struct RunOptions {
  // metrics.jsonl, timing.jsonl, config.json, reward.ckpt, labeled.prefdata,
  // pseudo.prefdata and policy.json are written here when set.
  std::optional<std::filesystem::path> output_dir;
  HumanChannel* human = nullptr;  // required for annotator.kind = human
  std::function<void(const MetricsRecord&)> on_record;
};

struct ExperimentResult {
  std::vector<MetricsRecord> records;
  rewardnet::RewardEnsemble ensemble;
  agent::PolicyTable policy;
  experience::PreferenceDataset labeled{experience::DatasetRole::labeled};
  experience::PreferenceDataset pseudo{experience::DatasetRole::pseudo};
  std::vector<experience::QueryTriple> eval_set;
  agent::EvalMetrics final_eval;
  std::size_t queries_used = 0;
};

// Warmup, frozen evaluation set, then feedback sessions
//   select -> annotate -> self-train -> relabel -> policy steps -> record
// until the budget is spent and the step limit is reached. Invalid
// configurations throw ConfigError before any work.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

// Oracle-labeled pairs from the buffer, ties excluded.
std::vector<experience::QueryTriple> oracle_eval_pairs(const experience::ReplayBuffer& buffer,
                                                       const envsim::GroundTruthReward& gt,
                                                       std::size_t count, std::size_t segment_length,
                                                       Rng& rng);

// Share of triples whose hard label agrees with the ensemble mean (0.5 counts half).
double preference_accuracy(const rewardnet::RewardEnsemble& ens,
                           const std::vector<experience::QueryTriple>& triples);
double mean_prediction_entropy(const rewardnet::RewardEnsemble& ens,
                               const std::vector<experience::QueryTriple>& triples);

// Ground-truth return of the policy trained on the true reward: the
// value-iteration optimum when the environment has a finite model, else
// Q-learning on the true reward.
double oracle_ceiling(const ExperimentConfig& cfg);
double random_baseline(const ExperimentConfig& cfg);

// Re-evaluates a stored policy (policy.json) on the configured environment.
agent::EvalMetrics evaluate_policy_file(const ExperimentConfig& cfg, const std::filesystem::path& policy,
                                        std::size_t episodes);

void save_policy(const agent::PolicyTable& policy, const std::filesystem::path& path);
agent::PolicyTable load_policy(const std::filesystem::path& path);

}  // namespace pbrl::harness
