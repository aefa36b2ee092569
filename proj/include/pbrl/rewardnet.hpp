#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "pbrl/envsim.hpp"
#include "pbrl/experience.hpp"
#include "pbrl/mlp.hpp"

namespace pbrl::rewardnet {

using Params = MlpParams<double>;
using Gradient = MlpParams<double>;
using experience::Segment;

// Reward of one (state, action) step. Throws InputError on dimension mismatch.
double reward_forward(const Params& params, const envsim::EnvSpec& spec,
                      const envsim::EnvState& state, const envsim::EnvAction& action);

// Rewards for every column of an input block.
Eigen::RowVectorXd reward_batch(const Params& params, const Eigen::MatrixXd& inputs);

struct PreferenceProb {
  double p_first = 0.5;
  double p_second = 0.5;

  double max() const { return p_first > p_second ? p_first : p_second; }
};

// Bradley-Terry probabilities from two summed rewards, max-subtracted.
PreferenceProb bt_probability(double sum_first, double sum_second);

PreferenceProb preference_prob(const Params& params, const Segment& first, const Segment& second);

// Cross-entropy against a two-component target, with log clamped at 1e-12.
double cross_entropy(const PreferenceProb& p, double y_first, double y_second);

// ---------------------------------------------------------------- objective
//
// Every loss in the library is a weighted sum of two kinds of term over a set
// of segment pairs (already augmented, as network input blocks):
//   cross-entropy   -w [y0 log p1 + y1 log p2]        on pair k
//   consistency      w (p1(a) - p1(b))^2              between pairs a and b
// so one forward/backward pass over all segments gives the exact gradient.

struct PairInput {
  Eigen::MatrixXd first;   // input_dim x H
  Eigen::MatrixXd second;  // input_dim x H, same H
};

struct CrossEntropyTerm {
  std::size_t pair = 0;
  double y_first = 0.0;
  double y_second = 0.0;
  double weight = 1.0;
};

struct ConsistencyTerm {
  std::size_t pair_a = 0;
  std::size_t pair_b = 0;
  double weight = 1.0;
};

struct PairObjective {
  std::vector<PairInput> pairs;
  std::vector<CrossEntropyTerm> cross_entropy;
  std::vector<ConsistencyTerm> consistency;
  double dropout = 0.0;           // hidden-unit drop rate
  std::uint64_t dropout_seed = 0; // masks are a pure function of this seed

  bool empty() const { return cross_entropy.empty() && consistency.empty(); }
  std::size_t add_pair(Eigen::MatrixXd first, Eigen::MatrixXd second);
};

// Predicted probabilities for every pair of the objective (dropout applied).
std::vector<PreferenceProb> objective_predictions(const Params& params, const PairObjective& obj);
double evaluate_objective(const Params& params, const PairObjective& obj);
// Returns the loss and overwrites `grad` with its exact gradient.
double loss_and_gradient(const Params& params, const PairObjective& obj, Gradient& grad);
// Throws InputError for an objective without terms.
Gradient grad_loss(const Params& params, const PairObjective& obj);

// ---------------------------------------------------------------- optimizer

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Params m;
  Params v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const Params& params);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Bias-corrected Adam update. Throws InputError on shape mismatch.
void adam_step(Params& params, const Gradient& grad, AdamState& state, const AdamConfig& cfg);

// ---------------------------------------------------------------- ensemble

struct RewardEnsemble {
  Architecture arch;
  std::vector<Params> members;
  std::vector<AdamState> optimizers;

  // Members initialised from independent child streams of `seed`.
  static RewardEnsemble create(const Architecture& arch, std::size_t count, std::uint64_t seed);

  std::size_t size() const { return members.size(); }
  // Mean of member rewards per input column.
  Eigen::RowVectorXd mean_reward(const Eigen::MatrixXd& inputs) const;

  friend bool operator==(const RewardEnsemble&, const RewardEnsemble&) = default;
};

struct EnsemblePrediction {
  std::vector<PreferenceProb> members;
  PreferenceProb mean;
  double std_first = 0.0;  // population std of p_first across members
};

// Throws ConfigError for an empty ensemble.
EnsemblePrediction ensemble_prob(const RewardEnsemble& ens, const Segment& first,
                                 const Segment& second);
EnsemblePrediction ensemble_prob(const RewardEnsemble& ens, const Eigen::MatrixXd& first_inputs,
                                 const Eigen::MatrixXd& second_inputs);

// `rewardnet v1` text checkpoint with shortest round-trip reals, so loading
// restores every parameter and optimizer moment bit for bit.
void save_checkpoint(const RewardEnsemble& ens, const std::filesystem::path& path);
RewardEnsemble load_checkpoint(const std::filesystem::path& path);

}  // namespace pbrl::rewardnet
