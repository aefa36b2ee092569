#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "pbrl/envsim.hpp"
#include "pbrl/experience.hpp"
#include "pbrl/random.hpp"

namespace pbrl::agent {

struct AgentConfig {
  double epsilon = 0.1;              // exploration rate while training
  double q_lr = 0.1;
  double gamma = 0.99;
  std::size_t steps_per_session = 1000;
  std::size_t replay_updates = 4;    // extra buffer updates per environment step

  void validate() const;
};

// Action values over the environment's tabular view.
class PolicyTable {
 public:
  PolicyTable() = default;
  PolicyTable(std::size_t states, std::size_t actions);
  explicit PolicyTable(Eigen::MatrixXd q);

  std::size_t state_count() const { return static_cast<std::size_t>(q_.rows()); }
  std::size_t action_count() const { return static_cast<std::size_t>(q_.cols()); }
  // Lowest index among the maximal values.
  std::size_t greedy(std::size_t state) const;
  double value(std::size_t state) const { return q_.row(static_cast<Eigen::Index>(state)).maxCoeff(); }
  double& at(std::size_t s, std::size_t a) {
    return q_(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  }
  double at(std::size_t s, std::size_t a) const {
    return q_(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  }
  const Eigen::MatrixXd& q() const { return q_; }

  friend bool operator==(const PolicyTable&, const PolicyTable&) = default;

 private:
  Eigen::MatrixXd q_;
};

PolicyTable make_policy(const envsim::Environment& env);

// Where the training loop stands inside the current episode.
struct EnvCursor {
  envsim::EnvState state;
  std::uint64_t episode = 0;
  std::size_t step_index = 0;
  bool started = false;
  std::uint64_t total_steps = 0;
};

using RewardFn = std::function<double(const envsim::EnvState&, const envsim::EnvAction&)>;

struct UpdateStats {
  std::size_t steps = 0;
  std::size_t episodes_finished = 0;
};

// Index of `action` in env.tabular_action(), nearest lattice point for
// continuous actions.
std::size_t action_index(const envsim::Environment& env, const envsim::EnvAction& action);

// Runs `steps` epsilon-greedy environment steps, stores each transition with
// reward_fn's value, and applies Q-learning updates (online plus replayed from
// the buffer). A true terminal bootstraps as an absorbing state that repeats
// its reward, r / (1 - gamma); time-limit truncation bootstraps normally.
UpdateStats policy_update(PolicyTable& policy, envsim::Environment& env, EnvCursor& cursor,
                          experience::ReplayBuffer& buffer, const RewardFn& reward_fn,
                          std::size_t steps, const AgentConfig& cfg, Rng& rng);

// Uniformly random actions, no learning.
UpdateStats explore(envsim::Environment& env, EnvCursor& cursor, experience::ReplayBuffer& buffer,
                    const RewardFn& reward_fn, std::size_t steps, Rng& rng);

// Re-runs Q-learning sweeps over the stored transitions (after relabeling).
void replay_sweeps(PolicyTable& policy, const envsim::Environment& env,
                   const experience::ReplayBuffer& buffer, std::size_t updates,
                   const AgentConfig& cfg, Rng& rng);

struct EvalMetrics {
  double mean_return = 0.0;
  double std_return = 0.0;
  double hazard_rate = 0.0;   // fraction of episodes entering a hazard at least once
  double success_rate = 0.0;
  std::size_t episodes = 0;
};

// Greedy rollouts (epsilon-greedy if eval_epsilon > 0) scored with the
// environment's own reward. Throws InputError for episodes == 0.
EvalMetrics evaluate(const PolicyTable& policy, envsim::Environment& env, std::size_t episodes,
                     Rng& rng, double eval_epsilon = 0.0);

// Uniform random policy on the same rollout protocol.
EvalMetrics evaluate_random(envsim::Environment& env, std::size_t episodes, Rng& rng);

struct ValueIterationResult {
  Eigen::VectorXd values;
  PolicyTable policy;
  std::size_t iterations = 0;
};

// Exact Bellman optimality on a finite model; terminal states are absorbing
// with zero value.
ValueIterationResult value_iteration(const envsim::TabularMdp& mdp, double gamma,
                                     double tolerance = 1e-10, std::size_t max_iterations = 100000);

}  // namespace pbrl::agent
