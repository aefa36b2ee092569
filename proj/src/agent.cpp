#include "pbrl/agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pbrl/error.hpp"

namespace pbrl::agent {

using envsim::ActionKind;
using envsim::EnvAction;
using envsim::Environment;
using experience::Transition;

void AgentConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("agent.epsilon must lie in [0, 1]");
  if (!(q_lr > 0.0 && q_lr <= 1.0)) throw ConfigError("agent.q_lr must lie in (0, 1]");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("agent.gamma must lie in [0, 1)");
}

PolicyTable::PolicyTable(std::size_t states, std::size_t actions)
    : q_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(states), static_cast<Eigen::Index>(actions))) {}

PolicyTable::PolicyTable(Eigen::MatrixXd q) : q_(std::move(q)) {}

std::size_t PolicyTable::greedy(std::size_t state) const {
  Eigen::Index best = 0;
  q_.row(static_cast<Eigen::Index>(state)).maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

PolicyTable make_policy(const Environment& env) {
  return PolicyTable(env.tabular_state_count(), env.tabular_action_count());
}

std::size_t action_index(const Environment& env, const EnvAction& action) {
  if (action.kind == ActionKind::discrete) return action.index;
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < env.tabular_action_count(); ++i) {
    const double d = (env.tabular_action(i).values - action.values).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

namespace {

void q_update(PolicyTable& policy, std::size_t s, std::size_t a, double r, std::size_t s_next,
              bool terminal, const AgentConfig& cfg) {
  const double target =
      terminal ? r / (1.0 - cfg.gamma) : r + cfg.gamma * policy.value(s_next);
  double& q = policy.at(s, a);
  q += cfg.q_lr * (target - q);
}

void replay_one(PolicyTable& policy, const Environment& env, const experience::ReplayBuffer& buffer,
                const AgentConfig& cfg, Rng& rng) {
  const Transition& t = buffer[uniform_index(rng, buffer.size())];
  q_update(policy, env.tabular_state(t.state), action_index(env, t.action), t.learned_reward,
           env.tabular_state(t.next_state), t.next_state.terminal, cfg);
}

// Shared stepping loop. `policy` is null for uniformly random behaviour.
UpdateStats run(PolicyTable* policy, Environment& env, EnvCursor& cursor,
                experience::ReplayBuffer& buffer, const RewardFn& reward_fn, std::size_t steps,
                const AgentConfig& cfg, Rng& rng) {
  UpdateStats stats;
  const std::size_t actions = env.tabular_action_count();
  for (std::size_t i = 0; i < steps; ++i) {
    if (!cursor.started || env.needs_reset()) {
      if (cursor.started) ++cursor.episode;
      cursor.state = env.reset();
      cursor.step_index = 0;
      cursor.started = true;
    }
    const std::size_t s = env.tabular_state(cursor.state);
    std::size_t a = 0;
    if (policy == nullptr || bernoulli(rng, cfg.epsilon)) {
      a = uniform_index(rng, actions);
    } else {
      a = policy->greedy(s);
    }
    const EnvAction action = env.tabular_action(a);
    const envsim::StepResult res = env.step(action);
    const double r = reward_fn(cursor.state, action);
    buffer.push(Transition(cursor.state, action, res.state, r, res.reward, cursor.episode,
                           cursor.step_index));
    if (policy != nullptr) {
      q_update(*policy, s, a, r, env.tabular_state(res.state), res.done, cfg);
      for (std::size_t k = 0; k < cfg.replay_updates; ++k) replay_one(*policy, env, buffer, cfg, rng);
    }
    cursor.state = res.state;
    ++cursor.step_index;
    ++cursor.total_steps;
    ++stats.steps;
    if (res.done || res.truncated) ++stats.episodes_finished;
  }
  return stats;
}

}  // namespace

UpdateStats policy_update(PolicyTable& policy, Environment& env, EnvCursor& cursor,
                          experience::ReplayBuffer& buffer, const RewardFn& reward_fn,
                          std::size_t steps, const AgentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (policy.state_count() != env.tabular_state_count() ||
      policy.action_count() != env.tabular_action_count()) {
    throw InputError("policy table does not match the environment");
  }
  return run(&policy, env, cursor, buffer, reward_fn, steps, cfg, rng);
}

UpdateStats explore(Environment& env, EnvCursor& cursor, experience::ReplayBuffer& buffer,
                    const RewardFn& reward_fn, std::size_t steps, Rng& rng) {
  return run(nullptr, env, cursor, buffer, reward_fn, steps, AgentConfig{}, rng);
}

void replay_sweeps(PolicyTable& policy, const Environment& env,
                   const experience::ReplayBuffer& buffer, std::size_t updates,
                   const AgentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (buffer.size() == 0) return;
  for (std::size_t k = 0; k < updates; ++k) replay_one(policy, env, buffer, cfg, rng);
}

namespace {

EvalMetrics rollouts(const PolicyTable* policy, Environment& env, std::size_t episodes, Rng& rng,
                     double eps) {
  if (episodes == 0) throw InputError("evaluation needs at least one episode");
  EvalMetrics m;
  m.episodes = episodes;
  std::vector<double> returns;
  std::size_t hazard_eps = 0;
  std::size_t successes = 0;
  const std::size_t actions = env.tabular_action_count();
  for (std::size_t e = 0; e < episodes; ++e) {
    envsim::EnvState state = env.reset();
    double ret = 0.0;
    bool hazard = false;
    bool success = false;
    for (;;) {
      std::size_t a = 0;
      if (policy == nullptr || (eps > 0.0 && bernoulli(rng, eps))) {
        a = uniform_index(rng, actions);
      } else {
        a = policy->greedy(env.tabular_state(state));
      }
      const auto res = env.step(env.tabular_action(a));
      ret += res.reward;
      hazard = hazard || res.hazard;
      success = success || res.success;
      state = res.state;
      if (res.done || res.truncated) break;
    }
    returns.push_back(ret);
    hazard_eps += hazard ? 1 : 0;
    successes += success ? 1 : 0;
  }
  const double n = static_cast<double>(episodes);
  double sum = 0.0;
  for (double r : returns) sum += r;
  m.mean_return = sum / n;
  double var = 0.0;
  for (double r : returns) var += (r - m.mean_return) * (r - m.mean_return);
  m.std_return = std::sqrt(var / n);
  m.hazard_rate = static_cast<double>(hazard_eps) / n;
  m.success_rate = static_cast<double>(successes) / n;
  return m;
}

}  // namespace

EvalMetrics evaluate(const PolicyTable& policy, Environment& env, std::size_t episodes, Rng& rng,
                     double eval_epsilon) {
  if (policy.state_count() != env.tabular_state_count() ||
      policy.action_count() != env.tabular_action_count()) {
    throw InputError("policy table does not match the environment");
  }
  return rollouts(&policy, env, episodes, rng, eval_epsilon);
}

EvalMetrics evaluate_random(Environment& env, std::size_t episodes, Rng& rng) {
  return rollouts(nullptr, env, episodes, rng, 1.0);
}

ValueIterationResult value_iteration(const envsim::TabularMdp& mdp, double gamma, double tolerance,
                                     std::size_t max_iterations) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InputError("discount must lie in [0, 1)");
  const auto ns = static_cast<Eigen::Index>(mdp.state_count);
  const auto na = static_cast<Eigen::Index>(mdp.action_count);
  if (mdp.next.size() != mdp.state_count * mdp.action_count ||
      mdp.reward.size() != mdp.next.size() || mdp.terminal.size() != mdp.state_count) {
    throw InputError("inconsistent tabular model");
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(ns);
  Eigen::MatrixXd q(ns, na);
  ValueIterationResult out;
  for (out.iterations = 1; out.iterations <= max_iterations; ++out.iterations) {
    for (Eigen::Index s = 0; s < ns; ++s) {
      for (Eigen::Index a = 0; a < na; ++a) {
        const std::size_t k = static_cast<std::size_t>(s * na + a);
        const std::size_t next = mdp.next[k];
        q(s, a) = mdp.reward[k] + (mdp.terminal[next] ? 0.0 : gamma * v[static_cast<Eigen::Index>(next)]);
      }
    }
    Eigen::VectorXd nv = q.rowwise().maxCoeff();
    for (Eigen::Index s = 0; s < ns; ++s) {
      if (mdp.terminal[static_cast<std::size_t>(s)]) nv[s] = 0.0;
    }
    const double delta = (nv - v).cwiseAbs().maxCoeff();
    v = std::move(nv);
    if (delta < tolerance) break;
  }
  out.values = v;
  out.policy = PolicyTable(q);
  return out;
}

}  // namespace pbrl::agent
