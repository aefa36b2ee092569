#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pbrl/random.hpp"

namespace pbrl::envsim {

struct EnvState {
  Eigen::VectorXd features;
  bool terminal = false;
};

enum class ActionKind { discrete, continuous };

struct EnvAction {
  ActionKind kind = ActionKind::discrete;
  std::size_t index = 0;
  Eigen::VectorXd values;

  static EnvAction discrete(std::size_t index);
  static EnvAction continuous(Eigen::VectorXd values);

  friend bool operator==(const EnvAction& a, const EnvAction& b);
};

struct EnvSpec {
  std::string name;
  std::size_t state_dim = 0;
  ActionKind action_kind = ActionKind::discrete;
  std::size_t action_count = 0;  // discrete envs
  std::size_t action_dim = 0;    // continuous envs
  Eigen::VectorXd state_low;
  Eigen::VectorXd state_high;
  std::size_t max_episode_steps = 0;
  bool has_hazards = false;

  // Width of the action block in reward-model inputs: one-hot for discrete
  // actions, raw values for continuous ones.
  std::size_t action_feature_dim() const {
    return action_kind == ActionKind::discrete ? action_count : action_dim;
  }
  std::size_t input_dim() const { return state_dim + action_feature_dim(); }
};

Eigen::VectorXd action_features(const EnvSpec& spec, const EnvAction& action);
EnvAction action_from_features(const EnvSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& features);

// Throws InputError if the action does not fit the spec.
void validate_action(const EnvSpec& spec, const EnvAction& action);

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;       // true termination (goal reached)
  bool truncated = false;  // time limit hit
  bool hazard = false;     // this step entered a hazard
  bool success = false;
};

// Deterministic r(s, a). Copies share the underlying immutable model.
class GroundTruthReward {
 public:
  using Fn = std::function<double(const EnvState&, const EnvAction&)>;

  GroundTruthReward(EnvSpec spec, Fn fn) : spec_(std::move(spec)), fn_(std::move(fn)) {}

  double operator()(const EnvState& s, const EnvAction& a) const { return fn_(s, a); }
  // Evaluates a column pair as stored in a Segment.
  double operator()(const Eigen::Ref<const Eigen::VectorXd>& state,
                    const Eigen::Ref<const Eigen::VectorXd>& action_feats) const;

  const EnvSpec& spec() const { return spec_; }

 private:
  EnvSpec spec_;
  Fn fn_;
};

// Finite deterministic MDP used by the value-iteration oracle.
struct TabularMdp {
  std::size_t state_count = 0;
  std::size_t action_count = 0;
  std::size_t start_state = 0;
  std::vector<std::size_t> next;      // [s * action_count + a]
  std::vector<double> reward;         // [s * action_count + a]
  std::vector<bool> terminal;         // [s]: absorbing, episode ends on entry
};

struct EnvConfig {
  std::string name = "grid-hazard";
  std::uint64_t seed = 0;
  double hazard_reward = -10.0;
  double goal_reward = 1.0;
  double step_cost = -0.01;
  // Grid only: adds progress_reward * (d(from) - d(to)) with d the Euclidean
  // distance to the goal. Potential-shaped, so optimal behavior is unchanged.
  double progress_reward = 0.0;
  std::size_t max_episode_steps = 0;  // 0 selects the environment default
  // Grid rows top to bottom: 'S' start, 'G' goal, 'H' hazard, '.' free.
  std::vector<std::string> layout;
  double drift = 0.0;  // line-world constant drift per step

  void validate() const;
};

const std::vector<std::string>& default_grid_layout();

class GridHazard;

class Environment {
 public:
  virtual ~Environment() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual EnvState reset() = 0;
  // Throws InputError for an out-of-bounds action and StateError when called
  // after the episode finished (reset required).
  virtual StepResult step(const EnvAction& action) = 0;
  virtual GroundTruthReward ground_truth() const = 0;

  // Discretized view used by the tabular agent.
  virtual std::size_t tabular_state_count() const = 0;
  virtual std::size_t tabular_state(const EnvState& state) const = 0;
  virtual std::size_t tabular_action_count() const = 0;
  virtual EnvAction tabular_action(std::size_t index) const = 0;

  // Exact finite model when the dynamics admit one.
  virtual std::optional<TabularMdp> tabular_mdp() const { return std::nullopt; }
  virtual const GridHazard* as_grid() const { return nullptr; }

  bool needs_reset() const { return needs_reset_; }
  std::size_t elapsed_steps() const { return elapsed_; }

 protected:
  bool needs_reset_ = true;
  std::size_t elapsed_ = 0;
};

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

// 4-connected grid. Entering a hazard costs hazard_reward
// (non-terminal); entering the goal pays goal_reward and ends the episode;
// every other step costs step_cost. Moves into walls leave the agent in place.
class GridHazard final : public Environment {
 public:
  enum Move : std::size_t { up = 0, down = 1, left = 2, right = 3 };
  static constexpr std::size_t kActionCount = 4;

  explicit GridHazard(const EnvConfig& cfg);

  const EnvSpec& spec() const override { return spec_; }
  EnvState reset() override;
  StepResult step(const EnvAction& action) override;
  GroundTruthReward ground_truth() const override;

  std::size_t tabular_state_count() const override { return cells(); }
  std::size_t tabular_state(const EnvState& state) const override;
  std::size_t tabular_action_count() const override { return kActionCount; }
  EnvAction tabular_action(std::size_t index) const override;
  std::optional<TabularMdp> tabular_mdp() const override;
  const GridHazard* as_grid() const override { return this; }

  int width() const { return model_->width; }
  int height() const { return model_->height; }
  std::size_t cells() const { return static_cast<std::size_t>(width() * height()); }
  Cell start() const { return model_->start; }
  Cell goal() const { return model_->goal; }
  bool is_hazard(Cell c) const;
  bool in_bounds(Cell c) const;
  Cell next_cell(Cell from, std::size_t move) const;
  double reward(Cell from, std::size_t move) const;
  EnvState encode(Cell c) const;
  Cell decode(const Eigen::Ref<const Eigen::VectorXd>& features) const;
  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.y * width() + c.x); }
  Cell cell_at(std::size_t index) const;

 private:
  struct Model {
    int width = 0;
    int height = 0;
    Cell start;
    Cell goal;
    std::vector<bool> hazard;
    double hazard_reward = 0;
    double goal_reward = 0;
    double step_cost = 0;
    double progress_reward = 0;
  };
  static Cell next_cell(const Model& m, Cell from, std::size_t move);
  static double reward(const Model& m, Cell from, std::size_t move);
  static EnvState encode(const Model& m, Cell c);
  static Cell decode(const Model& m, const Eigen::Ref<const Eigen::VectorXd>& features);

  std::shared_ptr<const Model> model_;
  EnvSpec spec_;
  Cell current_;
};

// Particle on [-1, 1] moved by a bounded 1-D action; reward is the negative
// distance to a fixed target after the move.
class LineWorld final : public Environment {
 public:
  static constexpr double kStepScale = 0.1;
  static constexpr double kTarget = 0.5;
  static constexpr std::size_t kBins = 21;

  explicit LineWorld(const EnvConfig& cfg);

  const EnvSpec& spec() const override { return spec_; }
  EnvState reset() override;
  StepResult step(const EnvAction& action) override;
  GroundTruthReward ground_truth() const override;

  std::size_t tabular_state_count() const override { return kBins; }
  std::size_t tabular_state(const EnvState& state) const override;
  std::size_t tabular_action_count() const override { return 5; }
  EnvAction tabular_action(std::size_t index) const override;

  // Exposed for tests: the state reached from `position` under `action`.
  double transition(double position, double action) const;

 private:
  EnvSpec spec_;
  double drift_;
  Rng rng_;
  double position_ = 0.0;
};

// Damped 2-D point mass with bounded force; state (px, py, vx, vy).
class PointMass final : public Environment {
 public:
  static constexpr double kDt = 0.1;
  static constexpr double kDamping = 0.9;
  static constexpr double kTargetX = 0.5;
  static constexpr double kTargetY = 0.5;
  static constexpr double kSuccessRadius = 0.1;
  static constexpr std::size_t kPositionBins = 7;
  static constexpr std::size_t kVelocityBins = 3;

  explicit PointMass(const EnvConfig& cfg);

  const EnvSpec& spec() const override { return spec_; }
  EnvState reset() override;
  StepResult step(const EnvAction& action) override;
  GroundTruthReward ground_truth() const override;

  std::size_t tabular_state_count() const override;
  std::size_t tabular_state(const EnvState& state) const override;
  std::size_t tabular_action_count() const override { return 9; }
  EnvAction tabular_action(std::size_t index) const override;

  static Eigen::Vector4d transition(const Eigen::Vector4d& state, const Eigen::Vector2d& force);

 private:
  EnvSpec spec_;
  Rng rng_;
  Eigen::Vector4d state_ = Eigen::Vector4d::Zero();
};

std::unique_ptr<Environment> make_env(const EnvConfig& cfg);
std::unique_ptr<Environment> make_env(std::string_view name, std::uint64_t seed);

}  // namespace pbrl::envsim
