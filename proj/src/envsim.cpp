#include "pbrl/envsim.hpp"

#include <algorithm>
#include <cmath>

#include "pbrl/error.hpp"

namespace pbrl::envsim {

EnvAction EnvAction::discrete(std::size_t index) {
  EnvAction a;
  a.kind = ActionKind::discrete;
  a.index = index;
  return a;
}

EnvAction EnvAction::continuous(Eigen::VectorXd values) {
  EnvAction a;
  a.kind = ActionKind::continuous;
  a.values = std::move(values);
  return a;
}

bool operator==(const EnvAction& a, const EnvAction& b) {
  if (a.kind != b.kind) return false;
  if (a.kind == ActionKind::discrete) return a.index == b.index;
  return a.values.size() == b.values.size() && a.values == b.values;
}

void validate_action(const EnvSpec& spec, const EnvAction& action) {
  if (action.kind != spec.action_kind) throw InputError(spec.name + ": action kind mismatch");
  if (action.kind == ActionKind::discrete) {
    if (action.index >= spec.action_count) {
      throw InputError(spec.name + ": action index " + std::to_string(action.index) +
                       " out of range");
    }
    return;
  }
  if (static_cast<std::size_t>(action.values.size()) != spec.action_dim) {
    throw InputError(spec.name + ": action dimension mismatch");
  }
  for (Eigen::Index i = 0; i < action.values.size(); ++i) {
    const double v = action.values[i];
    if (!std::isfinite(v) || v < -1.0 || v > 1.0) {
      throw InputError(spec.name + ": continuous action outside [-1, 1]");
    }
  }
}

Eigen::VectorXd action_features(const EnvSpec& spec, const EnvAction& action) {
  validate_action(spec, action);
  if (action.kind == ActionKind::discrete) {
    Eigen::VectorXd onehot = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.action_count));
    onehot[static_cast<Eigen::Index>(action.index)] = 1.0;
    return onehot;
  }
  return action.values;
}

EnvAction action_from_features(const EnvSpec& spec,
                               const Eigen::Ref<const Eigen::VectorXd>& features) {
  if (static_cast<std::size_t>(features.size()) != spec.action_feature_dim()) {
    throw InputError("action feature width mismatch");
  }
  if (spec.action_kind == ActionKind::discrete) {
    Eigen::Index best = 0;
    features.maxCoeff(&best);
    return EnvAction::discrete(static_cast<std::size_t>(best));
  }
  return EnvAction::continuous(features);
}

double GroundTruthReward::operator()(const Eigen::Ref<const Eigen::VectorXd>& state,
                                     const Eigen::Ref<const Eigen::VectorXd>& action_feats) const {
  EnvState s{state, false};
  return fn_(s, action_from_features(spec_, action_feats));
}

void EnvConfig::validate() const {
  if (name != "grid-hazard" && name != "line-world" && name != "point-mass") {
    throw ConfigError("unknown environment '" + name + "'");
  }
  if (!std::isfinite(hazard_reward) || !std::isfinite(goal_reward) || !std::isfinite(step_cost) ||
      !std::isfinite(progress_reward) || !std::isfinite(drift)) {
    throw ConfigError("environment rewards must be finite");
  }
}

const std::vector<std::string>& default_grid_layout() {
  static const std::vector<std::string> layout = {
      "S.....",
      ".H..H.",
      "...H..",
      ".H....",
      "...H.H",
      ".....G",
  };
  return layout;
}

// ---------------------------------------------------------------- grid-hazard

GridHazard::GridHazard(const EnvConfig& cfg) {
  const auto& rows = cfg.layout.empty() ? default_grid_layout() : cfg.layout;
  auto model = std::make_shared<Model>();
  model->height = static_cast<int>(rows.size());
  model->width = rows.empty() ? 0 : static_cast<int>(rows.front().size());
  if (model->width < 2 || model->height < 2) throw ConfigError("grid layout too small");
  model->hazard.assign(static_cast<std::size_t>(model->width * model->height), false);
  bool has_start = false;
  bool has_goal = false;
  for (int y = 0; y < model->height; ++y) {
    const auto& row = rows[static_cast<std::size_t>(y)];
    if (static_cast<int>(row.size()) != model->width) throw ConfigError("ragged grid layout");
    for (int x = 0; x < model->width; ++x) {
      switch (row[static_cast<std::size_t>(x)]) {
        case 'S':
          model->start = {x, y};
          has_start = true;
          break;
        case 'G':
          model->goal = {x, y};
          has_goal = true;
          break;
        case 'H':
          model->hazard[static_cast<std::size_t>(y * model->width + x)] = true;
          break;
        case '.':
          break;
        default:
          throw ConfigError("unexpected grid layout character");
      }
    }
  }
  if (!has_start || !has_goal) throw ConfigError("grid layout needs a start and a goal");
  model->hazard_reward = cfg.hazard_reward;
  model->goal_reward = cfg.goal_reward;
  model->step_cost = cfg.step_cost;
  model->progress_reward = cfg.progress_reward;
  model_ = model;

  spec_.name = "grid-hazard";
  spec_.state_dim = 8;
  spec_.action_kind = ActionKind::discrete;
  spec_.action_count = kActionCount;
  spec_.state_low = (Eigen::VectorXd(8) << 0, 0, 0, 0, 0, 0, -1, -1).finished();
  spec_.state_high = (Eigen::VectorXd(8) << 1, 1, 1, 1, 1, 1, 1, 1).finished();
  spec_.max_episode_steps = cfg.max_episode_steps ? cfg.max_episode_steps : 100;
  spec_.has_hazards = std::find(model->hazard.begin(), model->hazard.end(), true) !=
                      model->hazard.end();
  current_ = model->start;
}

bool GridHazard::in_bounds(Cell c) const {
  return c.x >= 0 && c.y >= 0 && c.x < width() && c.y < height();
}

bool GridHazard::is_hazard(Cell c) const {
  return in_bounds(c) && model_->hazard[index(c)];
}

Cell GridHazard::cell_at(std::size_t i) const {
  return {static_cast<int>(i % static_cast<std::size_t>(width())),
          static_cast<int>(i / static_cast<std::size_t>(width()))};
}

Cell GridHazard::next_cell(const Model& m, Cell from, std::size_t move) {
  Cell to = from;
  switch (move) {
    case up: to.y -= 1; break;
    case down: to.y += 1; break;
    case left: to.x -= 1; break;
    case right: to.x += 1; break;
    default: break;
  }
  if (to.x < 0 || to.y < 0 || to.x >= m.width || to.y >= m.height) return from;
  return to;
}

double GridHazard::reward(const Model& m, Cell from, std::size_t move) {
  const Cell to = next_cell(m, from, move);
  double shaping = 0.0;
  if (m.progress_reward != 0.0) {
    const auto dist = [&](Cell c) { return std::hypot(c.x - m.goal.x, c.y - m.goal.y); };
    shaping = m.progress_reward * (dist(from) - dist(to));
  }
  if (to == m.goal) return m.goal_reward + shaping;
  if (m.hazard[static_cast<std::size_t>(to.y * m.width + to.x)]) return m.hazard_reward + shaping;
  return m.step_cost + shaping;
}

EnvState GridHazard::encode(const Model& m, Cell c) {
  const auto hazard_at = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= m.width || y >= m.height) return 0.0;
    return m.hazard[static_cast<std::size_t>(y * m.width + x)] ? 1.0 : 0.0;
  };
  const double sx = 1.0 / (m.width - 1);
  const double sy = 1.0 / (m.height - 1);
  EnvState s;
  s.features.resize(8);
  s.features << c.x * sx, c.y * sy, hazard_at(c.x, c.y - 1), hazard_at(c.x, c.y + 1),
      hazard_at(c.x - 1, c.y), hazard_at(c.x + 1, c.y), (m.goal.x - c.x) * sx,
      (m.goal.y - c.y) * sy;
  s.terminal = c == m.goal;
  return s;
}

Cell GridHazard::decode(const Model& m, const Eigen::Ref<const Eigen::VectorXd>& f) {
  if (f.size() != 8) throw InputError("grid-hazard: state dimension mismatch");
  const int x = static_cast<int>(std::lround(f[0] * (m.width - 1)));
  const int y = static_cast<int>(std::lround(f[1] * (m.height - 1)));
  return {std::clamp(x, 0, m.width - 1), std::clamp(y, 0, m.height - 1)};
}

Cell GridHazard::next_cell(Cell from, std::size_t move) const { return next_cell(*model_, from, move); }
double GridHazard::reward(Cell from, std::size_t move) const { return reward(*model_, from, move); }
EnvState GridHazard::encode(Cell c) const { return encode(*model_, c); }
Cell GridHazard::decode(const Eigen::Ref<const Eigen::VectorXd>& f) const { return decode(*model_, f); }

EnvState GridHazard::reset() {
  current_ = model_->start;
  needs_reset_ = false;
  elapsed_ = 0;
  return encode(current_);
}

StepResult GridHazard::step(const EnvAction& action) {
  if (needs_reset_) throw StateError("grid-hazard: step after terminal, reset required");
  validate_action(spec_, action);
  StepResult out;
  out.reward = reward(current_, action.index);
  current_ = next_cell(current_, action.index);
  ++elapsed_;
  out.state = encode(current_);
  out.hazard = is_hazard(current_);
  out.success = current_ == model_->goal;
  out.done = out.success;
  out.truncated = !out.done && elapsed_ >= spec_.max_episode_steps;
  needs_reset_ = out.done || out.truncated;
  return out;
}

GroundTruthReward GridHazard::ground_truth() const {
  auto model = model_;
  return GroundTruthReward(spec_, [model](const EnvState& s, const EnvAction& a) {
    if (a.kind != ActionKind::discrete || a.index >= kActionCount) {
      throw InputError("grid-hazard: invalid action for reward");
    }
    return reward(*model, decode(*model, s.features), a.index);
  });
}

std::size_t GridHazard::tabular_state(const EnvState& state) const {
  return index(decode(state.features));
}

EnvAction GridHazard::tabular_action(std::size_t i) const {
  if (i >= kActionCount) throw InputError("grid-hazard: tabular action out of range");
  return EnvAction::discrete(i);
}

std::optional<TabularMdp> GridHazard::tabular_mdp() const {
  TabularMdp mdp;
  mdp.state_count = cells();
  mdp.action_count = kActionCount;
  mdp.start_state = index(start());
  mdp.next.resize(mdp.state_count * kActionCount);
  mdp.reward.resize(mdp.state_count * kActionCount);
  mdp.terminal.assign(mdp.state_count, false);
  mdp.terminal[index(goal())] = true;
  for (std::size_t s = 0; s < mdp.state_count; ++s) {
    for (std::size_t a = 0; a < kActionCount; ++a) {
      mdp.next[s * kActionCount + a] = index(next_cell(cell_at(s), a));
      mdp.reward[s * kActionCount + a] = reward(cell_at(s), a);
    }
  }
  return mdp;
}

// ---------------------------------------------------------------- line-world

namespace {

std::size_t bin_of(double v, double low, double high, std::size_t bins) {
  const double t = (std::clamp(v, low, high) - low) / (high - low);
  return std::min(bins - 1, static_cast<std::size_t>(t * static_cast<double>(bins)));
}

}  // namespace

LineWorld::LineWorld(const EnvConfig& cfg) : drift_(cfg.drift), rng_(make_rng(cfg.seed, 0x11)) {
  spec_.name = "line-world";
  spec_.state_dim = 1;
  spec_.action_kind = ActionKind::continuous;
  spec_.action_dim = 1;
  spec_.state_low = Eigen::VectorXd::Constant(1, -1.0);
  spec_.state_high = Eigen::VectorXd::Constant(1, 1.0);
  spec_.max_episode_steps = cfg.max_episode_steps ? cfg.max_episode_steps : 100;
}

double LineWorld::transition(double position, double action) const {
  return std::clamp(position + kStepScale * action + drift_, -1.0, 1.0);
}

EnvState LineWorld::reset() {
  position_ = uniform_real(rng_, -1.0, 1.0);
  needs_reset_ = false;
  elapsed_ = 0;
  return {Eigen::VectorXd::Constant(1, position_), false};
}

StepResult LineWorld::step(const EnvAction& action) {
  if (needs_reset_) throw StateError("line-world: step after terminal, reset required");
  validate_action(spec_, action);
  StepResult out;
  position_ = transition(position_, action.values[0]);
  out.reward = -std::abs(position_ - kTarget);
  ++elapsed_;
  out.state = {Eigen::VectorXd::Constant(1, position_), false};
  out.truncated = elapsed_ >= spec_.max_episode_steps;
  out.success = out.truncated && std::abs(position_ - kTarget) < 0.05;
  needs_reset_ = out.truncated;
  return out;
}

GroundTruthReward LineWorld::ground_truth() const {
  const double drift = drift_;
  return GroundTruthReward(spec_, [drift](const EnvState& s, const EnvAction& a) {
    if (a.kind != ActionKind::continuous || a.values.size() != 1 || s.features.size() != 1) {
      throw InputError("line-world: invalid input for reward");
    }
    const double next = std::clamp(s.features[0] + kStepScale * a.values[0] + drift, -1.0, 1.0);
    return -std::abs(next - kTarget);
  });
}

std::size_t LineWorld::tabular_state(const EnvState& state) const {
  return bin_of(state.features[0], -1.0, 1.0, kBins);
}

EnvAction LineWorld::tabular_action(std::size_t i) const {
  if (i >= 5) throw InputError("line-world: tabular action out of range");
  return EnvAction::continuous(Eigen::VectorXd::Constant(1, -1.0 + 0.5 * static_cast<double>(i)));
}

// ---------------------------------------------------------------- point-mass

PointMass::PointMass(const EnvConfig& cfg) : rng_(make_rng(cfg.seed, 0x22)) {
  spec_.name = "point-mass";
  spec_.state_dim = 4;
  spec_.action_kind = ActionKind::continuous;
  spec_.action_dim = 2;
  spec_.state_low = Eigen::VectorXd::Constant(4, -1.0);
  spec_.state_high = Eigen::VectorXd::Constant(4, 1.0);
  spec_.max_episode_steps = cfg.max_episode_steps ? cfg.max_episode_steps : 100;
}

Eigen::Vector4d PointMass::transition(const Eigen::Vector4d& s, const Eigen::Vector2d& force) {
  Eigen::Vector4d next;
  next.tail<2>() = (kDamping * s.tail<2>() + 2.0 * kDt * force).cwiseMax(-1.0).cwiseMin(1.0);
  next.head<2>() = (s.head<2>() + kDt * next.tail<2>()).cwiseMax(-1.0).cwiseMin(1.0);
  return next;
}

EnvState PointMass::reset() {
  state_.setZero();
  state_[0] = uniform_real(rng_, -1.0, 1.0);
  state_[1] = uniform_real(rng_, -1.0, 1.0);
  needs_reset_ = false;
  elapsed_ = 0;
  return {state_, false};
}

StepResult PointMass::step(const EnvAction& action) {
  if (needs_reset_) throw StateError("point-mass: step after terminal, reset required");
  validate_action(spec_, action);
  StepResult out;
  state_ = transition(state_, action.values.head<2>());
  const double dist = std::hypot(state_[0] - kTargetX, state_[1] - kTargetY);
  out.reward = -dist;
  ++elapsed_;
  out.state = {state_, false};
  out.truncated = elapsed_ >= spec_.max_episode_steps;
  out.success = out.truncated && dist < kSuccessRadius;
  needs_reset_ = out.truncated;
  return out;
}

GroundTruthReward PointMass::ground_truth() const {
  return GroundTruthReward(spec_, [](const EnvState& s, const EnvAction& a) {
    if (a.kind != ActionKind::continuous || a.values.size() != 2 || s.features.size() != 4) {
      throw InputError("point-mass: invalid input for reward");
    }
    const Eigen::Vector4d next = transition(s.features.head<4>(), a.values.head<2>());
    return -std::hypot(next[0] - kTargetX, next[1] - kTargetY);
  });
}

std::size_t PointMass::tabular_state_count() const {
  return kPositionBins * kPositionBins * kVelocityBins * kVelocityBins;
}

std::size_t PointMass::tabular_state(const EnvState& state) const {
  const auto& f = state.features;
  const std::size_t px = bin_of(f[0], -1.0, 1.0, kPositionBins);
  const std::size_t py = bin_of(f[1], -1.0, 1.0, kPositionBins);
  const std::size_t vx = bin_of(f[2], -1.0, 1.0, kVelocityBins);
  const std::size_t vy = bin_of(f[3], -1.0, 1.0, kVelocityBins);
  return ((px * kPositionBins + py) * kVelocityBins + vx) * kVelocityBins + vy;
}

EnvAction PointMass::tabular_action(std::size_t i) const {
  if (i >= 9) throw InputError("point-mass: tabular action out of range");
  Eigen::VectorXd f(2);
  f << static_cast<double>(i % 3) - 1.0, static_cast<double>(i / 3) - 1.0;
  return EnvAction::continuous(f);
}

// ---------------------------------------------------------------- factory

std::unique_ptr<Environment> make_env(const EnvConfig& cfg) {
  cfg.validate();
  if (cfg.name == "grid-hazard") return std::make_unique<GridHazard>(cfg);
  if (cfg.name == "line-world") return std::make_unique<LineWorld>(cfg);
  return std::make_unique<PointMass>(cfg);
}

std::unique_ptr<Environment> make_env(std::string_view name, std::uint64_t seed) {
  EnvConfig cfg;
  cfg.name = std::string(name);
  cfg.seed = seed;
  return make_env(cfg);
}

}  // namespace pbrl::envsim
