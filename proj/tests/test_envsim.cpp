#include <doctest.h>

#include <cmath>
#include <vector>

#include "pbrl/envsim.hpp"
#include "pbrl/error.hpp"

using namespace pbrl;
using namespace pbrl::envsim;

namespace {

struct Trace {
  std::vector<Eigen::VectorXd> states;
  std::vector<double> rewards;
  std::vector<bool> done;
};

EnvAction random_action(const Environment& env, Rng& rng) {
  const auto& spec = env.spec();
  if (spec.action_kind == ActionKind::discrete) {
    return EnvAction::discrete(uniform_index(rng, spec.action_count));
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(spec.action_dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = uniform_real(rng, -1.0, 1.0);
  return EnvAction::continuous(v);
}

Trace roll(Environment& env, std::uint64_t action_seed, std::size_t steps) {
  Rng rng(action_seed);
  Trace t;
  t.states.push_back(env.reset().features);
  for (std::size_t i = 0; i < steps; ++i) {
    if (env.needs_reset()) t.states.push_back(env.reset().features);
    const auto r = env.step(random_action(env, rng));
    t.states.push_back(r.state.features);
    t.rewards.push_back(r.reward);
    t.done.push_back(r.done);
  }
  return t;
}

// Sum of true rewards of a walk of moves from a cell.
double walk_return(const GridHazard& g, Cell c, const std::vector<std::size_t>& moves,
                   bool* hazard) {
  double total = 0.0;
  *hazard = false;
  for (auto m : moves) {
    total += g.reward(c, m);
    c = g.next_cell(c, m);
    if (g.is_hazard(c)) *hazard = true;
    if (c == g.goal()) break;
  }
  return total;
}

}  // namespace

TEST_CASE("grid reset starts at the declared start cell") {
  auto env = make_env("grid-hazard", 0);
  const auto s = env->reset();
  const auto* g = env->as_grid();
  REQUIRE(g != nullptr);
  CHECK(g->decode(s.features) == g->start());
  CHECK_FALSE(s.terminal);
}

TEST_CASE("entering a hazard pays the configured hazard reward") {
  EnvConfig cfg;
  GridHazard g(cfg);
  int checked = 0;
  for (std::size_t i = 0; i < g.cells(); ++i) {
    const Cell c = g.cell_at(i);
    for (std::size_t m = 0; m < GridHazard::kActionCount; ++m) {
      const Cell n = g.next_cell(c, m);
      if (g.is_hazard(n) && !(n == g.goal())) {
        CHECK(g.reward(c, m) == -10.0);
        ++checked;
      }
    }
  }
  CHECK(checked > 0);

  cfg.hazard_reward = -3.5;
  GridHazard g2(cfg);
  for (std::size_t i = 0; i < g2.cells(); ++i) {
    for (std::size_t m = 0; m < GridHazard::kActionCount; ++m) {
      if (g2.is_hazard(g2.next_cell(g2.cell_at(i), m))) CHECK(g2.reward(g2.cell_at(i), m) == -3.5);
    }
  }
}

TEST_CASE("walking the optimal path reaches the goal and terminates") {
  auto env = make_env("grid-hazard", 0);
  const auto mdp = env->tabular_mdp();
  REQUIRE(mdp.has_value());
  const auto* g = env->as_grid();
  env->reset();
  // Breadth-first search over hazard-free cells from the start.
  std::vector<int> parent(g->cells(), -1);
  std::vector<std::size_t> via(g->cells(), 0);
  std::vector<std::size_t> queue{g->index(g->start())};
  parent[queue[0]] = static_cast<int>(queue[0]);
  for (std::size_t q = 0; q < queue.size(); ++q) {
    const Cell c = g->cell_at(queue[q]);
    for (std::size_t m = 0; m < 4; ++m) {
      const Cell n = g->next_cell(c, m);
      const auto ni = g->index(n);
      if (parent[ni] >= 0 || g->is_hazard(n)) continue;
      parent[ni] = static_cast<int>(queue[q]);
      via[ni] = m;
      queue.push_back(ni);
    }
  }
  std::vector<std::size_t> moves;
  for (auto i = g->index(g->goal()); i != g->index(g->start()); i = static_cast<std::size_t>(parent[i])) {
    REQUIRE(parent[i] >= 0);
    moves.insert(moves.begin(), via[i]);
  }
  StepResult r;
  for (std::size_t k = 0; k < moves.size(); ++k) {
    r = env->step(EnvAction::discrete(moves[k]));
    CHECK_FALSE(r.hazard);
    CHECK(r.done == (k + 1 == moves.size()));
  }
  CHECK(r.success);
  CHECK(r.reward == 1.0);
  CHECK(r.state.terminal);
  CHECK_THROWS_AS(env->step(EnvAction::discrete(0)), StateError);
}

TEST_CASE("line-world zero action keeps the state without drift") {
  auto env = make_env("line-world", 3);
  const auto s = env->reset();
  const auto r = env->step(EnvAction::continuous(Eigen::VectorXd::Zero(1)));
  CHECK(r.state.features[0] == s.features[0]);
  auto* lw = dynamic_cast<LineWorld*>(env.get());
  REQUIRE(lw != nullptr);
  CHECK(lw->transition(0.25, 0.0) == 0.25);
}

TEST_CASE("line-world drift shifts the position") {
  EnvConfig cfg;
  cfg.name = "line-world";
  cfg.drift = 0.05;
  LineWorld lw(cfg);
  CHECK(lw.transition(0.0, 0.0) == doctest::Approx(0.05));
}

TEST_CASE("invalid actions and unknown environments are rejected") {
  auto grid = make_env("grid-hazard", 0);
  grid->reset();
  CHECK_THROWS_AS(grid->step(EnvAction::discrete(4)), InputError);
  CHECK_THROWS_AS(grid->step(EnvAction::continuous(Eigen::VectorXd::Zero(1))), InputError);
  auto line = make_env("line-world", 0);
  line->reset();
  CHECK_THROWS_AS(line->step(EnvAction::continuous(Eigen::VectorXd::Constant(1, 1.5))), InputError);
  CHECK_THROWS_AS(line->step(EnvAction::continuous(Eigen::VectorXd::Zero(2))), InputError);
  auto pm = make_env("point-mass", 0);
  pm->reset();
  CHECK_THROWS_AS(pm->step(EnvAction::continuous(Eigen::VectorXd::Constant(2, -1.01))), InputError);
  CHECK_THROWS_AS(make_env("cartpole", 0), ConfigError);
  EnvConfig bad;
  bad.hazard_reward = std::nan("");
  CHECK_THROWS_AS(make_env(bad), ConfigError);
}

TEST_CASE("step before reset is a state error") {
  auto env = make_env("point-mass", 1);
  CHECK_THROWS_AS(env->step(EnvAction::continuous(Eigen::VectorXd::Zero(2))), StateError);
}

TEST_CASE("same seed and actions give bitwise identical trajectories") {
  for (const char* name : {"grid-hazard", "line-world", "point-mass"}) {
    CAPTURE(name);
    auto a = make_env(name, 17);
    auto b = make_env(name, 17);
    const auto ta = roll(*a, 99, 400);
    const auto tb = roll(*b, 99, 400);
    REQUIRE(ta.states.size() == tb.states.size());
    for (std::size_t i = 0; i < ta.states.size(); ++i) CHECK(ta.states[i] == tb.states[i]);
    CHECK(ta.rewards == tb.rewards);
    CHECK(ta.done == tb.done);
  }
}

TEST_CASE("rewards are finite and match the ground-truth evaluator") {
  for (const char* name : {"grid-hazard", "line-world", "point-mass"}) {
    CAPTURE(name);
    auto env = make_env(name, 5);
    const auto gt = env->ground_truth();
    Rng rng(7);
    auto s = env->reset();
    for (int i = 0; i < 2000; ++i) {
      if (env->needs_reset()) s = env->reset();
      const auto a = random_action(*env, rng);
      const auto r = env->step(a);
      REQUIRE(std::isfinite(r.reward));
      CHECK(gt(s, a) == r.reward);
      CHECK(gt(s.features, action_features(env->spec(), a)) == r.reward);
      CHECK(r.state.features.allFinite());
      s = r.state;
    }
  }
}

TEST_CASE("states stay inside the declared bounds") {
  for (const char* name : {"grid-hazard", "line-world", "point-mass"}) {
    CAPTURE(name);
    auto env = make_env(name, 2);
    const auto t = roll(*env, 4, 3000);
    const auto& spec = env->spec();
    for (const auto& s : t.states) {
      REQUIRE(static_cast<std::size_t>(s.size()) == spec.state_dim);
      CHECK((s.array() >= spec.state_low.array() - 1e-12).all());
      CHECK((s.array() <= spec.state_high.array() + 1e-12).all());
    }
  }
}

TEST_CASE("hazard dominance over same-length segments") {
  EnvConfig cfg;
  GridHazard g(cfg);
  Rng rng(11);
  double worst_clean = 1e300;
  double best_hazard = -1e300;
  for (int k = 0; k < 4000; ++k) {
    Cell c = g.cell_at(uniform_index(rng, g.cells()));
    if (c == g.goal()) continue;
    std::vector<std::size_t> moves(50);
    for (auto& m : moves) m = uniform_index(rng, 4);
    bool hazard = false;
    const double ret = walk_return(g, c, moves, &hazard);
    if (hazard) {
      best_hazard = std::max(best_hazard, ret);
    } else {
      worst_clean = std::min(worst_clean, ret);
    }
  }
  REQUIRE(best_hazard > -1e300);
  REQUIRE(worst_clean < 1e300);
  CHECK(best_hazard < worst_clean);
}

TEST_CASE("progress term telescopes along a walk") {
  EnvConfig cfg;
  cfg.progress_reward = 0.5;
  cfg.layout = {"S....", ".....", "....G"};
  GridHazard shaped(cfg);
  cfg.progress_reward = 0.0;
  GridHazard plain(cfg);
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    Cell c = shaped.cell_at(uniform_index(rng, shaped.cells()));
    if (c == shaped.goal()) continue;
    const Cell from = c;
    double diff = 0.0;
    for (int t = 0; t < 12; ++t) {
      const auto m = uniform_index(rng, 4);
      diff += shaped.reward(c, m) - plain.reward(c, m);
      c = shaped.next_cell(c, m);
      if (c == shaped.goal()) break;
    }
    const auto dist = [&](Cell x) { return std::hypot(x.x - 4.0, x.y - 2.0); };
    CHECK(diff == doctest::Approx(0.5 * (dist(from) - dist(c))).epsilon(1e-12));
  }
}

TEST_CASE("custom layouts are validated") {
  EnvConfig cfg;
  cfg.layout = {"S..", "..G"};
  CHECK_NOTHROW(GridHazard{cfg});
  cfg.layout = {"S..", ".G"};
  CHECK_THROWS_AS(GridHazard{cfg}, ConfigError);
  cfg.layout = {"S..", "..."};
  CHECK_THROWS_AS(GridHazard{cfg}, ConfigError);
  cfg.layout = {"S.x", "..G"};
  CHECK_THROWS_AS(GridHazard{cfg}, ConfigError);
  cfg.layout = {"S..", "..G"};
  CHECK_FALSE(GridHazard{cfg}.spec().has_hazards);
}

TEST_CASE("tabular model agrees with stepping") {
  auto env = make_env("grid-hazard", 0);
  const auto* g = env->as_grid();
  const auto mdp = *env->tabular_mdp();
  CHECK(mdp.state_count == g->cells());
  CHECK(mdp.action_count == 4);
  for (std::size_t s = 0; s < mdp.state_count; ++s) {
    for (std::size_t a = 0; a < 4; ++a) {
      CHECK(mdp.next[s * 4 + a] == g->index(g->next_cell(g->cell_at(s), a)));
      CHECK(mdp.reward[s * 4 + a] == g->reward(g->cell_at(s), a));
    }
    CHECK(mdp.terminal[s] == (g->cell_at(s) == g->goal()));
  }
  for (std::size_t i = 0; i < g->cells(); ++i) {
    CHECK(env->tabular_state(g->encode(g->cell_at(i))) == i);
  }
}

TEST_CASE("episodes truncate at the time limit") {
  EnvConfig cfg;
  cfg.max_episode_steps = 7;
  GridHazard g(cfg);
  g.reset();
  StepResult r;
  for (int i = 0; i < 7; ++i) r = g.step(EnvAction::discrete(GridHazard::up));
  CHECK(r.truncated);
  CHECK_FALSE(r.done);
  CHECK(g.needs_reset());
}

TEST_CASE("action features round-trip") {
  for (const char* name : {"grid-hazard", "line-world", "point-mass"}) {
    auto env = make_env(name, 0);
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
      const auto a = random_action(*env, rng);
      const auto f = action_features(env->spec(), a);
      CHECK(static_cast<std::size_t>(f.size()) == env->spec().action_feature_dim());
      CHECK(action_from_features(env->spec(), f) == a);
    }
  }
}
