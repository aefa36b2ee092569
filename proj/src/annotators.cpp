#include "pbrl/annotators.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "pbrl/error.hpp"

namespace pbrl::annotators {

using envsim::Cell;
using envsim::GridHazard;
using experience::Provenance;

void AnnotatorConfig::validate() const {
  if (!(beta >= 0.0)) throw ConfigError("annotator.beta must be non-negative");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("annotator.gamma must lie in (0, 1]");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("annotator.epsilon must lie in [0, 1]");
  if (std::isnan(delta_skip)) throw ConfigError("annotator.delta_skip is NaN");
  if (!(delta_equal >= 0.0)) throw ConfigError("annotator.delta_equal must be non-negative");
}

bool AnnotatorConfig::noise_free() const {
  return std::isinf(beta) && gamma == 1.0 && epsilon == 0.0 && delta_equal == 0.0 &&
         std::isinf(delta_skip) && delta_skip < 0.0;
}

namespace {

void check_lengths(const Segment& a, const Segment& b) {
  if (a.length() != b.length()) throw InputError("segments differ in length");
  if (a.length() == 0) throw InputError("empty segment");
}

}  // namespace

double segment_return(const Segment& s, const GroundTruthReward& gt) {
  double total = 0.0;
  for (Eigen::Index t = 0; t < s.states.cols(); ++t) total += gt(s.states.col(t), s.actions.col(t));
  return total;
}

double discounted_return(const Segment& s, const GroundTruthReward& gt, double gamma) {
  if (gamma == 1.0) return segment_return(s, gt);
  const auto h = s.states.cols();
  double total = 0.0;
  for (Eigen::Index t = 0; t < h; ++t) {
    total += std::pow(gamma, static_cast<double>(h - 1 - t)) * gt(s.states.col(t), s.actions.col(t));
  }
  return total;
}

PreferenceLabel oracle_label(const Segment& first, const Segment& second,
                             const GroundTruthReward& gt) {
  check_lengths(first, second);
  return segment_return(first, gt) > segment_return(second, gt)
             ? PreferenceLabel::first_preferred()
             : PreferenceLabel::second_preferred();
}

double stochastic_preference(double d_first, double d_second, double beta) {
  if (std::isinf(beta)) return d_first > d_second ? 1.0 : 0.0;
  const double z = beta * (d_first - d_second);
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

PreferenceLabel noisy_label(const Segment& first, const Segment& second,
                            const GroundTruthReward& gt, const AnnotatorConfig& cfg, Rng& rng) {
  check_lengths(first, second);
  const double r1 = segment_return(first, gt);
  const double r2 = segment_return(second, gt);
  if (std::max(r1, r2) < cfg.delta_skip) return PreferenceLabel::skipped();
  if (std::abs(r1 - r2) < cfg.delta_equal) return PreferenceLabel::equal();

  const double d1 = cfg.gamma == 1.0 ? r1 : discounted_return(first, gt, cfg.gamma);
  const double d2 = cfg.gamma == 1.0 ? r2 : discounted_return(second, gt, cfg.gamma);
  bool first_wins = false;
  if (std::isinf(cfg.beta)) {
    first_wins = d1 > d2;
  } else {
    first_wins = bernoulli(rng, stochastic_preference(d1, d2, cfg.beta));
  }
  if (cfg.epsilon > 0.0 && bernoulli(rng, cfg.epsilon)) first_wins = !first_wins;
  return first_wins ? PreferenceLabel::first_preferred() : PreferenceLabel::second_preferred();
}

double sequence_distance(const Segment& a, const Segment& b) {
  check_lengths(a, b);
  return std::sqrt((a.states - b.states).squaredNorm() + (a.actions - b.actions).squaredNorm());
}

// ------------------------------------------------------------------ traps

namespace {

constexpr int kUnreachable = 1 << 20;

// Hazard-avoiding BFS distance to the goal.
std::vector<int> goal_distances(const GridHazard& g) {
  std::vector<int> dist(g.cells(), kUnreachable);
  std::deque<Cell> frontier{g.goal()};
  dist[g.index(g.goal())] = 0;
  while (!frontier.empty()) {
    const Cell c = frontier.front();
    frontier.pop_front();
    for (std::size_t m = 0; m < 4; ++m) {
      // Moves are symmetric, so a predecessor of c is a neighbour of c.
      const Cell p = g.next_cell(c, m);
      if (p == c || g.is_hazard(p) || dist[g.index(p)] != kUnreachable) continue;
      dist[g.index(p)] = dist[g.index(c)] + 1;
      frontier.push_back(p);
    }
  }
  return dist;
}

struct Walk {
  std::vector<Cell> cells;
  std::vector<std::size_t> moves;
};

Segment to_segment(const GridHazard& g, const Walk& w, std::uint64_t id) {
  const auto h = static_cast<Eigen::Index>(w.moves.size());
  Segment s;
  s.states.resize(static_cast<Eigen::Index>(g.spec().state_dim), h);
  s.actions = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(GridHazard::kActionCount), h);
  for (Eigen::Index t = 0; t < h; ++t) {
    s.states.col(t) = g.encode(w.cells[static_cast<std::size_t>(t)]).features;
    s.actions(static_cast<Eigen::Index>(w.moves[static_cast<std::size_t>(t)]), t) = 1.0;
  }
  s.source_episode = experience::kSyntheticEpisodeBit | id;
  s.start_index = 0;
  return s;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[static_cast<std::size_t>(uniform_index(rng, v.size()))];
}

// Hazard-free walk whose last move enters the goal.
std::optional<Walk> goal_walk(const GridHazard& g, const std::vector<int>& dist, std::size_t h,
                              Rng& rng) {
  std::vector<Cell> starts;
  for (std::size_t i = 0; i < g.cells(); ++i) {
    const int d = dist[i];
    if (d >= 1 && d <= static_cast<int>(h)) starts.push_back(g.cell_at(i));
  }
  if (starts.empty()) return std::nullopt;
  Walk w;
  Cell c = pick(starts, rng);
  for (std::size_t t = 0; t + 1 < h; ++t) {
    const int budget = static_cast<int>(h - 1 - t);  // moves left before the goal step
    std::vector<std::size_t> options;
    for (std::size_t m = 0; m < GridHazard::kActionCount; ++m) {
      const Cell n = g.next_cell(c, m);
      const int d = dist[g.index(n)];
      if (n == g.goal() || g.is_hazard(n) || d > budget) continue;
      options.push_back(m);
    }
    if (options.empty()) return std::nullopt;
    const std::size_t m = pick(options, rng);
    w.cells.push_back(c);
    w.moves.push_back(m);
    c = g.next_cell(c, m);
  }
  std::vector<std::size_t> finals;
  for (std::size_t m = 0; m < 4; ++m) {
    if (g.next_cell(c, m) == g.goal()) finals.push_back(m);
  }
  if (finals.empty()) return std::nullopt;
  w.cells.push_back(c);
  w.moves.push_back(pick(finals, rng));
  return w;
}

// Hazard-free walk that never touches the goal.
std::optional<Walk> safe_walk(const GridHazard& g, std::size_t h, Rng& rng) {
  std::vector<Cell> starts;
  for (std::size_t i = 0; i < g.cells(); ++i) {
    const Cell c = g.cell_at(i);
    if (!g.is_hazard(c) && !(c == g.goal())) starts.push_back(c);
  }
  if (starts.empty()) return std::nullopt;
  Walk w;
  Cell c = pick(starts, rng);
  for (std::size_t t = 0; t < h; ++t) {
    std::vector<std::size_t> options;
    for (std::size_t m = 0; m < GridHazard::kActionCount; ++m) {
      const Cell n = g.next_cell(c, m);
      if (!(n == g.goal()) && !g.is_hazard(n)) options.push_back(m);
    }
    if (options.empty()) return std::nullopt;
    const std::size_t m = pick(options, rng);
    w.cells.push_back(c);
    w.moves.push_back(m);
    c = g.next_cell(c, m);
  }
  return w;
}

}  // namespace

std::vector<TrapPair> generate_trap_pairs(const envsim::Environment& env, std::size_t count,
                                          std::size_t segment_length, Rng& rng) {
  const GridHazard* grid = env.as_grid();
  if (grid == nullptr || !env.spec().has_hazards) {
    throw ConfigError("trap pairs need an environment with hazard cells");
  }
  if (segment_length < 2) throw InputError("trap segments need at least two steps");
  std::vector<TrapPair> out;
  if (count == 0) return out;
  const auto dist = goal_distances(*grid);
  const auto gt = env.ground_truth();

  std::uint64_t next_id = 0;
  std::size_t failures = 0;
  while (out.size() < count) {
    if (failures > 1000 + 100 * count) {
      throw ConfigError("grid layout does not admit trap pairs of this length");
    }
    auto good = goal_walk(*grid, dist, segment_length, rng);
    auto other = safe_walk(*grid, segment_length, rng);
    if (!good || !other) {
      ++failures;
      continue;
    }
    // Steps (excluding the goal step) where some move enters a hazard.
    std::vector<std::pair<std::size_t, std::size_t>> fatal;
    for (std::size_t t = 0; t + 1 < segment_length; ++t) {
      for (std::size_t m = 0; m < 4; ++m) {
        if (grid->is_hazard(grid->next_cell(good->cells[t], m))) fatal.emplace_back(t, m);
      }
    }
    if (fatal.empty()) {
      ++failures;
      continue;
    }
    Walk bad = *good;
    const auto [t, m] = pick(fatal, rng);
    bad.moves[t] = m;

    const std::uint64_t id = next_id;
    next_id += 3;
    TrapPair tp;
    const Segment s1 = to_segment(*grid, *good, id);
    const Segment s2 = to_segment(*grid, *other, id + 1);
    Segment s1p = to_segment(*grid, bad, id + 2);
    tp.base = {s1, s2, oracle_label(s1, s2, gt), Provenance::oracle};
    tp.perturbed = {s1p, s2, oracle_label(s1p, s2, gt), Provenance::oracle};
    tp.locality_distance = sequence_distance(s1, s1p);
    if (tp.base.label.p_first != 1.0 || tp.perturbed.label.p_second != 1.0) {
      ++failures;
      continue;
    }
    out.push_back(std::move(tp));
  }
  return out;
}

}  // namespace pbrl::annotators
