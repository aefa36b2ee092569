#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "pbrl/envsim.hpp"
#include "pbrl/experience.hpp"
#include "pbrl/random.hpp"

namespace pbrl::annotators {

using envsim::GroundTruthReward;
using experience::PreferenceLabel;
using experience::QueryTriple;
using experience::Segment;

struct AnnotatorConfig {
  double beta = std::numeric_limits<double>::infinity();  // rationality; inf = deterministic
  double gamma = 1.0;                                      // myopic discount in (0, 1]
  double epsilon = 0.0;                                    // mistake (flip) probability
  double delta_skip = -std::numeric_limits<double>::infinity();
  double delta_equal = 0.0;

  void validate() const;
  bool noise_free() const;
};

double segment_return(const Segment& segment, const GroundTruthReward& gt);
// sum_{t=1..H} gamma^{H-t} r_t: later steps weigh more.
double discounted_return(const Segment& segment, const GroundTruthReward& gt, double gamma);

// (1,0) iff the first segment's return is strictly larger, else (0,1).
PreferenceLabel oracle_label(const Segment& first, const Segment& second,
                             const GroundTruthReward& gt);

// P[first > second] = exp(beta D1) / (exp(beta D1) + exp(beta D2)), stable in
// both tails; beta = inf gives the step function with ties to the second.
double stochastic_preference(double d_first, double d_second, double beta);

// Skip -> equal -> stochastic draw -> mistake flip. Draws from `rng` only
// when a stage is actually stochastic.
PreferenceLabel noisy_label(const Segment& first, const Segment& second,
                            const GroundTruthReward& gt, const AnnotatorConfig& cfg, Rng& rng);

// Input-space distance between two equal-length segments: Euclidean norm of
// the stacked (state, action-feature) sequences.
double sequence_distance(const Segment& a, const Segment& b);

// A trap pair never differs from its base segment by more than one changed
// action, i.e. sqrt(2) in one-hot action features.
inline constexpr double kTrapLocalityBound = 1.5;

struct TrapPair {
  QueryTriple base;       // (sigma1, sigma2), sigma1 preferred
  QueryTriple perturbed;  // (sigma1~, sigma2), sigma2 preferred
  double locality_distance = 0.0;  // sequence_distance(sigma1, sigma1~)
};

// Similarity-trap pairs on a hazard grid: sigma1 is a hazard-free segment that
// enters the goal on its last step, sigma2 a hazard-free segment that never
// reaches the goal, and sigma1~ equals sigma1 except for one action that
// steps into a hazard. Throws ConfigError for environments without hazards.
std::vector<TrapPair> generate_trap_pairs(const envsim::Environment& env, std::size_t count,
                                          std::size_t segment_length, Rng& rng);

}  // namespace pbrl::annotators
