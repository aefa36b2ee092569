#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "pbrl/experience.hpp"
#include "pbrl/random.hpp"
#include "pbrl/rewardnet.hpp"

namespace pbrl::sampler {

using experience::SegmentPair;

enum class Scheme { uniform, disagreement };

Scheme parse_scheme(std::string_view name);
std::string to_string(Scheme scheme);

struct QueryBatchSpec {
  std::size_t candidate_count = 0;  // 0 selects 10 x select_count
  std::size_t select_count = 0;     // M
  Scheme scheme = Scheme::disagreement;
  std::size_t segment_length = 50;

  std::size_t candidates() const { return candidate_count == 0 ? 10 * select_count : candidate_count; }
};

// Standard deviation of p_first across members, for every candidate.
std::vector<double> disagreement_scores(const rewardnet::RewardEnsemble& ens,
                                        const std::vector<SegmentPair>& candidates);

// Indices of the `count` largest scores, larger first, ties to the lower index.
std::vector<std::size_t> top_indices(const std::vector<double>& scores, std::size_t count);

// Uniform: M independent pair draws. Disagreement: draw the candidate pool,
// keep the M pairs with the largest ensemble spread. Throws InputError when
// select_count exceeds the candidate count.
std::vector<SegmentPair> select_queries(const experience::ReplayBuffer& buffer,
                                        const rewardnet::RewardEnsemble& ens,
                                        const QueryBatchSpec& spec, Rng& rng);

}  // namespace pbrl::sampler
