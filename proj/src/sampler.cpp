#include "pbrl/sampler.hpp"

#include <algorithm>
#include <numeric>

#include "pbrl/error.hpp"

namespace pbrl::sampler {

Scheme parse_scheme(std::string_view name) {
  if (name == "uniform") return Scheme::uniform;
  if (name == "disagreement") return Scheme::disagreement;
  throw ConfigError("unknown sampler.scheme '" + std::string(name) + "'");
}

std::string to_string(Scheme scheme) {
  return scheme == Scheme::uniform ? "uniform" : "disagreement";
}

std::vector<double> disagreement_scores(const rewardnet::RewardEnsemble& ens,
                                        const std::vector<SegmentPair>& candidates) {
  if (ens.members.empty()) throw ConfigError("disagreement sampling needs a reward ensemble");
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& c : candidates) scores.push_back(rewardnet::ensemble_prob(ens, c.first, c.second).std_first);
  return scores;
}

std::vector<std::size_t> top_indices(const std::vector<double>& scores, std::size_t count) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  count = std::min(count, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                    });
  order.resize(count);
  return order;
}

std::vector<SegmentPair> select_queries(const experience::ReplayBuffer& buffer,
                                        const rewardnet::RewardEnsemble& ens,
                                        const QueryBatchSpec& spec, Rng& rng) {
  const std::size_t pool = spec.candidates();
  if (spec.select_count > pool) throw InputError("select_count exceeds candidate_count");
  if (spec.select_count == 0) return {};
  if (spec.scheme == Scheme::uniform) {
    std::vector<SegmentPair> out;
    for (std::size_t i = 0; i < spec.select_count; ++i) {
      out.push_back(buffer.sample_segment_pair(spec.segment_length, rng));
    }
    return out;
  }
  std::vector<SegmentPair> candidates;
  candidates.reserve(pool);
  for (std::size_t i = 0; i < pool; ++i) {
    candidates.push_back(buffer.sample_segment_pair(spec.segment_length, rng));
  }
  const auto scores = disagreement_scores(ens, candidates);
  std::vector<SegmentPair> out;
  for (std::size_t i : top_indices(scores, spec.select_count)) out.push_back(std::move(candidates[i]));
  return out;
}

}  // namespace pbrl::sampler
