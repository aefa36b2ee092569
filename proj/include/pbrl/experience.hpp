#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pbrl/envsim.hpp"
#include "pbrl/random.hpp"

namespace pbrl::experience {

using envsim::EnvAction;
using envsim::EnvSpec;
using envsim::EnvState;

class Transition;

// Passkey for the hidden ground-truth reward. Only GroundTruthAccess can mint
// one; reward learners and the agent never include or call it.
class GroundTruthKey {
  GroundTruthKey() = default;
  friend struct GroundTruthAccess;
};

// Privileged reader for annotators and metrics.
struct GroundTruthAccess {
  static double reward(const Transition& t);
};

class Transition {
 public:
  Transition(EnvState state, EnvAction action, EnvState next_state, double learned_reward,
             double gt_reward, std::uint64_t episode, std::size_t step_index);

  EnvState state;
  EnvAction action;
  EnvState next_state;
  double learned_reward = 0.0;
  std::uint64_t episode = 0;
  std::size_t step_index = 0;

  double gt_reward(GroundTruthKey) const { return gt_reward_; }

  friend bool operator==(const Transition& a, const Transition& b);

 private:
  double gt_reward_ = 0.0;
};

// Episodes whose id has this bit set do not come from a replay buffer
// (e.g. constructed trap segments).
inline constexpr std::uint64_t kSyntheticEpisodeBit = std::uint64_t{1} << 63;

// H consecutive (state, action) steps of one episode, stored column-wise.
struct Segment {
  Eigen::MatrixXd states;   // state_dim x H
  Eigen::MatrixXd actions;  // action_feature_dim x H
  std::uint64_t source_episode = 0;
  std::size_t start_index = 0;

  std::size_t length() const { return static_cast<std::size_t>(states.cols()); }
  // Network input block: states stacked over actions.
  Eigen::MatrixXd inputs() const;

  friend bool operator==(const Segment& a, const Segment& b);
};

using SegmentPair = std::pair<Segment, Segment>;

enum class LabelKind { hard, equal, soft, skipped };

struct PreferenceLabel {
  double p_first = 0.5;
  double p_second = 0.5;
  LabelKind kind = LabelKind::equal;

  static PreferenceLabel first_preferred() { return {1.0, 0.0, LabelKind::hard}; }
  static PreferenceLabel second_preferred() { return {0.0, 1.0, LabelKind::hard}; }
  static PreferenceLabel equal() { return {0.5, 0.5, LabelKind::equal}; }
  static PreferenceLabel skipped() { return {0.0, 0.0, LabelKind::skipped}; }
  // Soft label (p, 1 - p); throws InputError outside [0, 1].
  static PreferenceLabel soft(double p_first);
  // Scalar convention: 0 -> first preferred, 1 -> second preferred, 0.5 -> equal.
  static PreferenceLabel from_scalar(double y);

  PreferenceLabel swapped() const { return {p_second, p_first, kind}; }
  void validate() const;

  friend bool operator==(const PreferenceLabel&, const PreferenceLabel&) = default;
};

enum class Provenance { human, oracle, pseudo };

struct QueryTriple {
  Segment first;
  Segment second;
  PreferenceLabel label;
  Provenance provenance = Provenance::oracle;

  friend bool operator==(const QueryTriple&, const QueryTriple&) = default;
};

enum class DatasetRole { labeled, pseudo };

// Append-only list of triples. Labeled datasets hold human/oracle labels,
// pseudo datasets hold teacher labels; skipped labels are never stored.
class PreferenceDataset {
 public:
  explicit PreferenceDataset(DatasetRole role = DatasetRole::labeled) : role_(role) {}

  void append(QueryTriple triple);

  DatasetRole role() const { return role_; }
  std::size_t size() const { return triples_.size(); }
  bool empty() const { return triples_.empty(); }
  const QueryTriple& operator[](std::size_t i) const { return triples_[i]; }
  std::span<const QueryTriple> triples() const { return triples_; }

  friend bool operator==(const PreferenceDataset&, const PreferenceDataset&) = default;

 private:
  DatasetRole role_;
  std::vector<QueryTriple> triples_;
};

// Concatenation view D_L ++ D_U used by the mixed-dataset losses.
std::vector<const QueryTriple*> mixed_view(const PreferenceDataset& labeled,
                                           const PreferenceDataset& pseudo);

// `prefdata v1` line format: header, one metadata record, then one JSON
// record per triple. Reals round-trip bit-exactly.
void persist(const PreferenceDataset& dataset, const std::filesystem::path& path);
PreferenceDataset load(const std::filesystem::path& path);

std::string to_string(LabelKind kind);
std::string to_string(Provenance provenance);
std::string to_string(DatasetRole role);

// FIFO transition store that keeps track of episode boundaries so contiguous
// segments can be drawn. Transitions of an episode must arrive in order.
// An episode that ended in a true terminal is absorbing: a segment may run
// past its last step, repeating the terminal transition for the remainder.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, EnvSpec spec);

  // Throws InputError on non-finite fields or shape mismatch, and when the
  // transition does not continue its episode contiguously.
  void push(Transition t);

  std::size_t size() const { return transitions_.size(); }
  std::size_t capacity() const { return capacity_; }
  const EnvSpec& spec() const { return spec_; }
  const Transition& operator[](std::size_t i) const { return transitions_[i]; }
  const Transition& front() const { return transitions_.front(); }
  const Transition& back() const { return transitions_.back(); }

  // Recomputes learned_reward for every stored transition.
  template <typename RewardFn>
  void relabel(RewardFn&& fn) {
    for (auto& t : transitions_) t.learned_reward = fn(t.state, t.action);
  }
  // Batched variant: `fn(inputs)` receives an input_dim x n block and returns
  // n rewards.
  template <typename BatchFn>
  void relabel_batched(BatchFn&& fn, std::size_t chunk = 4096);

  // Number of (episode, start) positions admitting a segment of length H;
  // every stored step of an absorbing episode is a valid start.
  std::size_t valid_positions(std::size_t length) const;
  Segment segment_at_position(std::size_t position, std::size_t length) const;
  Segment segment(std::uint64_t episode, std::size_t start_index, std::size_t length) const;

  // Two independent uniform draws over valid positions; throws StateError when
  // no stored episode is long enough.
  SegmentPair sample_segment_pair(std::size_t length, Rng& rng) const;
  Segment sample_segment(std::size_t length, Rng& rng) const;

 private:
  struct EpisodeSpan {
    std::uint64_t episode = 0;
    std::uint64_t first_seq = 0;   // global sequence number of first stored step
    std::size_t first_step = 0;    // step index of the first stored step
    std::size_t count = 0;
    bool terminal = false;         // ended in a true terminal
  };
  static std::size_t positions(const EpisodeSpan& span, std::size_t length);
  const Transition& at_seq(std::uint64_t seq) const {
    return transitions_[static_cast<std::size_t>(seq - head_seq_)];
  }
  Segment build(const EpisodeSpan& span, std::size_t offset, std::size_t length) const;

  std::size_t capacity_;
  EnvSpec spec_;
  std::deque<Transition> transitions_;
  std::deque<EpisodeSpan> episodes_;
  std::uint64_t head_seq_ = 0;
};

template <typename BatchFn>
void ReplayBuffer::relabel_batched(BatchFn&& fn, std::size_t chunk) {
  const auto in_dim = static_cast<Eigen::Index>(spec_.input_dim());
  const auto sd = static_cast<Eigen::Index>(spec_.state_dim);
  for (std::size_t begin = 0; begin < transitions_.size(); begin += chunk) {
    const std::size_t end = std::min(transitions_.size(), begin + chunk);
    Eigen::MatrixXd inputs(in_dim, static_cast<Eigen::Index>(end - begin));
    for (std::size_t i = begin; i < end; ++i) {
      const auto col = static_cast<Eigen::Index>(i - begin);
      inputs.col(col).head(sd) = transitions_[i].state.features;
      inputs.col(col).tail(in_dim - sd) = envsim::action_features(spec_, transitions_[i].action);
    }
    const Eigen::VectorXd rewards = fn(inputs);
    for (std::size_t i = begin; i < end; ++i) {
      transitions_[i].learned_reward = rewards[static_cast<Eigen::Index>(i - begin)];
    }
  }
}

}  // namespace pbrl::experience
