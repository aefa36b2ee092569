#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pbrl/experience.hpp"
#include "pbrl/random.hpp"
#include "pbrl/rewardnet.hpp"

namespace pbrl::ssl {

using experience::PreferenceDataset;
using experience::PreferenceLabel;
using experience::QueryTriple;
using experience::Segment;
using experience::SegmentPair;
using rewardnet::PairObjective;
using rewardnet::Params;
using rewardnet::PreferenceProb;
using rewardnet::RewardEnsemble;

enum class Method { supervised, pl, cr, fm, ns, strapper };

// Accepts the lower-case names: supervised, pl, cr, fm, ns, strapper.
Method parse_method(std::string_view name);
std::string to_string(Method method);

struct AugmentConfig {
  double amplitude_low = 0.995;
  double amplitude_high = 1.005;
  double strong_low = 0.9;   // FM student inputs
  double strong_high = 1.1;
  // Temporal crop length range; 0 stands for the full segment length. FM's
  // strong view falls back to [ceil(0.9 H), H] when both are 0.
  std::size_t crop_min = 0;
  std::size_t crop_max = 0;

  void validate() const;
};

struct SSLConfig {
  Method method = Method::strapper;
  double tau = 0.99;                 // confidence threshold for hard pseudo-labels
  double peer_weight = 1.0;          // alpha
  std::size_t unlabeled_ratio = 10;  // pseudo-labels per new human label
  AugmentConfig augment;
  double consistency_weight = 1.0;   // CR method only
  double dropout = 0.1;              // NS / STRAPPER student
  std::size_t batch_size = 32;
  std::size_t train_steps = 100;     // gradient steps per member per session
  rewardnet::AdamConfig optimizer;

  void validate() const;
};

// 10 unlabeled pairs per label, raised to 100 once the budget reaches 1000.
std::size_t default_unlabeled_ratio(std::size_t feedback_budget);

// -log clamped cross-entropy of a prediction against a (non-skipped) label.
double supervised_loss(const PreferenceProb& p, const PreferenceLabel& y);

// One z ~ U[low, high] per state vector; actions untouched.
Segment amplitude_scale(const Segment& segment, Rng& rng, double low, double high);

// One H' ~ U{crop_min..crop_max} for the pair, independent start offsets.
SegmentPair temporal_crop(const SegmentPair& pair, Rng& rng, std::size_t crop_min,
                          std::size_t crop_max);

// Teacher output -> stored label. Soft methods keep the probabilities as is;
// PL and FM harden them and reject below tau. CR and supervised never label.
std::optional<PreferenceLabel> label_from_teacher(const PreferenceProb& p, Method method,
                                                  double tau);

// Queries the ensemble mean on the method's teacher view of the pair
// (unaugmented for PL, weak amplitude scaling for FM / NS / STRAPPER).
std::optional<PreferenceLabel> pseudo_label(const RewardEnsemble& teacher, const SegmentPair& pair,
                                            const SSLConfig& cfg, Rng& rng);
std::optional<PreferenceLabel> pseudo_label(const Params& teacher, const SegmentPair& pair,
                                            const SSLConfig& cfg, Rng& rng);

// ---------------------------------------------------------------- losses

// A batch element with its (possibly augmented) network inputs.
struct LabeledPair {
  Eigen::MatrixXd first;
  Eigen::MatrixXd second;
  double y_first = 0.5;
  double y_second = 0.5;
};

LabeledPair to_labeled_pair(const Segment& first, const Segment& second, const PreferenceLabel& y);

// Mean cross-entropy over the batch.
PairObjective cr_objective(std::span<const LabeledPair> batch);
// cr_objective minus alpha times the mean cross-entropy of B peer draws: the
// prediction on element n1 scored against the label of element n2, both
// uniform over the batch. Needs at least two elements.
PairObjective peer_objective(std::span<const LabeledPair> batch, Rng& rng, double alpha);
// Adds w * mean_k (p1(a_k) - p1(b_k))^2 over pairs of augmented views.
void add_consistency(PairObjective& obj, std::span<const SegmentPair> view_a,
                     std::span<const SegmentPair> view_b, double weight);

double cr_loss(const Params& student, std::span<const LabeledPair> batch);
double peer_loss(const Params& student, std::span<const LabeledPair> batch, Rng& rng,
                 double alpha);

// ---------------------------------------------------------------- strategies

struct TrainingStrategy {
  Method method = Method::supervised;
  bool mixed_batches = false;     // half D_L, half D_U once D_U is non-empty
  bool writes_pseudo = false;     // appends teacher labels to D_U
  bool consistency = false;       // unlabeled two-view MSE term
  bool student_weak_augment = false;
  bool student_strong_augment = false;  // applied to pseudo-labeled elements
  double dropout = 0.0;
  double peer_weight = 0.0;

  bool uses_unlabeled() const { return mixed_batches || writes_pseudo || consistency; }
};

TrainingStrategy method_dispatch(const SSLConfig& cfg);

// Where unlabeled pairs come from; by default uniform draws from the buffer.
using UnlabeledSource = std::function<SegmentPair(Rng&)>;
UnlabeledSource buffer_source(const experience::ReplayBuffer& buffer, std::size_t segment_length);

// The objective of one gradient step for one member, sampled with `rng`.
PairObjective build_step_objective(const TrainingStrategy& strategy, const SSLConfig& cfg,
                                   const PreferenceDataset& labeled,
                                   const PreferenceDataset& pseudo, const UnlabeledSource& source,
                                   Rng& rng);

struct SessionReport {
  std::size_t gradient_steps = 0;     // summed over members
  std::size_t pseudo_attempted = 0;
  std::size_t pseudo_accepted = 0;
  std::size_t pseudo_rejected = 0;
  double final_loss = 0.0;            // member mean of the last step's loss
};

// Trains every member on the method's objective (students continue from the
// current parameters), then asks the trained ensemble for
// unlabeled_ratio * new_labels pseudo-labels appended to `pseudo`. Throws
// StateError when `labeled` is empty.
SessionReport self_training_session(RewardEnsemble& ens, const PreferenceDataset& labeled,
                                    PreferenceDataset& pseudo, const UnlabeledSource& source,
                                    std::size_t new_labels, const SSLConfig& cfg, Rng& rng);

}  // namespace pbrl::ssl
