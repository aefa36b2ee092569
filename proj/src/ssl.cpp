#include "pbrl/ssl.hpp"

#include <algorithm>
#include <cmath>

#include "pbrl/error.hpp"

namespace pbrl::ssl {

using experience::LabelKind;
using experience::Provenance;

Method parse_method(std::string_view name) {
  if (name == "supervised") return Method::supervised;
  if (name == "pl") return Method::pl;
  if (name == "cr") return Method::cr;
  if (name == "fm") return Method::fm;
  if (name == "ns") return Method::ns;
  if (name == "strapper") return Method::strapper;
  throw ConfigError("unknown ssl.method '" + std::string(name) + "'");
}

std::string to_string(Method method) {
  switch (method) {
    case Method::supervised: return "supervised";
    case Method::pl: return "pl";
    case Method::cr: return "cr";
    case Method::fm: return "fm";
    case Method::ns: return "ns";
    case Method::strapper: return "strapper";
  }
  return "?";
}

void AugmentConfig::validate() const {
  if (!(amplitude_low > 0.0 && amplitude_low <= amplitude_high)) {
    throw ConfigError("ssl.augment amplitude range must satisfy 0 < low <= high");
  }
  if (!(strong_low > 0.0 && strong_low <= strong_high)) {
    throw ConfigError("ssl.augment strong range must satisfy 0 < low <= high");
  }
  if (crop_min > crop_max) throw ConfigError("ssl.augment.crop_min exceeds crop_max");
}

void SSLConfig::validate() const {
  augment.validate();
  if (!(tau > 0.5 && tau <= 1.0)) throw ConfigError("ssl.tau must lie in (0.5, 1]");
  if (!(peer_weight >= 0.0) || !std::isfinite(peer_weight)) {
    throw ConfigError("ssl.peer_weight must be non-negative");
  }
  if (!(consistency_weight >= 0.0)) throw ConfigError("ssl.consistency_weight must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("ssl.dropout must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("ssl.batch_size must be positive");
  if (method == Method::strapper && batch_size < 2) {
    throw ConfigError("peer regularization needs ssl.batch_size >= 2");
  }
  if (!(optimizer.lr > 0.0)) throw ConfigError("reward.lr must be positive");
}

std::size_t default_unlabeled_ratio(std::size_t feedback_budget) {
  return feedback_budget >= 1000 ? 100 : 10;
}

double supervised_loss(const PreferenceProb& p, const PreferenceLabel& y) {
  if (y.kind == LabelKind::skipped) throw InputError("skipped labels carry no loss");
  return rewardnet::cross_entropy(p, y.p_first, y.p_second);
}

Segment amplitude_scale(const Segment& segment, Rng& rng, double low, double high) {
  if (!(low <= high) || !std::isfinite(low) || !std::isfinite(high)) {
    throw InputError("amplitude range must satisfy low <= high");
  }
  Segment out = segment;
  for (Eigen::Index t = 0; t < out.states.cols(); ++t) {
    out.states.col(t) *= uniform_real(rng, low, high);
  }
  return out;
}

namespace {

Segment crop(const Segment& s, std::size_t offset, std::size_t length) {
  Segment out;
  out.states = s.states.middleCols(static_cast<Eigen::Index>(offset),
                                   static_cast<Eigen::Index>(length));
  out.actions = s.actions.middleCols(static_cast<Eigen::Index>(offset),
                                     static_cast<Eigen::Index>(length));
  out.source_episode = s.source_episode;
  out.start_index = s.start_index + offset;
  return out;
}

}  // namespace

SegmentPair temporal_crop(const SegmentPair& pair, Rng& rng, std::size_t crop_min,
                          std::size_t crop_max) {
  const std::size_t h = pair.first.length();
  if (pair.second.length() != h) throw InputError("segments differ in length");
  if (crop_min == 0 || crop_min > crop_max || crop_max > h) {
    throw InputError("crop bounds must satisfy 1 <= crop_min <= crop_max <= H");
  }
  const std::size_t len = crop_min + uniform_index(rng, crop_max - crop_min + 1);
  const std::size_t o1 = uniform_index(rng, h - len + 1);
  const std::size_t o2 = uniform_index(rng, h - len + 1);
  return {crop(pair.first, o1, len), crop(pair.second, o2, len)};
}

std::optional<PreferenceLabel> label_from_teacher(const PreferenceProb& p, Method method,
                                                  double tau) {
  switch (method) {
    case Method::supervised:
    case Method::cr:
      return std::nullopt;
    case Method::pl:
    case Method::fm:
      if (p.max() < tau) return std::nullopt;
      return p.p_first >= p.p_second ? PreferenceLabel::first_preferred()
                                     : PreferenceLabel::second_preferred();
    case Method::ns:
    case Method::strapper:
      return PreferenceLabel{p.p_first, p.p_second, LabelKind::soft};
  }
  return std::nullopt;
}

namespace {

// The pair the teacher looks at for a given method.
SegmentPair teacher_view(const SegmentPair& pair, const SSLConfig& cfg, Rng& rng) {
  if (cfg.method == Method::pl) return pair;
  const auto& a = cfg.augment;
  Segment first = amplitude_scale(pair.first, rng, a.amplitude_low, a.amplitude_high);
  Segment second = amplitude_scale(pair.second, rng, a.amplitude_low, a.amplitude_high);
  return {std::move(first), std::move(second)};
}

bool labels_anything(Method m) {
  return m == Method::pl || m == Method::fm || m == Method::ns || m == Method::strapper;
}

}  // namespace

std::optional<PreferenceLabel> pseudo_label(const RewardEnsemble& teacher, const SegmentPair& pair,
                                            const SSLConfig& cfg, Rng& rng) {
  if (!labels_anything(cfg.method)) return std::nullopt;
  const SegmentPair view = teacher_view(pair, cfg, rng);
  return label_from_teacher(rewardnet::ensemble_prob(teacher, view.first, view.second).mean,
                            cfg.method, cfg.tau);
}

std::optional<PreferenceLabel> pseudo_label(const Params& teacher, const SegmentPair& pair,
                                            const SSLConfig& cfg, Rng& rng) {
  if (!labels_anything(cfg.method)) return std::nullopt;
  const SegmentPair view = teacher_view(pair, cfg, rng);
  return label_from_teacher(rewardnet::preference_prob(teacher, view.first, view.second),
                            cfg.method, cfg.tau);
}

// ---------------------------------------------------------------- losses

LabeledPair to_labeled_pair(const Segment& first, const Segment& second, const PreferenceLabel& y) {
  if (y.kind == LabelKind::skipped) throw InputError("skipped labels carry no loss");
  return {first.inputs(), second.inputs(), y.p_first, y.p_second};
}

PairObjective cr_objective(std::span<const LabeledPair> batch) {
  if (batch.empty()) throw InputError("empty batch");
  PairObjective obj;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const auto& e : batch) {
    const std::size_t k = obj.add_pair(e.first, e.second);
    obj.cross_entropy.push_back({k, e.y_first, e.y_second, w});
  }
  return obj;
}

PairObjective peer_objective(std::span<const LabeledPair> batch, Rng& rng, double alpha) {
  if (batch.size() < 2) throw InputError("peer regularization needs at least two elements");
  if (!(alpha >= 0.0)) throw InputError("peer weight must be non-negative");
  PairObjective obj = cr_objective(batch);
  const std::size_t n = batch.size();
  const double w = -alpha / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t n1 = uniform_index(rng, n);
    const std::size_t n2 = uniform_index(rng, n);
    obj.cross_entropy.push_back({n1, batch[n2].y_first, batch[n2].y_second, w});
  }
  return obj;
}

void add_consistency(PairObjective& obj, std::span<const SegmentPair> view_a,
                     std::span<const SegmentPair> view_b, double weight) {
  if (view_a.size() != view_b.size()) throw InputError("consistency views differ in size");
  if (view_a.empty()) return;
  const double w = weight / static_cast<double>(view_a.size());
  for (std::size_t k = 0; k < view_a.size(); ++k) {
    const std::size_t a = obj.add_pair(view_a[k].first.inputs(), view_a[k].second.inputs());
    const std::size_t b = obj.add_pair(view_b[k].first.inputs(), view_b[k].second.inputs());
    obj.consistency.push_back({a, b, w});
  }
}

double cr_loss(const Params& student, std::span<const LabeledPair> batch) {
  return rewardnet::evaluate_objective(student, cr_objective(batch));
}

double peer_loss(const Params& student, std::span<const LabeledPair> batch, Rng& rng,
                 double alpha) {
  return rewardnet::evaluate_objective(student, peer_objective(batch, rng, alpha));
}

// ---------------------------------------------------------------- strategies

TrainingStrategy method_dispatch(const SSLConfig& cfg) {
  TrainingStrategy s;
  s.method = cfg.method;
  switch (cfg.method) {
    case Method::supervised:
      break;
    case Method::pl:
      s.mixed_batches = true;
      s.writes_pseudo = true;
      break;
    case Method::cr:
      s.consistency = true;
      break;
    case Method::fm:
      s.mixed_batches = true;
      s.writes_pseudo = true;
      s.student_weak_augment = true;
      s.student_strong_augment = true;
      break;
    case Method::ns:
      s.mixed_batches = true;
      s.writes_pseudo = true;
      s.student_weak_augment = true;
      s.dropout = cfg.dropout;
      break;
    case Method::strapper:
      s.mixed_batches = true;
      s.writes_pseudo = true;
      s.student_weak_augment = true;
      s.dropout = cfg.dropout;
      s.peer_weight = cfg.peer_weight;
      break;
  }
  return s;
}

UnlabeledSource buffer_source(const experience::ReplayBuffer& buffer, std::size_t segment_length) {
  return [&buffer, segment_length](Rng& rng) {
    return buffer.sample_segment_pair(segment_length, rng);
  };
}

namespace {

std::pair<std::size_t, std::size_t> crop_range(const AugmentConfig& a, std::size_t h, bool strong) {
  if (a.crop_min == 0 && a.crop_max == 0) {
    if (!strong) return {h, h};
    return {static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(h))), h};
  }
  const std::size_t lo = a.crop_min == 0 ? h : std::min(a.crop_min, h);
  const std::size_t hi = a.crop_max == 0 ? h : std::min(a.crop_max, h);
  return {std::min(lo, hi), hi};
}

SegmentPair student_view(const QueryTriple& t, const TrainingStrategy& s, const AugmentConfig& a,
                         bool is_pseudo, Rng& rng) {
  SegmentPair pair{t.first, t.second};
  const bool strong = s.student_strong_augment && is_pseudo;
  if (!strong && !s.student_weak_augment) return pair;
  const double lo = strong ? a.strong_low : a.amplitude_low;
  const double hi = strong ? a.strong_high : a.amplitude_high;
  pair.first = amplitude_scale(pair.first, rng, lo, hi);
  pair.second = amplitude_scale(pair.second, rng, lo, hi);
  const auto [cmin, cmax] = crop_range(a, pair.first.length(), strong);
  if (cmin < pair.first.length()) pair = temporal_crop(pair, rng, cmin, cmax);
  return pair;
}

}  // namespace

PairObjective build_step_objective(const TrainingStrategy& strategy, const SSLConfig& cfg,
                                   const PreferenceDataset& labeled,
                                   const PreferenceDataset& pseudo, const UnlabeledSource& source,
                                   Rng& rng) {
  if (labeled.empty()) throw StateError("no labeled preferences to train on");
  // Labeled and pseudo-labeled means carry equal weight: the first half of a
  // mixed batch comes from D_L, the rest from D_U.
  const bool mixed = strategy.mixed_batches && !pseudo.empty();
  const std::size_t from_labeled = mixed ? (cfg.batch_size + 1) / 2 : cfg.batch_size;
  std::vector<LabeledPair> batch;
  batch.reserve(cfg.batch_size);
  for (std::size_t i = 0; i < cfg.batch_size; ++i) {
    const bool is_pseudo = i >= from_labeled;
    const QueryTriple& t = is_pseudo ? pseudo[uniform_index(rng, pseudo.size())]
                                     : labeled[uniform_index(rng, labeled.size())];
    const SegmentPair view = student_view(t, strategy, cfg.augment, is_pseudo, rng);
    batch.push_back(to_labeled_pair(view.first, view.second, t.label));
  }
  PairObjective obj = strategy.peer_weight > 0.0 ? peer_objective(batch, rng, strategy.peer_weight)
                                                 : cr_objective(batch);
  if (strategy.consistency && cfg.consistency_weight > 0.0) {
    if (!source) throw StateError("consistency training needs an unlabeled source");
    std::vector<SegmentPair> a;
    std::vector<SegmentPair> b;
    const auto& aug = cfg.augment;
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      const SegmentPair raw = source(rng);
      a.push_back({amplitude_scale(raw.first, rng, aug.amplitude_low, aug.amplitude_high),
                   amplitude_scale(raw.second, rng, aug.amplitude_low, aug.amplitude_high)});
      b.push_back({amplitude_scale(raw.first, rng, aug.amplitude_low, aug.amplitude_high),
                   amplitude_scale(raw.second, rng, aug.amplitude_low, aug.amplitude_high)});
    }
    add_consistency(obj, a, b, cfg.consistency_weight);
  }
  obj.dropout = strategy.dropout;
  obj.dropout_seed = rng();
  return obj;
}

SessionReport self_training_session(RewardEnsemble& ens, const PreferenceDataset& labeled,
                                    PreferenceDataset& pseudo, const UnlabeledSource& source,
                                    std::size_t new_labels, const SSLConfig& cfg, Rng& rng) {
  if (labeled.empty()) throw StateError("self-training needs a non-empty labeled dataset");
  if (ens.members.empty()) throw ConfigError("empty reward ensemble");
  if (pseudo.role() != experience::DatasetRole::pseudo) {
    throw InputError("pseudo-label target must be a pseudo-role dataset");
  }
  cfg.validate();
  const TrainingStrategy strategy = method_dispatch(cfg);
  const std::uint64_t session_seed = rng();
  while (ens.optimizers.size() < ens.members.size()) {
    ens.optimizers.push_back(rewardnet::AdamState::zeros_like(ens.members[ens.optimizers.size()]));
  }

  SessionReport report;
  double loss_sum = 0.0;
  rewardnet::Gradient grad;
  for (std::size_t m = 0; m < ens.members.size(); ++m) {
    Rng member_rng = make_rng(session_seed, m);
    double loss = 0.0;
    for (std::size_t step = 0; step < cfg.train_steps; ++step) {
      const PairObjective obj =
          build_step_objective(strategy, cfg, labeled, pseudo, source, member_rng);
      loss = rewardnet::loss_and_gradient(ens.members[m], obj, grad);
      rewardnet::adam_step(ens.members[m], grad, ens.optimizers[m], cfg.optimizer);
      ++report.gradient_steps;
    }
    loss_sum += loss;
  }
  report.final_loss = loss_sum / static_cast<double>(ens.members.size());

  if (strategy.writes_pseudo && cfg.unlabeled_ratio > 0 && new_labels > 0) {
    if (!source) throw StateError("pseudo-labeling needs an unlabeled source");
    Rng label_rng = make_rng(session_seed, 0x9a3e1ab5);
    const std::size_t n = cfg.unlabeled_ratio * new_labels;
    for (std::size_t i = 0; i < n; ++i) {
      SegmentPair pair = source(label_rng);
      ++report.pseudo_attempted;
      auto label = pseudo_label(ens, pair, cfg, label_rng);
      if (!label) {
        ++report.pseudo_rejected;
        continue;
      }
      pseudo.append({std::move(pair.first), std::move(pair.second), *label, Provenance::pseudo});
      ++report.pseudo_accepted;
    }
  }
  return report;
}

}  // namespace pbrl::ssl
