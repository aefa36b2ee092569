#include "pbrl/experience.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pbrl/error.hpp"

namespace pbrl::experience {

using nlohmann::json;

namespace {

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace

double GroundTruthAccess::reward(const Transition& t) { return t.gt_reward(GroundTruthKey{}); }

Transition::Transition(EnvState state_, EnvAction action_, EnvState next_state_,
                       double learned_reward_, double gt_reward, std::uint64_t episode_,
                       std::size_t step_index_)
    : state(std::move(state_)),
      action(std::move(action_)),
      next_state(std::move(next_state_)),
      learned_reward(learned_reward_),
      episode(episode_),
      step_index(step_index_),
      gt_reward_(gt_reward) {}

bool operator==(const Transition& a, const Transition& b) {
  return a.state.features == b.state.features && a.state.terminal == b.state.terminal &&
         a.action == b.action && a.next_state.features == b.next_state.features &&
         a.next_state.terminal == b.next_state.terminal && a.learned_reward == b.learned_reward &&
         a.episode == b.episode && a.step_index == b.step_index && a.gt_reward_ == b.gt_reward_;
}

Eigen::MatrixXd Segment::inputs() const {
  Eigen::MatrixXd out(states.rows() + actions.rows(), states.cols());
  out << states, actions;
  return out;
}

bool operator==(const Segment& a, const Segment& b) {
  return a.source_episode == b.source_episode && a.start_index == b.start_index &&
         a.states.rows() == b.states.rows() && a.states.cols() == b.states.cols() &&
         a.actions.rows() == b.actions.rows() && a.actions.cols() == b.actions.cols() &&
         a.states == b.states && a.actions == b.actions;
}

// ------------------------------------------------------------------ labels

PreferenceLabel PreferenceLabel::soft(double p_first) {
  if (!(p_first >= 0.0 && p_first <= 1.0)) throw InputError("soft label outside [0, 1]");
  return {p_first, 1.0 - p_first, LabelKind::soft};
}

PreferenceLabel PreferenceLabel::from_scalar(double y) {
  if (y == 0.0) return first_preferred();
  if (y == 1.0) return second_preferred();
  if (y == 0.5) return equal();
  throw InputError("scalar preference must be 0, 1 or 0.5");
}

void PreferenceLabel::validate() const {
  if (!std::isfinite(p_first) || !std::isfinite(p_second)) throw InputError("non-finite label");
  if (kind == LabelKind::skipped) return;
  if (p_first < 0.0 || p_first > 1.0 || p_second < 0.0 || p_second > 1.0) {
    throw InputError("label components outside [0, 1]");
  }
  if (std::abs(p_first + p_second - 1.0) > 1e-12) throw InputError("label does not sum to one");
  if (kind == LabelKind::hard && !((p_first == 1.0 && p_second == 0.0) ||
                                   (p_first == 0.0 && p_second == 1.0))) {
    throw InputError("hard label must be (1,0) or (0,1)");
  }
  if (kind == LabelKind::equal && !(p_first == 0.5 && p_second == 0.5)) {
    throw InputError("equal label must be (0.5,0.5)");
  }
}

std::string to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::hard: return "hard";
    case LabelKind::equal: return "equal";
    case LabelKind::soft: return "soft";
    case LabelKind::skipped: return "skipped";
  }
  return "?";
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::human: return "human";
    case Provenance::oracle: return "oracle";
    case Provenance::pseudo: return "pseudo";
  }
  return "?";
}

std::string to_string(DatasetRole role) {
  return role == DatasetRole::labeled ? "labeled" : "pseudo";
}

// ------------------------------------------------------------------ datasets

void PreferenceDataset::append(QueryTriple triple) {
  if (triple.label.kind == LabelKind::skipped) {
    throw InputError("skipped labels are never stored");
  }
  triple.label.validate();
  const bool pseudo = triple.provenance == Provenance::pseudo;
  if ((role_ == DatasetRole::pseudo) != pseudo) {
    throw InputError("provenance '" + to_string(triple.provenance) +
                     "' not allowed in a " + to_string(role_) + " dataset");
  }
  if (triple.first.states.rows() != triple.second.states.rows() ||
      triple.first.actions.rows() != triple.second.actions.rows()) {
    throw InputError("segment feature widths differ within a pair");
  }
  triples_.push_back(std::move(triple));
}

std::vector<const QueryTriple*> mixed_view(const PreferenceDataset& labeled,
                                           const PreferenceDataset& pseudo) {
  std::vector<const QueryTriple*> out;
  out.reserve(labeled.size() + pseudo.size());
  for (const auto& t : labeled.triples()) out.push_back(&t);
  for (const auto& t : pseudo.triples()) out.push_back(&t);
  return out;
}

namespace {

constexpr const char* kHeader = "prefdata v1";

json matrix_to_json(const Eigen::MatrixXd& m) {
  json arr = json::array();
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) arr.push_back(m(i, j));
  }
  return arr;
}

json segment_to_json(const Segment& s) {
  return json{{"episode", s.source_episode},
              {"start", s.start_index},
              {"H", s.length()},
              {"state_dim", s.states.rows()},
              {"action_dim", s.actions.rows()},
              {"states", matrix_to_json(s.states)},
              {"actions", matrix_to_json(s.actions)}};
}

Eigen::MatrixXd matrix_from_json(const json& arr, Eigen::Index rows, Eigen::Index cols) {
  if (!arr.is_array() || arr.size() != static_cast<std::size_t>(rows * cols)) {
    throw std::invalid_argument("matrix payload size mismatch");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = arr.at(k++).get<double>();
  }
  return m;
}

Segment segment_from_json(const json& j) {
  Segment s;
  s.source_episode = j.at("episode").get<std::uint64_t>();
  s.start_index = j.at("start").get<std::size_t>();
  const auto h = j.at("H").get<Eigen::Index>();
  s.states = matrix_from_json(j.at("states"), j.at("state_dim").get<Eigen::Index>(), h);
  s.actions = matrix_from_json(j.at("actions"), j.at("action_dim").get<Eigen::Index>(), h);
  return s;
}

LabelKind kind_from_string(const std::string& s) {
  if (s == "hard") return LabelKind::hard;
  if (s == "equal") return LabelKind::equal;
  if (s == "soft") return LabelKind::soft;
  if (s == "skipped") return LabelKind::skipped;
  throw std::invalid_argument("unknown label kind '" + s + "'");
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "human") return Provenance::human;
  if (s == "oracle") return Provenance::oracle;
  if (s == "pseudo") return Provenance::pseudo;
  throw std::invalid_argument("unknown provenance '" + s + "'");
}

}  // namespace

void persist(const PreferenceDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  out << kHeader << '\n';
  out << json{{"role", to_string(dataset.role())}, {"count", dataset.size()}}.dump() << '\n';
  for (const auto& t : dataset.triples()) {
    json rec{{"first", segment_to_json(t.first)},
             {"second", segment_to_json(t.second)},
             {"label",
              {{"p_first", t.label.p_first},
               {"p_second", t.label.p_second},
               {"kind", to_string(t.label.kind)}}},
             {"provenance", to_string(t.provenance)}};
    out << rec.dump() << '\n';
  }
  if (!out) throw InputError("write to '" + path.string() + "' failed");
}

PreferenceDataset load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != kHeader) {
    throw FormatError("expected header '" + std::string(kHeader) + "'", lineno);
  }
  ++lineno;
  if (!std::getline(in, line)) throw FormatError("missing metadata record", lineno);
  DatasetRole role = DatasetRole::labeled;
  std::size_t count = 0;
  try {
    const json meta = json::parse(line);
    const auto r = meta.at("role").get<std::string>();
    if (r == "labeled") {
      role = DatasetRole::labeled;
    } else if (r == "pseudo") {
      role = DatasetRole::pseudo;
    } else {
      throw std::invalid_argument("unknown role '" + r + "'");
    }
    count = meta.at("count").get<std::size_t>();
  } catch (const std::exception& e) {
    throw FormatError(std::string("bad metadata record: ") + e.what(), lineno);
  }

  PreferenceDataset dataset(role);
  for (std::size_t i = 0; i < count; ++i) {
    ++lineno;
    if (!std::getline(in, line)) {
      throw FormatError("truncated file: expected " + std::to_string(count) + " records", lineno);
    }
    try {
      const json rec = json::parse(line);
      QueryTriple t;
      t.first = segment_from_json(rec.at("first"));
      t.second = segment_from_json(rec.at("second"));
      const auto& lab = rec.at("label");
      t.label.p_first = lab.at("p_first").get<double>();
      t.label.p_second = lab.at("p_second").get<double>();
      t.label.kind = kind_from_string(lab.at("kind").get<std::string>());
      t.provenance = provenance_from_string(rec.at("provenance").get<std::string>());
      dataset.append(std::move(t));
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError(std::string("bad record: ") + e.what(), lineno);
    }
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty()) throw FormatError("trailing data after declared records", lineno);
  }
  return dataset;
}

// ------------------------------------------------------------------ buffer

ReplayBuffer::ReplayBuffer(std::size_t capacity, EnvSpec spec)
    : capacity_(capacity), spec_(std::move(spec)) {
  if (capacity_ == 0) throw ConfigError("replay buffer capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  const auto sd = static_cast<Eigen::Index>(spec_.state_dim);
  if (t.state.features.size() != sd || t.next_state.features.size() != sd) {
    throw InputError("transition state dimension mismatch");
  }
  envsim::validate_action(spec_, t.action);
  if (!all_finite(t.state.features) || !all_finite(t.next_state.features) ||
      !std::isfinite(t.learned_reward) || !std::isfinite(GroundTruthAccess::reward(t))) {
    throw InputError("transition has non-finite fields");
  }
  if (!episodes_.empty() && episodes_.back().episode == t.episode) {
    auto& span = episodes_.back();
    if (span.terminal) throw InputError("transition continues an episode that already terminated");
    if (t.step_index != span.first_step + span.count) {
      throw InputError("transition does not continue its episode contiguously");
    }
    ++span.count;
    span.terminal = t.next_state.terminal;
  } else {
    for (const auto& e : episodes_) {
      if (e.episode == t.episode) throw InputError("episode id reused after another episode");
    }
    episodes_.push_back({t.episode, head_seq_ + transitions_.size(), t.step_index, 1, t.next_state.terminal});
  }
  transitions_.push_back(std::move(t));

  while (transitions_.size() > capacity_) {
    transitions_.pop_front();
    ++head_seq_;
    auto& oldest = episodes_.front();
    ++oldest.first_seq;
    ++oldest.first_step;
    if (--oldest.count == 0) episodes_.pop_front();
  }
}

std::size_t ReplayBuffer::positions(const EpisodeSpan& span, std::size_t length) {
  if (span.terminal) return span.count;
  return span.count >= length ? span.count - length + 1 : 0;
}

std::size_t ReplayBuffer::valid_positions(std::size_t length) const {
  if (length == 0) throw InputError("segment length must be positive");
  std::size_t total = 0;
  for (const auto& e : episodes_) total += positions(e, length);
  return total;
}

Segment ReplayBuffer::build(const EpisodeSpan& span, std::size_t offset, std::size_t length) const {
  const auto sd = static_cast<Eigen::Index>(spec_.state_dim);
  const auto ad = static_cast<Eigen::Index>(spec_.action_feature_dim());
  Segment s;
  s.states.resize(sd, static_cast<Eigen::Index>(length));
  s.actions.resize(ad, static_cast<Eigen::Index>(length));
  for (std::size_t k = 0; k < length; ++k) {
    const auto& t = at_seq(span.first_seq + std::min(offset + k, span.count - 1));
    s.states.col(static_cast<Eigen::Index>(k)) = t.state.features;
    s.actions.col(static_cast<Eigen::Index>(k)) = envsim::action_features(spec_, t.action);
  }
  s.source_episode = span.episode;
  s.start_index = span.first_step + offset;
  return s;
}

Segment ReplayBuffer::segment_at_position(std::size_t position, std::size_t length) const {
  for (const auto& e : episodes_) {
    const std::size_t n = positions(e, length);
    if (position < n) return build(e, position, length);
    position -= n;
  }
  throw InputError("segment position out of range");
}

Segment ReplayBuffer::segment(std::uint64_t episode, std::size_t start_index,
                              std::size_t length) const {
  for (const auto& e : episodes_) {
    if (e.episode != episode) continue;
    const std::size_t end = e.first_step + e.count;
    if (start_index < e.first_step || start_index >= end || (!e.terminal && start_index + length > end)) {
      throw InputError("segment range not stored for episode " + std::to_string(episode));
    }
    return build(e, start_index - e.first_step, length);
  }
  throw InputError("episode " + std::to_string(episode) + " not in buffer");
}

Segment ReplayBuffer::sample_segment(std::size_t length, Rng& rng) const {
  const std::size_t n = valid_positions(length);
  if (n == 0) {
    throw StateError("no stored episode has " + std::to_string(length) + " steps");
  }
  return segment_at_position(static_cast<std::size_t>(uniform_index(rng, n)), length);
}

SegmentPair ReplayBuffer::sample_segment_pair(std::size_t length, Rng& rng) const {
  Segment first = sample_segment(length, rng);
  Segment second = sample_segment(length, rng);
  return {std::move(first), std::move(second)};
}

}  // namespace pbrl::experience
