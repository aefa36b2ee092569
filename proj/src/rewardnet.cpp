#include "pbrl/rewardnet.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

#include "pbrl/error.hpp"

namespace pbrl::rewardnet {

namespace {

constexpr double kLogFloor = 1e-12;

double clamped_log(double p) { return std::log(std::max(p, kLogFloor)); }

void check_pair(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw InputError("segments differ in length");
  if (a.cols() == 0) throw InputError("empty segment");
  if (a.rows() != b.rows()) throw InputError("segments differ in input dimension");
}

}  // namespace

double reward_forward(const Params& params, const envsim::EnvSpec& spec,
                      const envsim::EnvState& state, const envsim::EnvAction& action) {
  if (static_cast<std::size_t>(state.features.size()) != spec.state_dim) {
    throw InputError("state dimension does not match the environment");
  }
  envsim::validate_action(spec, action);
  Eigen::VectorXd input(static_cast<Eigen::Index>(spec.input_dim()));
  input << state.features, envsim::action_features(spec, action);
  return mlp_forward(params, input)(0);
}

Eigen::RowVectorXd reward_batch(const Params& params, const Eigen::MatrixXd& inputs) {
  return mlp_forward(params, inputs);
}

PreferenceProb bt_probability(double sum_first, double sum_second) {
  const double m = std::max(sum_first, sum_second);
  const double e1 = std::exp(sum_first - m);
  const double e2 = std::exp(sum_second - m);
  return {e1 / (e1 + e2), e2 / (e1 + e2)};
}

PreferenceProb preference_prob(const Params& params, const Segment& first, const Segment& second) {
  const Eigen::MatrixXd a = first.inputs();
  const Eigen::MatrixXd b = second.inputs();
  check_pair(a, b);
  return bt_probability(mlp_forward(params, a).sum(), mlp_forward(params, b).sum());
}

double cross_entropy(const PreferenceProb& p, double y_first, double y_second) {
  return -(y_first * clamped_log(p.p_first) + y_second * clamped_log(p.p_second));
}

// ---------------------------------------------------------------- objective

std::size_t PairObjective::add_pair(Eigen::MatrixXd first, Eigen::MatrixXd second) {
  check_pair(first, second);
  pairs.push_back({std::move(first), std::move(second)});
  return pairs.size() - 1;
}

namespace {

struct Forward {
  MlpTape<double> tape;
  std::vector<Eigen::Index> offsets;  // column offset of each pair's first segment
  std::vector<PreferenceProb> probs;
};

Forward run_forward(const Params& params, const PairObjective& obj) {
  if (obj.pairs.empty()) throw InputError("objective has no segment pairs");
  const auto rows = static_cast<Eigen::Index>(params.input_dim());
  Eigen::Index total = 0;
  Forward f;
  f.offsets.reserve(obj.pairs.size());
  for (const auto& p : obj.pairs) {
    check_pair(p.first, p.second);
    if (p.first.rows() != rows) throw InputError("pair input dimension does not match network");
    f.offsets.push_back(total);
    total += 2 * p.first.cols();
  }
  Eigen::MatrixXd stacked(rows, total);
  for (std::size_t i = 0; i < obj.pairs.size(); ++i) {
    const auto h = obj.pairs[i].first.cols();
    stacked.middleCols(f.offsets[i], h) = obj.pairs[i].first;
    stacked.middleCols(f.offsets[i] + h, h) = obj.pairs[i].second;
  }
  std::vector<Eigen::MatrixXd> masks;
  if (obj.dropout > 0.0) {
    Rng rng(obj.dropout_seed);
    masks = dropout_masks(params, total, obj.dropout, rng);
  }
  f.tape = mlp_forward_tape(params, stacked, std::move(masks));
  f.probs.reserve(obj.pairs.size());
  for (std::size_t i = 0; i < obj.pairs.size(); ++i) {
    const auto h = obj.pairs[i].first.cols();
    const double s1 = f.tape.output.segment(f.offsets[i], h).sum();
    const double s2 = f.tape.output.segment(f.offsets[i] + h, h).sum();
    f.probs.push_back(bt_probability(s1, s2));
  }
  return f;
}

void check_terms(const PairObjective& obj) {
  for (const auto& t : obj.cross_entropy) {
    if (t.pair >= obj.pairs.size()) throw InputError("cross-entropy term refers to a missing pair");
  }
  for (const auto& t : obj.consistency) {
    if (t.pair_a >= obj.pairs.size() || t.pair_b >= obj.pairs.size()) {
      throw InputError("consistency term refers to a missing pair");
    }
  }
}

double loss_from(const PairObjective& obj, const std::vector<PreferenceProb>& probs) {
  double loss = 0.0;
  for (const auto& t : obj.cross_entropy) {
    loss += t.weight * cross_entropy(probs[t.pair], t.y_first, t.y_second);
  }
  for (const auto& t : obj.consistency) {
    const double diff = probs[t.pair_a].p_first - probs[t.pair_b].p_first;
    loss += t.weight * diff * diff;
  }
  return loss;
}

}  // namespace

std::vector<PreferenceProb> objective_predictions(const Params& params, const PairObjective& obj) {
  return run_forward(params, obj).probs;
}

double evaluate_objective(const Params& params, const PairObjective& obj) {
  check_terms(obj);
  return loss_from(obj, run_forward(params, obj).probs);
}

double loss_and_gradient(const Params& params, const PairObjective& obj, Gradient& grad) {
  check_terms(obj);
  const Forward f = run_forward(params, obj);
  const double loss = loss_from(obj, f.probs);

  // d loss / d (S_first - S_second) for every pair.
  std::vector<double> d_logit(obj.pairs.size(), 0.0);
  for (const auto& t : obj.cross_entropy) {
    const auto& p = f.probs[t.pair];
    // d log p1 / d delta = p2 and d log p2 / d delta = -p1, zero where clamped.
    const double g1 = p.p_first >= kLogFloor ? p.p_second : 0.0;
    const double g2 = p.p_second >= kLogFloor ? -p.p_first : 0.0;
    d_logit[t.pair] -= t.weight * (t.y_first * g1 + t.y_second * g2);
  }
  for (const auto& t : obj.consistency) {
    const auto& a = f.probs[t.pair_a];
    const auto& b = f.probs[t.pair_b];
    const double diff = a.p_first - b.p_first;
    d_logit[t.pair_a] += 2.0 * t.weight * diff * a.p_first * a.p_second;
    d_logit[t.pair_b] -= 2.0 * t.weight * diff * b.p_first * b.p_second;
  }

  Eigen::RowVectorXd d_out(f.tape.output.size());
  for (std::size_t i = 0; i < obj.pairs.size(); ++i) {
    const auto h = obj.pairs[i].first.cols();
    d_out.segment(f.offsets[i], h).setConstant(d_logit[i]);
    d_out.segment(f.offsets[i] + h, h).setConstant(-d_logit[i]);
  }
  grad = params.zeros_like();
  mlp_backward(params, f.tape, d_out, grad);
  return loss;
}

Gradient grad_loss(const Params& params, const PairObjective& obj) {
  if (obj.empty()) throw InputError("empty batch");
  Gradient g;
  loss_and_gradient(params, obj, g);
  return g;
}

// ---------------------------------------------------------------- optimizer

AdamState AdamState::zeros_like(const Params& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(Params& params, const Gradient& grad, AdamState& state, const AdamConfig& cfg) {
  if (!params.same_shape(grad)) throw InputError("gradient shape does not match parameters");
  if (state.m.layers.empty() && state.step == 0) state = AdamState::zeros_like(params);
  if (!params.same_shape(state.m) || !params.same_shape(state.v)) {
    throw InputError("optimizer state shape does not match parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  };
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    update(params.layers[k].weight, grad.layers[k].weight, state.m.layers[k].weight,
           state.v.layers[k].weight);
    update(params.layers[k].bias, grad.layers[k].bias, state.m.layers[k].bias,
           state.v.layers[k].bias);
  }
}

// ---------------------------------------------------------------- ensemble

RewardEnsemble RewardEnsemble::create(const Architecture& arch, std::size_t count,
                                      std::uint64_t seed) {
  if (count == 0) throw ConfigError("reward.ensemble must be at least 1");
  RewardEnsemble ens;
  ens.arch = arch;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, 0x7e3d0000 + i);
    ens.members.push_back(init_mlp<double>(arch, rng));
    ens.optimizers.push_back(AdamState::zeros_like(ens.members.back()));
  }
  return ens;
}

Eigen::RowVectorXd RewardEnsemble::mean_reward(const Eigen::MatrixXd& inputs) const {
  if (members.empty()) throw ConfigError("empty reward ensemble");
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(inputs.cols());
  for (const auto& m : members) sum += mlp_forward(m, inputs);
  return sum / static_cast<double>(members.size());
}

EnsemblePrediction ensemble_prob(const RewardEnsemble& ens, const Eigen::MatrixXd& first_inputs,
                                 const Eigen::MatrixXd& second_inputs) {
  if (ens.members.empty()) throw ConfigError("empty reward ensemble");
  check_pair(first_inputs, second_inputs);
  EnsemblePrediction out;
  double sum = 0.0;
  for (const auto& m : ens.members) {
    const auto p = bt_probability(mlp_forward(m, first_inputs).sum(),
                                  mlp_forward(m, second_inputs).sum());
    out.members.push_back(p);
    sum += p.p_first;
  }
  const double n = static_cast<double>(ens.members.size());
  const double mean = sum / n;
  double var = 0.0;
  double mean_second = 0.0;
  for (const auto& p : out.members) {
    var += (p.p_first - mean) * (p.p_first - mean);
    mean_second += p.p_second;
  }
  out.mean = {mean, mean_second / n};
  out.std_first = std::sqrt(var / n);
  return out;
}

EnsemblePrediction ensemble_prob(const RewardEnsemble& ens, const Segment& first,
                                 const Segment& second) {
  return ensemble_prob(ens, first.inputs(), second.inputs());
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr const char* kCheckpointHeader = "rewardnet v1";

void write_values(std::ostream& out, const char* tag, const Params& p) {
  out << tag;
  const Eigen::VectorXd flat = p.flatten();
  char buf[64];
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    const auto res = std::to_chars(buf, buf + sizeof buf, flat[i]);
    out << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
  }
  out << '\n';
}

void read_values(const std::string& line, std::size_t lineno, const char* tag, Params& p) {
  std::istringstream in(line);
  std::string word;
  in >> word;
  if (word != tag) throw FormatError(std::string("expected '") + tag + "' record", lineno);
  std::size_t read = 0;
  const std::size_t want = p.parameter_count();
  bool ok = true;
  p.for_each_coefficient([&](double& x) {
    if (!ok || !(in >> word)) {
      ok = false;
      return;
    }
    const auto res = std::from_chars(word.data(), word.data() + word.size(), x);
    if (res.ec != std::errc() || res.ptr != word.data() + word.size()) ok = false;
    ++read;
  });
  if (!ok || read != want) throw FormatError("bad or short value list", lineno);
  if (in >> word) throw FormatError("too many values", lineno);
}

}  // namespace

void save_checkpoint(const RewardEnsemble& ens, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  out << kCheckpointHeader << '\n';
  out << "arch " << ens.arch.input_dim << ' ' << ens.arch.hidden_layers << ' '
      << ens.arch.hidden_units << " members " << ens.members.size() << '\n';
  for (std::size_t i = 0; i < ens.members.size(); ++i) {
    if (ens.members[i].input_dim() != ens.arch.input_dim) {
      throw StateError("ensemble member does not match the declared architecture");
    }
    const AdamState& opt =
        i < ens.optimizers.size() ? ens.optimizers[i] : AdamState::zeros_like(ens.members[i]);
    out << "member " << i << " step " << opt.step << '\n';
    write_values(out, "params", ens.members[i]);
    write_values(out, "m", opt.m);
    write_values(out, "v", opt.v);
  }
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

RewardEnsemble load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read checkpoint " + path.string());
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != kCheckpointHeader) {
    throw FormatError(std::string("expected header '") + kCheckpointHeader + "'", lineno);
  }
  ++lineno;
  if (!std::getline(in, line)) throw FormatError("missing architecture record", lineno);
  RewardEnsemble ens;
  std::size_t count = 0;
  {
    std::istringstream rec(line);
    std::string w1, w2;
    if (!(rec >> w1 >> ens.arch.input_dim >> ens.arch.hidden_layers >> ens.arch.hidden_units >>
          w2 >> count) ||
        w1 != "arch" || w2 != "members" || ens.arch.input_dim == 0 || ens.arch.hidden_units == 0) {
      throw FormatError("bad architecture record", lineno);
    }
  }
  Rng shape_rng(0);
  const Params shape = init_mlp<double>(ens.arch, shape_rng);
  for (std::size_t i = 0; i < count; ++i) {
    ++lineno;
    if (!std::getline(in, line)) throw FormatError("truncated checkpoint", lineno);
    std::istringstream rec(line);
    std::string w1, w2;
    std::size_t idx = 0;
    AdamState opt;
    if (!(rec >> w1 >> idx >> w2 >> opt.step) || w1 != "member" || w2 != "step" || idx != i) {
      throw FormatError("bad member record", lineno);
    }
    Params p = shape;
    opt.m = shape;
    opt.v = shape;
    const char* tags[] = {"params", "m", "v"};
    Params* targets[] = {&p, &opt.m, &opt.v};
    for (int k = 0; k < 3; ++k) {
      ++lineno;
      if (!std::getline(in, line)) throw FormatError("truncated checkpoint", lineno);
      read_values(line, lineno, tags[k], *targets[k]);
    }
    ens.members.push_back(std::move(p));
    ens.optimizers.push_back(std::move(opt));
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty()) throw FormatError("trailing data after declared members", lineno);
  }
  return ens;
}

}  // namespace pbrl::rewardnet
