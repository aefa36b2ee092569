#include "pbrl/harness/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pbrl/error.hpp"
#include "pbrl/sampler.hpp"
#include "pbrl/ssl.hpp"

namespace pbrl::harness {

using experience::DatasetRole;
using experience::PreferenceDataset;
using experience::Provenance;
using experience::QueryTriple;
using experience::SegmentPair;
using nlohmann::json;

namespace {

// Child stream ids.
enum Stream : std::uint64_t {
  kAgentStream = 1,
  kSamplerStream,
  kAnnotatorStream,
  kSslStream,
  kEvalSetStream,
  kTrapStream,
  kRolloutStream,
  kCorrelationStream,
  kReplayStream,
  kRewardInitStream,
};

envsim::EnvConfig eval_env_config(const ExperimentConfig& cfg) {
  envsim::EnvConfig e = cfg.env;
  e.seed = derive_seed(cfg.env.seed, 0xe7a1);
  return e;
}

rewardnet::Architecture architecture(const ExperimentConfig& cfg, const envsim::EnvSpec& spec) {
  return {spec.input_dim(), cfg.reward.layers, cfg.reward.hidden};
}

std::size_t trap_length(const ExperimentConfig& cfg) {
  return cfg.traps.segment_length == 0 ? cfg.schedule.segment_length : cfg.traps.segment_length;
}

}  // namespace

std::vector<QueryTriple> oracle_eval_pairs(const experience::ReplayBuffer& buffer,
                                           const envsim::GroundTruthReward& gt, std::size_t count,
                                           std::size_t segment_length, Rng& rng) {
  std::vector<QueryTriple> out;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 50 * count + 100;
  while (out.size() < count && attempts < max_attempts) {
    ++attempts;
    SegmentPair p = buffer.sample_segment_pair(segment_length, rng);
    const double r1 = annotators::segment_return(p.first, gt);
    const double r2 = annotators::segment_return(p.second, gt);
    if (r1 == r2) continue;
    auto label = annotators::oracle_label(p.first, p.second, gt);
    out.push_back({std::move(p.first), std::move(p.second), label, Provenance::oracle});
  }
  return out;
}

double preference_accuracy(const rewardnet::RewardEnsemble& ens, const std::vector<QueryTriple>& triples) {
  if (triples.empty()) return 0.0;
  double correct = 0.0;
  for (const auto& t : triples) {
    const double p = rewardnet::ensemble_prob(ens, t.first, t.second).mean.p_first;
    const bool first = t.label.p_first > t.label.p_second;
    if (p == 0.5) {
      correct += 0.5;
    } else if ((p > 0.5) == first) {
      correct += 1.0;
    }
  }
  return correct / static_cast<double>(triples.size());
}

double mean_prediction_entropy(const rewardnet::RewardEnsemble& ens, const std::vector<QueryTriple>& triples) {
  if (triples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& t : triples) sum += binary_entropy(rewardnet::ensemble_prob(ens, t.first, t.second).mean.p_first);
  return sum / static_cast<double>(triples.size());
}

double oracle_ceiling(const ExperimentConfig& cfg) {
  auto env = envsim::make_env(eval_env_config(cfg));
  Rng rng = make_rng(cfg.seed, kRolloutStream);
  if (const auto mdp = env->tabular_mdp()) {
    const auto vi = agent::value_iteration(*mdp, cfg.agent.gamma);
    return agent::evaluate(vi.policy, *env, cfg.eval.episodes, rng).mean_return;
  }
  auto train_env = envsim::make_env(cfg.env);
  agent::PolicyTable policy = agent::make_policy(*train_env);
  agent::EnvCursor cursor;
  experience::ReplayBuffer buffer(cfg.schedule.buffer_capacity, train_env->spec());
  const auto gt = train_env->ground_truth();
  Rng agent_rng = make_rng(cfg.seed, kAgentStream);
  const std::size_t steps = std::max<std::size_t>(20000, cfg.schedule.total_steps);
  agent::policy_update(policy, *train_env, cursor, buffer, [&](const auto& s, const auto& a) { return gt(s, a); },
                       steps, cfg.agent, agent_rng);
  return agent::evaluate(policy, *env, cfg.eval.episodes, rng).mean_return;
}

double random_baseline(const ExperimentConfig& cfg) {
  auto env = envsim::make_env(eval_env_config(cfg));
  Rng rng = make_rng(cfg.seed, kRolloutStream + 100);
  return agent::evaluate_random(*env, std::max<std::size_t>(100, cfg.eval.episodes), rng).mean_return;
}

void save_policy(const agent::PolicyTable& policy, const std::filesystem::path& path) {
  json rows = json::array();
  for (std::size_t s = 0; s < policy.state_count(); ++s) {
    json row = json::array();
    for (std::size_t a = 0; a < policy.action_count(); ++a) row.push_back(policy.at(s, a));
    rows.push_back(row);
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write policy " + path.string());
  out << json{{"schema", "policy v1"}, {"q", rows}}.dump() << '\n';
}

agent::PolicyTable load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read policy " + path.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("schema", "") != "policy v1" || !j.contains("q")) {
    throw FormatError("not a policy v1 file", 1);
  }
  const auto& rows = j["q"];
  const auto ns = static_cast<Eigen::Index>(rows.size());
  const auto na = ns == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(rows[0].size());
  Eigen::MatrixXd q(ns, na);
  for (Eigen::Index s = 0; s < ns; ++s) {
    if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(s)].size()) != na) throw FormatError("ragged policy table", 1);
    for (Eigen::Index a = 0; a < na; ++a) q(s, a) = rows[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)].get<double>();
  }
  return agent::PolicyTable(std::move(q));
}

agent::EvalMetrics evaluate_policy_file(const ExperimentConfig& cfg, const std::filesystem::path& path,
                                        std::size_t episodes) {
  auto env = envsim::make_env(eval_env_config(cfg));
  Rng rng = make_rng(cfg.seed, kRolloutStream);
  return agent::evaluate(load_policy(path), *env, episodes, rng);
}

// ---------------------------------------------------------------- main loop

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate();
  if (cfg.annotator_kind == AnnotatorKind::human && options.human == nullptr) {
    throw ConfigError("annotator.kind = human needs a labeling channel (use the serve command)");
  }
  const auto started = std::chrono::steady_clock::now();
  const ssl::SSLConfig ssl_cfg = cfg.resolved_ssl();
  const std::size_t h = cfg.schedule.segment_length;

  auto env = envsim::make_env(cfg.env);
  auto eval_env = envsim::make_env(eval_env_config(cfg));
  const auto gt = env->ground_truth();
  const auto& spec = env->spec();

  ExperimentResult result;
  result.ensemble = rewardnet::RewardEnsemble::create(architecture(cfg, spec), cfg.reward.ensemble,
                                                      derive_seed(cfg.seed, kRewardInitStream));
  result.policy = agent::make_policy(*env);
  experience::ReplayBuffer buffer(cfg.schedule.buffer_capacity, spec);
  agent::EnvCursor cursor;

  Rng agent_rng = make_rng(cfg.seed, kAgentStream);
  Rng sampler_rng = make_rng(cfg.seed, kSamplerStream);
  Rng annotator_rng = make_rng(cfg.seed, kAnnotatorStream);
  Rng ssl_rng = make_rng(cfg.seed, kSslStream);
  Rng rollout_rng = make_rng(cfg.seed, kRolloutStream);
  Rng replay_rng = make_rng(cfg.seed, kReplayStream);

  auto& ens = result.ensemble;
  const agent::RewardFn learned = [&ens, &spec](const envsim::EnvState& s, const envsim::EnvAction& a) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(spec.input_dim()));
    x << s.features, envsim::action_features(spec, a);
    return ens.mean_reward(x)(0);
  };

  std::unique_ptr<MetricsWriter> writer;
  if (options.output_dir) {
    std::filesystem::create_directories(*options.output_dir);
    std::ofstream(*options.output_dir / "config.json") << print_config(cfg);
    writer = std::make_unique<MetricsWriter>(*options.output_dir / "metrics.jsonl",
                                             *options.output_dir / "timing.jsonl");
  }

  // Warmup with random actions; the frozen evaluation material comes from it.
  agent::explore(*env, cursor, buffer, learned, cfg.schedule.warmup_steps, agent_rng);
  if (buffer.valid_positions(h) == 0) {
    throw ConfigError("warmup produced no episode of length schedule.segment_length; raise "
                      "schedule.warmup_steps or lower the segment length");
  }
  {
    Rng eval_rng = make_rng(cfg.seed, kEvalSetStream);
    result.eval_set = oracle_eval_pairs(buffer, gt, cfg.eval.pairs, h, eval_rng);
  }
  std::vector<annotators::TrapPair> trap_pool;
  if (cfg.traps.pool > 0 || cfg.eval.trap_pairs > 0) {
    Rng trap_rng = make_rng(cfg.seed, kTrapStream);
    trap_pool = annotators::generate_trap_pairs(*env, cfg.traps.pool, trap_length(cfg), trap_rng);
    const auto eval_traps = annotators::generate_trap_pairs(*env, cfg.eval.trap_pairs, trap_length(cfg), trap_rng);
    for (const auto& t : eval_traps) {
      result.eval_set.push_back(t.base);
      result.eval_set.push_back(t.perturbed);
    }
  }
  Eigen::MatrixXd corr_inputs;
  std::vector<double> corr_truth;
  {
    Rng corr_rng = make_rng(cfg.seed, kCorrelationStream);
    const std::size_t n = std::min(cfg.eval.correlation_samples, buffer.size());
    corr_inputs.resize(static_cast<Eigen::Index>(spec.input_dim()), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& t = buffer[uniform_index(corr_rng, buffer.size())];
      corr_inputs.col(static_cast<Eigen::Index>(i)) << t.state.features, envsim::action_features(spec, t.action);
      corr_truth.push_back(experience::GroundTruthAccess::reward(t));
    }
  }

  const ssl::UnlabeledSource buffer_pairs = ssl::buffer_source(buffer, h);
  const double trap_share = cfg.traps.unlabeled_fraction;
  const ssl::UnlabeledSource source = [&](Rng& rng) -> SegmentPair {
    if (trap_share > 0.0 && !trap_pool.empty() && uniform01(rng) < trap_share) {
      const auto& t = trap_pool[uniform_index(rng, trap_pool.size())];
      const auto& q = bernoulli(rng, 0.5) ? t.base : t.perturbed;
      return {q.first, q.second};
    }
    return buffer_pairs(rng);
  };

  std::size_t session = 0;
  std::size_t policy_steps = 0;
  const std::size_t budget = cfg.schedule.budget;
  for (;;) {
    const bool feedback = result.queries_used < budget;
    const bool steps_left = cfg.schedule.total_steps > 0 && policy_steps < cfg.schedule.total_steps;
    if (!feedback && !steps_left && !result.records.empty()) break;

    MetricsRecord rec;
    rec.session = session;
    if (feedback) {
      const std::size_t m = std::min(cfg.schedule.queries_per_session, budget - result.queries_used);
      sampler::QueryBatchSpec qspec;
      qspec.select_count = m;
      qspec.candidate_count = m * cfg.sampler.candidates_per_query;
      qspec.scheme = (session == 0 && cfg.sampler.first_uniform) ? sampler::Scheme::uniform : cfg.sampler.scheme;
      qspec.segment_length = h;
      auto queries = sampler::select_queries(buffer, ens, qspec, sampler_rng);

      std::size_t added = 0;
      if (cfg.annotator_kind == AnnotatorKind::human) {
        options.human->set_progress(session, result.queries_used, budget);
        const auto ids = options.human->post(queries);
        const auto answers = options.human->wait(
            ids, std::chrono::milliseconds(static_cast<long long>(cfg.schedule.human_timeout_s * 1000.0)));
        std::size_t consumed = ids.size();
        for (const auto& a : answers) {
          const auto label = label_for(a.choice);
          if (!label) {
            if (!cfg.schedule.skip_counts) --consumed;
            continue;
          }
          const auto& pair = queries[static_cast<std::size_t>(
              std::find(ids.begin(), ids.end(), a.id) - ids.begin())];
          result.labeled.append({pair.first, pair.second, *label, Provenance::human});
          ++added;
        }
        result.queries_used += consumed;
        options.human->set_progress(session, result.queries_used, budget);
      } else {
        for (auto& q : queries) {
          const auto label = cfg.annotator_kind == AnnotatorKind::oracle
                                 ? annotators::oracle_label(q.first, q.second, gt)
                                 : annotators::noisy_label(q.first, q.second, gt, cfg.annotator, annotator_rng);
          if (label.kind == experience::LabelKind::skipped) continue;
          result.labeled.append({std::move(q.first), std::move(q.second), label, Provenance::oracle});
          ++added;
        }
        result.queries_used += queries.size();
      }

      if (!result.labeled.empty()) {
        const auto report = ssl::self_training_session(ens, result.labeled, result.pseudo, source, added,
                                                       ssl_cfg, ssl_rng);
        rec.pseudo_rejected = report.pseudo_rejected;
        buffer.relabel_batched([&ens](const Eigen::MatrixXd& x) -> Eigen::VectorXd {
          return ens.mean_reward(x).transpose();
        });
        agent::replay_sweeps(result.policy, *env, buffer, cfg.schedule.relabel_sweeps, cfg.agent, replay_rng);
      }
    }

    std::size_t steps = cfg.agent.steps_per_session;
    if (cfg.schedule.total_steps > 0) steps = std::min(steps, cfg.schedule.total_steps - std::min(policy_steps, cfg.schedule.total_steps));
    agent::policy_update(result.policy, *env, cursor, buffer, learned, steps, cfg.agent, agent_rng);
    policy_steps += steps;

    const auto eval = agent::evaluate(result.policy, *eval_env, cfg.eval.episodes, rollout_rng);
    rec.env_steps = cursor.total_steps;
    rec.labeled = result.labeled.size();
    rec.pseudo = result.pseudo.size();
    rec.queries_used = result.queries_used;
    rec.accuracy = preference_accuracy(ens, result.eval_set);
    rec.mean_entropy = mean_prediction_entropy(ens, result.eval_set);
    if (corr_inputs.cols() > 1) {
      const Eigen::RowVectorXd pred = ens.mean_reward(corr_inputs);
      std::vector<double> p(pred.data(), pred.data() + pred.size());
      rec.reward_correlation = spearman(p, corr_truth);
    }
    rec.policy_return = eval.mean_return;
    rec.hazard_rate = eval.hazard_rate;
    rec.success_rate = eval.success_rate;
    rec.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.final_eval = eval;
    result.records.push_back(rec);
    if (writer) writer->append(rec);
    if (options.on_record) options.on_record(rec);
    ++session;
  }

  if (options.output_dir) {
    rewardnet::save_checkpoint(ens, *options.output_dir / "reward.ckpt");
    experience::persist(result.labeled, *options.output_dir / "labeled.prefdata");
    experience::persist(result.pseudo, *options.output_dir / "pseudo.prefdata");
    save_policy(result.policy, *options.output_dir / "policy.json");
  }
  return result;
}

}  // namespace pbrl::harness
