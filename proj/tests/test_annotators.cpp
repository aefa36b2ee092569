#include <doctest.h>

#include <cmath>
#include <limits>

#include "pbrl/annotators.hpp"
#include "pbrl/error.hpp"
#include "support.hpp"

using namespace pbrl;
using namespace pbrl::annotators;
using experience::LabelKind;

namespace {

// r(s, a) = first state feature, on the line-world spec.
GroundTruthReward first_feature_reward() {
  const auto spec = envsim::make_env("line-world", 0)->spec();
  return GroundTruthReward(spec, [](const envsim::EnvState& s, const envsim::EnvAction&) {
    return s.features[0];
  });
}

Segment constant_segment(const GroundTruthReward& gt, std::vector<double> rewards) {
  const auto& spec = gt.spec();
  Segment s;
  s.states = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.state_dim), static_cast<Eigen::Index>(rewards.size()));
  s.actions = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.action_feature_dim()), s.states.cols());
  for (std::size_t t = 0; t < rewards.size(); ++t) s.states(0, static_cast<Eigen::Index>(t)) = rewards[t];
  return s;
}

Segment random_line_segment(const GroundTruthReward& gt, Eigen::Index h, Rng& rng) {
  auto s = pbrl::testing::random_segment(static_cast<Eigen::Index>(gt.spec().state_dim),
                                         static_cast<Eigen::Index>(gt.spec().action_feature_dim()), h, rng);
  return s;
}

AnnotatorConfig noise_free() { return AnnotatorConfig{}; }

}  // namespace

TEST_CASE("default annotator is noise free") {
  CHECK(noise_free().noise_free());
  AnnotatorConfig c;
  c.epsilon = 0.1;
  CHECK_FALSE(c.noise_free());
}

TEST_CASE("oracle prefers the larger return and gives ties to the second") {
  const auto gt = first_feature_reward();
  const auto a = constant_segment(gt, {0.2, 0.3});
  const auto b = constant_segment(gt, {0.1, 0.3});
  CHECK(oracle_label(a, b, gt) == experience::PreferenceLabel::first_preferred());
  CHECK(oracle_label(b, a, gt) == experience::PreferenceLabel::second_preferred());
  CHECK(oracle_label(a, a, gt) == experience::PreferenceLabel::second_preferred());
  CHECK_THROWS_AS(oracle_label(a, constant_segment(gt, {0.1}), gt), InputError);
}

TEST_CASE("noise-free annotator equals the oracle on distinct-sum pairs") {
  const auto gt = first_feature_reward();
  Rng rng(1);
  Rng label_rng(2);
  const Rng untouched = label_rng;
  for (int i = 0; i < 10000; ++i) {
    const auto a = random_line_segment(gt, 5, rng);
    const auto b = random_line_segment(gt, 5, rng);
    REQUIRE(segment_return(a, gt) != segment_return(b, gt));
    CHECK(noisy_label(a, b, gt, noise_free(), label_rng) == oracle_label(a, b, gt));
  }
  CHECK(label_rng == untouched);
}

TEST_CASE("discounted return weighs later steps more") {
  const auto gt = first_feature_reward();
  const auto s = constant_segment(gt, {1.0, 2.0, 4.0});
  CHECK(discounted_return(s, gt, 1.0) == 7.0);
  CHECK(discounted_return(s, gt, 0.5) == doctest::Approx(0.25 * 1.0 + 0.5 * 2.0 + 4.0).epsilon(1e-15));
}

TEST_CASE("myopic annotator can reverse the undiscounted order") {
  const auto gt = first_feature_reward();
  const auto early = constant_segment(gt, {0.9, 0.0, 0.0});
  const auto late = constant_segment(gt, {0.0, 0.0, 0.5});
  AnnotatorConfig cfg;
  Rng rng(3);
  CHECK(noisy_label(early, late, gt, cfg, rng).p_first == 1.0);
  cfg.gamma = 0.5;
  CHECK(noisy_label(early, late, gt, cfg, rng).p_second == 1.0);
}

TEST_CASE("unit return gap under unit rationality") {
  const auto gt = first_feature_reward();
  const auto a = constant_segment(gt, {1.0});
  const auto b = constant_segment(gt, {0.0});
  AnnotatorConfig cfg;
  cfg.beta = 1.0;
  Rng rng(4);
  std::size_t first = 0;
  const std::size_t n = 1000000;
  for (std::size_t i = 0; i < n; ++i) first += noisy_label(a, b, gt, cfg, rng).p_first == 1.0;
  CHECK(std::abs(static_cast<double>(first) / n - 0.7311) <= 0.003);
  CHECK(stochastic_preference(1.0, 0.0, 1.0) == doctest::Approx(0.7310585786300049).epsilon(1e-15));
}

TEST_CASE("stochastic preference is stable in both tails") {
  CHECK(stochastic_preference(1e6, 0.0, 1.0) == 1.0);
  CHECK(stochastic_preference(0.0, 1e6, 1.0) == 0.0);
  CHECK(stochastic_preference(0.3, 0.3, 2.0) == 0.5);
  CHECK(stochastic_preference(1.0, 0.0, 0.0) == 0.5);
  CHECK(stochastic_preference(1.0, 1.0, std::numeric_limits<double>::infinity()) == 0.0);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double a = uniform_real(rng, -100, 100);
    const double b = uniform_real(rng, -100, 100);
    const double beta = uniform_real(rng, 0, 10);
    CHECK(stochastic_preference(a, b, beta) + stochastic_preference(b, a, beta) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("mistake noise flips at the configured rate") {
  const auto gt = first_feature_reward();
  const auto a = constant_segment(gt, {1.0});
  const auto b = constant_segment(gt, {0.0});
  AnnotatorConfig cfg;
  cfg.epsilon = 1.0;
  Rng rng(6);
  CHECK(noisy_label(a, b, gt, cfg, rng).p_second == 1.0);
  cfg.epsilon = 0.15;
  std::size_t flips = 0;
  const std::size_t n = 200000;
  for (std::size_t i = 0; i < n; ++i) flips += noisy_label(a, b, gt, cfg, rng).p_second == 1.0;
  // binomial sd ~ 8e-4
  CHECK(std::abs(static_cast<double>(flips) / n - 0.15) < 0.004);
}

TEST_CASE("skip and equal thresholds") {
  const auto gt = first_feature_reward();
  const auto a = constant_segment(gt, {0.1, 0.1});
  const auto b = constant_segment(gt, {0.1, 0.05});
  AnnotatorConfig cfg;
  Rng rng(7);
  cfg.delta_skip = 0.5;
  CHECK(noisy_label(a, b, gt, cfg, rng).kind == LabelKind::skipped);
  cfg.delta_skip = 0.2;
  CHECK(noisy_label(a, b, gt, cfg, rng).kind == LabelKind::hard);
  cfg.delta_equal = 0.06;
  CHECK(noisy_label(a, b, gt, cfg, rng) == experience::PreferenceLabel::equal());
  cfg.delta_equal = 0.04;
  CHECK(noisy_label(a, b, gt, cfg, rng) == experience::PreferenceLabel::first_preferred());
  // equal labels are never flipped
  cfg.delta_equal = 0.06;
  cfg.epsilon = 1.0;
  CHECK(noisy_label(a, b, gt, cfg, rng) == experience::PreferenceLabel::equal());
}

TEST_CASE("annotator config validation") {
  AnnotatorConfig c;
  c.beta = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.gamma = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.gamma = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.epsilon = 1.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.delta_equal = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.delta_skip = std::nan("");
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(AnnotatorConfig{}.validate());
}

TEST_CASE("sequence distance") {
  const auto gt = first_feature_reward();
  const auto a = constant_segment(gt, {1.0, 0.0});
  const auto b = constant_segment(gt, {0.0, 0.0});
  CHECK(sequence_distance(a, a) == 0.0);
  CHECK(sequence_distance(a, b) == 1.0);
  CHECK_THROWS_AS(sequence_distance(a, constant_segment(gt, {0.0})), InputError);
}

TEST_CASE("trap pairs flip the preference through one local change") {
  auto env = envsim::make_env("grid-hazard", 0);
  const auto* g = env->as_grid();
  const auto gt = env->ground_truth();
  Rng rng(8);
  const auto traps = generate_trap_pairs(*env, 40, 20, rng);
  REQUIRE(traps.size() == 40);
  for (const auto& t : traps) {
    const auto& s1 = t.base.first;
    const auto& s2 = t.base.second;
    const auto& s1p = t.perturbed.first;
    CHECK(t.base.label == experience::PreferenceLabel::first_preferred());
    CHECK(t.perturbed.label == experience::PreferenceLabel::second_preferred());
    CHECK(t.perturbed.second == s2);
    CHECK(s1.length() == 20);
    CHECK(t.locality_distance == sequence_distance(s1, s1p));
    CHECK(t.locality_distance <= kTrapLocalityBound);
    CHECK(t.locality_distance > 0.0);
    CHECK(s1.states == s1p.states);
    CHECK(segment_return(s1, gt) > segment_return(s2, gt));
    CHECK(segment_return(s1p, gt) < segment_return(s2, gt));
    // sigma1 enters the goal on its last step
    const auto last = s1.length() - 1;
    const auto a = envsim::action_from_features(env->spec(), s1.actions.col(static_cast<Eigen::Index>(last)));
    CHECK(g->next_cell(g->decode(s1.states.col(static_cast<Eigen::Index>(last))), a.index) == g->goal());
    CHECK((s1.source_episode & experience::kSyntheticEpisodeBit) != 0);
  }
}

TEST_CASE("trap generation rejects unsuitable inputs") {
  Rng rng(9);
  auto line = envsim::make_env("line-world", 0);
  CHECK_THROWS_AS(generate_trap_pairs(*line, 1, 10, rng), ConfigError);
  auto grid = envsim::make_env("grid-hazard", 0);
  CHECK_THROWS_AS(generate_trap_pairs(*grid, 1, 1, rng), InputError);
  CHECK(generate_trap_pairs(*grid, 0, 10, rng).empty());
  envsim::EnvConfig cfg;
  cfg.layout = {"S...", "...G"};
  auto clean = envsim::make_env(cfg);
  CHECK_THROWS_AS(generate_trap_pairs(*clean, 1, 4, rng), ConfigError);
}
