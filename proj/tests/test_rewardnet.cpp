#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "pbrl/error.hpp"
#include "pbrl/rewardnet.hpp"
#include "support.hpp"

using namespace pbrl;
using namespace pbrl::rewardnet;
using pbrl::testing::random_segment;
using pbrl::testing::small_net;

namespace {

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / (std::string("pbrl_rewardnet_") + name);
}

PairObjective random_objective(Rng& rng, std::size_t input_dim, std::size_t pairs, Eigen::Index h) {
  PairObjective obj;
  for (std::size_t k = 0; k < pairs; ++k) {
    const auto a = random_segment(static_cast<Eigen::Index>(input_dim) - 2, 2, h, rng);
    const auto b = random_segment(static_cast<Eigen::Index>(input_dim) - 2, 2, h, rng);
    obj.add_pair(a.inputs(), b.inputs());
  }
  return obj;
}

}  // namespace

TEST_CASE("one-unit reward gap gives the logistic of one") {
  const auto p = bt_probability(1.0, 0.0);
  CHECK(std::abs(p.p_first - 0.7310585786300049) <= 1e-9);
  CHECK(p.p_second == doctest::Approx(1.0 - 0.7310585786300049));
}

TEST_CASE("probabilities sum to one and swap antisymmetrically") {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double a = uniform_real(rng, -60.0, 60.0);
    const double b = uniform_real(rng, -60.0, 60.0);
    const auto p = bt_probability(a, b);
    const auto q = bt_probability(b, a);
    CHECK(std::abs(p.p_first + p.p_second - 1.0) <= 1e-12);
    CHECK(std::abs(p.p_first - q.p_second) <= 1e-12);
  }
}

TEST_CASE("no overflow at extreme reward sums") {
  for (double s : {50.0, -50.0, 1e6, -1e6, 1e300}) {
    const auto p = bt_probability(s, -s);
    CHECK(std::isfinite(p.p_first));
    CHECK(std::isfinite(p.p_second));
    CHECK(p.p_first + p.p_second == doctest::Approx(1.0));
  }
  CHECK(bt_probability(50.0, -50.0).p_first == doctest::Approx(1.0));
  CHECK(bt_probability(-50.0, 50.0).p_first < 1e-40);
}

TEST_CASE("a common reward shift leaves preferences unchanged") {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double a = uniform_real(rng, -20.0, 20.0);
    const double b = uniform_real(rng, -20.0, 20.0);
    const double c = uniform_real(rng, -20.0, 20.0);
    CHECK(bt_probability(a + c, b + c).p_first == doctest::Approx(bt_probability(a, b).p_first).epsilon(1e-12));
  }
}

TEST_CASE("cross-entropy is clamped") {
  const PreferenceProb sure{1.0, 0.0};
  CHECK(cross_entropy(sure, 0.0, 1.0) == doctest::Approx(-std::log(1e-12)));
  CHECK(cross_entropy(sure, 1.0, 0.0) == 0.0);
  CHECK(cross_entropy({0.5, 0.5}, 1.0, 0.0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("rewards are bounded by the output squashing") {
  const auto params = small_net(6, 3, 32);
  Rng rng(4);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(6, 500) * 100.0;
  const auto r = reward_batch(params, x);
  CHECK((r.array().abs() <= 1.0).all());
}

TEST_CASE("dimension mismatches are input errors") {
  const auto params = small_net(6, 3);
  Rng rng(5);
  const auto a = random_segment(4, 2, 5, rng);
  const auto b = random_segment(4, 2, 6, rng);
  const auto c = random_segment(3, 2, 5, rng);
  CHECK_THROWS_AS(preference_prob(params, a, b), InputError);
  CHECK_THROWS_AS(preference_prob(params, a, c), InputError);
  CHECK_THROWS_AS(reward_batch(params, Eigen::MatrixXd::Zero(5, 3)), InputError);
  envsim::EnvSpec spec = envsim::make_env("grid-hazard", 0)->spec();
  CHECK_THROWS_AS(reward_forward(params, spec, {Eigen::VectorXd::Zero(8)}, envsim::EnvAction::discrete(0)),
                  InputError);
  CHECK_THROWS_AS(grad_loss(params, PairObjective{}), InputError);
}

TEST_CASE("segment preference matches summed step rewards") {
  const auto params = small_net(6, 6);
  Rng rng(6);
  const auto a = random_segment(4, 2, 7, rng);
  const auto b = random_segment(4, 2, 7, rng);
  const double sa = reward_batch(params, a.inputs()).sum();
  const double sb = reward_batch(params, b.inputs()).sum();
  const auto p = preference_prob(params, a, b);
  CHECK(p.p_first == doctest::Approx(1.0 / (1.0 + std::exp(sb - sa))).epsilon(1e-12));
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  Rng rng(7);
  for (int trial = 0; trial < 12; ++trial) {
    const auto params = small_net(6, 100 + static_cast<std::uint64_t>(trial));
    auto obj = random_objective(rng, 6, 4, 5);
    for (std::size_t k = 0; k < 4; ++k) {
      const double y = uniform01(rng);
      obj.cross_entropy.push_back({k, y, 1.0 - y, uniform_real(rng, -1.0, 1.0)});
    }
    CHECK(pbrl::testing::fd_relative_error(params, obj) <= 1e-4);
  }
}

TEST_CASE("consistency gradient matches finite differences") {
  Rng rng(8);
  for (int trial = 0; trial < 8; ++trial) {
    const auto params = small_net(6, 200 + static_cast<std::uint64_t>(trial));
    auto obj = random_objective(rng, 6, 4, 4);
    obj.consistency.push_back({0, 1, 0.7});
    obj.consistency.push_back({2, 3, 1.3});
    obj.cross_entropy.push_back({1, 1.0, 0.0, 1.0});
    CHECK(pbrl::testing::fd_relative_error(params, obj) <= 1e-4);
  }
}

TEST_CASE("gradient with dropout matches finite differences") {
  Rng rng(9);
  for (int trial = 0; trial < 8; ++trial) {
    const auto params = small_net(6, 300 + static_cast<std::uint64_t>(trial), 16);
    auto obj = random_objective(rng, 6, 3, 5);
    obj.cross_entropy.push_back({0, 1.0, 0.0, 1.0});
    obj.cross_entropy.push_back({1, 0.3, 0.7, 1.0});
    obj.consistency.push_back({1, 2, 1.0});
    obj.dropout = 0.25;
    obj.dropout_seed = 40 + static_cast<std::uint64_t>(trial);
    CHECK(evaluate_objective(params, obj) == evaluate_objective(params, obj));
    CHECK(pbrl::testing::fd_relative_error(params, obj) <= 1e-4);
  }
}

TEST_CASE("loss and gradient agree with the loss alone") {
  Rng rng(10);
  const auto params = small_net(6, 11);
  auto obj = random_objective(rng, 6, 3, 5);
  obj.cross_entropy.push_back({2, 0.0, 1.0, 1.0});
  Gradient g = params.zeros_like();
  CHECK(loss_and_gradient(params, obj, g) == evaluate_objective(params, obj));
  CHECK(g == grad_loss(params, obj));
}

TEST_CASE("first Adam step moves every coefficient by the learning rate") {
  auto params = small_net(4, 12);
  const auto before = params;
  Gradient g = params.zeros_like();
  g.for_each_coefficient([](double& c) { c = 1.0; });
  auto state = AdamState::zeros_like(params);
  AdamConfig cfg;
  cfg.lr = 0.001;
  adam_step(params, g, state, cfg);
  CHECK(state.step == 1);
  const Eigen::VectorXd delta = before.flatten() - params.flatten();
  const double expected = 0.001 * 1.0 / (1.0 + 1e-8);
  CHECK((delta.array() - expected).abs().maxCoeff() < 1e-15);

  Gradient wrong = small_net(5, 1).zeros_like();
  CHECK_THROWS_AS(adam_step(params, wrong, state, cfg), InputError);
}

TEST_CASE("ensemble members are independent and deterministic") {
  const Architecture arch{6, 2, 16};
  const auto a = RewardEnsemble::create(arch, 3, 77);
  const auto b = RewardEnsemble::create(arch, 3, 77);
  CHECK(a == b);
  CHECK_FALSE(a.members[0] == a.members[1]);
  CHECK_FALSE(a == RewardEnsemble::create(arch, 3, 78));
  CHECK_THROWS_AS(RewardEnsemble::create(arch, 0, 1), ConfigError);

  Rng rng(13);
  const auto s1 = random_segment(4, 2, 6, rng);
  const auto s2 = random_segment(4, 2, 6, rng);
  const auto pred = ensemble_prob(a, s1, s2);
  REQUIRE(pred.members.size() == 3);
  double mean = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(pred.members[i].p_first == doctest::Approx(preference_prob(a.members[i], s1, s2).p_first).epsilon(1e-14));
    mean += pred.members[i].p_first / 3.0;
  }
  CHECK(pred.mean.p_first == doctest::Approx(mean).epsilon(1e-14));
  CHECK(pred.mean.p_first + pred.mean.p_second == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(pred.std_first >= 0.0);

  const Eigen::MatrixXd x = s1.inputs();
  Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(x.cols());
  for (const auto& p : a.members) m += reward_batch(p, x) / 3.0;
  CHECK((a.mean_reward(x) - m).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("checkpoint round-trip is exact, optimizer state included") {
  auto ens = RewardEnsemble::create({5, 2, 12}, 2, 21);
  Rng rng(22);
  for (auto& p : ens.members) {
    Gradient g = p.zeros_like();
    g.for_each_coefficient([&](double& c) { c = uniform_real(rng, -1e3, 1e3) * std::pow(10.0, uniform_real(rng, -12, 3)); });
    adam_step(p, g, ens.optimizers[&p - ens.members.data()], {});
  }
  ens.members[0].layers[0].weight(0, 0) = 5e-324;
  ens.members[1].layers[1].bias[0] = -0.0;
  ens.members[1].layers[0].weight(1, 1) = std::numeric_limits<double>::max();
  const auto path = temp_file("ckpt");
  save_checkpoint(ens, path);
  const auto back = load_checkpoint(path);
  CHECK(back == ens);
  CHECK(std::signbit(back.members[1].layers[1].bias[0]));
  std::filesystem::remove(path);
}

TEST_CASE("malformed checkpoints raise format errors") {
  const auto ens = RewardEnsemble::create({3, 1, 4}, 1, 1);
  const auto path = temp_file("bad");
  save_checkpoint(ens, path);
  std::string text;
  {
    std::ifstream in(path);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::ofstream(path) << "not a checkpoint\n";
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  {
    std::ofstream(path) << text.substr(0, text.size() / 2);
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  {
    std::ofstream(path) << text << "extra\n";
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), InputError);
}
