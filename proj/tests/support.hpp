#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

#include "pbrl/experience.hpp"
#include "pbrl/random.hpp"
#include "pbrl/rewardnet.hpp"

namespace pbrl::testing {

inline experience::Segment random_segment(Eigen::Index state_dim, Eigen::Index action_dim,
                                          Eigen::Index h, Rng& rng, double scale = 1.0) {
  experience::Segment s;
  s.states.resize(state_dim, h);
  s.actions.resize(action_dim, h);
  for (Eigen::Index i = 0; i < s.states.size(); ++i) s.states.data()[i] = uniform_real(rng, -scale, scale);
  for (Eigen::Index i = 0; i < s.actions.size(); ++i) s.actions.data()[i] = uniform_real(rng, -1.0, 1.0);
  s.source_episode = rng() >> 1;
  s.start_index = uniform_index(rng, 1000);
  return s;
}

inline rewardnet::Params small_net(std::size_t input_dim, std::uint64_t seed,
                                   std::size_t hidden = 8, std::size_t layers = 2) {
  Rng rng(seed);
  return rewardnet::init_mlp<double>({input_dim, layers, hidden}, rng);
}

// Norm-wise relative error between the analytic gradient and central
// differences with step h over every coefficient.
inline double fd_relative_error(const rewardnet::Params& params, const rewardnet::PairObjective& obj,
                                double h = 1e-5) {
  const Eigen::VectorXd analytic = rewardnet::grad_loss(params, obj).flatten();
  Eigen::VectorXd numeric(analytic.size());
  rewardnet::Params p = params;
  std::vector<double*> coeffs;
  p.for_each_coefficient([&](double& c) { coeffs.push_back(&c); });
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    const double saved = *coeffs[i];
    *coeffs[i] = saved + h;
    const double up = rewardnet::evaluate_objective(p, obj);
    *coeffs[i] = saved - h;
    const double down = rewardnet::evaluate_objective(p, obj);
    *coeffs[i] = saved;
    numeric[static_cast<Eigen::Index>(i)] = (up - down) / (2.0 * h);
  }
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
  return (analytic - numeric).norm() / scale;
}

}  // namespace pbrl::testing
