#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pbrl/harness/config.hpp"

namespace pbrl::harness {

struct SweepCell {
  double beta = 0.0;
  double epsilon = 0.0;
  std::size_t budget = 0;
  double final_return = 0.0;
  double normalized_return = 0.0;  // (R - R_random) / (R_ceiling - R_random)
  double final_accuracy = 0.0;
  std::optional<std::string> error;  // failed runs are recorded, not fatal
};

struct SweepResult {
  std::vector<double> betas;
  std::vector<double> epsilons;
  std::vector<std::size_t> budgets;
  double ceiling_return = 0.0;
  double random_return = 0.0;
  std::vector<SweepCell> cells;  // beta-major, then epsilon, then budget

  const SweepCell& at(std::size_t b, std::size_t e, std::size_t n) const {
    return cells[(b * epsilons.size() + e) * budgets.size() + n];
  }
  std::string table_csv() const;
};

// Cross product of annotator noise and budgets; arms run on up to `threads`
// worker threads and are joined by grid index. Throws ConfigError for empty
// grids.
SweepResult noise_sweep(const ExperimentConfig& base, const std::vector<double>& betas,
                        const std::vector<double>& epsilons, const std::vector<std::size_t>& budgets,
                        std::size_t threads = 1);

}  // namespace pbrl::harness
