#include "pbrl/harness/sweep.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include "pbrl/error.hpp"
#include "pbrl/harness/experiment.hpp"

namespace pbrl::harness {

std::string SweepResult::table_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "beta,epsilon,budget,final_return,normalized_return,final_accuracy,error\n";
  for (const auto& c : cells) {
    out << (std::isinf(c.beta) ? std::string("inf") : std::to_string(c.beta)) << ',' << c.epsilon << ','
        << c.budget << ',' << c.final_return << ',' << c.normalized_return << ',' << c.final_accuracy << ','
        << (c.error ? '"' + *c.error + '"' : std::string()) << '\n';
  }
  return out.str();
}

SweepResult noise_sweep(const ExperimentConfig& base, const std::vector<double>& betas,
                        const std::vector<double>& epsilons, const std::vector<std::size_t>& budgets,
                        std::size_t threads) {
  if (betas.empty() || epsilons.empty() || budgets.empty()) throw ConfigError("sweep grids must be nonempty");
  base.validate();
  SweepResult result;
  result.betas = betas;
  result.epsilons = epsilons;
  result.budgets = budgets;
  result.ceiling_return = oracle_ceiling(base);
  result.random_return = random_baseline(base);
  for (double b : betas) {
    for (double e : epsilons) {
      for (std::size_t n : budgets) result.cells.push_back({b, e, n, 0.0, 0.0, 0.0, std::nullopt});
    }
  }
  const double span = result.ceiling_return - result.random_return;
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < result.cells.size(); i = next++) {
      SweepCell& cell = result.cells[i];
      try {
        ExperimentConfig cfg = base;
        cfg.annotator.beta = cell.beta;
        cfg.annotator.epsilon = cell.epsilon;
        cfg.schedule.budget = cell.budget;
        // The noise-free corner keeps the exact oracle path.
        if (cfg.annotator_kind != AnnotatorKind::human) {
          cfg.annotator_kind = cfg.annotator.noise_free() ? AnnotatorKind::oracle : AnnotatorKind::noisy;
        }
        const auto run = run_experiment(cfg);
        cell.final_return = run.final_eval.mean_return;
        cell.final_accuracy = run.records.empty() ? 0.0 : run.records.back().accuracy;
        cell.normalized_return = span != 0.0 ? (cell.final_return - result.random_return) / span : 0.0;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, result.cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return result;
}

}  // namespace pbrl::harness
