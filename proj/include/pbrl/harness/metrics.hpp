#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace pbrl::harness {

// One row per feedback session (or policy-only chunk once the budget is spent).
struct MetricsRecord {
  std::size_t session = 0;
  std::uint64_t env_steps = 0;
  std::size_t labeled = 0;
  std::size_t pseudo = 0;
  std::size_t pseudo_rejected = 0;
  std::size_t queries_used = 0;
  double accuracy = 0.0;             // held-out preference accuracy
  double reward_correlation = 0.0;   // Spearman, learned vs true reward
  double mean_entropy = 0.0;         // mean prediction entropy on the held-out set (nats)
  double policy_return = 0.0;
  double hazard_rate = 0.0;
  double success_rate = 0.0;
  double wall_clock_s = 0.0;         // written to the timing file only

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

nlohmann::json to_json(const MetricsRecord& r);
MetricsRecord record_from_json(const nlohmann::json& j);

inline constexpr const char* kMetricsHeader = "metrics v1";

// Append-only metrics stream: `metrics v1` header, then one JSON record per
// line. Wall-clock times go to a sibling timing file so the metrics file is a
// pure function of the configuration.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& metrics, const std::filesystem::path& timing);
  void append(const MetricsRecord& r);

 private:
  std::ofstream metrics_;
  std::ofstream timing_;
};

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

// Learning-curve CSV with one line per record.
std::string metrics_csv(std::span<const MetricsRecord> records);

// Spearman rank correlation with average ranks for ties; 0 when either side
// is constant.
double spearman(std::span<const double> a, std::span<const double> b);

// Entropy of a two-outcome distribution in nats.
double binary_entropy(double p);

}  // namespace pbrl::harness
