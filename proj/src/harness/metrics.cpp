#include "pbrl/harness/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pbrl/error.hpp"

namespace pbrl::harness {

using nlohmann::json;

json to_json(const MetricsRecord& r) {
  return json{{"session", r.session},
              {"env_steps", r.env_steps},
              {"labeled", r.labeled},
              {"pseudo", r.pseudo},
              {"pseudo_rejected", r.pseudo_rejected},
              {"queries_used", r.queries_used},
              {"accuracy", r.accuracy},
              {"reward_correlation", r.reward_correlation},
              {"mean_entropy", r.mean_entropy},
              {"policy_return", r.policy_return},
              {"hazard_rate", r.hazard_rate},
              {"success_rate", r.success_rate}};
}

MetricsRecord record_from_json(const json& j) {
  MetricsRecord r;
  r.session = j.at("session").get<std::size_t>();
  r.env_steps = j.at("env_steps").get<std::uint64_t>();
  r.labeled = j.at("labeled").get<std::size_t>();
  r.pseudo = j.at("pseudo").get<std::size_t>();
  r.pseudo_rejected = j.at("pseudo_rejected").get<std::size_t>();
  r.queries_used = j.at("queries_used").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.reward_correlation = j.at("reward_correlation").get<double>();
  r.mean_entropy = j.at("mean_entropy").get<double>();
  r.policy_return = j.at("policy_return").get<double>();
  r.hazard_rate = j.at("hazard_rate").get<double>();
  r.success_rate = j.at("success_rate").get<double>();
  return r;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& metrics, const std::filesystem::path& timing)
    : metrics_(metrics, std::ios::trunc), timing_(timing, std::ios::trunc) {
  if (!metrics_ || !timing_) throw InputError("cannot open metrics output in " + metrics.parent_path().string());
  metrics_ << kMetricsHeader << '\n';
  metrics_.flush();
}

void MetricsWriter::append(const MetricsRecord& r) {
  metrics_ << to_json(r).dump() << '\n';
  metrics_.flush();
  timing_ << json{{"session", r.session}, {"wall_clock_s", r.wall_clock_s}}.dump() << '\n';
  timing_.flush();
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read metrics file " + path.string());
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FormatError(std::string("expected header '") + kMetricsHeader + "'", lineno);
  }
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw FormatError(std::string("bad metrics record: ") + e.what(), lineno);
    }
  }
  return out;
}

std::string metrics_csv(std::span<const MetricsRecord> records) {
  std::ostringstream out;
  out.precision(17);
  out << "session,env_steps,labeled,pseudo,pseudo_rejected,queries_used,accuracy,"
         "reward_correlation,mean_entropy,policy_return,hazard_rate,success_rate\n";
  for (const auto& r : records) {
    out << r.session << ',' << r.env_steps << ',' << r.labeled << ',' << r.pseudo << ','
        << r.pseudo_rejected << ',' << r.queries_used << ',' << r.accuracy << ','
        << r.reward_correlation << ',' << r.mean_entropy << ',' << r.policy_return << ','
        << r.hazard_rate << ',' << r.success_rate << '\n';
  }
  return out.str();
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("rank correlation needs equal-length samples");
  if (a.size() < 2) return 0.0;
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double binary_entropy(double p) {
  const auto term = [](double x) { return x > 0.0 ? -x * std::log(x) : 0.0; };
  return term(p) + term(1.0 - p);
}

}  // namespace pbrl::harness
