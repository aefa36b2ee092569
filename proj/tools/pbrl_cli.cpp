// pbrl: run, sweep, serve, eval and export-plots front end.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "pbrl/error.hpp"
#include "pbrl/harness/config.hpp"
#include "pbrl/harness/experiment.hpp"
#include "pbrl/harness/labeling_service.hpp"
#include "pbrl/harness/metrics.hpp"
#include "pbrl/harness/sweep.hpp"

namespace fs = std::filesystem;
using namespace pbrl::harness;

namespace {

fs::path data_dir() {
  if (const char* d = std::getenv("PBRL_DATA_DIR"); d != nullptr && *d != '\0') return d;
  return "runs";
}

// Options shared by every command that builds an experiment configuration.
struct ConfigFlags {
  std::string config_file;
  std::string preset;
  std::vector<std::string> sets;
  std::map<std::string, std::string> keys;
  bool print = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_file, "JSON configuration file")->check(CLI::ExistingFile);
    app->add_option("--preset", preset, "budget/queries-per-session preset, e.g. 1000/100");
    app->add_option("--set", sets, "key=value override (repeatable)");
    app->add_flag("--print-config", print, "print the resolved configuration and exit");
    for (const auto& k : config_keys()) {
      app->add_option("--" + k.name, keys[k.name], k.help)->group("Config keys");
    }
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = config_file.empty() ? ExperimentConfig{} : load_config(config_file);
    if (!preset.empty()) apply_preset(cfg, preset);
    for (const auto& [key, value] : keys) {
      if (!value.empty()) set_key(cfg, key, value);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw pbrl::ConfigError("--set expects key=value, got '" + s + "'");
      set_key(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    return cfg;
  }
};

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    try {
      if constexpr (std::is_same_v<T, double>) {
        out.push_back(std::stod(item, &used));
      } else {
        out.push_back(static_cast<T>(std::stoull(item, &used)));
      }
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw pbrl::ConfigError(std::string("bad ") + what + " value '" + item + "'");
  }
  if (out.empty()) throw pbrl::ConfigError(std::string(what) + " grid is empty");
  return out;
}

void progress(const MetricsRecord& r) {
  std::cerr << "session " << r.session << "  steps " << r.env_steps << "  labels " << r.labeled << "  pseudo "
            << r.pseudo << "  acc " << r.accuracy << "  return " << r.policy_return << "  hazard " << r.hazard_rate
            << '\n';
}

fs::path default_out(const std::string& out, const std::string& name, const ExperimentConfig& cfg) {
  if (!out.empty()) return out;
  return data_dir() / (name + "-seed" + std::to_string(cfg.seed));
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Network activations are a few hundred KB; keep them off the mmap path.
  mallopt(M_MMAP_THRESHOLD, 1 << 25);
  mallopt(M_TRIM_THRESHOLD, 1 << 28);
#endif
  CLI::App app{"Preference-based reward learning lab"};
  app.require_subcommand(1);

  ConfigFlags run_flags;
  std::string run_out;
  auto* run = app.add_subcommand("run", "run one experiment");
  run_flags.attach(run);
  run->add_option("-o,--out", run_out, "output directory (default $PBRL_DATA_DIR/run-seed<N>)");

  ConfigFlags sweep_flags;
  std::string sweep_out, betas = "inf", epsilons = "0", budgets;
  std::size_t threads = 1;
  auto* sweep = app.add_subcommand("sweep", "annotator noise x budget grid");
  sweep_flags.attach(sweep);
  sweep->add_option("--betas", betas, "comma list of rationality values (inf allowed)");
  sweep->add_option("--epsilons", epsilons, "comma list of mistake rates");
  sweep->add_option("--budgets", budgets, "comma list of budgets (default: the configured budget)");
  sweep->add_option("--threads", threads, "parallel arms");
  sweep->add_option("-o,--out", sweep_out, "CSV output file (default stdout)");

  ConfigFlags serve_flags;
  std::string host = "127.0.0.1", static_dir, serve_out;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "run with a human annotator behind the HTTP labeling service");
  serve_flags.attach(serve);
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "bind port (0 picks a free one)");
  serve->add_option("--static-dir", static_dir, "serve the labeling UI build from this directory");
  serve->add_option("-o,--out", serve_out, "output directory");

  std::string eval_run;
  std::size_t eval_episodes = 20;
  auto* eval = app.add_subcommand("eval", "evaluate a stored policy with the true reward");
  eval->add_option("run", eval_run, "run directory (config.json + policy.json)")->required();
  eval->add_option("--episodes", eval_episodes, "episodes");

  std::string plots_run, plots_out;
  auto* plots = app.add_subcommand("export-plots", "learning-curve CSV from a run's metrics");
  plots->add_option("run", plots_run, "run directory")->required();
  plots->add_option("-o,--out", plots_out, "CSV path (default <run>/curves.csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const auto cfg = run_flags.resolve();
      if (run_flags.print) {
        std::cout << print_config(cfg);
        return 0;
      }
      RunOptions opts;
      opts.output_dir = default_out(run_out, "run", cfg);
      opts.on_record = progress;
      const auto result = run_experiment(cfg, opts);
      std::cout << "final return " << result.final_eval.mean_return << "  accuracy "
                << (result.records.empty() ? 0.0 : result.records.back().accuracy) << "  output "
                << opts.output_dir->string() << '\n';
    } else if (sweep->parsed()) {
      const auto cfg = sweep_flags.resolve();
      if (sweep_flags.print) {
        std::cout << print_config(cfg);
        return 0;
      }
      const auto b = parse_list<double>(betas, "beta");
      const auto e = parse_list<double>(epsilons, "epsilon");
      const auto n = budgets.empty() ? std::vector<std::size_t>{cfg.schedule.budget}
                                     : parse_list<std::size_t>(budgets, "budget");
      const auto result = noise_sweep(cfg, b, e, n, threads);
      if (sweep_out.empty()) {
        std::cout << result.table_csv();
      } else {
        std::ofstream(sweep_out) << result.table_csv();
      }
    } else if (serve->parsed()) {
      auto cfg = serve_flags.resolve();
      cfg.annotator_kind = AnnotatorKind::human;
      if (serve_flags.print) {
        std::cout << print_config(cfg);
        return 0;
      }
      HumanChannel channel;
      const auto env = pbrl::envsim::make_env(cfg.env);
      LabelingService service(channel, *env, static_dir.empty() ? std::nullopt : std::optional<fs::path>(static_dir));
      const int bound = service.start(host, port);
      std::cerr << "labeling service on http://" << host << ':' << bound << '\n';
      RunOptions opts;
      opts.output_dir = default_out(serve_out, "serve", cfg);
      opts.human = &channel;
      opts.on_record = progress;
      run_experiment(cfg, opts);
      service.stop();
    } else if (eval->parsed()) {
      const fs::path dir = eval_run;
      const auto cfg = load_config(dir / "config.json");
      const auto m = evaluate_policy_file(cfg, dir / "policy.json", eval_episodes);
      std::cout << "episodes " << m.episodes << "  mean_return " << m.mean_return << "  std " << m.std_return
                << "  hazard_rate " << m.hazard_rate << "  success_rate " << m.success_rate << '\n';
    } else if (plots->parsed()) {
      const fs::path dir = plots_run;
      const auto records = read_metrics(dir / "metrics.jsonl");
      const fs::path out = plots_out.empty() ? dir / "curves.csv" : fs::path(plots_out);
      std::ofstream(out) << metrics_csv(records);
      std::cout << out.string() << '\n';
    }
  } catch (const pbrl::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
