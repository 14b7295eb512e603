#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cvfl/analysis.hpp"
#include "cvfl/config.hpp"
#include "cvfl/data.hpp"
#include "cvfl/output.hpp"

namespace {

void write_dataset_csv(std::ostream& out, const cvfl::Dataset& data) {
  out << "label";
  for (std::size_t j = 0; j < data.input_dim(); ++j) out << ",x" << j;
  out << '\n';
  for (const auto& s : data.samples) {
    out << s.label;
    for (double v : s.features) out << ',' << cvfl::format_double(v);
    out << '\n';
  }
}

cvfl::ExperimentConfig load_with_seed(const std::string& path, std::optional<std::uint64_t> seed) {
  auto cfg = cvfl::load_config(path);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cvfl: delegated sub-model evaluation for federated learning"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string format = "csv";

  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", config_path, "experiment config (INI)")->required();
  run->add_option("--seed", seed, "override experiment.seed");
  run->add_option("--out-dir", out_dir, "output directory");
  run->add_option("--format", format, "output format")->check(CLI::IsMember({"csv"}));

  auto* analyze = app.add_subcommand("analyze", "closed-form analyses");
  analyze->require_subcommand(1);

  int clients = 100;
  std::vector<int> malicious{10};
  std::vector<int> us{10};
  std::vector<int> es{3};
  long long trials = 0;
  auto* evade = analyze->add_subcommand("evade", "probability a poisoned sub-model sees only colluding evaluators");
  evade->add_option("--clients", clients, "K, updates per round");
  evade->add_option("--malicious", malicious, "K*p, comma separated sweep")->delimiter(',');
  evade->add_option("--u", us, "sub-model size, comma separated sweep")->delimiter(',');
  evade->add_option("--e", es, "evaluators per sub-model, comma separated sweep")->delimiter(',');
  evade->add_option("--montecarlo", trials, "also estimate each row with this many simulated draws");
  evade->add_option("--seed", seed, "Monte Carlo seed");
  evade->add_option("--format", format)->check(CLI::IsMember({"csv"}));

  std::vector<int> pen_e{3, 5, 10};
  std::vector<double> pen_v{0.25, 0.5, 0.75};
  int r_max = 10;
  auto* pen = analyze->add_subcommand("penalty", "penalizing coefficient versus report count");
  pen->add_option("--e", pen_e, "evaluator counts")->delimiter(',');
  pen->add_option("--v", pen_v, "coefficient at one report")->delimiter(',');
  pen->add_option("--r-max", r_max, "largest report count");
  pen->add_option("--format", format)->check(CLI::IsMember({"csv"}));

  auto* gen = app.add_subcommand("gen-data", "write the configured synthetic dataset");
  gen->add_option("--config", config_path, "experiment config (INI)")->required();
  gen->add_option("--seed", seed, "override experiment.seed");
  gen->add_option("--out-dir", out_dir, "output directory");
  gen->add_option("--format", format)->check(CLI::IsMember({"csv"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = load_with_seed(config_path, seed);
      const auto result = cvfl::run_experiment(cfg, out_dir);
      const auto& last = result.metrics.back();
      std::cerr << "rounds " << result.metrics.size() << ", main_acc " << cvfl::format_double(last.main_task_accuracy);
      if (last.subtask_success) std::cerr << ", subtask_rate " << cvfl::format_double(*last.subtask_success);
      std::cerr << ", outputs in " << out_dir << '\n';
    } else if (*evade) {
      std::cout << "clients,malicious,u,e,t,any_joint,any_conditional,single_joint,single_conditional";
      if (trials > 0) std::cout << ",mc_any_joint,mc_any_joint_se";
      std::cout << '\n';
      cvfl::Rng rng(cvfl::derive_seed(seed.value_or(1), "analyze-evade"));
      for (int mal : malicious) {
        for (int u : us) {
          for (int e : es) {
            for (int t = 0; t <= e; ++t) {
              const cvfl::EvasionParams p{clients, mal, u, e, t};
              std::cout << clients << ',' << mal << ',' << u << ',' << e << ',' << t;
              for (auto r : {cvfl::EvasionReading::any_poisoned_joint, cvfl::EvasionReading::any_poisoned_conditional,
                             cvfl::EvasionReading::single_poisoned_joint,
                             cvfl::EvasionReading::single_poisoned_conditional}) {
                std::cout << ',' << cvfl::format_double(cvfl::p_evade_exact(p, r));
              }
              if (trials > 0) {
                const auto mc = cvfl::p_evade_montecarlo(p, cvfl::EvasionReading::any_poisoned_joint, trials, rng);
                std::cout << ',' << cvfl::format_double(mc.estimate) << ','
                          << cvfl::format_double(mc.standard_error);
              }
              std::cout << '\n';
            }
          }
        }
      }
    } else if (*pen) {
      std::cout << "e,v,r,c\n";
      for (int e : pen_e) {
        for (double v : pen_v) {
          for (const auto& [r, c] : cvfl::penalty_curve(e, v, r_max)) {
            std::cout << e << ',' << cvfl::format_double(v) << ',' << r << ',' << cvfl::format_double(c) << '\n';
          }
        }
      }
    } else if (*gen) {
      const auto cfg = load_with_seed(config_path, seed);
      if (cfg.data.source != cvfl::DataSource::synthetic) throw cvfl::ConfigError("gen-data needs data.source = synthetic");
      const auto syn = cfg.synthetic_spec();
      const auto layout = cvfl::make_layout(syn);
      const auto train = cvfl::sample_synthetic(layout, syn, syn.per_class, cvfl::derive_seed(syn.seed, "synthetic-train"));
      const auto test =
          cvfl::sample_synthetic(layout, syn, cfg.data.test_per_class, cvfl::derive_seed(syn.seed, "synthetic-test"));
      std::filesystem::create_directories(out_dir);
      std::ofstream tr(std::filesystem::path(out_dir) / "train.csv");
      std::ofstream te(std::filesystem::path(out_dir) / "test.csv");
      if (!tr || !te) throw std::runtime_error("cannot write to " + out_dir);
      write_dataset_csv(tr, train);
      write_dataset_csv(te, test);
      std::cerr << train.size() << " train and " << test.size() << " test samples written to " << out_dir << '\n';
    }
  } catch (const cvfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
