// Command-line front end for the voice-authentication attack/defense
// simulator. One subcommand per pipeline phase; every phase recomputes its
// inputs deterministically from the config, so phases can run independently
// against the same output directory.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 stage failure.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "gsim/exp/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file (key=value lines)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", args.out_dir, "output directory (overrides run.out_dir)");
  cmd->add_option("--seed", args.seed, "master seed (overrides run.seed)")
      ->each([&args](const std::string&) { args.seed_set = true; });
}

// throws std::runtime_error on config problems (exit 2)
gsim::ExperimentConfig resolve_config(const CommonArgs& args) {
  gsim::ExperimentConfig cfg;
  if (!args.config_path.empty()) cfg = gsim::load_config(args.config_path);
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.seed_set) cfg.seed = args.seed;
  cfg.validate();
  return cfg;
}

void print_reports(const std::vector<gsim::MetricsReport>& reports) {
  for (const auto& r : reports)
    std::printf("%-22s accuracy=%.4f recall=%.4f fpr=%.4f attack_success=%.4f\n",
                r.scenario.c_str(), r.accuracy, r.recall, r.fpr, r.attack_success);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"guardian-sim: data-poisoning attacks on voice authentication and their defense"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string ablate_what;
  std::string format = "csv";

  CLI::App* synth = app.add_subcommand("synth-data", "materialize the synthetic corpus");
  add_common(synth, args);

  CLI::App* embedder =
      app.add_subcommand("train-embedder", "train the deployed clean and poisoned embedders");
  add_common(embedder, args);

  CLI::App* attack =
      app.add_subcommand("attack", "register the attacked evaluation populations");
  add_common(attack, args);

  CLI::App* guardian = app.add_subcommand(
      "train-guardian", "build the in-house models and train the detector");
  add_common(guardian, args);

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "run the full pipeline and write reports");
  add_common(evaluate, args);

  CLI::App* ablate = app.add_subcommand("ablate", "full pipeline with one defense stage removed");
  add_common(ablate, args);
  ablate->add_option("--ablate", ablate_what, "stage to remove")
      ->required()
      ->check(CLI::IsMember({"bias", "augment", "ensemble"}));

  CLI::App* report = app.add_subcommand("report", "print a finished run's report");
  add_common(report, args);
  report->add_option("--format", format, "report format")
      ->check(CLI::IsMember({"csv", "jsonl"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  gsim::ExperimentConfig cfg;
  try {
    if (ablate->parsed()) {
      cfg = resolve_config(args);
      if (ablate_what == "bias") cfg.ablate_bias = true;
      else if (ablate_what == "augment") cfg.ablate_augment = true;
      else cfg.ablate_ensemble = true;
      cfg.out_dir += "/ablate-" + ablate_what;
      cfg.validate();
    } else {
      cfg = resolve_config(args);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "guardian-sim: config error: %s\n", e.what());
    return 2;
  }

  try {
    if (synth->parsed()) {
      gsim::synth_data(cfg);
      std::printf("wrote %s/manifest.txt\n", cfg.out_dir.c_str());
    } else if (embedder->parsed()) {
      gsim::run_experiment(cfg, gsim::kRunEmbedder);
      std::printf("wrote %s/deploy_clean.gnet and deploy_poison.gnet\n", cfg.out_dir.c_str());
    } else if (attack->parsed()) {
      gsim::run_experiment(cfg, gsim::kRunAttack);
      std::printf("wrote %s/attack_summary.txt\n", cfg.out_dir.c_str());
    } else if (guardian->parsed()) {
      gsim::run_experiment(cfg, gsim::kRunGuardian);
      std::printf("wrote %s/guardian.gnet\n", cfg.out_dir.c_str());
    } else if (evaluate->parsed() || ablate->parsed()) {
      const auto result = gsim::run_experiment(cfg, gsim::kRunEvaluate);
      print_reports(result.reports);
      std::printf("wrote %s/report.csv\n", cfg.out_dir.c_str());
    } else if (report->parsed()) {
      const std::string path =
          cfg.out_dir + "/report." + (format == "csv" ? "csv" : "jsonl");
      std::ifstream is(path, std::ios::binary);
      if (!is) {
        std::fprintf(stderr, "guardian-sim: no report at %s (run evaluate first)\n",
                     path.c_str());
        return 3;
      }
      std::ostringstream os;
      os << is.rdbuf();
      std::fputs(os.str().c_str(), stdout);
    }
  } catch (const gsim::StageError& e) {
    std::fprintf(stderr, "guardian-sim: stage failed: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "guardian-sim: %s\n", e.what());
    return 3;
  }
  return 0;
}
