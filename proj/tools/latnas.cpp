// latnas: two-phase latency-aware architecture search over sparse
// transformer blocks.
//
//   latnas profile --config run.json [--force]
//   latnas search  --config run.json [--target 0.7]
//   latnas retrain --config run.json [--descriptor arch.txt]
//   latnas eval    --config run.json
//   latnas report  --config run.json [--run-dir runs/sweep]
//   latnas sweep   --config run.json
//
// Exit codes: 0 success, 2 config error, 3 latency-table coverage error,
// 4 numeric abort.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "latnas/pipeline.hpp"

using namespace latnas;

namespace {

struct Overrides {
  std::string out_dir;
  std::string corpus;
  double target = -1.0;
  std::int64_t seed = -1;
  int phase1_epochs = -1;
  int phase2_epochs = -1;
};

void add_common(CLI::App* sub, std::string& config_path, Overrides& ov) {
  sub->add_option("--config", config_path, "run configuration (JSON)")->required();
  sub->add_option("--out-dir", ov.out_dir, "override output directory");
  sub->add_option("--corpus", ov.corpus, "override corpus path");
  sub->add_option("--target", ov.target, "override target latency ratio");
  sub->add_option("--seed", ov.seed, "override run seed");
  sub->add_option("--phase1-epochs", ov.phase1_epochs, "override phase 1 epoch count");
  sub->add_option("--phase2-epochs", ov.phase2_epochs, "override phase 2 epoch count");
}

RunConfig load_config(const std::string& path, const Overrides& ov) {
  RunConfig cfg = RunConfig::from_json_file(path);
  if (!ov.out_dir.empty()) cfg.out_dir = ov.out_dir;
  if (!ov.corpus.empty()) cfg.corpus_path = ov.corpus;
  if (ov.target > 0.0) cfg.target_ratio = ov.target;
  if (ov.seed >= 0) cfg.seed = static_cast<std::uint64_t>(ov.seed);
  if (ov.phase1_epochs > 0) cfg.phase1.epochs = ov.phase1_epochs;
  if (ov.phase2_epochs > 0) cfg.phase2.epochs = ov.phase2_epochs;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latency-aware architecture search for sparse transformer blocks"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  bool force = false;
  std::string descriptor_path;
  std::string run_dir;

  CLI::App* profile = app.add_subcommand("profile", "fill the per-block latency table");
  add_common(profile, config_path, ov);
  profile->add_flag("--force", force, "re-measure even when the table is complete");

  CLI::App* search = app.add_subcommand("search", "phase 1 search + architecture sampling");
  add_common(search, config_path, ov);

  CLI::App* retrain = app.add_subcommand("retrain", "phase 2 from-scratch retraining");
  add_common(retrain, config_path, ov);
  retrain->add_option("--descriptor", descriptor_path, "architecture descriptor to retrain");

  CLI::App* eval = app.add_subcommand("eval", "evaluate saved weights on valid/test");
  add_common(eval, config_path, ov);

  CLI::App* report = app.add_subcommand("report", "emit plot-ready CSVs and renderings");
  add_common(report, config_path, ov);
  report->add_option("--run-dir", run_dir, "run or sweep directory (default: out_dir)");

  CLI::App* sweep = app.add_subcommand("sweep", "search across all configured targets");
  add_common(sweep, config_path, ov);

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = load_config(config_path, ov);
    if (profile->parsed()) {
      cmd_profile(cfg, force, std::cout);
    } else if (search->parsed()) {
      cmd_search(cfg, std::cout);
    } else if (retrain->parsed()) {
      const std::string desc =
          descriptor_path.empty() ? RunPaths{cfg.out_dir}.descriptor() : descriptor_path;
      cmd_retrain(cfg, desc, std::cout);
    } else if (eval->parsed()) {
      cmd_eval(cfg, std::cout);
    } else if (report->parsed()) {
      cmd_report(cfg, run_dir.empty() ? cfg.out_dir : run_dir, std::cout);
    } else if (sweep->parsed()) {
      cmd_sweep(cfg, std::cout);
    }
  } catch (const CoverageError& e) {
    std::cerr << "coverage error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const SpecError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParamError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
