#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "latnas/config.hpp"
#include "latnas/finalize.hpp"

namespace latnas {

// Correlation helpers shared by the report stage and the test suites.
double pearson(const std::vector<double>& x, const std::vector<double>& y);
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// Atomic file write: content goes to `<path>.tmp`, then a rename replaces
// the target. Prior outputs are never left half-written.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

// Well-known file names inside a run directory.
struct RunPaths {
  std::string dir;
  std::string table() const { return dir + "/latency_table.csv"; }
  std::string search_metrics() const { return dir + "/search_metrics.csv"; }
  std::string descriptor() const { return dir + "/architecture.txt"; }
  std::string checkpoint(int epoch) const;
  std::string abort_snapshot() const { return dir + "/abort_snapshot.txt"; }
  std::string retrain_metrics() const { return dir + "/retrain_metrics.csv"; }
  std::string weights() const { return dir + "/model_weights.bin"; }
  std::string report_dir() const { return dir + "/report"; }
  std::string sweep_manifest() const { return dir + "/sweep_manifest.csv"; }
};

// profile: fills the latency table for every block key in the search space
// and backbone. Cached when the table already covers them (use `force` to
// re-measure); prints the normalized per-block data.
std::string cmd_profile(const RunConfig& cfg, bool force, std::ostream& log);

struct SearchResult {
  std::string metrics_path;
  std::string descriptor_path;
  ArchitectureDescriptor descriptor;
};

// search: phase 1 + argmax sampling. Requires a covering latency table.
SearchResult cmd_search(const RunConfig& cfg, std::ostream& log);

struct RetrainResult {
  std::string metrics_path;
  std::string weights_path;
  double final_valid_ce = 0.0;
};

// retrain: phase 2 from-scratch training of a sampled (or hand-written)
// descriptor.
RetrainResult cmd_retrain(const RunConfig& cfg, const std::string& descriptor_path,
                          std::ostream& log);

struct EvalResult {
  double valid_ce = 0.0;
  double valid_bpc = 0.0;
  double test_ce = 0.0;
  double test_bpc = 0.0;
};

// eval: CE and bits-per-character of the saved weights on valid and test.
EvalResult cmd_eval(const RunConfig& cfg, std::ostream& log);

struct ReportResult {
  std::string report_dir;
  int architectures = 0;
  double pearson_estimated_measured = 0.0;
};

// report: plot-ready CSVs (target vs estimated, estimated vs measured with
// a fresh end-to-end measurement, loss curves, text architecture renderings)
// for a single run or a sweep directory.
ReportResult cmd_report(const RunConfig& cfg, const std::string& run_dir, std::ostream& log);

struct SweepResult {
  std::vector<double> targets;
  std::vector<std::string> run_dirs;
  std::string manifest_path;
};

// sweep: one search per target in cfg.sweep_targets, sharing one profiled
// table.
SweepResult cmd_sweep(const RunConfig& cfg, std::ostream& log);

}  // namespace latnas
