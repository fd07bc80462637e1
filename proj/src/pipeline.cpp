#include "latnas/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace latnas {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string iso_timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory '" + dir + "': " + ec.message());
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = mean_rank;
    i = j + 1;
  }
  return r;
}

Phase1Config effective_phase1(const RunConfig& cfg) {
  Phase1Config p = cfg.phase1;
  p.seed = cfg.seed;
  p.target_ratio = cfg.target_ratio;
  p.batch.batch_size = cfg.batch_size;
  p.batch.seq_len = cfg.seq_len;
  return p;
}

Phase2Config effective_phase2(const RunConfig& cfg) {
  Phase2Config p = cfg.phase2;
  p.seed = cfg.seed;
  p.batch.batch_size = cfg.batch_size;
  p.batch.seq_len = cfg.seq_len;
  return p;
}

LatencyTable load_table_checked(const RunConfig& cfg, const RunPaths& paths) {
  if (!fs::exists(paths.table())) {
    throw CoverageError("latency table '" + paths.table() +
                        "' not found; run the profile subcommand first");
  }
  LatencyTable table = LatencyTable::load_csv(paths.table());
  if (!(table.context == cfg.profile_context())) {
    throw CoverageError("latency table '" + paths.table() +
                        "' was profiled under a different context; re-run profile");
  }
  table.require_covers(cfg.profile_keys());
  return table;
}

void print_normalized_latencies(const LatencyTable& table, std::ostream& log) {
  const std::string anchor = "mha:h=8";
  double denom = 0.0;
  std::string denom_key;
  if (table.has(anchor)) {
    denom = table.at(anchor);
    denom_key = anchor;
  } else {
    for (const auto& [k, e] : table.entries) {
      if (e.latency_us > denom) {
        denom = e.latency_us;
        denom_key = k;
      }
    }
  }
  log << "block latencies (batch=" << table.context.batch << " seq=" << table.context.seq_len
      << " d=" << table.context.model_dim << "), normalized to " << denom_key << ":\n";
  for (const auto& [k, e] : table.entries) {
    char line[160];
    std::snprintf(line, sizeof(line), "  %-24s %12.2f us   %8.4f\n", k.c_str(), e.latency_us,
                  denom > 0.0 ? e.latency_us / denom : 0.0);
    log << line;
  }
}

struct MetricsWriter {
  // Streams rows to <path>.tmp and renames on commit, so a crashed run
  // never corrupts prior output.
  explicit MetricsWriter(std::string path, const std::string& header) : path_(std::move(path)) {
    tmp_ = path_ + ".tmp";
    out_.open(tmp_, std::ios::binary | std::ios::trunc);
    if (!out_) throw DataError("cannot write metrics to '" + tmp_ + "'");
    out_ << header << "\n";
  }
  void row(const std::string& line) { out_ << line << "\n"; }
  void commit() {
    out_.close();
    fs::rename(tmp_, path_);
  }
  std::string path_, tmp_;
  std::ofstream out_;
};

}  // namespace

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ParamError("pearson: need two same-length series with >= 2 points");
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(ranks(x), ranks(y));
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write to '" + tmp + "'");
    f << content;
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string RunPaths::checkpoint(int epoch) const {
  return dir + "/checkpoints/epoch_" + std::to_string(epoch) + ".txt";
}

std::string cmd_profile(const RunConfig& cfg, bool force, std::ostream& log) {
  cfg.validate();
  RunPaths paths{cfg.out_dir};
  ensure_dir(cfg.out_dir);
  const auto keys = cfg.profile_keys();

  LatencyTable table;
  table.context = cfg.profile_context();
  bool reused = false;
  if (!force && fs::exists(paths.table())) {
    LatencyTable existing = LatencyTable::load_csv(paths.table());
    if (existing.context == table.context) {
      if (existing.missing(keys).empty()) {
        log << "profile: table at " << paths.table() << " already covers all " << keys.size()
            << " keys (cache hit)\n";
        print_normalized_latencies(existing, log);
        return paths.table();
      }
      table = existing;  // keep measured entries, fill the gaps
      reused = true;
    }
  }

  RngStream rng(cfg.seed, Stream::Profile);
  for (const std::string& key : keys) {
    if (reused && table.has(key)) continue;
    const BlockSpec spec = BlockSpec::parse(key);
    double iqr = 0.0;
    const double med =
        profile_block(spec, table.context, cfg.profile_reps, cfg.profile_warmup, rng, &iqr);
    table.put(key, {med, cfg.profile_reps, cfg.profile_warmup, iqr});
    log << "profile: " << key << " -> " << med << " us (iqr " << iqr << ")\n";
  }
  table.timestamp = iso_timestamp();
  {
    // save through a temp name for atomic replacement
    const std::string tmp = paths.table() + ".tmp";
    table.save_csv(tmp);
    fs::rename(tmp, paths.table());
  }
  print_normalized_latencies(table, log);
  return paths.table();
}

SearchResult cmd_search(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  RunPaths paths{cfg.out_dir};
  ensure_dir(cfg.out_dir);
  ensure_dir(cfg.out_dir + "/checkpoints");
  const LatencyTable table = load_table_checked(cfg, paths);

  const Corpus corpus = Corpus::load(cfg.corpus_path, cfg.train_ratio, cfg.valid_ratio);
  RngStream init_rng(cfg.seed, Stream::Init);
  SearchNetwork net = build_search_network(cfg.backbone(), cfg.menus(), corpus.vocab_size(),
                                           cfg.seq_len, init_rng);
  log << "search: " << net.super_blocks.size() << " slots, "
      << count_architectures(net.option_menus()) << " candidate architectures, target "
      << cfg.target_ratio << "\n";

  const Phase1Config p1 = effective_phase1(cfg);
  MetricsWriter metrics(paths.search_metrics(),
                        "epoch,step,phase,ce,lat_loss,beta,estimated_us,temperature");
  auto on_step = [&](const StepLog& s) {
    std::ostringstream row;
    row << s.epoch << ',' << s.step << ',' << s.phase << ',' << fmt_double(s.ce) << ','
        << fmt_double(s.lat_loss) << ',' << s.beta << ',' << fmt_double(s.estimated_us) << ','
        << fmt_double(s.temperature);
    metrics.row(row.str());
  };
  auto on_epoch = [&](const Phase1State& st) {
    save_phase1_checkpoint(st, paths.checkpoint(st.epoch));
  };
  auto on_abort = [&](const Phase1State& st) {
    save_phase1_checkpoint(st, paths.abort_snapshot());
    log << "search: aborting, diagnostic snapshot at " << paths.abort_snapshot() << "\n";
  };

  run_phase1(net, table, p1, corpus, on_epoch, on_step, on_abort);
  metrics.commit();

  SearchResult res;
  res.descriptor = sample_architecture(net, table, cfg.target_ratio, cfg.seed);
  res.descriptor_path = paths.descriptor();
  res.metrics_path = paths.search_metrics();
  {
    const std::string tmp = res.descriptor_path + ".tmp";
    res.descriptor.save(tmp);
    fs::rename(tmp, res.descriptor_path);
  }
  log << "search: sampled architecture estimated " << res.descriptor.estimated_latency_us
      << " us vs baseline " << res.descriptor.baseline_latency_us << " us (target "
      << cfg.target_ratio << (res.descriptor.target_met ? ", met" : ", NOT met") << ")\n";
  for (std::size_t i = 0; i < res.descriptor.slots.size(); ++i) {
    log << "  slot " << i << ": " << res.descriptor.slots[i].key() << "\n";
  }
  return res;
}

RetrainResult cmd_retrain(const RunConfig& cfg, const std::string& descriptor_path,
                          std::ostream& log) {
  cfg.validate();
  RunPaths paths{cfg.out_dir};
  ensure_dir(cfg.out_dir);

  const LatencyTable* table_ptr = nullptr;
  LatencyTable table;
  if (fs::exists(paths.table())) {
    table = LatencyTable::load_csv(paths.table());
    table_ptr = &table;
  }
  const ArchitectureDescriptor arch = ArchitectureDescriptor::load(descriptor_path, table_ptr);
  const Corpus corpus = Corpus::load(cfg.corpus_path, cfg.train_ratio, cfg.valid_ratio);

  RngStream init_rng(cfg.seed, Stream::Init);
  FinalNetwork net = instantiate(arch, corpus.vocab_size(), cfg.seq_len, init_rng);
  log << "retrain: " << arch.slots.size() << " slots, " << net.param_count() << " parameters\n";

  const Phase2Config p2 = effective_phase2(cfg);
  MetricsWriter metrics(paths.retrain_metrics(),
                        "epoch,step,split,ce,balance_loss,max_expert_fraction");
  double last_valid = 0.0;
  auto on_step = [&](const Phase2StepLog& s) {
    std::ostringstream row;
    row << s.epoch << ',' << s.step << ",train," << fmt_double(s.ce) << ','
        << fmt_double(s.balance_loss) << ',' << fmt_double(s.max_expert_fraction);
    metrics.row(row.str());
  };
  auto on_epoch = [&](const Phase2EpochLog& e) {
    std::ostringstream row;
    row << e.epoch << ",-1,valid," << fmt_double(e.valid_ce) << ",0,0";
    metrics.row(row.str());
    last_valid = e.valid_ce;
    log << "retrain: epoch " << e.epoch << " valid ce " << e.valid_ce << "\n";
  };
  run_phase2(net, corpus, p2, on_step, on_epoch);
  metrics.commit();

  save_weights(net, paths.weights() + ".tmp");
  fs::rename(paths.weights() + ".tmp", paths.weights());

  // keep the trained descriptor next to the weights for eval/report
  if (fs::absolute(descriptor_path) != fs::absolute(paths.descriptor())) {
    write_file_atomic(paths.descriptor(), read_file(descriptor_path));
  }

  RetrainResult res;
  res.metrics_path = paths.retrain_metrics();
  res.weights_path = paths.weights();
  res.final_valid_ce = last_valid;
  return res;
}

EvalResult cmd_eval(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  RunPaths paths{cfg.out_dir};
  const ArchitectureDescriptor arch = ArchitectureDescriptor::load(paths.descriptor());
  const Corpus corpus = Corpus::load(cfg.corpus_path, cfg.train_ratio, cfg.valid_ratio);
  RngStream init_rng(cfg.seed, Stream::Init);
  FinalNetwork net = instantiate(arch, corpus.vocab_size(), cfg.seq_len, init_rng);
  load_weights(net, paths.weights());

  BatchConfig bc{cfg.batch_size, cfg.seq_len, cfg.seed};
  EvalResult res;
  res.valid_ce = evaluate_ce(net, corpus, Split::Valid, bc);
  res.test_ce = evaluate_ce(net, corpus, Split::Test, bc);
  res.valid_bpc = res.valid_ce / std::log(2.0);
  res.test_bpc = res.test_ce / std::log(2.0);
  log << "eval: valid ce " << res.valid_ce << " (bpc " << res.valid_bpc << "), test ce "
      << res.test_ce << " (bpc " << res.test_bpc << ")\n";
  return res;
}

ReportResult cmd_report(const RunConfig& cfg, const std::string& run_dir, std::ostream& log) {
  cfg.validate();
  RunPaths root{run_dir};
  ensure_dir(root.report_dir());

  // Collect run directories: a sweep manifest lists subruns; otherwise the
  // directory itself is a single run.
  std::vector<std::pair<double, std::string>> runs;  // (target, dir)
  if (fs::exists(root.sweep_manifest())) {
    std::istringstream is(read_file(root.sweep_manifest()));
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto comma = line.find(',');
      runs.emplace_back(std::strtod(line.substr(0, comma).c_str(), nullptr),
                        line.substr(comma + 1));
    }
  } else {
    runs.emplace_back(cfg.target_ratio, run_dir);
  }
  if (runs.empty()) throw DataError("report: no runs found under '" + run_dir + "'");

  const Corpus corpus = Corpus::load(cfg.corpus_path, cfg.train_ratio, cfg.valid_ratio);
  const ProfileContext ctx = cfg.profile_context();

  std::ostringstream tve;  // target vs estimated
  tve << "target_ratio,estimated_us,baseline_us,estimated_over_baseline\n";
  std::ostringstream evm;  // estimated vs measured
  evm << "label,estimated_us,measured_us\n";
  std::ostringstream rendering;
  std::vector<double> est_series, meas_series;

  LatencyTable table;
  bool have_table = false;
  RngStream meas_rng(cfg.seed, Stream::Profile);
  for (const auto& [target, dir] : runs) {
    RunPaths rp{dir};
    if (!fs::exists(rp.descriptor())) {
      throw DataError("report: missing architecture descriptor '" + rp.descriptor() + "'");
    }
    if (!have_table && fs::exists(rp.table())) {
      table = LatencyTable::load_csv(rp.table());
      have_table = true;
    }
    const ArchitectureDescriptor arch = ArchitectureDescriptor::load(rp.descriptor());
    tve << fmt_double(target) << ',' << fmt_double(arch.estimated_latency_us) << ','
        << fmt_double(arch.baseline_latency_us) << ','
        << fmt_double(arch.estimated_latency_us / arch.baseline_latency_us) << "\n";

    const double measured = measure_end_to_end(arch.slots, arch.model_dim, corpus.vocab_size(),
                                               ctx, cfg.measure_reps, 3, meas_rng);
    evm << "target_" << fmt_double(target) << ',' << fmt_double(arch.estimated_latency_us) << ','
        << fmt_double(measured) << "\n";
    est_series.push_back(arch.estimated_latency_us);
    meas_series.push_back(measured);

    rendering << "architecture (target " << fmt_double(target) << ", " << dir << ")\n";
    for (std::size_t i = 0; i < arch.slots.size(); ++i) {
      rendering << "  slot " << i << ": " << arch.slots[i].key() << "\n";
    }
    rendering << "\n";
  }

  // Baseline row: table-summed estimate vs a fresh end-to-end measurement.
  if (have_table) {
    const BackboneSpec backbone = cfg.backbone();
    const double est = baseline_latency(backbone, table);
    const double measured = measure_end_to_end(backbone.slots, backbone.model_dim,
                                               corpus.vocab_size(), ctx, cfg.measure_reps, 3,
                                               meas_rng);
    evm << "baseline," << fmt_double(est) << ',' << fmt_double(measured) << "\n";
    est_series.push_back(est);
    meas_series.push_back(measured);
  }

  ReportResult res;
  res.report_dir = root.report_dir();
  res.architectures = static_cast<int>(runs.size());
  if (est_series.size() >= 2) {
    res.pearson_estimated_measured = pearson(est_series, meas_series);
  }

  write_file_atomic(root.report_dir() + "/target_vs_estimated.csv", tve.str());
  write_file_atomic(root.report_dir() + "/estimated_vs_measured.csv", evm.str());
  write_file_atomic(root.report_dir() + "/architecture_rendering.txt", rendering.str());

  {
    std::ostringstream corr;
    corr << "pearson_estimated_vs_measured," << fmt_double(res.pearson_estimated_measured) << "\n";
    corr << "architectures," << res.architectures << "\n";
    write_file_atomic(root.report_dir() + "/correlations.txt", corr.str());
  }

  if (have_table) {
    std::ostringstream blk;
    blk << "key,latency_us,normalized_to_mha8\n";
    const double denom = table.has("mha:h=8") ? table.at("mha:h=8") : 0.0;
    for (const auto& [k, e] : table.entries) {
      blk << k << ',' << fmt_double(e.latency_us) << ','
          << fmt_double(denom > 0.0 ? e.latency_us / denom : 0.0) << "\n";
    }
    // measured attention-to-feedforward cost ratio; the large-GPU reference
    // point is recorded for context, never asserted
    std::string ffl_key;
    for (const auto& [k, e] : table.entries) {
      if (k.rfind("ffl:", 0) == 0) {
        ffl_key = k;
        break;
      }
    }
    if (denom > 0.0 && !ffl_key.empty()) {
      blk << "# mha8_over_" << ffl_key << "_measured," << fmt_double(denom / table.at(ffl_key))
          << "\n";
      blk << "# mha8_over_ffl_gpu_reference,6.2\n";
    }
    write_file_atomic(root.report_dir() + "/block_latencies.csv", blk.str());
  }

  // Per-epoch loss curves from the step metrics, when present.
  for (const auto& [target, dir] : runs) {
    RunPaths rp{dir};
    if (!fs::exists(rp.search_metrics())) continue;
    std::istringstream is(read_file(rp.search_metrics()));
    std::string line;
    std::getline(is, line);
    std::map<std::pair<int, char>, std::pair<double, int>> acc;  // (epoch, phase) -> (sum, n)
    while (std::getline(is, line)) {
      std::istringstream row(line);
      std::string epoch_s, step_s, phase_s, ce_s;
      std::getline(row, epoch_s, ',');
      std::getline(row, step_s, ',');
      std::getline(row, phase_s, ',');
      std::getline(row, ce_s, ',');
      auto& slot = acc[{std::stoi(epoch_s), phase_s[0]}];
      slot.first += std::strtod(ce_s.c_str(), nullptr);
      slot.second += 1;
    }
    std::ostringstream curve;
    curve << "epoch,phase,mean_ce\n";
    for (const auto& [key, sumn] : acc) {
      curve << key.first << ',' << key.second << ',' << fmt_double(sumn.first / sumn.second)
            << "\n";
    }
    const std::string suffix =
        runs.size() == 1 ? "" : "_target_" + fmt_double(target);
    write_file_atomic(root.report_dir() + "/search_loss_curve" + suffix + ".csv", curve.str());
  }

  log << "report: " << res.architectures << " architectures, estimated-vs-measured pearson "
      << res.pearson_estimated_measured << ", files under " << res.report_dir << "\n";
  return res;
}

SweepResult cmd_sweep(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  if (cfg.sweep_targets.empty()) throw ConfigError("config field 'sweep_targets' is empty");
  RunPaths root{cfg.out_dir};
  ensure_dir(cfg.out_dir);

  // one profiled table shared by every target run
  const std::string table_path = cmd_profile(cfg, false, log);
  const std::string table_bytes = read_file(table_path);

  SweepResult res;
  std::ostringstream manifest;
  manifest << "target_ratio,run_dir\n";
  for (double target : cfg.sweep_targets) {
    RunConfig sub = cfg;
    char tag[32];
    std::snprintf(tag, sizeof(tag), "target_%.2f", target);
    sub.out_dir = cfg.out_dir + "/" + tag;
    sub.target_ratio = target;
    ensure_dir(sub.out_dir);
    write_file_atomic(RunPaths{sub.out_dir}.table(), table_bytes);
    log << "sweep: target " << target << " -> " << sub.out_dir << "\n";
    cmd_search(sub, log);
    res.targets.push_back(target);
    res.run_dirs.push_back(sub.out_dir);
    manifest << fmt_double(target) << ',' << sub.out_dir << "\n";
  }
  write_file_atomic(root.sweep_manifest(), manifest.str());
  res.manifest_path = root.sweep_manifest();
  return res;
}

}  // namespace latnas
