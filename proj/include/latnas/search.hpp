#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "latnas/data.hpp"
#include "latnas/latency.hpp"
#include "latnas/losses.hpp"
#include "latnas/optim.hpp"
#include "latnas/supernet.hpp"

namespace latnas {

struct Phase1Config {
  int epochs = 10;
  double arch_data_fraction = 0.2;    // share of batches for the alpha pass
  double arch_warmup_fraction = 0.1;  // epochs with the alpha pass disabled
  double initial_temperature = 5.0;
  double temperature_anneal_rate = 0.6;
  OptimizerConfig net_opt{"adam", 0.003};
  OptimizerConfig arch_opt{"adam", 0.01};
  double target_ratio = 1.0;
  double grad_clip = 1.0;
  double dropout = 0.0;
  double moe_dropout = 0.0;
  std::uint64_t seed = 0;
  BatchConfig batch;

  // Warmup counts whole epochs, rounded up.
  int warmup_epochs() const;
  void validate() const;
};

struct StepLog {
  int epoch = 0;
  int step = 0;
  char phase = 'n';  // 'n' network-weight pass, 'a' architecture-weight pass
  double ce = 0.0;
  double lat_loss = 0.0;
  int beta = 0;
  double estimated_us = 0.0;
  double temperature = 0.0;
};

struct Phase1State {
  int epoch = -1;
  double temperature = 0.0;
  std::vector<std::vector<double>> alphas;  // snapshot per slot
  std::string gumbel_rng_state;
  std::string dropout_rng_state;
  std::vector<StepLog> history;
};

void save_phase1_checkpoint(const Phase1State& state, const std::string& path);
Phase1State load_phase1_checkpoint(const std::string& path);

// T <- T * rate once per epoch past warmup, clamped at 1e-3.
double anneal_temperature(double temperature, double rate);

// Uniformly random sample without replacement of floor(fraction * n)
// indices (at least one), returned in ascending order. Resampled fresh
// every epoch by the caller.
std::vector<std::size_t> select_arch_subset(std::size_t n, double fraction, RngStream& rng);

using Phase1EpochHook = std::function<void(const Phase1State&)>;
using Phase1StepHook = std::function<void(const StepLog&)>;

// The alternating two-optimizer search loop. Each epoch runs (a) a
// network-weight pass over every training batch with hard sampling and CE
// loss, then (b) past warmup, an architecture-weight pass over a fresh
// random subset of batches with soft sampling and CE + beta * Lat_Loss.
// Throws NumericError on a non-finite loss after handing the diagnostic
// snapshot to `on_abort`.
Phase1State run_phase1(SearchNetwork& net, const LatencyTable& table, const Phase1Config& cfg,
                       const Corpus& corpus, const Phase1EpochHook& on_epoch = nullptr,
                       const Phase1StepHook& on_step = nullptr,
                       const Phase1EpochHook& on_abort = nullptr);

}  // namespace latnas
