#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "latnas/data.hpp"
#include "latnas/latency.hpp"
#include "latnas/losses.hpp"
#include "latnas/optim.hpp"
#include "latnas/search.hpp"
#include "latnas/supernet.hpp"

namespace latnas {

// The sampled per-slot block choices plus latency/provenance metadata.
// Serialized as a human-readable text file using the canonical block-key
// grammar; the estimated latency field is recomputed and checked on load
// whenever a table is available.
struct ArchitectureDescriptor {
  std::vector<BlockSpec> slots;
  int model_dim = 0;
  double estimated_latency_us = 0.0;
  double baseline_latency_us = 0.0;
  double target_ratio = 1.0;
  bool target_met = true;
  std::uint64_t seed = 0;
  std::string source = "searched";  // "searched" or "manual"
  std::vector<std::vector<double>> alpha_snapshot;  // per slot; may be empty

  void save(const std::string& path) const;
  static ArchitectureDescriptor load(const std::string& path,
                                     const LatencyTable* table = nullptr);
};

// Per-slot argmax over alpha, ties broken by the lower option index. The
// descriptor carries the recomputed one-hot latency estimate.
ArchitectureDescriptor sample_architecture(const SearchNetwork& net, const LatencyTable& table,
                                           double target_ratio, std::uint64_t seed);

// A fully assembled, trainable network for one sampled architecture.
struct FinalNetwork {
  int model_dim = 0;
  LmCore core;
  std::vector<std::unique_ptr<Block>> blocks;

  Tensor forward(const std::vector<int>& tokens, int batch, int seq, ForwardCtx& ctx);
  // Routing stats from the most recent forward, one entry per MoE slot.
  std::vector<RoutingStats> routing_stats() const;

  std::vector<std::pair<std::string, Tensor>> named_params() const;
  std::vector<Tensor> params() const;
  std::size_t param_count() const;
};

// Fresh weight initialization from the descriptor alone; phase-1 weights are
// structurally out of reach. Skip slots compile to the identity.
FinalNetwork instantiate(const ArchitectureDescriptor& arch, int vocab, int max_seq,
                         RngStream& rng);

struct Phase2Config {
  int epochs = 10;
  OptimizerConfig opt{"adam", 0.003};
  double balance_coefficient = 1.0;
  double dropout = 0.1;
  double moe_dropout = 0.2;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  BatchConfig batch;

  void validate() const;
};

struct Phase2StepLog {
  int epoch = 0;
  int step = 0;
  double ce = 0.0;
  double balance_loss = 0.0;         // exact zero when the net has no MoE
  double max_expert_fraction = 0.0;  // max_e F_e across MoE layers
};

struct Phase2EpochLog {
  int epoch = 0;
  double valid_ce = 0.0;
};

struct Phase2Result {
  std::vector<Phase2StepLog> steps;
  std::vector<Phase2EpochLog> epochs;
};

using Phase2StepHook = std::function<void(const Phase2StepLog&)>;
using Phase2EpochHook = std::function<void(const Phase2EpochLog&)>;

// Standard training loop minimizing CE + coefficient * Balance_Loss, with
// per-step routing statistics and a validation pass per epoch.
Phase2Result run_phase2(FinalNetwork& net, const Corpus& corpus, const Phase2Config& cfg,
                        const Phase2StepHook& on_step = nullptr,
                        const Phase2EpochHook& on_epoch = nullptr);

// Mean CE over one split (no dropout, no graph).
double evaluate_ce(FinalNetwork& net, const Corpus& corpus, Split split, const BatchConfig& bc);

// Flat binary weight snapshot; names and shapes must match on load.
void save_weights(const FinalNetwork& net, const std::string& path);
void load_weights(FinalNetwork& net, const std::string& path);

}  // namespace latnas
