#pragma once

#include <map>
#include <string>
#include <vector>

#include "latnas/blocks.hpp"
#include "latnas/supernet.hpp"
#include "latnas/tensor.hpp"

namespace latnas {

// Fixed measurement context; every entry in one table was profiled under the
// same (batch, seq, width, precision).
struct ProfileContext {
  int batch = 8;
  int seq_len = 32;
  int model_dim = 32;
  std::string precision = "f64";

  bool operator==(const ProfileContext&) const = default;
};

struct LatencyEntry {
  double latency_us = 0.0;
  int reps = 0;
  int warmup = 0;
  double iqr_us = 0.0;  // dispersion of the timed repetitions
};

// Canonical-block-key -> profiled latency map. Persisted as CSV with the
// context in `# key=value` comment lines above the header; the round trip
// is bit-exact.
class LatencyTable {
 public:
  ProfileContext context;
  std::string timestamp;
  std::map<std::string, LatencyEntry> entries;

  bool has(const std::string& key) const { return entries.count(key) != 0; }
  double at(const std::string& key) const;  // CoverageError naming the key
  void put(const std::string& key, LatencyEntry entry);

  // Keys from `wanted` that have no entry yet.
  std::vector<std::string> missing(const std::vector<std::string>& wanted) const;
  void require_covers(const std::vector<std::string>& wanted) const;

  void save_csv(const std::string& path) const;
  static LatencyTable load_csv(const std::string& path);
};

// Differentiable whole-network latency: per-slot expected latency under the
// sampled probabilities, summed over slots.
struct LatencyEstimate {
  Tensor total_us;                 // scalar, differentiable w.r.t. alpha via P
  std::vector<double> per_slot_us;
};

// Median wall-clock forward latency of one block in isolation, in
// microseconds. `reps` >= 10 and `warmup` >= 3; MoE blocks are dispatched
// with balanced synthetic routing so the table stores the balanced case.
double profile_block(const BlockSpec& spec, const ProfileContext& ctx, int reps, int warmup,
                     RngStream& rng, double* iqr_us = nullptr);

LatencyEstimate estimate_latency(const std::vector<Tensor>& slot_probs,
                                 const std::vector<std::vector<BlockSpec>>& menus,
                                 const LatencyTable& table);

// Sum of the baseline block latencies from the same table (not a separate
// measurement), so the target ratio compares like with like.
double baseline_latency(const BackboneSpec& backbone, const LatencyTable& table);

// Wall-clock forward latency of a fully assembled network (embedding +
// blocks + head) at the given context.
double measure_end_to_end(const std::vector<BlockSpec>& slots, int model_dim, int vocab,
                          const ProfileContext& ctx, int reps, int warmup, RngStream& rng);

}  // namespace latnas
