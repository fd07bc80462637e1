#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latnas/finalize.hpp"
#include "latnas/latency.hpp"
#include "latnas/search.hpp"
#include "latnas/supernet.hpp"

namespace latnas {

// Declarative single-file run configuration. CLI flags override individual
// fields after parsing; validation errors name the offending field and
// value.
struct RunConfig {
  std::string corpus_path;
  std::string out_dir = "runs/default";
  std::uint64_t seed = 0;

  int model_dim = 32;
  std::vector<std::string> backbone_keys;
  std::vector<std::string> search_space_keys;

  int batch_size = 8;
  int seq_len = 32;
  double train_ratio = 0.8;
  double valid_ratio = 0.1;
  double target_ratio = 0.7;

  Phase1Config phase1;
  Phase2Config phase2;

  int profile_batch = 0;    // 0: fall back to batch_size
  int profile_seq_len = 0;  // 0: fall back to seq_len
  int profile_reps = 25;
  int profile_warmup = 5;
  int measure_reps = 15;

  std::vector<double> sweep_targets = {0.5, 0.6, 0.7, 0.8, 0.9, 0.95};

  static RunConfig from_json_file(const std::string& path);
  static RunConfig from_json_text(const std::string& text, const std::string& origin = "<json>");

  void validate() const;

  BackboneSpec backbone() const;
  // The full option menu, replicated for every slot.
  std::vector<std::vector<BlockSpec>> menus() const;
  ProfileContext profile_context() const;
  // All block keys that must be profiled: search space plus backbone.
  std::vector<std::string> profile_keys() const;
};

}  // namespace latnas
