#pragma once

#include <vector>

#include "latnas/blocks.hpp"
#include "latnas/latency.hpp"
#include "latnas/tensor.hpp"

namespace latnas {

struct LatencyLossConfig {
  double target_ratio = 1.0;  // in (0, 1]
  double baseline_us = 0.0;   // positive
};

struct LatencyLossResult {
  Tensor term;            // beta * Lat_Loss; a graph-free zero when beta == 0
  double lat_loss = 0.0;  // estimated / (baseline * target), always reported
  int beta = 0;           // 1 iff lat_loss > 1 (strict)
};

// Dynamic latency loss: Lat_Loss = estimated / (baseline * target). The term
// enters the total loss only while the estimate exceeds the target; at or
// below it (Lat_Loss <= 1) beta is 0 and no gradient reaches alpha.
LatencyLossResult latency_loss(const LatencyEstimate& estimated, const LatencyLossConfig& cfg);

struct BalanceLossResult {
  Tensor loss;          // scalar; differentiable through G
  double value = 0.0;
  bool has_moe = false;  // false when stats_list was empty (loss is 0)
};

// Load-balance loss per MoE layer: E * sum_e F_e * G_e, averaged across
// layers. F is a constant token count; gradient flows only through G.
BalanceLossResult balance_loss(const std::vector<RoutingStats>& stats_list);

// Phase-1 architecture-step loss: CE + beta * Lat_Loss.
Tensor phase1_total_loss(const Tensor& ce, const LatencyLossResult& latency_term);

// Phase-2 loss: CE + coefficient * Balance_Loss. Without MoE layers the
// result is the CE tensor itself.
Tensor phase2_total_loss(const Tensor& ce, const BalanceLossResult& balance,
                         double coefficient = 1.0);

}  // namespace latnas
