#include "latnas/losses.hpp"

namespace latnas {

LatencyLossResult latency_loss(const LatencyEstimate& estimated, const LatencyLossConfig& cfg) {
  if (cfg.baseline_us <= 0.0) {
    throw ParamError("latency_loss: baseline_us must be positive");
  }
  if (cfg.target_ratio <= 0.0 || cfg.target_ratio > 1.0) {
    throw ParamError("latency_loss: target_ratio must be in (0, 1], got " +
                     std::to_string(cfg.target_ratio));
  }
  LatencyLossResult r;
  // true division so the boundary case (estimate exactly at target) lands on
  // 1.0 rather than one ulp past it
  Tensor ratio = divide(estimated.total_us, Tensor::scalar(cfg.baseline_us * cfg.target_ratio));
  r.lat_loss = ratio.value();
  r.beta = r.lat_loss > 1.0 ? 1 : 0;
  // When the gate is closed the term is a plain constant zero so the total
  // loss carries no latency gradient at all.
  r.term = r.beta ? ratio : Tensor::scalar(0.0);
  return r;
}

BalanceLossResult balance_loss(const std::vector<RoutingStats>& stats_list) {
  BalanceLossResult r;
  if (stats_list.empty()) {
    r.loss = Tensor::scalar(0.0);
    return r;
  }
  Tensor acc;
  for (const RoutingStats& s : stats_list) {
    const int experts = static_cast<int>(s.token_fraction.size());
    if (static_cast<int>(s.mean_gate_score.size()) != experts) {
      throw ShapeError("balance_loss: F has " + std::to_string(experts) + " entries but G has " +
                       std::to_string(s.mean_gate_score.size()));
    }
    Tensor f_const = Tensor::from({experts}, s.token_fraction);
    Tensor layer = mul_scalar(sum(multiply(s.mean_gate_score, f_const)),
                              static_cast<double>(experts));
    acc = acc.defined() ? add(acc, layer) : layer;
  }
  r.loss = mul_scalar(acc, 1.0 / static_cast<double>(stats_list.size()));
  r.value = r.loss.value();
  r.has_moe = true;
  return r;
}

Tensor phase1_total_loss(const Tensor& ce, const LatencyLossResult& latency_term) {
  if (latency_term.beta == 0) return ce;
  return add(ce, latency_term.term);
}

Tensor phase2_total_loss(const Tensor& ce, const BalanceLossResult& balance, double coefficient) {
  if (!balance.has_moe || coefficient == 0.0) return ce;
  return add(ce, mul_scalar(balance.loss, coefficient));
}

}  // namespace latnas
