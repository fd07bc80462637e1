#include "latnas/optim.hpp"

#include <cmath>

namespace latnas {

void Optimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double Optimizer::clip_global_norm(double max_norm) {
  double sq = 0.0;
  for (Tensor& p : params_)
    for (double g : p.grads()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Tensor& p : params_)
      for (double& g : p.grads()) g *= scale;
  }
  return norm;
}

std::unique_ptr<Optimizer> Optimizer::create(const OptimizerConfig& cfg,
                                             std::vector<Tensor> params) {
  if (cfg.type == "adam") return std::make_unique<Adam>(std::move(params), cfg.lr);
  if (cfg.type == "sgd") return std::make_unique<Sgd>(std::move(params), cfg.lr);
  throw ConfigError("optimizer type '" + cfg.type + "' is not one of: adam, sgd");
}

void Sgd::step() {
  for (Tensor& p : params_) {
    const auto& g = p.grads();
    auto& x = p.values();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr_ * g[i];
  }
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : Optimizer(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    const auto& g = params_[pi].grads();
    auto& x = params_[pi].values();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      x[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace latnas
