#pragma once

#include <memory>
#include <string>
#include <vector>

#include "latnas/tensor.hpp"

namespace latnas {

struct OptimizerConfig {
  std::string type = "adam";  // "adam" or "sgd"
  double lr = 0.001;
};

// Owns a fixed parameter group. The two phase-1 optimizers are built over
// disjoint groups, so stepping one can never move the other's parameters.
class Optimizer {
 public:
  explicit Optimizer(std::vector<Tensor> params) : params_(std::move(params)) {}
  virtual ~Optimizer() = default;

  virtual void step() = 0;
  void zero_grad();

  // Scales gradients so their global L2 norm is at most `max_norm`;
  // returns the pre-clip norm. No-op when max_norm <= 0.
  double clip_global_norm(double max_norm);

  const std::vector<Tensor>& params() const { return params_; }

  static std::unique_ptr<Optimizer> create(const OptimizerConfig& cfg, std::vector<Tensor> params);

 protected:
  std::vector<Tensor> params_;
};

class Sgd final : public Optimizer {
 public:
  Sgd(std::vector<Tensor> params, double lr) : Optimizer(std::move(params)), lr_(lr) {}
  void step() override;

 private:
  double lr_;
};

class Adam final : public Optimizer {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step() override;

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace latnas
