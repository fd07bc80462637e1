#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "latnas/errors.hpp"
#include "latnas/rng.hpp"

namespace latnas {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
std::vector<std::size_t> row_major_strides(const Shape& s);

struct Tensor;

// One edge of the backward graph. `backward` reads the output tensor's grad
// and accumulates into the grads of `parents`.
struct Node {
  std::vector<Tensor> parents;
  std::function<void(const Tensor&)> backward;
};

// Dense n-dimensional double tensor with an optional gradient and backward
// graph linkage. Value semantics: copies share the underlying buffers, so a
// Tensor is cheap to pass around and to stash in graph nodes.
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;
  std::shared_ptr<Node> node;
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(const Shape& shape, RngStream& rng, double stddev, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(data); }
  std::size_t size() const { return data ? data->size() : 0; }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  std::vector<double>& values() { return *data; }
  const std::vector<double>& values() const { return *data; }
  std::vector<double>& grads();
  const std::vector<double>& grads() const;

  // Scalar accessor; throws unless the tensor holds exactly one element.
  double value() const;

  void ensure_grad();
  void zero_grad();
};

// Runs reverse-mode accumulation from a scalar loss. Seeds the loss grad
// with 1 and walks the graph in reverse topological order; afterwards every
// requires-grad tensor reachable from the loss has a populated grad.
void backward(const Tensor& loss);

// Graph construction on/off switch (thread-local). Forward passes inside a
// NoGradGuard build no nodes and allocate no grads.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);

// ---- linear algebra ----
// Matrix product over the trailing two axes; leading axes must match
// exactly (rank-2 inputs are the plain 2-d case).
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- shape ----
Tensor reshape(const Tensor& x, const Shape& new_shape);
Tensor transpose(const Tensor& x, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis);
Tensor mean_axis(const Tensor& x, int axis);

// ---- normalization and activation over an axis ----
Tensor softmax(const Tensor& x, int axis);

// Layer norm over the last axis with elementwise affine (gain, bias).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// ---- sequence model ops ----
// Mean negative log-likelihood of integer targets under logits (N, V).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

// Row lookup: weights (V, D), ids of length N -> (N, D).
Tensor embedding(const Tensor& weights, const std::vector<int>& ids);

// Inverted dropout; identity when not training or rate == 0.
Tensor dropout(const Tensor& x, double rate, RngStream& rng, bool training);

// Sets entries above the diagonal of the trailing (S, S) slice to a large
// negative constant; no gradient flows through the masked entries.
Tensor causal_mask(const Tensor& scores);

// ---- categorical sampling ----
// Gumbel-Softmax over a vector of weights. Soft mode returns
// softmax((alpha + g) / temperature); hard mode returns the one-hot argmax
// of the soft vector in the forward pass while gradients follow the soft
// path (straight-through). `noise_override` is a test hook that replaces
// the sampled Gumbel noise.
Tensor gumbel_softmax(const Tensor& alpha, double temperature, RngStream& rng, bool hard,
                      const std::vector<double>* noise_override = nullptr);

// ---- gather / scatter ----
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
Tensor scatter_rows(const Tensor& rows, const std::vector<int>& idx, int n_rows);
Tensor gather_values(const Tensor& x, const std::vector<int>& flat_idx);
Tensor scale_rows(const Tensor& x, const Tensor& coeffs);

// Multiplies a whole tensor by one element of a vector tensor; gradients
// flow to both the tensor and the selected element.
Tensor mul_elem(const Tensor& x, const Tensor& vec, int index);

// ---- non-differentiable utilities ----
int argmax(const Tensor& v);  // ties break to the lower index
std::vector<int> topk_indices(const std::vector<double>& v, int k);

}  // namespace latnas
