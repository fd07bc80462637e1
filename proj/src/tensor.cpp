#include "latnas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace latnas {

namespace {

thread_local bool g_grad_enabled = true;

constexpr double kMaskValue = -1e30;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
}

// Wires the backward edge onto `out` when grad mode is on and any parent
// participates in the graph.
void attach(Tensor& out, std::vector<Tensor> parents, std::function<void(const Tensor&)> bw) {
  if (!g_grad_enabled) return;
  bool any = false;
  for (const Tensor& p : parents) any = any || p.requires_grad;
  if (!any) return;
  out.requires_grad = true;
  out.ensure_grad();
  out.node = std::make_shared<Node>();
  out.node->parents = std::move(parents);
  out.node->backward = std::move(bw);
}

int normalize_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  }
  return a;
}

// Decomposes a shape around `axis` into (outer, n, inner) so that flat index
// = (o * n + i) * inner + j.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i < axis) s.outer *= static_cast<std::size_t>(shape[i]);
    if (i == axis) s.n = static_cast<std::size_t>(shape[i]);
    if (i > axis) s.inner *= static_cast<std::size_t>(shape[i]);
  }
  return s;
}

}  // namespace

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ')';
  return os.str();
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] =
        st[static_cast<std::size_t>(i) + 1] * static_cast<std::size_t>(s[static_cast<std::size_t>(i) + 1]);
  }
  return st;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(shape_numel(shape), 0.0);
  if (requires_grad) {
    t.requires_grad = true;
    t.ensure_grad();
  }
  return t;
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(values.size()));
  }
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  if (requires_grad) {
    t.requires_grad = true;
    t.ensure_grad();
  }
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::randn(const Shape& shape, RngStream& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  for (double& v : *t.data) v = rng.normal(0.0, stddev);
  return t;
}

std::vector<double>& Tensor::grads() {
  if (!grad) throw ParamError("Tensor::grads: no gradient allocated");
  return *grad;
}

const std::vector<double>& Tensor::grads() const {
  if (!grad) throw ParamError("Tensor::grads: no gradient allocated");
  return *grad;
}

double Tensor::value() const {
  if (!data || data->size() != 1) {
    throw ShapeError("Tensor::value: expected a single element, shape is " + shape_str(shape));
  }
  return (*data)[0];
}

void Tensor::ensure_grad() {
  if (!grad) grad = std::make_shared<std::vector<double>>(data ? data->size() : 0, 0.0);
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, shape is " + shape_str(loss.shape));
  }
  if (!loss.requires_grad || !loss.grad) return;  // constant loss: nothing to do
  (*loss.grad)[0] = 1.0;
  if (!loss.node) return;

  // Iterative post-order DFS over nodes; reversing it yields an order where
  // every tensor is processed before its parents.
  std::vector<Tensor> order;
  std::unordered_set<const Node*> visited;
  struct Frame {
    Tensor t;
    std::size_t next_parent = 0;
  };
  std::vector<Frame> stack;
  visited.insert(loss.node.get());
  stack.push_back({loss, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.t.node->parents.size()) {
      Tensor p = f.t.node->parents[f.next_parent++];
      if (p.node && !visited.count(p.node.get())) {
        visited.insert(p.node.get());
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.t);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (it->node->backward) it->node->backward(*it);
  }
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  attach(out, {a, b}, [](const Tensor& o) {
    const Tensor& pa = o.node->parents[0];
    const Tensor& pb = o.node->parents[1];
    const std::size_t n2 = o.size();
    if (pa.requires_grad)
      for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < n2; ++i) (*pb.grad)[i] += (*o.grad)[i];
  });
  return out;
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "subtract");
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  attach(out, {a, b}, [](const Tensor& o) {
    const Tensor& pa = o.node->parents[0];
    const Tensor& pb = o.node->parents[1];
    const std::size_t n2 = o.size();
    if (pa.requires_grad)
      for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < n2; ++i) (*pb.grad)[i] -= (*o.grad)[i];
  });
  return out;
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "multiply");
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  attach(out, {a, b}, [](const Tensor& o) {
    const Tensor& pa = o.node->parents[0];
    const Tensor& pb = o.node->parents[1];
    const std::size_t n2 = o.size();
    if (pa.requires_grad)
      for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i] * (*pb.data)[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < n2; ++i) (*pb.grad)[i] += (*o.grad)[i] * (*pa.data)[i];
  });
  return out;
}

Tensor divide(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "divide");
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] / (*b.data)[i];
  attach(out, {a, b}, [](const Tensor& o) {
    const Tensor& pa = o.node->parents[0];
    const Tensor& pb = o.node->parents[1];
    const std::size_t n2 = o.size();
    for (std::size_t i = 0; i < n2; ++i) {
      const double bi = (*pb.data)[i];
      if (pa.requires_grad) (*pa.grad)[i] += (*o.grad)[i] / bi;
      if (pb.requires_grad) (*pb.grad)[i] -= (*o.grad)[i] * (*pa.data)[i] / (bi * bi);
    }
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + c;
  attach(out, {a}, [](const Tensor& o) {
    const Tensor& pa = o.node->parents[0];
    if (!pa.requires_grad) return;
    const std::size_t n2 = o.size();
    for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i];
  });
  return out;
}

Tensor mul_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * c;
  attach(out, {a}, [c](const Tensor& o) {
    const Tensor& pa = o.node->parents[0];
    if (!pa.requires_grad) return;
    const std::size_t n2 = o.size();
    for (std::size_t i = 0; i < n2; ++i) (*pa.grad)[i] += (*o.grad)[i] * c;
  });
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] > 0.0 ? (*a.data)[i] : 0.0;
  attach(out, {a}, [](const Tensor& o) {
    const Tensor& pa = o.node->parents[0];
    if (!pa.requires_grad) return;
    const std::size_t n2 = o.size();
    for (std::size_t i = 0; i < n2; ++i)
      if ((*pa.data)[i] > 0.0) (*pa.grad)[i] += (*o.grad)[i];
  });
  return out;
}

// ---- linear algebra ----

namespace {

// C (m,n) += A (m,k) * B (k,n), optionally transposing either operand's
// logical layout. Plain ikj loops: fast enough at desk scale and bit-stable.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n, bool trans_a, bool trans_b) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = trans_a ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = trans_b ? nullptr : b + p * n;
      if (!trans_b) {
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
  }
  const Shape lead_a(a.shape.begin(), a.shape.end() - 2);
  const Shape lead_b(b.shape.begin(), b.shape.end() - 2);
  const int m = a.shape[a.shape.size() - 2];
  const int k = a.shape[a.shape.size() - 1];
  const int k2 = b.shape[b.shape.size() - 2];
  const int n = b.shape[b.shape.size() - 1];
  if (lead_a != lead_b || k != k2) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
  }
  Shape out_shape = lead_a;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = Tensor::zeros(out_shape);

  const std::size_t batches = shape_numel(lead_a);
  const std::size_t sm = static_cast<std::size_t>(m), sk = static_cast<std::size_t>(k),
                    sn = static_cast<std::size_t>(n);
  for (std::size_t l = 0; l < batches; ++l) {
    gemm_acc(a.data->data() + l * sm * sk, b.data->data() + l * sk * sn,
             out.data->data() + l * sm * sn, sm, sk, sn, false, false);
  }
  attach(out, {a, b}, [batches, sm, sk, sn](const Tensor& o) {
    const Tensor& pa = o.node->parents[0];
    const Tensor& pb = o.node->parents[1];
    for (std::size_t l = 0; l < batches; ++l) {
      const double* g = o.grad->data() + l * sm * sn;
      if (pa.requires_grad) {
        // dA = G * B^T
        gemm_acc(g, pb.data->data() + l * sk * sn, pa.grad->data() + l * sm * sk, sm, sn, sk,
                 false, true);
      }
      if (pb.requires_grad) {
        // dB = A^T * G
        gemm_acc(pa.data->data() + l * sm * sk, g, pb.grad->data() + l * sk * sn, sk, sm, sn,
                 true, false);
      }
    }
  });
  return out;
}

// ---- shape ----

Tensor reshape(const Tensor& x, const Shape& new_shape) {
  if (shape_numel(new_shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(new_shape));
  }
  Tensor out;
  out.shape = new_shape;
  out.data = x.data;  // shared storage; ops never mutate their inputs
  attach(out, {x}, [](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    if (!px.requires_grad) return;
    const std::size_t n = o.size();
    for (std::size_t i = 0; i < n; ++i) (*px.grad)[i] += (*o.grad)[i];
  });
  return out;
}

Tensor transpose(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) {
    throw ShapeError("transpose: permutation size " + std::to_string(perm.size()) +
                     " does not match rank " + std::to_string(r));
  }
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) {
      throw ShapeError("transpose: invalid permutation");
    }
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[static_cast<std::size_t>(i)] = x.shape[static_cast<std::size_t>(p)];
  }
  Tensor out = Tensor::zeros(out_shape);
  const auto in_strides = row_major_strides(x.shape);
  const std::size_t n = x.size();
  // out[idx] = x[perm(idx)]: walk output linearly, derive the source offset.
  std::vector<std::size_t> src_stride_for_out(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i)
    src_stride_for_out[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(static_cast<std::size_t>(r), 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t src = 0;
    for (int i = 0; i < r; ++i) src += idx[static_cast<std::size_t>(i)] * src_stride_for_out[static_cast<std::size_t>(i)];
    map[o] = src;
    (*out.data)[o] = (*x.data)[src];
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[static_cast<std::size_t>(i)] < static_cast<std::size_t>(out_shape[static_cast<std::size_t>(i)])) break;
      idx[static_cast<std::size_t>(i)] = 0;
    }
  }
  attach(out, {x}, [map = std::move(map)](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    if (!px.requires_grad) return;
    const std::size_t n2 = o.size();
    for (std::size_t i = 0; i < n2; ++i) (*px.grad)[map[i]] += (*o.grad)[i];
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int r = parts[0].rank();
  const int ax = normalize_axis(axis, r, "concat");
  Shape out_shape = parts[0].shape;
  out_shape[static_cast<std::size_t>(ax)] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != ax && p.shape[static_cast<std::size_t>(i)] != parts[0].shape[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat: shape mismatch " + shape_str(p.shape) + " vs " +
                         shape_str(parts[0].shape));
      }
    }
    out_shape[static_cast<std::size_t>(ax)] += p.shape[static_cast<std::size_t>(ax)];
  }
  Tensor out = Tensor::zeros(out_shape);
  const AxisSplit os = split_axis(out_shape, ax);
  std::size_t offset = 0;  // along the axis, in units of inner
  std::vector<std::size_t> part_offsets;
  for (const Tensor& p : parts) {
    part_offsets.push_back(offset);
    const AxisSplit ps = split_axis(p.shape, ax);
    for (std::size_t o = 0; o < ps.outer; ++o) {
      const double* src = p.data->data() + o * ps.n * ps.inner;
      double* dst = out.data->data() + (o * os.n + offset) * os.inner;
      std::copy(src, src + ps.n * ps.inner, dst);
    }
    offset += ps.n;
  }
  attach(out, parts, [ax, os, part_offsets](const Tensor& o) {
    for (std::size_t pi = 0; pi < o.node->parents.size(); ++pi) {
      const Tensor& p = o.node->parents[pi];
      if (!p.requires_grad) continue;
      const AxisSplit ps = split_axis(p.shape, ax);
      for (std::size_t ou = 0; ou < ps.outer; ++ou) {
        const double* g = o.grad->data() + (ou * os.n + part_offsets[pi]) * os.inner;
        double* dst = p.grad->data() + ou * ps.n * ps.inner;
        for (std::size_t i = 0; i < ps.n * ps.inner; ++i) dst[i] += g[i];
      }
    }
  });
  return out;
}

// ---- reductions ----

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : *x.data) s += v;
  Tensor out = Tensor::scalar(s);
  attach(out, {x}, [](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    if (!px.requires_grad) return;
    const double g = (*o.grad)[0];
    for (double& gv : *px.grad) gv += g;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(x.size());
  double s = 0.0;
  for (double v : *x.data) s += v;
  Tensor out = Tensor::scalar(s * inv);
  attach(out, {x}, [inv](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    if (!px.requires_grad) return;
    const double g = (*o.grad)[0] * inv;
    for (double& gv : *px.grad) gv += g;
  });
  return out;
}

Tensor sum_axis(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "sum_axis");
  Shape out_shape;
  for (int i = 0; i < x.rank(); ++i)
    if (i != ax) out_shape.push_back(x.shape[static_cast<std::size_t>(i)]);
  Tensor out = Tensor::zeros(out_shape);
  const AxisSplit s = split_axis(x.shape, ax);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t j = 0; j < s.inner; ++j)
        (*out.data)[o * s.inner + j] += (*x.data)[(o * s.n + i) * s.inner + j];
  attach(out, {x}, [s](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    if (!px.requires_grad) return;
    for (std::size_t ou = 0; ou < s.outer; ++ou)
      for (std::size_t i = 0; i < s.n; ++i)
        for (std::size_t j = 0; j < s.inner; ++j)
          (*px.grad)[(ou * s.n + i) * s.inner + j] += (*o.grad)[ou * s.inner + j];
  });
  return out;
}

Tensor mean_axis(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "mean_axis");
  const int n = x.shape[static_cast<std::size_t>(ax)];
  if (n == 0) throw ShapeError("mean_axis: empty axis");
  return mul_scalar(sum_axis(x, ax), 1.0 / static_cast<double>(n));
}

// ---- softmax / layer norm ----

Tensor softmax(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "softmax");
  Tensor out = Tensor::zeros(x.shape);
  const AxisSplit s = split_axis(x.shape, ax);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.inner; ++j) {
      const std::size_t base = o * s.n * s.inner + j;
      double mx = -1e308;
      for (std::size_t i = 0; i < s.n; ++i) mx = std::max(mx, (*x.data)[base + i * s.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const double e = std::exp((*x.data)[base + i * s.inner] - mx);
        (*out.data)[base + i * s.inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t i = 0; i < s.n; ++i) (*out.data)[base + i * s.inner] *= inv;
    }
  }
  Tensor y = out;  // capture forward values for the backward pass
  attach(out, {x}, [s, y](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    if (!px.requires_grad) return;
    for (std::size_t ou = 0; ou < s.outer; ++ou) {
      for (std::size_t j = 0; j < s.inner; ++j) {
        const std::size_t base = ou * s.n * s.inner + j;
        double dot = 0.0;
        for (std::size_t i = 0; i < s.n; ++i)
          dot += (*o.grad)[base + i * s.inner] * (*y.data)[base + i * s.inner];
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t k = base + i * s.inner;
          (*px.grad)[k] += (*y.data)[k] * ((*o.grad)[k] - dot);
        }
      }
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank must be >= 1");
  const int d = x.shape.back();
  if (gain.shape != Shape{d} || bias.shape != Shape{d}) {
    throw ShapeError("layer_norm: gain/bias must have shape (" + std::to_string(d) + ")");
  }
  const std::size_t rows = x.size() / static_cast<std::size_t>(d);
  const std::size_t sd = static_cast<std::size_t>(d);
  Tensor out = Tensor::zeros(x.shape);
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_sigma = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data->data() + r * sd;
    double mu = 0.0;
    for (std::size_t i = 0; i < sd; ++i) mu += xr[i];
    mu /= static_cast<double>(sd);
    double var = 0.0;
    for (std::size_t i = 0; i < sd; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(sd);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[r] = inv;
    for (std::size_t i = 0; i < sd; ++i) {
      const double xh = (xr[i] - mu) * inv;
      (*xhat)[r * sd + i] = xh;
      (*out.data)[r * sd + i] = (*gain.data)[i] * xh + (*bias.data)[i];
    }
  }
  attach(out, {x, gain, bias}, [rows, sd, xhat, inv_sigma](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    const Tensor& pg = o.node->parents[1];
    const Tensor& pb = o.node->parents[2];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = o.grad->data() + r * sd;
      const double* xh = xhat->data() + r * sd;
      if (pg.requires_grad)
        for (std::size_t i = 0; i < sd; ++i) (*pg.grad)[i] += g[i] * xh[i];
      if (pb.requires_grad)
        for (std::size_t i = 0; i < sd; ++i) (*pb.grad)[i] += g[i];
      if (px.requires_grad) {
        // dxhat = g * gain; dx = inv_sigma * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < sd; ++i) {
          const double dxh = g[i] * (*pg.data)[i];
          m1 += dxh;
          m2 += dxh * xh[i];
        }
        m1 /= static_cast<double>(sd);
        m2 /= static_cast<double>(sd);
        const double inv = (*inv_sigma)[r];
        for (std::size_t i = 0; i < sd; ++i) {
          const double dxh = g[i] * (*pg.data)[i];
          (*px.grad)[r * sd + i] += inv * (dxh - m1 - xh[i] * m2);
        }
      }
    }
  });
  return out;
}

// ---- sequence model ops ----

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be (tokens, vocab), got " +
                     shape_str(logits.shape));
  }
  const std::size_t n = static_cast<std::size_t>(logits.shape[0]);
  const std::size_t v = static_cast<std::size_t>(logits.shape[1]);
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(n) + " rows but " +
                     std::to_string(targets.size()) + " targets");
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw DataError("cross_entropy: target index " + std::to_string(t) +
                      " out of range [0, " + std::to_string(v) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* lr = logits.data->data() + r * v;
    double mx = -1e308;
    for (std::size_t i = 0; i < v; ++i) mx = std::max(mx, lr[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < v; ++i) z += std::exp(lr[i] - mx);
    const double lse = mx + std::log(z);
    loss += lse - lr[static_cast<std::size_t>(targets[r])];
    for (std::size_t i = 0; i < v; ++i) (*probs)[r * v + i] = std::exp(lr[i] - lse);
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(n));
  attach(out, {logits}, [n, v, probs, targets](const Tensor& o) {
    const Tensor& pl = o.node->parents[0];
    if (!pl.requires_grad) return;
    const double g = (*o.grad)[0] / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      double* gr = pl.grad->data() + r * v;
      const double* pr = probs->data() + r * v;
      for (std::size_t i = 0; i < v; ++i) gr[i] += g * pr[i];
      gr[static_cast<std::size_t>(targets[r])] -= g;
    }
  });
  return out;
}

Tensor embedding(const Tensor& weights, const std::vector<int>& ids) {
  if (weights.rank() != 2) {
    throw ShapeError("embedding: weights must be (vocab, dim), got " + shape_str(weights.shape));
  }
  const int v = weights.shape[0];
  const std::size_t d = static_cast<std::size_t>(weights.shape[1]);
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw DataError("embedding: id " + std::to_string(id) + " out of range [0, " +
                      std::to_string(v) + ")");
    }
  }
  Tensor out = Tensor::zeros({static_cast<int>(ids.size()), static_cast<int>(d)});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const double* src = weights.data->data() + static_cast<std::size_t>(ids[r]) * d;
    std::copy(src, src + d, out.data->data() + r * d);
  }
  attach(out, {weights}, [ids, d](const Tensor& o) {
    const Tensor& pw = o.node->parents[0];
    if (!pw.requires_grad) return;
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const double* g = o.grad->data() + r * d;
      double* dst = pw.grad->data() + static_cast<std::size_t>(ids[r]) * d;
      for (std::size_t i = 0; i < d; ++i) dst[i] += g[i];
    }
  });
  return out;
}

Tensor dropout(const Tensor& x, double rate, RngStream& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ParamError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  Tensor out = Tensor::zeros(x.shape);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  const double keep = 1.0 - rate;
  const double scale = 1.0 / keep;
  for (std::size_t i = 0; i < x.size(); ++i) {
    (*mask)[i] = rng.uniform() < keep ? scale : 0.0;
    (*out.data)[i] = (*x.data)[i] * (*mask)[i];
  }
  attach(out, {x}, [mask](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    if (!px.requires_grad) return;
    const std::size_t n = o.size();
    for (std::size_t i = 0; i < n; ++i) (*px.grad)[i] += (*o.grad)[i] * (*mask)[i];
  });
  return out;
}

Tensor causal_mask(const Tensor& scores) {
  if (scores.rank() < 2) throw ShapeError("causal_mask: rank must be >= 2");
  const std::size_t s1 = static_cast<std::size_t>(scores.shape[scores.shape.size() - 2]);
  const std::size_t s2 = static_cast<std::size_t>(scores.shape[scores.shape.size() - 1]);
  if (s1 != s2) {
    throw ShapeError("causal_mask: trailing dims must be square, got " + shape_str(scores.shape));
  }
  const std::size_t mats = scores.size() / (s1 * s2);
  Tensor out = Tensor::zeros(scores.shape);
  for (std::size_t l = 0; l < mats; ++l) {
    const double* src = scores.data->data() + l * s1 * s2;
    double* dst = out.data->data() + l * s1 * s2;
    for (std::size_t i = 0; i < s1; ++i)
      for (std::size_t j = 0; j < s2; ++j) dst[i * s2 + j] = j <= i ? src[i * s2 + j] : kMaskValue;
  }
  attach(out, {scores}, [mats, s1, s2](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    if (!px.requires_grad) return;
    for (std::size_t l = 0; l < mats; ++l) {
      const double* g = o.grad->data() + l * s1 * s2;
      double* dst = px.grad->data() + l * s1 * s2;
      for (std::size_t i = 0; i < s1; ++i)
        for (std::size_t j = 0; j <= i; ++j) dst[i * s2 + j] += g[i * s2 + j];
    }
  });
  return out;
}

// ---- categorical sampling ----

Tensor gumbel_softmax(const Tensor& alpha, double temperature, RngStream& rng, bool hard,
                      const std::vector<double>* noise_override) {
  if (temperature <= 0.0) {
    throw ParamError("gumbel_softmax: temperature must be positive, got " +
                     std::to_string(temperature));
  }
  if (alpha.rank() != 1) {
    throw ShapeError("gumbel_softmax: alpha must be a vector, got " + shape_str(alpha.shape));
  }
  const std::size_t n = alpha.size();
  std::vector<double> noise(n);
  if (noise_override) {
    if (noise_override->size() != n) {
      throw ParamError("gumbel_softmax: noise override size mismatch");
    }
    noise = *noise_override;
  } else {
    for (std::size_t i = 0; i < n; ++i) noise[i] = rng.gumbel();
  }
  // soft = softmax((alpha + g) / T); the noise is a constant in the graph.
  Tensor noise_t = Tensor::from(alpha.shape, std::move(noise));
  Tensor soft = softmax(mul_scalar(add(alpha, noise_t), 1.0 / temperature), 0);
  if (!hard) return soft;

  // Straight-through: one-hot forward values, gradients pass to the soft path.
  const int j = argmax(soft);
  Tensor out = Tensor::zeros(soft.shape);
  (*out.data)[static_cast<std::size_t>(j)] = 1.0;
  attach(out, {soft}, [](const Tensor& o) {
    const Tensor& ps = o.node->parents[0];
    if (!ps.requires_grad) return;
    const std::size_t n2 = o.size();
    for (std::size_t i = 0; i < n2; ++i) (*ps.grad)[i] += (*o.grad)[i];
  });
  return out;
}

// ---- gather / scatter ----

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  if (x.rank() != 2) throw ShapeError("gather_rows: input must be 2-d, got " + shape_str(x.shape));
  const int n = x.shape[0];
  const std::size_t d = static_cast<std::size_t>(x.shape[1]);
  for (int r : rows) {
    if (r < 0 || r >= n) throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range");
  }
  Tensor out = Tensor::zeros({static_cast<int>(rows.size()), static_cast<int>(d)});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = x.data->data() + static_cast<std::size_t>(rows[i]) * d;
    std::copy(src, src + d, out.data->data() + i * d);
  }
  attach(out, {x}, [rows, d](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    if (!px.requires_grad) return;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double* g = o.grad->data() + i * d;
      double* dst = px.grad->data() + static_cast<std::size_t>(rows[i]) * d;
      for (std::size_t k = 0; k < d; ++k) dst[k] += g[k];
    }
  });
  return out;
}

Tensor scatter_rows(const Tensor& rows, const std::vector<int>& idx, int n_rows) {
  if (rows.rank() != 2) throw ShapeError("scatter_rows: input must be 2-d");
  if (static_cast<std::size_t>(rows.shape[0]) != idx.size()) {
    throw ShapeError("scatter_rows: row count does not match index count");
  }
  const std::size_t d = static_cast<std::size_t>(rows.shape[1]);
  for (int r : idx) {
    if (r < 0 || r >= n_rows) throw ShapeError("scatter_rows: index " + std::to_string(r) + " out of range");
  }
  Tensor out = Tensor::zeros({n_rows, static_cast<int>(d)});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double* src = rows.data->data() + i * d;
    double* dst = out.data->data() + static_cast<std::size_t>(idx[i]) * d;
    for (std::size_t k = 0; k < d; ++k) dst[k] += src[k];
  }
  attach(out, {rows}, [idx, d](const Tensor& o) {
    const Tensor& pr = o.node->parents[0];
    if (!pr.requires_grad) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* g = o.grad->data() + static_cast<std::size_t>(idx[i]) * d;
      double* dst = pr.grad->data() + i * d;
      for (std::size_t k = 0; k < d; ++k) dst[k] += g[k];
    }
  });
  return out;
}

Tensor gather_values(const Tensor& x, const std::vector<int>& flat_idx) {
  const std::size_t n = x.size();
  for (int i : flat_idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= n) {
      throw ShapeError("gather_values: flat index " + std::to_string(i) + " out of range");
    }
  }
  Tensor out = Tensor::zeros({static_cast<int>(flat_idx.size())});
  for (std::size_t i = 0; i < flat_idx.size(); ++i)
    (*out.data)[i] = (*x.data)[static_cast<std::size_t>(flat_idx[i])];
  attach(out, {x}, [flat_idx](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    if (!px.requires_grad) return;
    for (std::size_t i = 0; i < flat_idx.size(); ++i)
      (*px.grad)[static_cast<std::size_t>(flat_idx[i])] += (*o.grad)[i];
  });
  return out;
}

Tensor scale_rows(const Tensor& x, const Tensor& coeffs) {
  if (x.rank() != 2 || coeffs.rank() != 1 || coeffs.shape[0] != x.shape[0]) {
    throw ShapeError("scale_rows: expected (M, D) and (M), got " + shape_str(x.shape) + " and " +
                     shape_str(coeffs.shape));
  }
  const std::size_t m = static_cast<std::size_t>(x.shape[0]);
  const std::size_t d = static_cast<std::size_t>(x.shape[1]);
  Tensor out = Tensor::zeros(x.shape);
  for (std::size_t r = 0; r < m; ++r) {
    const double c = (*coeffs.data)[r];
    for (std::size_t k = 0; k < d; ++k) (*out.data)[r * d + k] = (*x.data)[r * d + k] * c;
  }
  attach(out, {x, coeffs}, [m, d](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    const Tensor& pc = o.node->parents[1];
    for (std::size_t r = 0; r < m; ++r) {
      const double c = (*pc.data)[r];
      const double* g = o.grad->data() + r * d;
      if (px.requires_grad) {
        double* dst = px.grad->data() + r * d;
        for (std::size_t k = 0; k < d; ++k) dst[k] += g[k] * c;
      }
      if (pc.requires_grad) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += g[k] * (*px.data)[r * d + k];
        (*pc.grad)[r] += s;
      }
    }
  });
  return out;
}

Tensor mul_elem(const Tensor& x, const Tensor& vec, int index) {
  if (vec.rank() != 1 || index < 0 || index >= vec.shape[0]) {
    throw ShapeError("mul_elem: index " + std::to_string(index) + " invalid for " +
                     shape_str(vec.shape));
  }
  const double c = (*vec.data)[static_cast<std::size_t>(index)];
  Tensor out = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) (*out.data)[i] = (*x.data)[i] * c;
  attach(out, {x, vec}, [c, index](const Tensor& o) {
    const Tensor& px = o.node->parents[0];
    const Tensor& pv = o.node->parents[1];
    const std::size_t n = o.size();
    if (px.requires_grad)
      for (std::size_t i = 0; i < n; ++i) (*px.grad)[i] += (*o.grad)[i] * c;
    if (pv.requires_grad) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (*o.grad)[i] * (*px.data)[i];
      (*pv.grad)[static_cast<std::size_t>(index)] += s;
    }
  });
  return out;
}

// ---- non-differentiable utilities ----

int argmax(const Tensor& v) {
  if (v.size() == 0) throw ShapeError("argmax: empty tensor");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if ((*v.data)[i] > (*v.data)[best]) best = i;
  return static_cast<int>(best);
}

std::vector<int> topk_indices(const std::vector<double>& v, int k) {
  if (k < 0 || static_cast<std::size_t>(k) > v.size()) {
    throw ParamError("topk_indices: k = " + std::to_string(k) + " out of range for size " +
                     std::to_string(v.size()));
  }
  std::vector<int> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (v[static_cast<std::size_t>(a)] != v[static_cast<std::size_t>(b)])
      return v[static_cast<std::size_t>(a)] > v[static_cast<std::size_t>(b)];
    return a < b;  // ties break to the lower index
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace latnas
