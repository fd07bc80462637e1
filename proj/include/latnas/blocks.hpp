#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "latnas/tensor.hpp"

namespace latnas {

enum class BlockKind { Skip, MHA, FFL, MoEFFL };

// Declarative description of one block option. The canonical key grammar is
// the stable external format used by latency tables, configs, and
// architecture descriptors:
//
//   skip
//   mha:h=<heads>
//   ffl:d=<inner_dim>
//   moe:d=<inner_dim>:e=<experts>:k=<top_k>
struct BlockSpec {
  BlockKind kind = BlockKind::Skip;
  int heads = 0;      // MHA only
  int inner_dim = 0;  // FFL / MoEFFL
  int experts = 0;    // MoEFFL
  int top_k = 0;      // MoEFFL

  static BlockSpec skip();
  static BlockSpec mha(int heads);
  static BlockSpec ffl(int inner_dim);
  static BlockSpec moe(int inner_dim, int experts, int top_k);

  std::string key() const;
  static BlockSpec parse(const std::string& key);

  // Throws SpecError when the spec cannot be instantiated at this width.
  void validate(int model_dim) const;

  bool operator==(const BlockSpec& other) const = default;
};

// Per-MoE-layer routing statistics for the balance loss. F is a hard count
// (constant in the graph); G stays differentiable so the loss can steer the
// gate.
struct RoutingStats {
  std::vector<double> token_fraction;  // F_e: fraction of tokens routed to e
  Tensor mean_gate_score;              // G_e: mean gate probability mass
  int tokens_seen = 0;
  int top_k = 1;
};

// Shared knobs for a forward pass. `balanced_routing` is the profiling hook
// that replaces gate-driven dispatch with a uniform round-robin assignment.
struct ForwardCtx {
  bool training = false;
  double dropout = 0.0;
  double moe_dropout = 0.0;
  RngStream* dropout_rng = nullptr;
  bool balanced_routing = false;
};

struct MhaWeights {
  Tensor ln_gain, ln_bias;
  Tensor wq, wk, wv, wo;  // (d, d) each
  static MhaWeights init(int model_dim, RngStream& rng);
};

struct FflWeights {
  Tensor ln_gain, ln_bias;
  Tensor w1, w2;  // (d, inner), (inner, d)
  static FflWeights init(int model_dim, int inner_dim, RngStream& rng);
};

struct ExpertWeights {
  Tensor w1, w2;
};

struct MoeWeights {
  Tensor ln_gain, ln_bias;
  Tensor gate;  // (d, E), single linear layer, no bias
  std::vector<ExpertWeights> experts;
  static MoeWeights init(int model_dim, int inner_dim, int experts, RngStream& rng);
};

struct GateRouting {
  std::vector<int> expert_ids;  // token-major, top_k entries per token
  Tensor probs;                 // (N, E)
  RoutingStats stats;
};

// The slot's residual path only: output is identically the input.
Tensor forward_skip(const Tensor& x);

// Pre-layer-norm residual attention block: x + MHA(LN(x)), causal.
Tensor forward_mha(const Tensor& x, const BlockSpec& spec, const MhaWeights& w, ForwardCtx& ctx);

// x + W2 . relu(W1 . LN(x))
Tensor forward_ffl(const Tensor& x, const BlockSpec& spec, const FflWeights& w, ForwardCtx& ctx);

// Softmax gate over experts; top_k highest-probability experts per token,
// ties broken by lower expert index.
GateRouting gate_route(const Tensor& tokens, const Tensor& gate_weights, int top_k, int experts,
                       bool balanced_routing = false);

// Mixture-of-experts feed-forward block. Selected gate probabilities are
// renormalized to sum to 1 per token; every routed token is processed (no
// capacity limit) and experts run sequentially.
std::pair<Tensor, RoutingStats> forward_moe(const Tensor& x, const BlockSpec& spec,
                                            const MoeWeights& w, ForwardCtx& ctx);

// Polymorphic wrapper owning spec + weights; used by the supernet and the
// finalized network.
class Block {
 public:
  explicit Block(BlockSpec spec) : spec_(std::move(spec)) {}
  virtual ~Block() = default;

  const BlockSpec& spec() const { return spec_; }
  virtual Tensor forward(const Tensor& x, ForwardCtx& ctx) = 0;
  virtual void collect_named(const std::string& prefix,
                             std::vector<std::pair<std::string, Tensor>>& out) = 0;
  // Stats from the most recent forward; null for non-MoE blocks.
  virtual const RoutingStats* last_routing() const { return nullptr; }

  std::vector<Tensor> params();

  static std::unique_ptr<Block> create(const BlockSpec& spec, int model_dim, RngStream& rng);

 private:
  BlockSpec spec_;
};

}  // namespace latnas
