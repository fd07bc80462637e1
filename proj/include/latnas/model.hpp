#pragma once

#include <string>
#include <utility>
#include <vector>

#include "latnas/blocks.hpp"
#include "latnas/tensor.hpp"

namespace latnas {

// Token + learned absolute positional embeddings in front, final layer norm
// + vocabulary projection behind. Shared by the search network and the
// finalized network so both see the exact same surroundings.
struct LmCore {
  int model_dim = 0;
  int vocab = 0;
  int max_seq = 0;
  Tensor tok_emb;   // (V, d)
  Tensor pos_emb;   // (max_seq, d)
  Tensor final_ln_gain, final_ln_bias;
  Tensor head;      // (d, V)

  static LmCore init(int model_dim, int vocab, int max_seq, RngStream& rng);

  // tokens are (batch * seq) row-major; returns (batch, seq, d).
  Tensor embed(const std::vector<int>& tokens, int batch, int seq, ForwardCtx& ctx) const;

  // (batch, seq, d) -> logits (batch * seq, V)
  Tensor project(const Tensor& x) const;

  void collect_named(std::vector<std::pair<std::string, Tensor>>& out) const;
};

}  // namespace latnas
