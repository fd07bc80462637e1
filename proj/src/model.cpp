#include "latnas/model.hpp"

#include <cmath>

namespace latnas {

LmCore LmCore::init(int model_dim, int vocab, int max_seq, RngStream& rng) {
  LmCore core;
  core.model_dim = model_dim;
  core.vocab = vocab;
  core.max_seq = max_seq;
  core.tok_emb = Tensor::randn({vocab, model_dim}, rng, 0.1, true);
  core.pos_emb = Tensor::randn({max_seq, model_dim}, rng, 0.1, true);
  core.final_ln_gain = Tensor::full({model_dim}, 1.0, true);
  core.final_ln_bias = Tensor::zeros({model_dim}, true);
  core.head = Tensor::randn({model_dim, vocab}, rng,
                            1.0 / std::sqrt(static_cast<double>(model_dim)), true);
  return core;
}

Tensor LmCore::embed(const std::vector<int>& tokens, int batch, int seq, ForwardCtx& ctx) const {
  if (static_cast<int>(tokens.size()) != batch * seq) {
    throw ShapeError("LmCore::embed: token count " + std::to_string(tokens.size()) +
                     " does not match batch*seq " + std::to_string(batch * seq));
  }
  if (seq > max_seq) {
    throw ShapeError("LmCore::embed: seq " + std::to_string(seq) + " exceeds max_seq " +
                     std::to_string(max_seq));
  }
  std::vector<int> positions(tokens.size());
  for (int b = 0; b < batch; ++b)
    for (int s = 0; s < seq; ++s) positions[static_cast<std::size_t>(b * seq + s)] = s;
  Tensor x = add(embedding(tok_emb, tokens), embedding(pos_emb, positions));
  if (ctx.training && ctx.dropout > 0.0) {
    if (!ctx.dropout_rng) throw ParamError("LmCore::embed: training dropout requires rng");
    x = dropout(x, ctx.dropout, *ctx.dropout_rng, true);
  }
  return reshape(x, {batch, seq, model_dim});
}

Tensor LmCore::project(const Tensor& x) const {
  if (x.rank() != 3) throw ShapeError("LmCore::project: expected (batch, seq, d)");
  Tensor flat = reshape(x, {x.shape[0] * x.shape[1], model_dim});
  return matmul(layer_norm(flat, final_ln_gain, final_ln_bias), head);
}

void LmCore::collect_named(std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back("tok_emb", tok_emb);
  out.emplace_back("pos_emb", pos_emb);
  out.emplace_back("final_ln_gain", final_ln_gain);
  out.emplace_back("final_ln_bias", final_ln_bias);
  out.emplace_back("head", head);
}

}  // namespace latnas
