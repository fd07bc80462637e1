#include "latnas/blocks.hpp"

#include <cmath>
#include <sstream>

namespace latnas {

namespace {

int parse_field(const std::string& key, const std::string& part, const std::string& name) {
  if (part.size() < name.size() + 2 || part.compare(0, name.size(), name) != 0 ||
      part[name.size()] != '=') {
    throw SpecError("block key '" + key + "': expected '" + name + "=<int>', got '" + part + "'");
  }
  try {
    std::size_t pos = 0;
    int v = std::stoi(part.substr(name.size() + 1), &pos);
    if (pos != part.size() - name.size() - 1) throw std::invalid_argument("trailing chars");
    return v;
  } catch (const std::exception&) {
    throw SpecError("block key '" + key + "': malformed integer in '" + part + "'");
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

Tensor linear_init(int fan_in, int fan_out, RngStream& rng) {
  return Tensor::randn({fan_in, fan_out}, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)), true);
}

Tensor apply_dropout(const Tensor& x, double rate, ForwardCtx& ctx) {
  if (!ctx.training || rate == 0.0) return x;
  if (!ctx.dropout_rng) throw ParamError("forward: training dropout requires a dropout rng");
  return dropout(x, rate, *ctx.dropout_rng, true);
}

}  // namespace

BlockSpec BlockSpec::skip() { return BlockSpec{BlockKind::Skip, 0, 0, 0, 0}; }
BlockSpec BlockSpec::mha(int heads) { return BlockSpec{BlockKind::MHA, heads, 0, 0, 0}; }
BlockSpec BlockSpec::ffl(int inner_dim) { return BlockSpec{BlockKind::FFL, 0, inner_dim, 0, 0}; }
BlockSpec BlockSpec::moe(int inner_dim, int experts, int top_k) {
  return BlockSpec{BlockKind::MoEFFL, 0, inner_dim, experts, top_k};
}

std::string BlockSpec::key() const {
  std::ostringstream os;
  switch (kind) {
    case BlockKind::Skip:
      os << "skip";
      break;
    case BlockKind::MHA:
      os << "mha:h=" << heads;
      break;
    case BlockKind::FFL:
      os << "ffl:d=" << inner_dim;
      break;
    case BlockKind::MoEFFL:
      os << "moe:d=" << inner_dim << ":e=" << experts << ":k=" << top_k;
      break;
  }
  return os.str();
}

BlockSpec BlockSpec::parse(const std::string& key) {
  const auto parts = split(key, ':');
  const std::string& head = parts[0];
  if (head == "skip") {
    if (parts.size() != 1) throw SpecError("block key '" + key + "': skip takes no fields");
    return skip();
  }
  if (head == "mha") {
    if (parts.size() != 2) throw SpecError("block key '" + key + "': expected mha:h=<heads>");
    return mha(parse_field(key, parts[1], "h"));
  }
  if (head == "ffl") {
    if (parts.size() != 2) throw SpecError("block key '" + key + "': expected ffl:d=<inner_dim>");
    return ffl(parse_field(key, parts[1], "d"));
  }
  if (head == "moe") {
    if (parts.size() != 4) {
      throw SpecError("block key '" + key + "': expected moe:d=<inner>:e=<experts>:k=<top_k>");
    }
    return moe(parse_field(key, parts[1], "d"), parse_field(key, parts[2], "e"),
               parse_field(key, parts[3], "k"));
  }
  throw SpecError("block key '" + key + "': unknown block kind '" + head + "'");
}

void BlockSpec::validate(int model_dim) const {
  if (model_dim <= 0) throw SpecError("model_dim must be positive");
  switch (kind) {
    case BlockKind::Skip:
      return;
    case BlockKind::MHA:
      if (heads <= 0) throw SpecError("'" + key() + "': heads must be positive");
      if (model_dim % heads != 0) {
        throw SpecError("'" + key() + "': heads must divide model_dim " +
                        std::to_string(model_dim));
      }
      return;
    case BlockKind::FFL:
      if (inner_dim <= 0) throw SpecError("'" + key() + "': inner_dim must be positive");
      return;
    case BlockKind::MoEFFL:
      if (inner_dim <= 0) throw SpecError("'" + key() + "': inner_dim must be positive");
      if (experts <= 0) throw SpecError("'" + key() + "': experts must be positive");
      if (top_k < 1 || top_k > experts) {
        throw SpecError("'" + key() + "': top_k must be in [1, experts]");
      }
      return;
  }
}

MhaWeights MhaWeights::init(int d, RngStream& rng) {
  MhaWeights w;
  w.ln_gain = Tensor::full({d}, 1.0, true);
  w.ln_bias = Tensor::zeros({d}, true);
  w.wq = linear_init(d, d, rng);
  w.wk = linear_init(d, d, rng);
  w.wv = linear_init(d, d, rng);
  w.wo = linear_init(d, d, rng);
  return w;
}

FflWeights FflWeights::init(int d, int inner, RngStream& rng) {
  FflWeights w;
  w.ln_gain = Tensor::full({d}, 1.0, true);
  w.ln_bias = Tensor::zeros({d}, true);
  w.w1 = linear_init(d, inner, rng);
  w.w2 = linear_init(inner, d, rng);
  return w;
}

MoeWeights MoeWeights::init(int d, int inner, int experts, RngStream& rng) {
  MoeWeights w;
  w.ln_gain = Tensor::full({d}, 1.0, true);
  w.ln_bias = Tensor::zeros({d}, true);
  w.gate = linear_init(d, experts, rng);
  for (int e = 0; e < experts; ++e) {
    w.experts.push_back({linear_init(d, inner, rng), linear_init(inner, d, rng)});
  }
  return w;
}

Tensor forward_skip(const Tensor& x) { return x; }

Tensor forward_mha(const Tensor& x, const BlockSpec& spec, const MhaWeights& w, ForwardCtx& ctx) {
  if (spec.kind != BlockKind::MHA) throw SpecError("forward_mha: spec kind is not MHA");
  if (x.rank() != 3) throw ShapeError("forward_mha: expected (batch, seq, dim), got " + shape_str(x.shape));
  const int batch = x.shape[0], seq = x.shape[1], d = x.shape[2];
  spec.validate(d);
  const int h = spec.heads;
  const int dh = d / h;

  Tensor x2 = reshape(x, {batch * seq, d});
  Tensor ln = layer_norm(x2, w.ln_gain, w.ln_bias);
  auto heads_of = [&](const Tensor& proj) {
    // (B*S, d) -> (B*H, S, dh)
    return reshape(transpose(reshape(proj, {batch, seq, h, dh}), {0, 2, 1, 3}),
                   {batch * h, seq, dh});
  };
  Tensor q = heads_of(matmul(ln, w.wq));
  Tensor k = heads_of(matmul(ln, w.wk));
  Tensor v = heads_of(matmul(ln, w.wv));

  Tensor scores = mul_scalar(matmul(q, transpose(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor attn = softmax(causal_mask(scores), 2);
  Tensor context = matmul(attn, v);  // (B*H, S, dh)
  Tensor merged = reshape(transpose(reshape(context, {batch, h, seq, dh}), {0, 2, 1, 3}),
                          {batch * seq, d});
  Tensor out = apply_dropout(matmul(merged, w.wo), ctx.dropout, ctx);
  return reshape(add(x2, out), {batch, seq, d});
}

Tensor forward_ffl(const Tensor& x, const BlockSpec& spec, const FflWeights& w, ForwardCtx& ctx) {
  if (spec.kind != BlockKind::FFL) throw SpecError("forward_ffl: spec kind is not FFL");
  if (x.rank() != 3) throw ShapeError("forward_ffl: expected (batch, seq, dim), got " + shape_str(x.shape));
  const int batch = x.shape[0], seq = x.shape[1], d = x.shape[2];
  Tensor x2 = reshape(x, {batch * seq, d});
  Tensor h = apply_dropout(relu(matmul(layer_norm(x2, w.ln_gain, w.ln_bias), w.w1)), ctx.dropout, ctx);
  Tensor out = matmul(h, w.w2);
  return reshape(add(x2, out), {batch, seq, d});
}

GateRouting gate_route(const Tensor& tokens, const Tensor& gate_weights, int top_k, int experts,
                       bool balanced_routing) {
  if (tokens.rank() != 2) throw ShapeError("gate_route: tokens must be (N, d)");
  if (top_k < 1 || top_k > experts) throw SpecError("gate_route: top_k must be in [1, experts]");
  const int n = tokens.shape[0];

  GateRouting r;
  r.probs = softmax(matmul(tokens, gate_weights), 1);
  r.expert_ids.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(top_k));
  std::vector<double> counts(static_cast<std::size_t>(experts), 0.0);
  for (int t = 0; t < n; ++t) {
    std::vector<int> sel;
    if (balanced_routing) {
      // round-robin synthetic assignment: each expert sees top_k*N/E tokens
      sel.resize(static_cast<std::size_t>(top_k));
      for (int j = 0; j < top_k; ++j)
        sel[static_cast<std::size_t>(j)] = (t * top_k + j) % experts;
    } else {
      std::vector<double> row(r.probs.values().begin() + static_cast<std::ptrdiff_t>(t) * experts,
                              r.probs.values().begin() + static_cast<std::ptrdiff_t>(t + 1) * experts);
      sel = topk_indices(row, top_k);
    }
    for (int j = 0; j < top_k; ++j) {
      const int e = sel[static_cast<std::size_t>(j)];
      r.expert_ids[static_cast<std::size_t>(t * top_k + j)] = e;
      counts[static_cast<std::size_t>(e)] += 1.0;
    }
  }

  r.stats.tokens_seen = n;
  r.stats.top_k = top_k;
  r.stats.token_fraction.resize(static_cast<std::size_t>(experts));
  for (int e = 0; e < experts; ++e)
    r.stats.token_fraction[static_cast<std::size_t>(e)] = counts[static_cast<std::size_t>(e)] / n;
  r.stats.mean_gate_score = mean_axis(r.probs, 0);
  return r;
}

std::pair<Tensor, RoutingStats> forward_moe(const Tensor& x, const BlockSpec& spec,
                                            const MoeWeights& w, ForwardCtx& ctx) {
  if (spec.kind != BlockKind::MoEFFL) throw SpecError("forward_moe: spec kind is not MoEFFL");
  if (x.rank() != 3) throw ShapeError("forward_moe: expected (batch, seq, dim), got " + shape_str(x.shape));
  const int batch = x.shape[0], seq = x.shape[1], d = x.shape[2];
  const int n = batch * seq;
  const int experts = spec.experts;
  const int k = spec.top_k;

  Tensor x2 = reshape(x, {n, d});
  Tensor ln = layer_norm(x2, w.ln_gain, w.ln_bias);
  GateRouting routing = gate_route(ln, w.gate, k, experts, ctx.balanced_routing);

  // Renormalization denominator: sum of the selected probabilities per token.
  Tensor denom;
  for (int j = 0; j < k; ++j) {
    std::vector<int> flat(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t)
      flat[static_cast<std::size_t>(t)] =
          t * experts + routing.expert_ids[static_cast<std::size_t>(t * k + j)];
    Tensor part = gather_values(routing.probs, flat);
    denom = j == 0 ? part : add(denom, part);
  }

  Tensor acc;  // accumulated expert contributions, (n, d)
  for (int e = 0; e < experts; ++e) {
    std::vector<int> token_idx;
    for (int t = 0; t < n; ++t)
      for (int j = 0; j < k; ++j)
        if (routing.expert_ids[static_cast<std::size_t>(t * k + j)] == e)
          token_idx.push_back(t);
    if (token_idx.empty()) continue;

    Tensor coeff;
    if (ctx.balanced_routing) {
      coeff = Tensor::full({static_cast<int>(token_idx.size())}, 1.0 / k);
    } else {
      std::vector<int> flat(token_idx.size());
      for (std::size_t i = 0; i < token_idx.size(); ++i)
        flat[i] = token_idx[i] * experts + e;
      coeff = divide(gather_values(routing.probs, flat), gather_values(denom, token_idx));
    }

    Tensor h = gather_rows(ln, token_idx);
    const ExpertWeights& ew = w.experts[static_cast<std::size_t>(e)];
    Tensor inner = apply_dropout(relu(matmul(h, ew.w1)), ctx.moe_dropout, ctx);
    Tensor out_e = scale_rows(matmul(inner, ew.w2), coeff);
    Tensor scattered = scatter_rows(out_e, token_idx, n);
    acc = acc.defined() ? add(acc, scattered) : scattered;
  }

  Tensor out = acc.defined() ? add(x2, acc) : x2;
  return {reshape(out, {batch, seq, d}), routing.stats};
}

std::vector<Tensor> Block::params() {
  std::vector<std::pair<std::string, Tensor>> named;
  collect_named("", named);
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (auto& [name, t] : named) out.push_back(t);
  return out;
}

namespace {

class SkipBlock final : public Block {
 public:
  using Block::Block;
  Tensor forward(const Tensor& x, ForwardCtx&) override { return forward_skip(x); }
  void collect_named(const std::string&, std::vector<std::pair<std::string, Tensor>>&) override {}
};

class MhaBlock final : public Block {
 public:
  MhaBlock(BlockSpec spec, int d, RngStream& rng) : Block(spec), w_(MhaWeights::init(d, rng)) {}
  Tensor forward(const Tensor& x, ForwardCtx& ctx) override {
    return forward_mha(x, spec(), w_, ctx);
  }
  void collect_named(const std::string& p, std::vector<std::pair<std::string, Tensor>>& out) override {
    out.emplace_back(p + "ln_gain", w_.ln_gain);
    out.emplace_back(p + "ln_bias", w_.ln_bias);
    out.emplace_back(p + "wq", w_.wq);
    out.emplace_back(p + "wk", w_.wk);
    out.emplace_back(p + "wv", w_.wv);
    out.emplace_back(p + "wo", w_.wo);
  }

 private:
  MhaWeights w_;
};

class FflBlock final : public Block {
 public:
  FflBlock(BlockSpec spec, int d, RngStream& rng)
      : Block(spec), w_(FflWeights::init(d, spec.inner_dim, rng)) {}
  Tensor forward(const Tensor& x, ForwardCtx& ctx) override {
    return forward_ffl(x, spec(), w_, ctx);
  }
  void collect_named(const std::string& p, std::vector<std::pair<std::string, Tensor>>& out) override {
    out.emplace_back(p + "ln_gain", w_.ln_gain);
    out.emplace_back(p + "ln_bias", w_.ln_bias);
    out.emplace_back(p + "w1", w_.w1);
    out.emplace_back(p + "w2", w_.w2);
  }

 private:
  FflWeights w_;
};

class MoeBlock final : public Block {
 public:
  MoeBlock(BlockSpec spec, int d, RngStream& rng)
      : Block(spec), w_(MoeWeights::init(d, spec.inner_dim, spec.experts, rng)) {}
  Tensor forward(const Tensor& x, ForwardCtx& ctx) override {
    auto [out, stats] = forward_moe(x, spec(), w_, ctx);
    stats_ = std::move(stats);
    return out;
  }
  const RoutingStats* last_routing() const override { return &stats_; }
  void collect_named(const std::string& p, std::vector<std::pair<std::string, Tensor>>& out) override {
    out.emplace_back(p + "ln_gain", w_.ln_gain);
    out.emplace_back(p + "ln_bias", w_.ln_bias);
    out.emplace_back(p + "gate", w_.gate);
    for (std::size_t e = 0; e < w_.experts.size(); ++e) {
      out.emplace_back(p + "expert" + std::to_string(e) + ".w1", w_.experts[e].w1);
      out.emplace_back(p + "expert" + std::to_string(e) + ".w2", w_.experts[e].w2);
    }
  }
  MoeWeights& weights() { return w_; }

 private:
  MoeWeights w_;
  RoutingStats stats_;
};

}  // namespace

std::unique_ptr<Block> Block::create(const BlockSpec& spec, int model_dim, RngStream& rng) {
  spec.validate(model_dim);
  switch (spec.kind) {
    case BlockKind::Skip:
      return std::make_unique<SkipBlock>(spec);
    case BlockKind::MHA:
      return std::make_unique<MhaBlock>(spec, model_dim, rng);
    case BlockKind::FFL:
      return std::make_unique<FflBlock>(spec, model_dim, rng);
    case BlockKind::MoEFFL:
      return std::make_unique<MoeBlock>(spec, model_dim, rng);
  }
  throw SpecError("Block::create: unknown kind");
}

}  // namespace latnas
