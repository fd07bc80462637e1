#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "latnas/blocks.hpp"

using namespace latnas;

namespace {

Tensor rand_seq(int batch, int seq, int d, std::uint64_t seed, bool rg = false) {
  RngStream rng(seed, 50);
  return Tensor::randn({batch, seq, d}, rng, 1.0, rg);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape == b.shape);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a.values()[i] - b.values()[i]));
  return m;
}

}  // namespace

TEST_CASE("block key grammar round-trips and matches the documented format") {
  CHECK(BlockSpec::skip().key() == "skip");
  CHECK(BlockSpec::mha(4).key() == "mha:h=4");
  CHECK(BlockSpec::ffl(256).key() == "ffl:d=256");
  CHECK(BlockSpec::moe(256, 8, 2).key() == "moe:d=256:e=8:k=2");

  for (const std::string key : {"skip", "mha:h=1", "mha:h=8", "ffl:d=2048",
                                "moe:d=128:e=4:k=1", "moe:d=2048:e=8:k=2"}) {
    CHECK(BlockSpec::parse(key).key() == key);
  }

  CHECK_THROWS_AS(BlockSpec::parse("mha"), SpecError);
  CHECK_THROWS_AS(BlockSpec::parse("mha:heads=4"), SpecError);
  CHECK_THROWS_AS(BlockSpec::parse("conv:d=3"), SpecError);
  CHECK_THROWS_AS(BlockSpec::parse("skip:x=1"), SpecError);
  CHECK_THROWS_AS(BlockSpec::parse("moe:d=128:e=8"), SpecError);
  CHECK_THROWS_AS(BlockSpec::parse("ffl:d=12x"), SpecError);
}

TEST_CASE("spec validation") {
  CHECK_NOTHROW(BlockSpec::mha(4).validate(32));
  CHECK_THROWS_AS(BlockSpec::mha(5).validate(32), SpecError);  // 5 does not divide 32
  CHECK_THROWS_AS(BlockSpec::mha(0).validate(32), SpecError);
  CHECK_THROWS_AS(BlockSpec::ffl(0).validate(32), SpecError);
  CHECK_THROWS_AS(BlockSpec::moe(64, 4, 5).validate(32), SpecError);  // top_k > experts
  CHECK_THROWS_AS(BlockSpec::moe(64, 4, 0).validate(32), SpecError);
  CHECK_NOTHROW(BlockSpec::moe(64, 4, 4).validate(32));
}

TEST_CASE("forward_skip is the identity and composes transparently") {
  Tensor x = rand_seq(2, 5, 8, 1, true);
  Tensor y = forward_skip(x);
  CHECK(y.data.get() == x.data.get());  // the slot's residual path only

  // gradient passes through unchanged
  Tensor loss = sum(y);
  backward(loss);
  for (double g : x.grads()) CHECK(g == 1.0);

  // composed with another block, the network equals the one with the slot deleted
  RngStream rng(3, 0);
  ForwardCtx ctx;
  auto ffl = Block::create(BlockSpec::ffl(16), 8, rng);
  Tensor with_skip = ffl->forward(forward_skip(x), ctx);
  Tensor without = ffl->forward(x, ctx);
  CHECK(max_abs_diff(with_skip, without) == 0.0);
}

TEST_CASE("forward_mha single-token sequence reduces to the value path") {
  const int d = 8;
  RngStream rng(4, 0);
  MhaWeights w = MhaWeights::init(d, rng);
  BlockSpec spec = BlockSpec::mha(2);
  Tensor x = rand_seq(3, 1, d, 5);
  ForwardCtx ctx;
  Tensor out = forward_mha(x, spec, w, ctx);

  // softmax over one position is 1, so out = x + (LN(x) Wv) Wo exactly
  NoGradGuard ng;
  Tensor x2 = reshape(x, {3, d});
  Tensor expect = add(x2, matmul(matmul(layer_norm(x2, w.ln_gain, w.ln_bias), w.wv), w.wo));
  CHECK(max_abs_diff(reshape(out, {3, d}), expect) < 1e-12);
}

TEST_CASE("forward_mha causality: perturbing token t only changes positions >= t") {
  const int d = 8, seq = 6;
  RngStream rng(6, 0);
  MhaWeights w = MhaWeights::init(d, rng);
  BlockSpec spec = BlockSpec::mha(4);
  ForwardCtx ctx;
  Tensor x = rand_seq(1, seq, d, 7);
  Tensor base = forward_mha(x, spec, w, ctx);

  const int t = 3;
  Tensor x_pert = Tensor::from(x.shape, x.values());
  for (int i = 0; i < d; ++i) x_pert.values()[static_cast<std::size_t>(t * d + i)] += 0.37;
  Tensor pert = forward_mha(x_pert, spec, w, ctx);
  for (int s = 0; s < seq; ++s) {
    double diff = 0.0;
    for (int i = 0; i < d; ++i) {
      diff = std::max(diff, std::fabs(pert.values()[static_cast<std::size_t>(s * d + i)] -
                                      base.values()[static_cast<std::size_t>(s * d + i)]));
    }
    if (s < t) CHECK(diff == 0.0);
    if (s >= t) CHECK(diff > 0.0);
  }
}

TEST_CASE("forward_mha: no gradient flows from position t to later inputs") {
  const int d = 8, seq = 5, t = 2;
  RngStream rng(8, 0);
  MhaWeights w = MhaWeights::init(d, rng);
  ForwardCtx ctx;
  Tensor x = rand_seq(1, seq, d, 9, true);
  BlockSpec spec = BlockSpec::mha(2);
  Tensor out = forward_mha(x, spec, w, ctx);
  // loss reads only position t
  Tensor row = gather_rows(reshape(out, {seq, d}), {t});
  backward(sum(row));
  for (int s = 0; s < seq; ++s) {
    double g = 0.0;
    for (int i = 0; i < d; ++i)
      g = std::max(g, std::fabs(x.grads()[static_cast<std::size_t>(s * d + i)]));
    if (s > t) CHECK(g == 0.0);
    if (s == t) CHECK(g > 0.0);
  }
}

TEST_CASE("forward_mha rejects head counts that do not divide the width") {
  RngStream rng(10, 0);
  MhaWeights w = MhaWeights::init(8, rng);
  ForwardCtx ctx;
  Tensor x = rand_seq(1, 3, 8, 11);
  CHECK_THROWS_AS(forward_mha(x, BlockSpec::mha(3), w, ctx), SpecError);
}

TEST_CASE("forward_mha gradient check") {
  const int d = 4;
  RngStream rng(12, 0);
  MhaWeights w = MhaWeights::init(d, rng);
  BlockSpec spec = BlockSpec::mha(2);
  std::vector<Tensor> inputs = {rand_seq(1, 3, d, 13, true), w.wq, w.wk, w.wv, w.wo, w.ln_gain,
                                w.ln_bias};
  auto res = latnas::testing::gradcheck(
      [&](std::vector<Tensor>& in) {
        ForwardCtx ctx;
        MhaWeights ww{in[5], in[6], in[1], in[2], in[3], in[4]};
        RngStream r(14, 508);
        return latnas::testing::project(forward_mha(in[0], spec, ww, ctx), r);
      },
      inputs);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("forward_ffl zero weights reduce to the identity; shape preserved") {
  const int d = 8;
  RngStream rng(15, 0);
  FflWeights w = FflWeights::init(d, 16, rng);
  std::fill(w.w1.values().begin(), w.w1.values().end(), 0.0);
  std::fill(w.w2.values().begin(), w.w2.values().end(), 0.0);
  ForwardCtx ctx;
  BlockSpec spec = BlockSpec::ffl(16);
  for (auto [b, s] : std::vector<std::pair<int, int>>{{1, 1}, {2, 5}, {4, 3}}) {
    Tensor x = rand_seq(b, s, d, 16);
    Tensor out = forward_ffl(x, spec, w, ctx);
    CHECK(out.shape == x.shape);
    CHECK(max_abs_diff(out, x) == 0.0);
  }
}

TEST_CASE("forward_ffl gradient check") {
  const int d = 6;
  RngStream rng(17, 0);
  FflWeights w = FflWeights::init(d, 10, rng);
  BlockSpec spec = BlockSpec::ffl(10);
  std::vector<Tensor> inputs = {rand_seq(2, 3, d, 18, true), w.w1, w.w2, w.ln_gain, w.ln_bias};
  auto res = latnas::testing::gradcheck(
      [&](std::vector<Tensor>& in) {
        ForwardCtx ctx;
        FflWeights ww{in[3], in[4], in[1], in[2]};
        RngStream r(19, 509);
        return latnas::testing::project(forward_ffl(in[0], spec, ww, ctx), r);
      },
      inputs);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("gate_route degenerate cases") {
  RngStream rng(20, 0);
  Tensor tokens = Tensor::randn({10, 8}, rng, 1.0);

  // E = 1: everything to expert 0
  Tensor g1 = Tensor::randn({8, 1}, rng, 0.5);
  GateRouting r1 = gate_route(tokens, g1, 1, 1);
  CHECK(r1.stats.token_fraction == std::vector<double>{1.0});
  CHECK(r1.stats.mean_gate_score.values()[0] == doctest::Approx(1.0).epsilon(1e-12));

  // top_k = E: every expert selected by every token
  Tensor g4 = Tensor::randn({8, 4}, rng, 0.5);
  GateRouting r4 = gate_route(tokens, g4, 4, 4);
  double sum_f = 0.0;
  for (double f : r4.stats.token_fraction) {
    CHECK(f == 1.0);
    sum_f += f;
  }
  CHECK(sum_f == 4.0);
}

TEST_CASE("gate_route near-uniform logits spread tokens evenly") {
  // Zero gate weights give exactly tied logits, which the documented
  // tie-break sends wholly to expert 0; tiny random weights act as
  // tie-noise and recover the uniform split.
  RngStream rng(21, 0);
  Tensor tokens = Tensor::randn({10000, 8}, rng, 1.0);
  Tensor gw = Tensor::randn({8, 4}, rng, 1e-6);
  GateRouting r = gate_route(tokens, gw, 1, 4);
  for (double f : r.stats.token_fraction) CHECK(std::fabs(f - 0.25) < 0.05);

  // exact ties: documented tie-break routes to the lower index
  Tensor zero_gw = Tensor::zeros({8, 4});
  GateRouting rz = gate_route(tokens, zero_gw, 1, 4);
  CHECK(rz.stats.token_fraction[0] == 1.0);
}

TEST_CASE("routing stats invariants hold after random forwards") {
  RngStream rng(22, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const int e = 2 + trial;
    const int k = 1 + trial % 2;
    BlockSpec spec = BlockSpec::moe(12, e, std::min(k, e));
    auto block = Block::create(spec, 8, rng);
    ForwardCtx ctx;
    Tensor x = rand_seq(2, 6, 8, 23 + static_cast<std::uint64_t>(trial));
    block->forward(x, ctx);
    const RoutingStats* st = block->last_routing();
    REQUIRE(st != nullptr);
    CHECK(st->tokens_seen == 12);
    double sum_f = 0.0;
    for (double f : st->token_fraction) {
      CHECK(f >= 0.0);
      CHECK(f <= 1.0);
      sum_f += f;
    }
    CHECK(sum_f == doctest::Approx(st->top_k).epsilon(1e-9));
    double sum_g = 0.0;
    for (double gv : st->mean_gate_score.values()) {
      CHECK(gv >= 0.0);
      CHECK(gv <= 1.0);
      sum_g += gv;
    }
    CHECK(std::fabs(sum_g - 1.0) < 1e-6);
  }
}

TEST_CASE("forward_moe with one expert matches forward_ffl exactly") {
  const int d = 8, inner = 16;
  RngStream rng(24, 0);
  MoeWeights mw = MoeWeights::init(d, inner, 1, rng);
  FflWeights fw;
  fw.ln_gain = mw.ln_gain;
  fw.ln_bias = mw.ln_bias;
  fw.w1 = mw.experts[0].w1;
  fw.w2 = mw.experts[0].w2;

  ForwardCtx ctx;
  Tensor x = rand_seq(2, 5, d, 25);
  auto [moe_out, stats] = forward_moe(x, BlockSpec::moe(inner, 1, 1), mw, ctx);
  Tensor ffl_out = forward_ffl(x, BlockSpec::ffl(inner), fw, ctx);
  CHECK(max_abs_diff(moe_out, ffl_out) < 1e-9);
  CHECK(stats.token_fraction == std::vector<double>{1.0});
}

TEST_CASE("forward_moe with identical experts is routing-independent") {
  const int d = 8, inner = 16;
  RngStream rng(26, 0);
  MoeWeights mw = MoeWeights::init(d, inner, 4, rng);
  for (int e = 1; e < 4; ++e) {
    mw.experts[static_cast<std::size_t>(e)].w1 =
        Tensor::from(mw.experts[0].w1.shape, mw.experts[0].w1.values(), true);
    mw.experts[static_cast<std::size_t>(e)].w2 =
        Tensor::from(mw.experts[0].w2.shape, mw.experts[0].w2.values(), true);
  }
  FflWeights fw{mw.ln_gain, mw.ln_bias, mw.experts[0].w1, mw.experts[0].w2};

  ForwardCtx ctx;
  Tensor x = rand_seq(2, 6, d, 27);
  for (int k : {1, 2}) {
    auto [moe_out, stats] = forward_moe(x, BlockSpec::moe(inner, 4, k), mw, ctx);
    Tensor ffl_out = forward_ffl(x, BlockSpec::ffl(inner), fw, ctx);
    // renormalized top-k weights sum to 1 per token, so the mixture collapses
    CHECK(max_abs_diff(moe_out, ffl_out) < 1e-9);
  }
}

TEST_CASE("forward_moe handles experts that receive no tokens") {
  const int d = 8;
  RngStream rng(28, 0);
  MoeWeights mw = MoeWeights::init(d, 12, 4, rng);
  // bias the gate hard toward expert 2
  std::fill(mw.gate.values().begin(), mw.gate.values().end(), 0.0);
  for (int i = 0; i < d; ++i) mw.gate.values()[static_cast<std::size_t>(i * 4 + 2)] = 100.0;
  ForwardCtx ctx;
  Tensor x = rand_seq(1, 6, d, 29);
  auto [out, stats] = forward_moe(x, BlockSpec::moe(12, 4, 1), mw, ctx);
  CHECK(out.shape == x.shape);
  CHECK(stats.token_fraction[2] == 1.0);
  CHECK(stats.token_fraction[0] == 0.0);
}

TEST_CASE("forward_moe gradient check (gate, experts, input)") {
  const int d = 4, inner = 6;
  RngStream rng(30, 0);
  MoeWeights mw = MoeWeights::init(d, inner, 2, rng);
  BlockSpec spec = BlockSpec::moe(inner, 2, 2);  // k = 2 keeps routing stable under fd probes
  std::vector<Tensor> inputs = {rand_seq(1, 4, d, 31, true), mw.gate, mw.experts[0].w1,
                                mw.experts[0].w2, mw.experts[1].w1, mw.experts[1].w2};
  auto res = latnas::testing::gradcheck(
      [&](std::vector<Tensor>& in) {
        ForwardCtx ctx;
        MoeWeights ww;
        ww.ln_gain = mw.ln_gain;
        ww.ln_bias = mw.ln_bias;
        ww.gate = in[1];
        ww.experts = {{in[2], in[3]}, {in[4], in[5]}};
        RngStream r(32, 510);
        auto [out, stats] = forward_moe(in[0], spec, ww, ctx);
        return latnas::testing::project(out, r);
      },
      inputs);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("balance loss gradient reaches the gate through G") {
  const int d = 4;
  RngStream rng(33, 0);
  MoeWeights mw = MoeWeights::init(d, 6, 3, rng);
  ForwardCtx ctx;
  Tensor x = rand_seq(1, 5, d, 34);
  auto [out, stats] = forward_moe(x, BlockSpec::moe(6, 3, 1), mw, ctx);
  Tensor f_const = Tensor::from({3}, stats.token_fraction);
  Tensor loss = mul_scalar(sum(multiply(stats.mean_gate_score, f_const)), 3.0);
  backward(loss);
  double gnorm = 0.0;
  for (double g : mw.gate.grads()) gnorm += g * g;
  CHECK(gnorm > 0.0);
}

TEST_CASE("every block preserves tensor shape") {
  RngStream rng(35, 0);
  for (const std::string key :
       {"skip", "mha:h=1", "mha:h=4", "ffl:d=24", "moe:d=24:e=3:k=2"}) {
    auto block = Block::create(BlockSpec::parse(key), 8, rng);
    ForwardCtx ctx;
    Tensor x = rand_seq(2, 4, 8, 36);
    CHECK(block->forward(x, ctx).shape == x.shape);
  }
}
