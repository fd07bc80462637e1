#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>

#include "doctest.h"
#include "latnas/supernet.hpp"

using namespace latnas;

namespace {

std::vector<BlockSpec> parse_menu(const std::vector<std::string>& keys) {
  std::vector<BlockSpec> menu;
  for (const auto& k : keys) menu.push_back(BlockSpec::parse(k));
  return menu;
}

BackboneSpec toy_backbone(int model_dim, int slots) {
  BackboneSpec b;
  b.model_dim = model_dim;
  for (int i = 0; i < slots; ++i)
    b.slots.push_back(i % 2 == 0 ? BlockSpec::mha(2) : BlockSpec::ffl(16));
  return b;
}

}  // namespace

TEST_CASE("build_search_network shapes and option counts") {
  RngStream rng(1, 0);
  auto menu = parse_menu({"skip", "ffl:d=8", "mha:h=2"});
  SearchNetwork net = build_search_network(toy_backbone(8, 2), {menu, menu}, 11, 16, rng);
  CHECK(net.super_blocks.size() == 2);
  for (const SuperBlock& sb : net.super_blocks) {
    CHECK(sb.options.size() == 3);
    CHECK(sb.blocks.size() == 3);
    CHECK(sb.alpha.shape == Shape{3});
    for (double a : sb.alpha.values()) CHECK(a == 0.0);  // uniform initial sampling
  }
}

TEST_CASE("build_search_network rejects bad menus") {
  RngStream rng(2, 0);
  auto dup = parse_menu({"skip", "skip"});
  CHECK_THROWS_AS(build_search_network(toy_backbone(8, 1), {dup}, 11, 16, rng), SpecError);
  CHECK_THROWS_AS(build_search_network(toy_backbone(8, 1), {{}}, 11, 16, rng), SpecError);
  auto bad = parse_menu({"mha:h=3"});  // 3 does not divide 8
  CHECK_THROWS_AS(build_search_network(toy_backbone(8, 1), {bad}, 11, 16, rng), SpecError);
}

TEST_CASE("the full option menu of the default space has 8 options per slot") {
  auto menu = parse_menu({"skip", "mha:h=1", "mha:h=2", "mha:h=4", "mha:h=8", "ffl:d=128",
                          "moe:d=128:e=8:k=1", "moe:d=128:e=8:k=2"});
  CHECK(menu.size() == 8);
  RngStream rng(3, 0);
  BackboneSpec b;
  b.model_dim = 32;
  b.slots = {BlockSpec::mha(8), BlockSpec::ffl(128)};
  SearchNetwork net = build_search_network(b, {menu, menu}, 20, 16, rng);
  for (const SuperBlock& sb : net.super_blocks) CHECK(sb.options.size() == 8);
}

TEST_CASE("degenerate one-option menu reproduces the baseline block exactly") {
  RngStream rng(4, 0);
  auto menu = parse_menu({"ffl:d=16"});
  SearchNetwork net = build_search_network(toy_backbone(8, 1), {menu}, 11, 16, rng);
  RngStream data_rng(5, 50);
  Tensor x = Tensor::randn({2, 4, 8}, data_rng, 1.0);
  ForwardCtx ctx;
  RngStream gumbel(6, 2);
  for (SampleMode mode : {SampleMode::Soft, SampleMode::Hard}) {
    auto [out, p] = superblock_forward(x, net.super_blocks[0], 1.0, mode, gumbel, ctx);
    CHECK(p.values()[0] == 1.0);  // softmax over one option
    Tensor direct = net.super_blocks[0].blocks[0]->forward(x, ctx);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.values()[i] == direct.values()[i]);
  }
}

TEST_CASE("superblock_forward hard mode with forced one-hot equals the chosen block") {
  RngStream rng(7, 0);
  auto menu = parse_menu({"skip", "ffl:d=16", "mha:h=2"});
  SearchNetwork net = build_search_network(toy_backbone(8, 1), {menu}, 11, 16, rng);
  SuperBlock& sb = net.super_blocks[0];
  sb.alpha.values() = {0.0, 8.0, 0.0};  // option 1 dominates with zero noise

  RngStream data_rng(8, 50);
  Tensor x = Tensor::randn({1, 4, 8}, data_rng, 1.0);
  ForwardCtx ctx;
  RngStream gumbel(9, 2);
  std::vector<double> zero_noise(3, 0.0);
  auto [out, p] = superblock_forward(x, sb, 1.0, SampleMode::Hard, gumbel, ctx, &zero_noise);
  CHECK(p.values() == std::vector<double>{0.0, 1.0, 0.0});
  Tensor direct = sb.blocks[1]->forward(x, ctx);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.values()[i] == direct.values()[i]);
}

TEST_CASE("superblock of skips returns the input for any P") {
  // build_search_network rejects duplicate keys, but superblock_forward
  // itself has no such restriction; assemble the degenerate slot by hand.
  RngStream rng(10, 0);
  SuperBlock sb;
  sb.options = {BlockSpec::skip(), BlockSpec::skip()};
  sb.blocks.push_back(Block::create(BlockSpec::skip(), 8, rng));
  sb.blocks.push_back(Block::create(BlockSpec::skip(), 8, rng));
  sb.alpha = Tensor::from({2}, {0.4, -1.2}, true);

  RngStream data_rng(11, 50);
  Tensor x = Tensor::randn({2, 3, 8}, data_rng, 1.0);
  ForwardCtx ctx;
  RngStream gumbel(12, 2);
  auto [out, p] = superblock_forward(x, sb, 0.7, SampleMode::Soft, gumbel, ctx);
  CHECK(std::fabs(p.values()[0] + p.values()[1] - 1.0) < 1e-12);
  for (std::size_t i = 0; i < out.size(); ++i)
    CHECK(out.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-12));
}

TEST_CASE("soft superblock output equals the enumeration oracle") {
  RngStream rng(13, 0);
  auto menu = parse_menu({"skip", "ffl:d=12", "mha:h=4", "moe:d=12:e=3:k=1", "ffl:d=24",
                          "mha:h=1", "moe:d=8:e=2:k=2", "ffl:d=4"});
  REQUIRE(menu.size() == 8);
  SearchNetwork net = build_search_network(toy_backbone(8, 1), {menu}, 11, 16, rng);
  SuperBlock& sb = net.super_blocks[0];
  RngStream alpha_rng(14, 50);
  for (double& a : sb.alpha.values()) a = alpha_rng.normal(0.0, 1.0);

  RngStream data_rng(15, 50);
  Tensor x = Tensor::randn({2, 4, 8}, data_rng, 1.0);
  ForwardCtx ctx;
  RngStream gumbel(16, 2);
  std::vector<double> noise;
  for (std::size_t i = 0; i < menu.size(); ++i) noise.push_back(alpha_rng.gumbel());

  auto [out, p] = superblock_forward(x, sb, 0.9, SampleMode::Soft, gumbel, ctx, &noise);

  // independent enumeration: evaluate every option separately and combine
  // with plain loops over raw values
  NoGradGuard ng;
  std::vector<double> expect(out.size(), 0.0);
  for (std::size_t i = 0; i < sb.blocks.size(); ++i) {
    Tensor bi = sb.blocks[i]->forward(x, ctx);
    const double pi = p.values()[i];
    for (std::size_t j = 0; j < expect.size(); ++j) expect[j] += pi * bi.values()[j];
  }
  double max_diff = 0.0;
  for (std::size_t j = 0; j < expect.size(); ++j)
    max_diff = std::max(max_diff, std::fabs(expect[j] - out.values()[j]));
  CHECK(max_diff < 1e-9);
}

TEST_CASE("network and architecture parameter groups are disjoint") {
  RngStream rng(17, 0);
  auto menu = parse_menu({"skip", "ffl:d=8", "mha:h=2"});
  SearchNetwork net = build_search_network(toy_backbone(8, 2), {menu, menu}, 11, 16, rng);
  std::set<const void*> net_ptrs, arch_ptrs;
  for (const Tensor& t : net.network_params()) net_ptrs.insert(t.data.get());
  for (const Tensor& t : net.arch_params()) arch_ptrs.insert(t.data.get());
  CHECK(net_ptrs.size() > 0);
  CHECK(arch_ptrs.size() == 2);
  for (const void* p : arch_ptrs) CHECK(net_ptrs.count(p) == 0);
}

TEST_CASE("hard-mode selection frequencies match softmax(alpha) at T=1") {
  RngStream rng(18, 0);
  auto menu = parse_menu({"skip", "ffl:d=4", "ffl:d=8"});
  SearchNetwork net = build_search_network(toy_backbone(4, 1), {menu}, 7, 8, rng);
  SuperBlock& sb = net.super_blocks[0];
  sb.alpha.values() = {0.8, -0.3, 0.1};
  Tensor ref = softmax(Tensor::from({3}, sb.alpha.values()), 0);

  RngStream gumbel(19, 2);
  const int draws = 30000;
  std::vector<int> counts(3, 0);
  NoGradGuard ng;
  for (int i = 0; i < draws; ++i) {
    Tensor p = gumbel_softmax(sb.alpha, 1.0, gumbel, true);
    counts[static_cast<std::size_t>(argmax(p))]++;
  }
  for (int i = 0; i < 3; ++i) {
    CHECK(std::fabs(static_cast<double>(counts[static_cast<std::size_t>(i)]) / draws -
                    ref.values()[static_cast<std::size_t>(i)]) < 0.02);
  }
}

TEST_CASE("count_architectures") {
  auto one = parse_menu({"skip", "ffl:d=4", "ffl:d=8"});
  CHECK(count_architectures({one}) == "3");

  // exhaustive enumeration oracle for small mixed menus
  std::vector<std::vector<BlockSpec>> menus = {
      parse_menu({"skip", "ffl:d=1", "ffl:d=2", "ffl:d=3", "ffl:d=4"}),
      parse_menu({"skip", "ffl:d=1", "ffl:d=2"}),
      parse_menu({"skip", "ffl:d=1"})};
  long enumerated = 0;
  for (std::size_t a = 0; a < menus[0].size(); ++a)
    for (std::size_t b = 0; b < menus[1].size(); ++b)
      for (std::size_t c = 0; c < menus[2].size(); ++c) ++enumerated;
  CHECK(enumerated == 30);
  CHECK(count_architectures(menus) == "30");

  // 24 slots x 8 options: 8^24 = 2^72, past the 64-bit range
  std::vector<std::vector<BlockSpec>> big(24, parse_menu({"skip", "mha:h=1", "mha:h=2",
                                                          "mha:h=4", "mha:h=8", "ffl:d=128",
                                                          "moe:d=128:e=8:k=1",
                                                          "moe:d=128:e=8:k=2"}));
  CHECK(count_architectures(big) == "4722366482869645213696");
}
