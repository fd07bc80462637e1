#include "latnas/supernet.hpp"

#include <algorithm>
#include <set>

namespace latnas {

void BackboneSpec::validate() const {
  if (model_dim <= 0) throw SpecError("backbone: model_dim must be positive");
  if (slots.empty()) throw SpecError("backbone: needs at least one slot");
  for (const BlockSpec& s : slots) s.validate(model_dim);
}

std::pair<Tensor, Tensor> superblock_forward(const Tensor& x, SuperBlock& sb, double temperature,
                                             SampleMode mode, RngStream& gumbel_rng,
                                             ForwardCtx& ctx,
                                             const std::vector<double>* noise_override) {
  const bool hard = mode == SampleMode::Hard;
  Tensor p = gumbel_softmax(sb.alpha, temperature, gumbel_rng, hard, noise_override);
  if (hard) {
    const int j = argmax(p);
    Tensor out = mul_elem(sb.blocks[static_cast<std::size_t>(j)]->forward(x, ctx), p, j);
    return {out, p};
  }
  Tensor out;
  for (std::size_t i = 0; i < sb.blocks.size(); ++i) {
    Tensor term = mul_elem(sb.blocks[i]->forward(x, ctx), p, static_cast<int>(i));
    out = out.defined() ? add(out, term) : term;
  }
  return {out, p};
}

SearchForward SearchNetwork::forward(const std::vector<int>& tokens, int batch, int seq,
                                     ForwardCtx& ctx, SampleMode mode, double temperature,
                                     RngStream& gumbel_rng) {
  SearchForward fwd;
  Tensor x = core.embed(tokens, batch, seq, ctx);
  for (SuperBlock& sb : super_blocks) {
    auto [out, p] = superblock_forward(x, sb, temperature, mode, gumbel_rng, ctx);
    x = out;
    fwd.slot_probs.push_back(p);
  }
  fwd.logits = core.project(x);
  return fwd;
}

std::vector<Tensor> SearchNetwork::network_params() const {
  std::vector<std::pair<std::string, Tensor>> named;
  core.collect_named(named);
  for (std::size_t s = 0; s < super_blocks.size(); ++s) {
    for (std::size_t o = 0; o < super_blocks[s].blocks.size(); ++o) {
      super_blocks[s].blocks[o]->collect_named(
          "slot" + std::to_string(s) + ".opt" + std::to_string(o) + ".", named);
    }
  }
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (auto& [name, t] : named) out.push_back(t);
  return out;
}

std::vector<Tensor> SearchNetwork::arch_params() const {
  std::vector<Tensor> out;
  for (const SuperBlock& sb : super_blocks) out.push_back(sb.alpha);
  return out;
}

std::vector<std::vector<BlockSpec>> SearchNetwork::option_menus() const {
  std::vector<std::vector<BlockSpec>> menus;
  for (const SuperBlock& sb : super_blocks) menus.push_back(sb.options);
  return menus;
}

SearchNetwork build_search_network(const BackboneSpec& backbone,
                                   const std::vector<std::vector<BlockSpec>>& menus, int vocab,
                                   int max_seq, RngStream& rng) {
  backbone.validate();
  if (menus.size() != backbone.slots.size()) {
    throw SpecError("build_search_network: " + std::to_string(menus.size()) + " menus for " +
                    std::to_string(backbone.slots.size()) + " slots");
  }
  SearchNetwork net;
  net.backbone = backbone;
  net.core = LmCore::init(backbone.model_dim, vocab, max_seq, rng);
  for (std::size_t s = 0; s < menus.size(); ++s) {
    const auto& menu = menus[s];
    if (menu.empty()) throw SpecError("build_search_network: slot " + std::to_string(s) + " menu is empty");
    std::set<std::string> seen;
    SuperBlock sb;
    for (const BlockSpec& opt : menu) {
      opt.validate(backbone.model_dim);
      if (!seen.insert(opt.key()).second) {
        throw SpecError("build_search_network: duplicate option '" + opt.key() + "' in slot " +
                        std::to_string(s));
      }
      sb.options.push_back(opt);
      sb.blocks.push_back(Block::create(opt, backbone.model_dim, rng));
    }
    sb.alpha = Tensor::zeros({static_cast<int>(menu.size())}, true);
    net.super_blocks.push_back(std::move(sb));
  }
  return net;
}

std::string count_architectures(const std::vector<std::vector<BlockSpec>>& menus) {
  // little-endian base-1e9 limbs; multiply by one small factor per slot
  std::vector<std::uint64_t> limbs = {1};
  for (const auto& menu : menus) {
    const std::uint64_t f = menu.size();
    std::uint64_t carry = 0;
    for (std::uint64_t& limb : limbs) {
      const std::uint64_t v = limb * f + carry;
      limb = v % 1000000000ull;
      carry = v / 1000000000ull;
    }
    while (carry) {
      limbs.push_back(carry % 1000000000ull);
      carry /= 1000000000ull;
    }
  }
  std::string out = std::to_string(limbs.back());
  for (auto it = limbs.rbegin() + 1; it != limbs.rend(); ++it) {
    std::string part = std::to_string(*it);
    out += std::string(9 - part.size(), '0') + part;
  }
  return out;
}

}  // namespace latnas
