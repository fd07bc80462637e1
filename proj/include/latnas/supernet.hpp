#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "latnas/blocks.hpp"
#include "latnas/model.hpp"
#include "latnas/tensor.hpp"

namespace latnas {

// Ordered slot pattern of the baseline network (the interleaved
// attention/feed-forward backbone) plus the model width.
struct BackboneSpec {
  int model_dim = 0;
  std::vector<BlockSpec> slots;

  void validate() const;
};

enum class SampleMode { Soft, Hard };

// One search slot: the option menu, one independently weighted block per
// option, and the architecture weight vector alpha.
struct SuperBlock {
  std::vector<BlockSpec> options;
  std::vector<std::unique_ptr<Block>> blocks;
  Tensor alpha;  // length == options.size(), trained by the arch optimizer
};

// Weighted-mixture forward through one super block. Soft mode evaluates
// every option and combines with the sampled probabilities; hard mode
// evaluates only the sampled option (one-hot forward, straight-through
// gradients). Returns (output, P).
std::pair<Tensor, Tensor> superblock_forward(const Tensor& x, SuperBlock& sb, double temperature,
                                             SampleMode mode, RngStream& gumbel_rng,
                                             ForwardCtx& ctx,
                                             const std::vector<double>* noise_override = nullptr);

struct SearchForward {
  Tensor logits;                 // (batch * seq, vocab)
  std::vector<Tensor> slot_probs;  // P per super block, in slot order
};

struct SearchNetwork {
  BackboneSpec backbone;
  LmCore core;
  std::vector<SuperBlock> super_blocks;

  SearchForward forward(const std::vector<int>& tokens, int batch, int seq, ForwardCtx& ctx,
                        SampleMode mode, double temperature, RngStream& gumbel_rng);

  // The two disjoint trainable parameter groups of phase 1.
  std::vector<Tensor> network_params() const;
  std::vector<Tensor> arch_params() const;

  std::vector<std::vector<BlockSpec>> option_menus() const;
};

// Replaces every backbone slot with a super block carrying the given menu.
// Alphas start at zero so the initial sampling is uniform; every option gets
// its own fresh weights.
SearchNetwork build_search_network(const BackboneSpec& backbone,
                                   const std::vector<std::vector<BlockSpec>>& menus, int vocab,
                                   int max_seq, RngStream& rng);

// Product over slots of option counts; exact (the configured spaces easily
// exceed 64 bits).
std::string count_architectures(const std::vector<std::vector<BlockSpec>>& menus);

}  // namespace latnas
