#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "latnas/errors.hpp"
#include "latnas/rng.hpp"

namespace latnas {

enum class Split { Train, Valid, Test };

// Character-level corpus with a deterministic vocabulary (symbols sorted by
// byte value) and contiguous ordered train/valid/test splits.
struct Corpus {
  std::string text;
  std::vector<unsigned char> id_to_char;
  std::array<int, 256> char_to_id{};  // -1 where absent
  std::size_t train_end = 0;
  std::size_t valid_end = 0;

  static Corpus from_text(std::string text, double train_ratio, double valid_ratio);
  static Corpus load(const std::string& path, double train_ratio, double valid_ratio);

  int vocab_size() const { return static_cast<int>(id_to_char.size()); }
  int encode_char(unsigned char c) const;  // DataError on unknown symbols
  std::vector<int> encode(const std::string& s) const;
  std::string decode(const std::vector<int>& ids) const;

  // [begin, end) offsets of one split in `text`.
  std::pair<std::size_t, std::size_t> split_range(Split split) const;
};

struct BatchConfig {
  int batch_size = 8;
  int seq_len = 32;
  std::uint64_t order_seed = 0;
};

struct Batch {
  std::vector<int> inputs;   // (batch, seq) row-major
  std::vector<int> targets;  // same layout; targets[i] is the next character
  int batch_size = 0;
  int seq_len = 0;
};

// Cuts the split into contiguous non-overlapping windows of seq_len inputs
// with next-character targets, then groups them into fixed-size batches in
// a seed-shuffled order. Leftover windows that do not fill a batch are
// dropped (floor behavior).
std::vector<Batch> batches(const Corpus& corpus, Split split, const BatchConfig& cfg);

}  // namespace latnas
