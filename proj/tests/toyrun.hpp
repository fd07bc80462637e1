#pragma once

// Shared desk-scale fixtures for the training-loop tests and the acceptance
// suite: synthetic corpora with known structure and a deterministic latency
// table so search behavior is reproducible and fast.

#include <string>
#include <vector>

#include "latnas/data.hpp"
#include "latnas/latency.hpp"
#include "latnas/supernet.hpp"

namespace latnas::testing {

// Word-soup English-like text: skewed letter frequencies, spaces,
// punctuation. Enough structure for a character model to learn.
inline std::string english_like_text(std::size_t n, std::uint64_t seed) {
  static const std::vector<std::string> words = {
      "the",   "of",    "and",  "to",    "in",     "a",     "is",    "that",  "for",   "it",
      "was",   "on",    "are",  "with",  "as",     "his",   "they",  "be",    "at",    "one",
      "have",  "this",  "from", "or",    "had",    "by",    "hot",   "word",  "but",   "what",
      "some",  "we",    "can",  "out",   "other",  "were",  "all",   "there", "when",  "up",
      "use",   "your",  "how",  "said",  "an",     "each",  "she",   "which", "do",    "their",
      "time",  "if",    "will", "way",   "about",  "many",  "then",  "them",  "write", "would",
      "like",  "so",    "these", "her",  "long",   "make",  "thing", "see",   "him",   "two",
      "has",   "look",  "more", "day",   "could",  "go",    "come",  "did",   "number", "sound",
      "no",    "most",  "people", "my",  "over",   "know",  "water", "than",  "call",  "first",
      "who",   "may",   "down", "side",  "been",   "now",   "find",  "any",   "new",   "work"};
  RngStream rng(seed, Stream::Synth);
  std::string out;
  out.reserve(n + 16);
  int sentence_len = 0;
  while (out.size() < n) {
    // Zipf-ish: favor the front of the word list
    const double u = rng.uniform();
    const std::size_t idx = static_cast<std::size_t>(u * u * static_cast<double>(words.size()));
    out += words[std::min(idx, words.size() - 1)];
    if (++sentence_len >= 6 + rng.below(8)) {
      out += ".\n";
      sentence_len = 0;
    } else {
      out += ' ';
    }
  }
  out.resize(n);
  return out;
}

// Copy task: triples "c.c" where the third character repeats the first. The
// repeated character is only predictable by attending two positions back,
// so attention is the single option that fits this data.
inline std::string planted_copy_text(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed, Stream::Synth);
  std::string out;
  out.reserve(n + 3);
  while (out.size() < n) {
    const char c = static_cast<char>('a' + rng.below(8));
    out.push_back(c);
    out.push_back('.');
    out.push_back(c);
  }
  out.resize(n - n % 3);
  return out;
}

// Deterministic per-key cost model; relative ordering is what matters.
inline double synthetic_cost(const BlockSpec& spec) {
  switch (spec.kind) {
    case BlockKind::Skip:
      return 0.5;
    case BlockKind::MHA:
      return 120.0 + 60.0 * spec.heads;
    case BlockKind::FFL:
      return 20.0 + 0.5 * spec.inner_dim;
    case BlockKind::MoEFFL:
      return 60.0 + 0.5 * spec.inner_dim * spec.top_k / 2.0;
  }
  return 1.0;
}

inline LatencyTable synthetic_table(const std::vector<std::vector<BlockSpec>>& menus,
                                    const BackboneSpec& backbone) {
  LatencyTable t;
  t.context = {8, 32, backbone.model_dim, "f64"};
  t.timestamp = "synthetic";
  for (const auto& menu : menus)
    for (const BlockSpec& s : menu) t.put(s.key(), {synthetic_cost(s), 10, 3, 0.0});
  for (const BlockSpec& s : backbone.slots) t.put(s.key(), {synthetic_cost(s), 10, 3, 0.0});
  return t;
}

struct PlantedSetup {
  Corpus corpus;
  BackboneSpec backbone;
  std::vector<std::vector<BlockSpec>> menus;
  LatencyTable table;
};

inline PlantedSetup planted_setup(std::size_t corpus_chars = 15000) {
  PlantedSetup s{Corpus::from_text(planted_copy_text(corpus_chars, 1234), 0.9, 0.05), {}, {}, {}};
  s.backbone.model_dim = 24;
  s.backbone.slots = {BlockSpec::mha(2)};
  s.menus = {{BlockSpec::skip(), BlockSpec::ffl(8), BlockSpec::mha(2)}};
  s.table = synthetic_table(s.menus, s.backbone);
  return s;
}

inline Phase1Config planted_phase1(std::uint64_t seed, int epochs = 8) {
  Phase1Config cfg;
  cfg.epochs = epochs;
  cfg.arch_data_fraction = 0.2;
  cfg.arch_warmup_fraction = 0.125;
  cfg.initial_temperature = 5.0;
  cfg.temperature_anneal_rate = 0.6;
  cfg.net_opt = {"adam", 0.01};
  cfg.arch_opt = {"adam", 0.01};
  cfg.target_ratio = 1.0;
  cfg.seed = seed;
  cfg.batch.batch_size = 8;
  cfg.batch.seq_len = 24;  // multiple of 3 keeps the triples aligned
  return cfg;
}

}  // namespace latnas::testing
