#include "latnas/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace latnas {

Corpus Corpus::from_text(std::string text, double train_ratio, double valid_ratio) {
  if (text.empty()) throw DataError("corpus text is empty");
  if (train_ratio <= 0.0 || valid_ratio < 0.0 || train_ratio + valid_ratio >= 1.0 + 1e-12) {
    throw DataError("corpus split ratios must satisfy 0 < train, 0 <= valid, train+valid <= 1");
  }
  Corpus c;
  c.text = std::move(text);
  c.char_to_id.fill(-1);
  std::set<unsigned char> symbols(c.text.begin(), c.text.end());
  for (unsigned char s : symbols) {
    c.char_to_id[s] = static_cast<int>(c.id_to_char.size());
    c.id_to_char.push_back(s);
  }
  c.train_end = static_cast<std::size_t>(train_ratio * static_cast<double>(c.text.size()));
  c.valid_end = c.train_end +
                static_cast<std::size_t>(valid_ratio * static_cast<double>(c.text.size()));
  c.valid_end = std::min(c.valid_end, c.text.size());
  if (c.train_end == 0) throw DataError("corpus train split is empty");
  return c;
}

Corpus Corpus::load(const std::string& path, double train_ratio, double valid_ratio) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read corpus from '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return from_text(os.str(), train_ratio, valid_ratio);
}

int Corpus::encode_char(unsigned char ch) const {
  const int id = char_to_id[ch];
  if (id < 0) {
    throw DataError("corpus vocabulary has no symbol for byte " + std::to_string(int(ch)));
  }
  return id;
}

std::vector<int> Corpus::encode(const std::string& s) const {
  std::vector<int> out;
  out.reserve(s.size());
  for (unsigned char ch : s) out.push_back(encode_char(ch));
  return out;
}

std::string Corpus::decode(const std::vector<int>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) {
      throw DataError("decode: id " + std::to_string(id) + " out of range");
    }
    out.push_back(static_cast<char>(id_to_char[static_cast<std::size_t>(id)]));
  }
  return out;
}

std::pair<std::size_t, std::size_t> Corpus::split_range(Split split) const {
  switch (split) {
    case Split::Train:
      return {0, train_end};
    case Split::Valid:
      return {train_end, valid_end};
    case Split::Test:
      return {valid_end, text.size()};
  }
  throw DataError("unknown split");
}

std::vector<Batch> batches(const Corpus& corpus, Split split, const BatchConfig& cfg) {
  if (cfg.batch_size <= 0 || cfg.seq_len <= 0) {
    throw ParamError("batches: batch_size and seq_len must be positive");
  }
  const auto [begin, end] = corpus.split_range(split);
  const std::size_t len = end - begin;
  const std::size_t needed = static_cast<std::size_t>(cfg.batch_size) *
                             (static_cast<std::size_t>(cfg.seq_len) + 1);
  if (len < needed) {
    throw DataError("split holds " + std::to_string(len) + " characters but one batch needs " +
                    std::to_string(needed));
  }

  // Window w covers inputs [w*S, w*S + S) and targets shifted by one; the
  // last usable window must still have a target for its final position.
  const std::size_t s = static_cast<std::size_t>(cfg.seq_len);
  const std::size_t n_windows = (len - 1) / s;
  std::vector<std::size_t> order(n_windows);
  std::iota(order.begin(), order.end(), 0);
  RngStream rng(cfg.order_seed, Stream::Data);
  rng.shuffle(order);

  const std::size_t n_batches = n_windows / static_cast<std::size_t>(cfg.batch_size);
  std::vector<Batch> out;
  out.reserve(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    Batch batch;
    batch.batch_size = cfg.batch_size;
    batch.seq_len = cfg.seq_len;
    batch.inputs.reserve(needed - static_cast<std::size_t>(cfg.batch_size));
    batch.targets.reserve(batch.inputs.capacity());
    for (int r = 0; r < cfg.batch_size; ++r) {
      const std::size_t w = order[b * static_cast<std::size_t>(cfg.batch_size) +
                                  static_cast<std::size_t>(r)];
      const std::size_t base = begin + w * s;
      for (std::size_t i = 0; i < s; ++i) {
        batch.inputs.push_back(corpus.encode_char(static_cast<unsigned char>(corpus.text[base + i])));
        batch.targets.push_back(
            corpus.encode_char(static_cast<unsigned char>(corpus.text[base + i + 1])));
      }
    }
    out.push_back(std::move(batch));
  }
  return out;
}

}  // namespace latnas
