#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "latnas/data.hpp"

using namespace latnas;

namespace {

std::string synth_text(std::size_t n, std::uint64_t seed) {
  const std::string alphabet = "abcdefgh ijkl.\n";
  RngStream rng(seed, Stream::Synth);
  std::string out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(alphabet[static_cast<std::size_t>(rng.below(static_cast<int>(alphabet.size())))]);
  return out;
}

}  // namespace

TEST_CASE("vocabulary is sorted by symbol and bijective") {
  Corpus c = Corpus::from_text("abab", 0.5, 0.25);
  CHECK(c.vocab_size() == 2);
  CHECK(c.encode_char('a') == 0);
  CHECK(c.encode_char('b') == 1);
  CHECK_THROWS_AS(c.encode_char('z'), DataError);
  CHECK(c.decode({0, 1, 0}) == "aba");
}

TEST_CASE("split offsets sit at the exact ratio boundaries") {
  Corpus c = Corpus::from_text(synth_text(1000, 1), 0.8, 0.1);
  auto [tb, te] = c.split_range(Split::Train);
  auto [vb, ve] = c.split_range(Split::Valid);
  auto [sb, se] = c.split_range(Split::Test);
  CHECK(tb == 0);
  CHECK(te == 800);
  CHECK(vb == 800);
  CHECK(ve == 900);
  CHECK(sb == 900);
  CHECK(se == 1000);
}

TEST_CASE("encode/decode round-trips the training split") {
  Corpus c = Corpus::from_text(synth_text(5000, 2), 0.8, 0.1);
  auto [tb, te] = c.split_range(Split::Train);
  const std::string train = c.text.substr(tb, te - tb);
  CHECK(c.decode(c.encode(train)) == train);
}

TEST_CASE("corpus loading errors") {
  CHECK_THROWS_AS(Corpus::from_text("", 0.8, 0.1), DataError);
  CHECK_THROWS_AS(Corpus::load("/no/such/file.txt", 0.8, 0.1), DataError);
  CHECK_THROWS_AS(Corpus::from_text("abc", 0.0, 0.5), DataError);
  CHECK_THROWS_AS(Corpus::from_text("abc", 0.7, 0.5), DataError);

  const std::string path = (std::filesystem::temp_directory_path() / "latnas_corpus.txt").string();
  std::ofstream(path) << synth_text(400, 3);
  Corpus c = Corpus::load(path, 0.8, 0.1);
  CHECK(c.text.size() == 400);
}

TEST_CASE("first window of 'abcdef' with seq_len 3 is abc -> bcd") {
  // single window: floor((6-1)/3) = 1
  Corpus full = Corpus::from_text("abcdefabcdef", 0.5, 0.0);  // train split = "abcdef"
  BatchConfig cfg{1, 3, 0};
  auto bs = batches(full, Split::Train, cfg);
  REQUIRE(bs.size() == 1);
  CHECK(full.decode(bs[0].inputs) == "abc");
  CHECK(full.decode(bs[0].targets) == "bcd");
}

TEST_CASE("target-shift property holds for every emitted batch") {
  Corpus c = Corpus::from_text(synth_text(4000, 4), 0.8, 0.1);
  BatchConfig cfg{4, 16, 9};
  for (const Batch& b : batches(c, Split::Train, cfg)) {
    REQUIRE(b.inputs.size() == static_cast<std::size_t>(b.batch_size * b.seq_len));
    for (int r = 0; r < b.batch_size; ++r) {
      for (int i = 0; i + 1 < b.seq_len; ++i) {
        CHECK(b.targets[static_cast<std::size_t>(r * b.seq_len + i)] ==
              b.inputs[static_cast<std::size_t>(r * b.seq_len + i + 1)]);
      }
    }
  }
}

TEST_CASE("floor coverage: window and batch counts are deterministic") {
  Corpus c = Corpus::from_text(synth_text(1000, 5), 0.8, 0.1);
  // train split 800 chars, seq 16 -> floor(799/16) = 49 windows; batch 4 -> 12 batches
  BatchConfig cfg{4, 16, 0};
  auto bs = batches(c, Split::Train, cfg);
  CHECK(bs.size() == 12);
}

TEST_CASE("two iterators with the same seed yield identical batch order") {
  Corpus c = Corpus::from_text(synth_text(3000, 6), 0.8, 0.1);
  BatchConfig cfg{4, 12, 777};
  auto a = batches(c, Split::Train, cfg);
  auto b = batches(c, Split::Train, cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].inputs == b[i].inputs);
    CHECK(a[i].targets == b[i].targets);
  }
  BatchConfig other{4, 12, 778};
  auto d = batches(c, Split::Train, other);
  bool differs = false;
  for (std::size_t i = 0; i < a.size() && !differs; ++i) differs = a[i].inputs != d[i].inputs;
  CHECK(differs);
}

TEST_CASE("split too small raises a data error naming the minimum") {
  Corpus c = Corpus::from_text(synth_text(300, 7), 0.8, 0.1);  // valid split = 30 chars
  BatchConfig cfg{4, 16, 0};                                   // needs 4*17 = 68
  try {
    batches(c, Split::Valid, cfg);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("68") != std::string::npos);
  }
}

TEST_CASE("no batch spans a split boundary") {
  // distinct symbols per split make any boundary crossing visible
  std::string text = std::string(500, 'a') + std::string(250, 'b') + std::string(250, 'c');
  Corpus c = Corpus::from_text(std::move(text), 0.5, 0.25);
  const int b_id = c.encode_char('b');
  BatchConfig cfg{2, 10, 3};
  auto bs = batches(c, Split::Valid, cfg);
  CHECK(!bs.empty());
  for (const Batch& b : bs) {
    for (int t : b.inputs) CHECK(t == b_id);
    for (int t : b.targets) CHECK(t == b_id);
  }
}
