#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace latnas {

// Named sub-streams derived from the single run seed. Keeping the draw
// sequences separate makes every stage reproducible independently of the
// others.
enum class Stream : std::uint64_t {
  Init = 0,
  Data = 1,
  Gumbel = 2,
  Dropout = 3,
  Profile = 4,
  Synth = 5,
};

// Deterministic seeded random stream. The same (seed, stream, draw index)
// always yields the same value on every platform: the generator is
// mt19937_64 (bit-stable by the standard) and all distributions are derived
// by hand from its raw output instead of going through the
// implementation-defined std:: distributions.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream);
  RngStream(std::uint64_t seed, Stream stream)
      : RngStream(seed, static_cast<std::uint64_t>(stream)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t raw();
  double uniform();                               // [0, 1)
  double normal(double mean = 0.0, double stddev = 1.0);
  double gumbel();                                // -log(-log(u))
  int below(int n);                               // [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Engine-state snapshot for checkpoints; round-trips exactly.
  std::string save_state() const;
  void restore_state(const std::string& state);

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::mt19937_64 eng_;
};

}  // namespace latnas
