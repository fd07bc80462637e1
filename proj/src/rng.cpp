#include "latnas/rng.hpp"

#include <cmath>
#include <sstream>

#include "latnas/errors.hpp"

namespace latnas {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream) {
  eng_.seed(splitmix64(splitmix64(seed) ^ splitmix64(stream * 0xD6E8FEB86659FD93ull + 1)));
}

std::uint64_t RngStream::raw() { return eng_(); }

double RngStream::uniform() {
  // 53-bit mantissa in [0, 1).
  return static_cast<double>(raw() >> 11) * 0x1.0p-53;
}

double RngStream::normal(double mean, double stddev) {
  // Box-Muller; stateless pairing keeps the draw count predictable.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * M_PI * u2);
}

double RngStream::gumbel() {
  double u = uniform();
  // Keep u away from 0 and 1 so both logs stay finite.
  if (u < 1e-12) u = 1e-12;
  if (u > 1.0 - 1e-12) u = 1.0 - 1e-12;
  return -std::log(-std::log(u));
}

int RngStream::below(int n) {
  if (n <= 0) throw ParamError("RngStream::below: n must be positive, got " + std::to_string(n));
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x;
  do {
    x = raw();
  } while (x >= limit);
  return static_cast<int>(x % un);
}

std::string RngStream::save_state() const {
  std::ostringstream os;
  os << seed_ << ' ' << stream_ << ' ' << eng_;
  return os.str();
}

void RngStream::restore_state(const std::string& state) {
  std::istringstream is(state);
  is >> seed_ >> stream_ >> eng_;
  if (!is) throw DataError("RngStream::restore_state: malformed state string");
}

}  // namespace latnas
