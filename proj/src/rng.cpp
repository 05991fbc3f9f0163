#include "ueps/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ueps {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : key_(mix64(seed ^ 0x5DEECE66Dull)) {}

std::uint64_t Rng::next_u64() {
  const std::uint64_t c = counter_++;
  return mix64(mix64(key_ + c * kGolden) ^ key_);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(next_u64() % span);
}

double Rng::normal() {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal(double bound) {
  for (;;) {
    const double z = normal();
    if (std::abs(z) <= bound) return z;
  }
}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(mix64(key_ ^ mix64(stream + kGolden)), 0, 0);
}

Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

ComplexGrid normal(Rng& rng, Shape shape, double sigma) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("normal: sigma must be non-negative");
  ComplexGrid out(shape);
  if (sigma == 0.0) return out;
  const double s = sigma / std::numbers::sqrt2;
  for (auto& v : out.data()) {
    const double u1 = 1.0 - rng.uniform();
    const double u2 = rng.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    v = {s * r * std::cos(a), s * r * std::sin(a)};
  }
  return out;
}

}  // namespace ueps
