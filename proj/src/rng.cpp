#include "calibflow/rng.hpp"

#include <cmath>

#include "calibflow/errors.hpp"

namespace calibflow {
namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t RngStream::next_u64() {
  ++counter;
  return mix64(seed + counter * kGamma);
}

double RngStream::next_unit() {
  // 53-bit mantissa in (0, 1]: never returns 0, safe under log().
  const std::uint64_t bits = next_u64() >> 11;
  return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
}

double RngStream::next_normal(double mean, double stddev) {
  // Box-Muller, cosine branch only: every normal costs exactly two uniforms,
  // which keeps the draw counter a simple function of the draw count.
  const double u1 = next_unit();
  const double u2 = next_unit();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double z = r * std::cos(2.0 * M_PI * u2);
  return mean + stddev * z;
}

RngStream RngStream::derive(std::uint64_t index) const {
  return RngStream(mix64(mix64(seed ^ 0xD1B54A32D192ED03ULL) + (index + 1) * kGamma));
}

Tensor sample_normal(RngStream& rng, std::vector<std::size_t> shape, double mean, double stddev) {
  if (stddev < 0.0) throw NumericError("sample_normal: negative stddev");
  Tensor out(std::move(shape));
  for (double& v : out.data) v = rng.next_normal(mean, stddev);
  return out;
}

}  // namespace calibflow
