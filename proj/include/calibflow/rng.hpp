#pragma once

#include <cstdint>
#include <vector>

#include "calibflow/tensor.hpp"

namespace calibflow {

// Counter-based splitmix64 stream. The n-th output is a pure function of
// (seed, n), so identical (seed, draw sequence) is bit-reproducible and
// streams can be derived for parallel cells without sharing state.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;  // draws consumed

  static constexpr const char* kAlgorithm = "splitmix64";

  RngStream() = default;
  explicit RngStream(std::uint64_t s) : seed(s) {}

  std::uint64_t next_u64();
  double next_unit();    // uniform in (0, 1]
  double next_normal(double mean = 0.0, double stddev = 1.0);

  // Independent child stream for cell `index`; deterministic in (seed, index).
  RngStream derive(std::uint64_t index) const;
};

// i.i.d. Gaussian tensor; errors on negative stddev.
Tensor sample_normal(RngStream& rng, std::vector<std::size_t> shape, double mean, double stddev);

}  // namespace calibflow
