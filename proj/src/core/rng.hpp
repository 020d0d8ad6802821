#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace csfda {

// Deterministic random source. The engine (mt19937_64) is fully specified by
// the C++ standard, and all distributions below are hand-rolled from raw
// 64-bit draws, so identical seeds give identical streams on every platform
// and standard library. Do not replace these with std:: distributions: their
// output is implementation-defined and would break the reproducibility
// contract (same seed => byte-identical run artifacts).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1): top 53 bits of a draw.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0. Simple modulo; the bias is
  // negligible for the alphabet-sized n used here (n << 2^64).
  std::uint64_t uniform_index(std::uint64_t n) { return engine_() % n; }

  // Standard normal via Box-Muller. One value per call; the spare is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * kPi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Exp(1) via inverse transform.
  double exponential() {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return -std::log(u);
  }

  // Dirichlet(1,...,1) over n cells: normalized Exp(1) draws.
  std::vector<double> dirichlet_flat(std::size_t n) {
    std::vector<double> out(n);
    double total = 0.0;
    for (auto& v : out) {
      v = exponential();
      total += v;
    }
    for (auto& v : out) v /= total;
    return out;
  }

  // Fisher-Yates shuffle of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(idx[i - 1], idx[j]);
    }
    return idx;
  }

 private:
  static constexpr double kPi = 3.14159265358979323846;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over a byte range. Used for content hashes of parameter blocks and
// for the word -> embedding seeding of prompt initialization.
inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 1469598103934665603ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

// Stream splitting: derive an independent child seed from (seed, tag). Keeps
// consumers (data generation, shuffling, init) on disjoint streams so adding
// draws in one place cannot shift another.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return fnv1a64(tag, seed ^ 0x9e3779b97f4a7c15ULL);
}

}  // namespace csfda
