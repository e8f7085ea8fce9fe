#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mcmil {

// Error taxonomy. Validation errors are caller/contract mistakes (bad shapes,
// bad flags, malformed inputs) and map to CLI exit code 1; the rest are
// runtime/numeric failures and map to exit code 2.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor/vector dimension disagreement.
struct ShapeError : ValidationError {
  using ValidationError::ValidationError;
};

/// Camera index out of range or missing where variants require one.
struct RoutingError : ValidationError {
  using ValidationError::ValidationError;
};

/// Multi-camera alignment broken (unequal clip counts, misaligned sequences).
struct SyncError : ValidationError {
  using ValidationError::ValidationError;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient encountered mid-training.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// splitmix64 finalizer; used to derive independent seed streams.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  return mix64(seed ^ mix64(stream + 1));
}

// Deterministic RNG. The engine is std::mt19937_64 (bit-exact per the
// standard); all distributions are hand-rolled here because the standard
// library's are implementation-defined and would break the byte-identical
// reproducibility contract.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return state_(); }

  /// Uniform in [0, 1) with 53 bits of randomness.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (cached twin draw).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  /// Uniform integer in [lo, hi], inclusive. Rejection-sampled, unbiased.
  int uniform_int(int lo, int hi) {
    if (lo > hi) throw ValidationError("uniform_int: empty range");
    const uint64_t n = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return lo + static_cast<int>(r % n);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace mcmil
