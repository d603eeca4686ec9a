#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace bsync {

using Eigen::ArrayXd;
using Eigen::Index;

// Error taxonomy shared by all modules. The code distinguishes bad input
// files (parse), contract violations (validation), inputs that make a
// quantity undefined (degenerate_input), and so on; the CLI maps these to
// exit codes.
enum class errc {
  parse,
  validation,
  degenerate_input,
  not_found,
  design,
  domain,
  io,
  usage,
};

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) { throw Error(code, msg); }

// Deterministic PRNG (xoshiro256++ seeded via splitmix64). The standard
// <random> distributions are implementation-defined, which would break the
// byte-identical-output guarantee if the toolchain ever changes; everything
// random in this project flows through this class instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : state_) w = splitmix64(x);
    has_spare_ = false;
    spare_ = 0.0;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Bounded integer in [0, n). Modulo bias is below 2^-32 for the ranges
  // used here (n is always tiny).
  std::uint64_t bounded(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; spare value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derives an independent child seed from a base seed and a stream tag so
  // that per-participant / per-channel streams never overlap.
  static std::uint64_t derive(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t x = base ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
    splitmix64(x);
    return splitmix64(x);
  }

  static std::uint64_t derive(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return derive(derive(base, a), b);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::array<std::uint64_t, 4> state_;
  double spare_;
  bool has_spare_;
};

}  // namespace bsync
