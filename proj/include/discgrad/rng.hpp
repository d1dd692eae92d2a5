#pragma once
// Deterministic splittable RNG streams (xoshiro256++ state, splitmix64 key
// derivation). A stream forked with the same key sequence always yields the
// same draws regardless of how sibling streams were consumed, which is what
// makes per-(run, trial, step, site) seeding reproducible under concurrency.

#include <cstdint>

#include "core.hpp"

namespace discgrad {

namespace detail {
inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
inline uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
}  // namespace detail

class RngStream {
 public:
  explicit RngStream(uint64_t seed) : key_(seed) { reseed(seed); }

  // Derives an independent stream; depends only on (construction key, k),
  // never on how many draws this stream has produced.
  RngStream fork(uint64_t k) const {
    uint64_t mix = key_ ^ (0x9e3779b97f4a7c15ull + (k << 1));
    uint64_t tmp = mix;
    return RngStream(detail::splitmix64(tmp));
  }

  uint64_t next_u64() {
    uint64_t r = detail::rotl(s_[0] + s_[3], 23) + s_[0];
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl(s_[3], 45);
    return r;
  }

  // Uniform on the open interval, clamped away from {0,1} so that logit(u)
  // and log(u) stay finite.
  double uniform(double eps = 1e-12) {
    double u = (double)(next_u64() >> 11) * 0x1.0p-53;
    return clamp(u, eps, 1.0 - eps);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n).
  int64_t below(int64_t n) {
    require(n > 0, "RngStream::below requires n > 0");
    return (int64_t)(next_u64() % (uint64_t)n);
  }

  uint64_t key() const { return key_; }

 private:
  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& s : s_) s = detail::splitmix64(x);
    // xoshiro must not start at the all-zero state.
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
  }

  uint64_t key_;
  uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace discgrad
