#pragma once
// Shared plumbing: error types, the project RNG and a small parallel-for.

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lnl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File could not be opened / written.
struct IoError : Error {
  using Error::Error;
};

// Malformed file contents (bad magic, bad header fields, truncation).
struct ParseError : Error {
  using Error::Error;
};

// Entropy payload damaged: mid-symbol exhaustion, impossible code, garbage.
struct StreamError : Error {
  using Error::Error;
};

// Tensor / image dimension contract violated.
struct ShapeError : Error {
  using Error::Error;
};

// xoshiro256** seeded via splitmix64. The algorithm is pinned here (not
// delegated to std::mt19937 + distributions) so that streams are identical
// across platforms and the four-word state serializes into checkpoints.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      word = z ^ (z >> 31);
    }
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 24 significant bits; exact in float.
  float next_float() {
    return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
  }

  double next_double() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }

  // Uniform in [0, n). Rejection-free multiply-shift; n must be > 0.
  uint64_t next_below(uint64_t n) {
    // Debiased multiply (Lemire). Fixed algorithm, do not change: shuffles
    // feed checkpointed training runs.
    uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto lo = static_cast<uint64_t>(m);
    if (lo < n) {
      const uint64_t t = (0 - n) % n;
      while (lo < t) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<uint64_t>(m);
      }
    }
    return static_cast<uint64_t>(m >> 64);
  }

  const uint64_t* state() const { return state_; }
  void set_state(const uint64_t s[4]) {
    for (int i = 0; i < 4; ++i) state_[i] = s[i];
  }

 private:
  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
  uint64_t state_[4];
};

// Number of worker threads: LNL_THREADS env var if set, else hardware count.
inline int thread_budget() {
  if (const char* env = std::getenv("LNL_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(i) for i in [0, n). fn(i) must only write state owned by index i;
// results are then independent of the thread schedule.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  const size_t workers =
      std::min<size_t>(static_cast<size_t>(thread_budget()), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t t = 0; t < workers; ++t) {
    pool.emplace_back([=, &fn] {
      for (size_t i = t; i < n; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace lnl
