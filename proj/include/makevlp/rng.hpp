#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace makevlp {

// Deterministic splitmix64 stream. The standard library's distributions are
// not pinned across implementations, so every draw here is derived from raw
// bits only. State is a single u64, which keeps checkpoint round-trips exact.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 24 bits of mantissa so the result is exact in float.
  float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Fixed-point multiply keeps this branch-free
  // and identical everywhere; the bias at n << 2^64 is immaterial here.
  uint64_t next_below(uint64_t n) {
    return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Symmetric uniform in [-limit, limit].
  float next_symmetric(float limit) { return (2.0f * next_float() - 1.0f) * limit; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Derive an independent stream, e.g. one per epoch or per record.
  Rng fork(uint64_t salt) const {
    Rng r(state_ ^ (0xd1342543de82ef95ULL * (salt + 1)));
    r.next_u64();
    return r;
  }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

  std::string state_string() const { return std::to_string(state_); }
  static Rng from_state_string(const std::string& s) {
    Rng r;
    r.state_ = std::stoull(s);
    return r;
  }

 private:
  uint64_t state_;
};

// FNV-1a 64-bit. Pinned here because token ids must be stable across runs
// and platforms.
inline uint64_t fnv1a64(const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 14695981039346656037ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace makevlp
