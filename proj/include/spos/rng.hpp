#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

namespace spos {

// Counter-based random streams built on Philox4x32-10. Every consumer of
// randomness derives its own stream from (root seed, label, purpose), so
// particles can be processed in any order or in parallel and still draw
// identical values.
namespace rng_detail {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void philox4x32_10(const std::array<uint32_t, 4>& ctr,
                          const std::array<uint32_t, 2>& key,
                          std::array<uint32_t, 4>& out) {
  uint32_t x0 = ctr[0], x1 = ctr[1], x2 = ctr[2], x3 = ctr[3];
  uint32_t k0 = key[0], k1 = key[1];
  for (int round = 0; round < 10; ++round) {
    const uint64_t p0 = static_cast<uint64_t>(kPhiloxM0) * x0;
    const uint64_t p1 = static_cast<uint64_t>(kPhiloxM1) * x2;
    const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32);
    const uint32_t lo0 = static_cast<uint32_t>(p0);
    const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32);
    const uint32_t lo1 = static_cast<uint32_t>(p1);
    const uint32_t y0 = hi1 ^ x1 ^ k0;
    const uint32_t y1 = lo1;
    const uint32_t y2 = hi0 ^ x3 ^ k1;
    const uint32_t y3 = lo0;
    x0 = y0;
    x1 = y1;
    x2 = y2;
    x3 = y3;
    k0 += kPhiloxW0;
    k1 += kPhiloxW1;
  }
  out = {x0, x1, x2, x3};
}

inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline uint64_t absorb(uint64_t state, uint64_t value) {
  return mix64(state ^ (value + 0x9E3779B97F4A7C15ull + (state << 6) + (state >> 2)));
}

}  // namespace rng_detail

// Stream purposes; part of the stream key so the same (seed, label) pair
// yields unrelated sequences for unrelated uses.
enum class StreamPurpose : uint64_t {
  Init = 1,
  Minibatch = 2,
  Noise = 3,
  Epoch = 4,
  Data = 5,
  Split = 6,
};

class RngStream {
 public:
  RngStream() : RngStream(0, 0, StreamPurpose::Data) {}

  RngStream(uint64_t root_seed, uint64_t label, StreamPurpose purpose) {
    using namespace rng_detail;
    uint64_t s = absorb(0x853C49E6748FEA9Bull, root_seed);
    s = absorb(s, label);
    s = absorb(s, static_cast<uint64_t>(purpose));
    const uint64_t key64 = mix64(s);
    const uint64_t hi = mix64(s ^ 0xDA3E39CB94B95BDBull);
    key_ = {static_cast<uint32_t>(key64), static_cast<uint32_t>(key64 >> 32)};
    counter_hi_ = hi;
    block_ = 0;
    buffer_pos_ = 2;
    has_cached_normal_ = false;
    cached_normal_ = 0.0;
  }

  uint64_t next_u64() {
    if (buffer_pos_ >= 2) refill();
    return buffer_[buffer_pos_++];
  }

  // Uniform on the open interval (0, 1); never returns an endpoint, so it is
  // safe inside log() for Box-Muller.
  double uniform01() {
    const uint64_t bits = next_u64() >> 11;
    return (static_cast<double>(bits) + 0.5) * (1.0 / 9007199254740992.0);
  }

  // Uniform integer in [0, n). Fixed-point multiply keeps the map from raw
  // bits deterministic across platforms.
  uint64_t uniform_int(uint64_t n) {
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<uint64_t>(wide >> 64);
  }

  double normal() {
    if (has_cached_normal_) {
      has_cached_normal_ = false;
      return cached_normal_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(angle);
    has_cached_normal_ = true;
    return r * std::cos(angle);
  }

  template <typename Derived>
  void fill_normal(Eigen::DenseBase<Derived> const& out_) {
    auto& out = const_cast<Eigen::DenseBase<Derived>&>(out_);
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = normal();
  }

 private:
  void refill() {
    using namespace rng_detail;
    const std::array<uint32_t, 4> ctr = {
        static_cast<uint32_t>(block_), static_cast<uint32_t>(block_ >> 32),
        static_cast<uint32_t>(counter_hi_), static_cast<uint32_t>(counter_hi_ >> 32)};
    std::array<uint32_t, 4> out;
    philox4x32_10(ctr, key_, out);
    buffer_[0] = (static_cast<uint64_t>(out[1]) << 32) | out[0];
    buffer_[1] = (static_cast<uint64_t>(out[3]) << 32) | out[2];
    ++block_;
    buffer_pos_ = 0;
  }

  std::array<uint32_t, 2> key_;
  uint64_t counter_hi_;
  uint64_t block_;
  std::array<uint64_t, 2> buffer_;
  int buffer_pos_;
  bool has_cached_normal_;
  double cached_normal_;
};

// Derives a 64-bit sub-seed; used e.g. to key one experiment run from
// (root seed, algorithm name hash, seed index).
inline uint64_t derive_seed(uint64_t root, uint64_t a, uint64_t b = 0) {
  using namespace rng_detail;
  return mix64(absorb(absorb(absorb(0x2545F4914F6CDD1Dull, root), a), b));
}

inline uint64_t hash_string(const std::string& s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace spos
