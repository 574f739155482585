#pragma once

// Deterministic, counter-based randomness.  Every stochastic draw in the
// library comes from a stream keyed by (master seed, stream tag, trial,
// user), so results are independent of evaluation order and thread count.
//
// Wire contract (bit-exact across runs and platforms):
//   mix64(x): x ^= x>>30; x *= 0xbf58476d1ce4e5b9; x ^= x>>27;
//             x *= 0x94d049bb133111eb; x ^= x>>31
//   stream output n (1-based): mix64(key + n * 0x9e3779b97f4a7c15)
//   key derivation: derive_key(key, word) =
//             mix64(key ^ (0x9e3779b97f4a7c15 + word * 0xd1b54a32d192ed03))
//   unit interval: (u >> 11) * 2^-53  in [0, 1)

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>

namespace hashbeam {

using Complex = std::complex<double>;

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

constexpr std::uint64_t derive_key(std::uint64_t key, std::uint64_t word) noexcept {
  return mix64(key ^ (kGolden + word * 0xd1b54a32d192ed03ull));
}

// Stream tags.  Top-level tags separate calibration from evaluation so the
// two never share randomness; per-user tags separate draw purposes.
namespace tag {
inline constexpr std::uint64_t snr_cal = 0x01;
inline constexpr std::uint64_t snr_verify = 0x02;
inline constexpr std::uint64_t stat_cal = 0x03;
inline constexpr std::uint64_t eval = 0x04;
inline constexpr std::uint64_t sweep_point = 0x05;
inline constexpr std::uint64_t message = 0x11;
inline constexpr std::uint64_t channel = 0x12;
inline constexpr std::uint64_t noise = 0x13;
}  // namespace tag

class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64() { return mix64(key_ + (++count_) * kGolden); }

  // Uniform in [0, 1), 53-bit resolution.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log() argument.
  double next_unit_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Uniform phase in [0, 2*pi).
  double next_phase() { return 2.0 * std::numbers::pi * next_unit(); }

  // Circularly symmetric complex normal, unit total variance
  // (real and imaginary parts each N(0, 1/2)).  Box-Muller.
  std::complex<double> next_cnormal() {
    const double r = std::sqrt(-std::log(next_unit_pos()));
    const double phi = next_phase();
    return {r * std::cos(phi), r * std::sin(phi)};
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t count() const { return count_; }

 private:
  std::uint64_t key_;
  std::uint64_t count_ = 0;
};

// Stream for one (class, trial) pair under a master seed.
inline std::uint64_t trial_key(std::uint64_t master_seed, std::uint64_t class_tag,
                               std::uint64_t trial_index) {
  return derive_key(derive_key(master_seed, class_tag), trial_index);
}

// Stream for one (purpose, user) pair within a trial.
inline RngStream user_stream(std::uint64_t trial_key_, std::uint64_t purpose_tag,
                             std::uint64_t user_index) {
  return RngStream(derive_key(derive_key(trial_key_, purpose_tag), user_index));
}

}  // namespace hashbeam
