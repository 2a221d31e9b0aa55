#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace eclock {

// Independent random streams drawn within one trial.
enum class Stream : std::uint32_t {
  Noise = 1,
  Measurement = 2,
  Bootstrap = 3,
};

/// Counter-based generator (Philox4x32-10).
///
/// The 128-bit counter is split into a 64-bit block index and a 64-bit
/// stream id, so `(seed, stream id)` addresses an independent sequence
/// without any shared state. Trial workers key their generators by
/// `(master seed, trial index, purpose)`, which makes results independent
/// of how trials are scheduled across threads.
class Rng {
 public:
  using result_type = std::uint64_t;

  Rng(std::uint64_t seed, std::uint64_t stream_id);

  /// Generator for one purpose within one trial.
  static Rng for_trial(std::uint64_t seed, std::uint64_t trial, Stream purpose);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Skips `blocks` 128-bit output blocks.
  void discard_blocks(std::uint64_t blocks);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> out_{};
  int next_ = 4;
};

}  // namespace eclock
