#include "eclock/rng.hpp"

namespace eclock {
namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

// SplitMix64 finalizer, used to spread small stream ids over the key space.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream_id)
    : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
      counter_{0, 0, static_cast<std::uint32_t>(stream_id),
               static_cast<std::uint32_t>(stream_id >> 32)} {}

Rng Rng::for_trial(std::uint64_t seed, std::uint64_t trial, Stream purpose) {
  const std::uint64_t stream = mix64(trial * 0x100000001B3ULL + static_cast<std::uint64_t>(purpose));
  return Rng(seed, stream);
}

void Rng::refill() {
  std::array<std::uint32_t, 4> ctr = counter_;
  std::array<std::uint32_t, 2> key = key_;
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  out_ = ctr;
  next_ = 0;
  // 64-bit block counter in the low words; stream id stays in the high words.
  if (++counter_[0] == 0) ++counter_[1];
}

Rng::result_type Rng::operator()() {
  if (next_ >= 4) refill();
  const std::uint64_t lo = out_[next_];
  const std::uint64_t hi = out_[next_ + 1];
  next_ += 2;
  return (hi << 32) | lo;
}

double Rng::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

void Rng::discard_blocks(std::uint64_t blocks) {
  const std::uint64_t c = (static_cast<std::uint64_t>(counter_[1]) << 32 | counter_[0]) + blocks;
  counter_[0] = static_cast<std::uint32_t>(c);
  counter_[1] = static_cast<std::uint32_t>(c >> 32);
  next_ = 4;
}

}  // namespace eclock
