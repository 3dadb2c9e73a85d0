#pragma once
/*
 * Deterministic, splittable random streams.
 *
 * Generator: SplitMix64 (Steele, Lea, Flood 2014).
 *
 *   next():   state += 0x9E3779B97F4A7C15
 *             z = state
 *             z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
 *             z = (z ^ (z >> 27)) * 0x94D049BB133111EB
 *             return z ^ (z >> 31)
 *
 * The three-line finalizer above is called mix64(). Stream derivation:
 *
 *   derive(master_seed, stream_id).state = mix64(master_seed ^ mix64(stream_id))
 *
 * mix64(0) == 0, so derive(0, 0) starts from state 0 and reproduces the
 * published SplitMix64 seed-0 sequence (first output 0xE220A8397B1DCDAF).
 *
 * Stream-id registry (second argument of derive):
 *   1 dataset   per-example substreams are derive(seed, 1).split(example_index)
 *   2 init      model parameter initialization
 *   3 dropout   dropout masks
 *   4 shuffle   feature-permutation ablation
 *   5 meta      metalearning (inner init, inner batches, activation-net init)
 *   6 batch     minibatch order during training
 */

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mnist1d {

namespace stream_id {
inline constexpr std::uint64_t kDataset = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kDropout = 3;
inline constexpr std::uint64_t kShuffle = 4;
inline constexpr std::uint64_t kMeta = 5;
inline constexpr std::uint64_t kBatch = 6;
}  // namespace stream_id

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Single-owner random stream. Not safe for concurrent use; derive one per thread.
class RngStream {
 public:
  constexpr RngStream(std::uint64_t state, std::uint64_t stream_id) noexcept
      : state_(state), stream_id_(stream_id) {}

  constexpr std::uint64_t state() const noexcept { return state_; }
  constexpr std::uint64_t stream_id() const noexcept { return stream_id_; }

  constexpr std::uint64_t next_u64() noexcept {
    state_ += kGolden;
    return mix64(state_);
  }

  /// Top 53 bits scaled by 2^-53, so the result lies in [0, 1).
  double next_uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [lo, hi]. Rejection sampling: draws below
  /// (2^64 mod range) are discarded, then the remainder modulo range is used.
  std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw std::invalid_argument("next_int: lo > hi");
    const std::uint64_t range =
        static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
    if (range == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit span
    const std::uint64_t threshold = (0 - range) % range;
    std::uint64_t x = next_u64();
    while (x < threshold) x = next_u64();
    return static_cast<std::int64_t>(static_cast<std::uint64_t>(lo) + x % range);
  }

  /// Box-Muller, cosine branch only: consumes exactly two uniforms per sample.
  /// u1 is taken as 1 - U so it lies in (0, 1] and log(u1) is finite.
  double next_gauss(double mu, double sigma) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("next_gauss: sigma < 0");
    const double u1 = 1.0 - next_uniform();
    const double u2 = next_uniform();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mu + sigma * z;
  }

  /// Fisher-Yates, filling from the back: for i = n-1 .. 1 swap(p[i], p[next_int(0, i)]).
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
      const auto j = static_cast<std::size_t>(next_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

  /// Child stream keyed by `id`, computed from the current state without advancing it.
  RngStream split(std::uint64_t id) const noexcept {
    return RngStream(mix64(state_ ^ mix64(id)), id);
  }

 private:
  std::uint64_t state_;
  std::uint64_t stream_id_;
};

inline RngStream derive(std::uint64_t master_seed, std::uint64_t stream_id) noexcept {
  return RngStream(mix64(master_seed ^ mix64(stream_id)), stream_id);
}

}  // namespace mnist1d
