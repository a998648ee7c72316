#pragma once

#include <cstdint>
#include <random>

namespace robustcnn {

// splitmix64; used to derive independent component streams from one seed.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based splitter: every consumer of randomness gets its own stream id,
// so adding a consumer never perturbs the draws of another.
inline uint64_t split_seed(uint64_t seed, uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
}

inline uint64_t split_seed(uint64_t seed, uint64_t stream, uint64_t counter) {
  return split_seed(split_seed(seed, stream), counter);
}

inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream) {
  return std::mt19937_64(split_seed(seed, stream));
}

// Fixed stream ids, one per randomness consumer.
namespace rng_stream {
constexpr uint64_t kWeightInit = 1;
constexpr uint64_t kShuffle = 2;
constexpr uint64_t kMixup = 3;
constexpr uint64_t kErasing = 4;
constexpr uint64_t kDropPath = 5;
constexpr uint64_t kCorrupt = 6;
constexpr uint64_t kSynthData = 7;
}  // namespace rng_stream

}  // namespace robustcnn
