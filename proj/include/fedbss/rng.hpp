#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedbss {

// Independent random streams derived from one master seed. Each consumer
// names its stream and a tuple of counters (round, client, epoch, ...), so
// the draws of one stream never depend on how many draws another made.
enum class Stream : std::uint64_t {
  kInit = 1,
  kPartition = 2,
  kNoise = 3,
  kClientSampling = 4,
  kShuffle = 5,
  kSynthMeans = 6,
  kSynthSamples = 7,
  kSubset = 8,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                 std::initializer_list<std::uint64_t> counters = {}) {
  std::uint64_t key = splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(stream)));
  for (std::uint64_t c : counters) key = splitmix64(key ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return key;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, Stream stream,
                    std::initializer_list<std::uint64_t> counters = {}) {
  return Rng(derive_seed(master, stream, counters));
}

}  // namespace fedbss
