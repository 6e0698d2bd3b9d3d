#pragma once

#include <cstdint>
#include <random>

namespace dforest {

using Engine = std::mt19937_64;

// splitmix64 finalizer; used to derive independent streams from one seed.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Stream ids, so that e.g. adding an epoch never perturbs initialization.
enum class Stream : std::uint64_t {
  split = 1,
  forest_init = 2,
  attention_init = 3,
  shuffle = 1000,  // + epoch
};

inline Engine make_engine(std::uint64_t seed, Stream s, std::uint64_t offset = 0) {
  return Engine(mix_seed(seed, static_cast<std::uint64_t>(s) + offset));
}

}  // namespace dforest
