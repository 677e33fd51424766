#pragma once

// Deterministic randomness. Every stochastic component (init, minibatch
// sampling, SGLD noise, chain seeding) draws from an mt19937_64 whose seed is
// derived from (base seed, stream id) via splitmix64, so independent streams
// never share state and reruns are bit-identical.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace losskern {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x517cc1b727220a95ull));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(derive_seed(seed, stream));
}

// k distinct indices out of [0, n), partial Fisher-Yates.
inline std::vector<int> sample_without_replacement(int n, int k, Rng& rng) {
  if (k < 0 || k > n) throw std::invalid_argument("sample_without_replacement: k out of range");
  std::vector<int> pool(n);
  for (int i = 0; i < n; ++i) pool[i] = i;
  std::vector<int> out(k);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> dist(i, n - 1);
    std::swap(pool[i], pool[dist(rng)]);
    out[i] = pool[i];
  }
  return out;
}

}  // namespace losskern
