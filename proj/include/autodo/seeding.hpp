#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace autodo {

/// Independent stream for a tuple of identifiers (run seed, epoch, batch, ...).
inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  words.reserve(parts.size() * 2);
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace autodo
