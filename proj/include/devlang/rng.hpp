#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace devlang {

// Seeded generator whose derived draws are identical on every standard
// library (the distributions in <random> are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double canonical() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * canonical(); }

  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// 64-bit FNV-1a; stable across platforms, used for seeds and vocab hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL);

enum class Phase : std::uint64_t { SelectStoppingPoint = 1, MainTraining = 2 };

// seed = mix(base ^ phase ^ hash(language)); distinct per phase and language.
std::uint64_t derive_run_seed(std::uint64_t base, Phase phase, std::string_view language);

}  // namespace devlang
