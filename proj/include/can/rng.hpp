#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace can {

// Seeded 64-bit Mersenne Twister with portable derived draws. The standard
// distributions are implementation-defined, so uniform() and index() are
// computed from raw engine output to keep runs reproducible across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(engine_() % static_cast<std::uint64_t>(n));
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

  // Textual engine state, used by checkpoints.
  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

// Mixes a base seed with a stream tag so sub-components get distinct,
// reproducible streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace can
