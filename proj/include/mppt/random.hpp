#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace mppt {

// xoshiro256** seeded through splitmix64. Every derived quantity (uniform,
// normal, bounded int, shuffle) is computed here so that sequences are
// identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  // Independent stream for a named purpose ("data-order", "dropout", ...).
  static Rng stream(std::uint64_t seed, std::string_view name);

  std::uint64_t next();
  double uniform();                       // [0, 1)
  double normal();                        // standard normal, Box-Muller
  std::uint64_t below(std::uint64_t n);   // uniform in [0, n), n > 0

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mppt
