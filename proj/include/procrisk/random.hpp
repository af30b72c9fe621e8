#pragma once

#include "procrisk/filtration.hpp"

#include <cstdint>
#include <random>

namespace procrisk {

/// Seeded generator with platform-independent draws (only raw mt19937_64
/// output is used, never the implementation-defined std distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Inclusive range.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  bool coin(double p = 0.5) { return uniform() < p; }
  /// num/den with num in [lo, hi] and den in [1, max_den].
  Rational rational(int lo, int hi, int max_den) {
    const int den = uniform_int(1, max_den);
    return Rational(uniform_int(lo * den, hi * den), den);
  }
  /// Independent stream derived from this generator's seed and a tag.
  static Rng stream(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 engine_;
};

/// Random non-recombining tree: depth in [1, max_depth], per-node branching in
/// [1, max_branching] with small positive integer weights normalized to one.
FiltrationTree random_tree(Rng& rng, int max_depth, int max_branching, int min_depth = 1);

/// Node values num/den with |num/den| <= range.
AdaptedProcess<Rational> random_process(Rng& rng, const FiltrationTree& tree, int range = 5, int max_den = 4);

/// Non-decreasing a with a_{0-} = 0 and E[a_T] = 1. Increments are zero with
/// probability `zero_prob`, otherwise small integers; then normalized.
AdaptedProcess<Rational> random_z1_measure(Rng& rng, const FiltrationTree& tree, double zero_prob = 0.5);

/// As random_z1_measure, but each increment is shared by all siblings.
/// `allow_root_mass` controls whether a_0 may be positive.
AdaptedProcess<Rational> random_predictable_measure(Rng& rng, const FiltrationTree& tree,
                                                    double zero_prob = 0.5, bool allow_root_mass = true);

/// Non-negative martingale with L_0 = `start`, closing value random on leaves
/// (some leaves zero when `zeros` is set).
AdaptedProcess<Rational> random_martingale(Rng& rng, const FiltrationTree& tree, const Rational& start,
                                           bool zeros = true);

/// Non-increasing process in [0,1] with D_{0-} = 1.
AdaptedProcess<Rational> random_discount(Rng& rng, const FiltrationTree& tree, bool predictable = false,
                                         bool no_jump_at_zero = false);

}  // namespace procrisk
