#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Core>

#include "spherecnf/errors.hpp"

namespace spherecnf {

/// Deterministic random stream with a serializable state.
///
/// Normal deviates use plain Box-Muller (two uniforms per draw, no cached
/// second value), so the stream position is a pure function of the number of
/// draws and checkpointed states restore exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Standard normal deviate.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  Eigen::VectorXd normal_vector(Eigen::Index dim) {
    Eigen::VectorXd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal();
    return v;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t integer() { return engine_(); }

  std::string save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void restore_state(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (!is) throw ConfigError("invalid rng state string");
  }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent stream seed from (seed, salt). Used for evaluation
/// streams that must not perturb the training stream and must be a pure
/// function of the epoch so resumed runs evaluate identically.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL + salt * 0xbf58476d1ce4e5b9ULL);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace spherecnf
