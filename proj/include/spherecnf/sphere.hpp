#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "spherecnf/errors.hpp"
#include "spherecnf/rng.hpp"

namespace spherecnf {

/// The hypersphere S^n embedded in R^(n+1).
struct SphereSpec {
  int n = 2;  ///< intrinsic dimension

  int ambient_dim() const noexcept { return n + 1; }

  void validate() const {
    if (n < 1) throw ConfigError("sphere dimension must be >= 1");
  }
};

/// Point on S^n stored in ambient embedding coordinates.
class ManifoldPoint {
 public:
  static constexpr double kUnitNormTol = 1e-9;

  explicit ManifoldPoint(Eigen::VectorXd coords) : coords_(std::move(coords)) {
    if (coords_.size() < 2 || !coords_.allFinite() ||
        std::abs(coords_.norm() - 1.0) > kUnitNormTol) {
      throw NumericError("manifold point is not a finite unit vector");
    }
  }

  /// Builds a point by normalizing an arbitrary ambient vector.
  static ManifoldPoint normalized(const Eigen::VectorXd& v) {
    const double norm = v.norm();
    if (!(norm > 1e-12) || !std::isfinite(norm))
      throw NumericError("cannot normalize a near-zero or non-finite vector");
    return ManifoldPoint(v / norm, Unchecked{});
  }

  const Eigen::VectorXd& coords() const noexcept { return coords_; }
  int ambient_dim() const noexcept { return static_cast<int>(coords_.size()); }
  double operator[](Eigen::Index i) const { return coords_[i]; }

 private:
  struct Unchecked {};
  ManifoldPoint(Eigen::VectorXd coords, Unchecked) : coords_(std::move(coords)) {}

  Eigen::VectorXd coords_;
};

/// Tangent vector attached at a base point, in ambient coordinates.
struct TangentVector {
  static constexpr double kTangencyTol = 1e-9;

  TangentVector(ManifoldPoint base_point, Eigen::VectorXd ambient)
      : base(std::move(base_point)), vec(std::move(ambient)) {
    const double defect = std::abs(base.coords().dot(vec));
    if (defect > kTangencyTol * std::max(1.0, vec.norm()))
      throw NumericError("vector is not tangent at its base point");
  }

  ManifoldPoint base;
  Eigen::VectorXd vec;
};

/// Orthogonal projection of an ambient vector onto the tangent space at q.
inline TangentVector project_tangent(const ManifoldPoint& q,
                                     const Eigen::VectorXd& v) {
  const Eigen::VectorXd& z = q.coords();
  return TangentVector(q, v - z.dot(v) * z);
}

/// Projection retraction: q + step renormalized to the sphere.
inline ManifoldPoint retract(const ManifoldPoint& q,
                             const Eigen::VectorXd& step) {
  Eigen::VectorXd moved = q.coords() + step;
  const double norm = moved.norm();
  if (!(norm > 1e-12) || !std::isfinite(norm))
    throw NumericError("retraction step too large: q + step is degenerate");
  moved /= norm;
  return ManifoldPoint(std::move(moved));
}

/// The n+1 projected coordinate fields at q; entry i is e_i - q_i q.
/// Together they span the tangent space at every point.
inline std::vector<TangentVector> generator_fields(const ManifoldPoint& q) {
  const Eigen::VectorXd& z = q.coords();
  std::vector<TangentVector> fields;
  fields.reserve(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Eigen::VectorXd g = -z[i] * z;
    g[i] += 1.0;
    fields.emplace_back(q, std::move(g));
  }
  return fields;
}

/// Riemannian divergences of the generator fields: entry i is -n * q_i.
inline Eigen::VectorXd generator_divergences(const ManifoldPoint& q) {
  const double n = static_cast<double>(q.ambient_dim() - 1);
  return -n * q.coords();
}

/// Surface area of S^n: 2 pi^((n+1)/2) / Gamma((n+1)/2).
inline double sphere_area(const SphereSpec& spec) {
  spec.validate();
  const double m = static_cast<double>(spec.ambient_dim());
  return std::exp(std::numbers::ln2 + 0.5 * m * std::log(std::numbers::pi) -
                  std::lgamma(0.5 * m));
}

/// Log-density of the uniform distribution w.r.t. the surface measure.
inline double log_uniform_density(const SphereSpec& spec) {
  spec.validate();
  const double m = static_cast<double>(spec.ambient_dim());
  return -(std::numbers::ln2 + 0.5 * m * std::log(std::numbers::pi) -
           std::lgamma(0.5 * m));
}

/// Uniform samples on S^n: normalized standard-normal ambient vectors.
inline std::vector<ManifoldPoint> sample_uniform(const SphereSpec& spec,
                                                 int count, Rng& rng) {
  spec.validate();
  if (count < 1) throw ConfigError("sample count must be >= 1");
  std::vector<ManifoldPoint> points;
  points.reserve(count);
  while (static_cast<int>(points.size()) < count) {
    Eigen::VectorXd v = rng.normal_vector(spec.ambient_dim());
    if (v.norm() <= 1e-12) continue;  // astronomically unlikely; redraw
    points.push_back(ManifoldPoint::normalized(v));
  }
  return points;
}

/// Great-circle distance between two points.
inline double geodesic_distance(const ManifoldPoint& a,
                                const ManifoldPoint& b) {
  const double half_chord = 0.5 * (a.coords() - b.coords()).norm();
  return 2.0 * std::asin(std::clamp(half_chord, 0.0, 1.0));
}

}  // namespace spherecnf
