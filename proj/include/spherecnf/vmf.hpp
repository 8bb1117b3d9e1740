#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spherecnf/errors.hpp"
#include "spherecnf/sphere.hpp"

namespace spherecnf {

/// log I_1(x), modified Bessel function of the first kind.
///
/// Power series below x = 20 (all-positive terms, no cancellation), scaled
/// asymptotic expansion above, assembled in the log domain so large
/// concentrations do not overflow.
inline double log_bessel_i1(double x) {
  if (!(x >= 0.0)) throw NumericError("log_bessel_i1 requires x >= 0");
  if (x == 0.0) return -std::numeric_limits<double>::infinity();
  if (x < 20.0) {
    // I_1(x) = sum_k (x/2)^(2k+1) / (k! (k+1)!)
    const double q = 0.25 * x * x;
    double term = 0.5 * x;
    double sum = term;
    for (int k = 1; k < 200; ++k) {
      term *= q / (static_cast<double>(k) * (k + 1));
      sum += term;
      if (term < sum * 1e-18) break;
    }
    return std::log(sum);
  }
  // I_1(x) ~ e^x / sqrt(2 pi x) * sum_k a_k, a_0 = 1,
  // a_k = a_{k-1} * ((2k-1)^2 - 4) / (8 k x); truncated at the smallest term.
  double term = 1.0;
  double sum = 1.0;
  double prev_mag = std::numeric_limits<double>::infinity();
  for (int k = 1; k < 60; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= (odd * odd - 4.0) / (8.0 * k * x);
    const double mag = std::abs(term);
    if (mag >= prev_mag) break;  // asymptotic series started diverging
    sum += term;
    prev_mag = mag;
    if (mag < 1e-17 * std::abs(sum)) break;
  }
  return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
}

/// log C_d(kappa) with C_d(k) = k^(d/2-1) / ((2 pi)^(d/2) I_{d/2-1}(k)),
/// the normalizer of the von Mises-Fisher density w.r.t. surface measure.
/// Supported ambient dimensions: 3 (S^2, closed form via sinh) and 4 (S^3).
inline double vmf_log_normalizer(double kappa, int d) {
  if (!(kappa > 0.0)) throw ConfigError("vMF concentration must be positive");
  const double log2pi = std::log(2.0 * std::numbers::pi);
  if (d == 3) {
    // C_3(k) = k / (4 pi sinh k); log sinh in a form accurate for both tiny
    // and huge concentrations
    const double log_sinh =
        kappa - std::numbers::ln2 + std::log(-std::expm1(-2.0 * kappa));
    return std::log(kappa) - std::log(4.0 * std::numbers::pi) - log_sinh;
  }
  if (d == 4) {
    return std::log(kappa) - 2.0 * log2pi - log_bessel_i1(kappa);
  }
  throw ConfigError("vMF density supports ambient dimension 3 or 4");
}

/// One von Mises-Fisher component: mean direction and concentration.
struct VmfComponent {
  ManifoldPoint mu;
  double kappa = 1.0;

  void validate() const {
    if (!(kappa > 0.0)) throw ConfigError("vMF concentration must be positive");
  }
};

/// Normalized log-density of a single component w.r.t. the surface measure.
inline double vmf_log_density(const VmfComponent& comp, const ManifoldPoint& x,
                              int d) {
  comp.validate();
  if (comp.mu.ambient_dim() != d || x.ambient_dim() != d)
    throw ConfigError("vMF dimension mismatch");
  return comp.kappa * comp.mu.coords().dot(x.coords()) +
         vmf_log_normalizer(comp.kappa, d);
}

/// Mixture of von Mises-Fisher components with normalized weights.
struct VmfMixture {
  std::vector<VmfComponent> components;
  Eigen::VectorXd weights;

  int ambient_dim() const {
    return components.empty() ? 0 : components.front().mu.ambient_dim();
  }

  void validate() const {
    if (components.empty())
      throw ConfigError("mixture needs at least one component");
    if (weights.size() != static_cast<Eigen::Index>(components.size()))
      throw ConfigError("mixture weight count does not match components");
    for (Eigen::Index k = 0; k < weights.size(); ++k)
      if (!(weights[k] > 0.0)) throw ConfigError("mixture weights must be positive");
    if (std::abs(weights.sum() - 1.0) > 1e-12)
      throw ConfigError("mixture weights must sum to 1");
    const int d = ambient_dim();
    for (const auto& c : components) {
      c.validate();
      if (c.mu.ambient_dim() != d)
        throw ConfigError("mixture components have inconsistent dimensions");
    }
  }
};

/// log sum_k w_k p_k(x) via max-shifted log-sum-exp.
inline double mixture_log_density(const VmfMixture& mix,
                                  const ManifoldPoint& x) {
  const int d = mix.ambient_dim();
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(mix.components.size());
  for (std::size_t k = 0; k < mix.components.size(); ++k) {
    terms[k] = std::log(mix.weights[static_cast<Eigen::Index>(k)]) +
               vmf_log_density(mix.components[k], x, d);
    max_term = std::max(max_term, terms[k]);
  }
  double acc = 0.0;
  for (double v : terms) acc += std::exp(v - max_term);
  return max_term + std::log(acc);
}

struct DensityValueGrad {
  double log_density = 0.0;
  Eigen::VectorXd grad;  ///< ambient gradient of the log-density
};

/// Log-density and its ambient gradient: grad = sum_k r_k kappa_k mu_k with
/// r_k the component responsibilities.
inline DensityValueGrad mixture_log_density_grad(const VmfMixture& mix,
                                                 const ManifoldPoint& x) {
  const int d = mix.ambient_dim();
  DensityValueGrad out;
  out.log_density = mixture_log_density(mix, x);
  out.grad = Eigen::VectorXd::Zero(d);
  for (std::size_t k = 0; k < mix.components.size(); ++k) {
    const double lk = std::log(mix.weights[static_cast<Eigen::Index>(k)]) +
                      vmf_log_density(mix.components[k], x, d);
    const double resp = std::exp(lk - out.log_density);
    out.grad += resp * mix.components[k].kappa * mix.components[k].mu.coords();
  }
  return out;
}

/// Target specification file: flat key = value lines.
///
///   # comment
///   dim = 3
///   component = <weight> <mu_1> ... <mu_d> <kappa>
///   component = ...
///
/// Means must be unit vectors (1e-9 tolerance; renormalized exactly on load),
/// weights must sum to 1 within 1e-12.
inline VmfMixture load_target(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open target file: " + path);

  int dim = 0;
  std::vector<VmfComponent> components;
  std::vector<double> weights;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    std::istringstream key_stream(line.substr(0, eq));
    std::string key;
    key_stream >> key;
    std::istringstream value(line.substr(eq + 1));
    if (key == "dim") {
      if (!(value >> dim))
        throw ConfigError(path + ": invalid dim value");
    } else if (key == "component") {
      if (dim < 2)
        throw ConfigError(path + ": dim must be declared before components");
      double w, kappa;
      Eigen::VectorXd mu(dim);
      if (!(value >> w)) throw ConfigError(path + ": bad component weight");
      for (int i = 0; i < dim; ++i)
        if (!(value >> mu[i]))
          throw ConfigError(path + ": bad component mean");
      if (!(value >> kappa)) throw ConfigError(path + ": bad component kappa");
      if (std::abs(mu.norm() - 1.0) > ManifoldPoint::kUnitNormTol)
        throw ConfigError(path + ": component mean is not unit norm");
      components.push_back(VmfComponent{ManifoldPoint::normalized(mu), kappa});
      weights.push_back(w);
    } else {
      throw ConfigError(path + ": unknown key '" + key + "'");
    }
  }
  if (dim != 3 && dim != 4)
    throw ConfigError(path + ": dim must be 3 (S^2) or 4 (S^3)");
  VmfMixture mix;
  mix.components = std::move(components);
  mix.weights = Eigen::Map<Eigen::VectorXd>(weights.data(), weights.size());
  mix.validate();
  return mix;
}

inline void save_target(const std::string& path, const VmfMixture& mix) {
  mix.validate();
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write target file: " + path);
  out.precision(17);
  out << "dim = " << mix.ambient_dim() << "\n";
  for (std::size_t k = 0; k < mix.components.size(); ++k) {
    out << "component = " << mix.weights[static_cast<Eigen::Index>(k)];
    for (int i = 0; i < mix.ambient_dim(); ++i)
      out << " " << mix.components[k].mu[i];
    out << " " << mix.components[k].kappa << "\n";
  }
  if (!out) throw ConfigError("failed writing target file: " + path);
}

/// The S^2 benchmark target: four equal-weight kappa=10 components at the
/// vertices of a regular tetrahedron.
inline VmfMixture benchmark_target_s2() {
  const double a = 1.0 / std::sqrt(3.0);
  VmfMixture mix;
  auto add = [&](double x, double y, double z) {
    Eigen::VectorXd mu(3);
    mu << x * a, y * a, z * a;
    mix.components.push_back(
        VmfComponent{ManifoldPoint::normalized(mu), 10.0});
  };
  add(1, 1, 1);
  add(1, -1, -1);
  add(-1, 1, -1);
  add(-1, -1, 1);
  mix.weights = Eigen::VectorXd::Constant(4, 0.25);
  return mix;
}

/// The S^3 benchmark target: four equal-weight kappa=10 components at
/// (+-1,0,0,0) and (0,+-1,0,0).
inline VmfMixture benchmark_target_s3() {
  VmfMixture mix;
  auto add = [&](int axis, double sign) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(4);
    mu[axis] = sign;
    mix.components.push_back(VmfComponent{ManifoldPoint(mu), 10.0});
  };
  add(0, 1.0);
  add(0, -1.0);
  add(1, 1.0);
  add(1, -1.0);
  mix.weights = Eigen::VectorXd::Constant(4, 0.25);
  return mix;
}

}  // namespace spherecnf
