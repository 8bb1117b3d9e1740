#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spherecnf/coefficient_net.hpp"
#include "spherecnf/flow.hpp"
#include "spherecnf/sphere.hpp"
#include "spherecnf/vector_field.hpp"

namespace spherecnf {

/// Outcome of one self-diagnostic.
struct CheckResult {
  std::string name;
  double observed = 0.0;  ///< worst observed error
  double tolerance = 0.0;
  bool pass = false;
};

/// Net with all parameters drawn uniformly from [-bound, bound]; used by the
/// randomized diagnostics, which assume fields of moderate magnitude.
inline CoefficientNet random_bounded_net(int ambient_dim,
                                         const std::vector<int>& hidden,
                                         std::uint64_t seed, double bound) {
  CoefficientNet net = make_net(ambient_dim, hidden, seed);
  Rng rng(derive_seed(seed, 0x7e57));
  for (auto& w : net.weights)
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w.data()[i] = rng.uniform(-bound, bound);
  for (auto& b : net.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i)
      b[i] = rng.uniform(-bound, bound);
  return net;
}

namespace detail {

// Chart-based divergence oracle: (1/sqrt(g)) d_j (sqrt(g) X^j) evaluated by
// central differences in spherical coordinates. Independent of the
// closed-form divergence path: it only ever evaluates field velocities.

inline Eigen::Vector3d s2_embed(double theta, double phi) {
  return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
          std::cos(theta)};
}

inline Eigen::Vector2d s2_components(FieldEngine& engine, double t,
                                     double theta, double phi) {
  const Eigen::Vector3d z = s2_embed(theta, phi);
  Eigen::VectorXd x(3);
  engine.velocity(t, z, x);
  const Eigen::Vector3d d_theta{std::cos(theta) * std::cos(phi),
                                std::cos(theta) * std::sin(phi),
                                -std::sin(theta)};
  const Eigen::Vector3d d_phi{-std::sin(theta) * std::sin(phi),
                              std::sin(theta) * std::cos(phi), 0.0};
  const double s = std::sin(theta);
  return {x.dot(d_theta), x.dot(d_phi) / (s * s)};
}

inline Eigen::Vector4d s3_embed(double t1, double t2, double phi) {
  const double s1 = std::sin(t1);
  return {std::cos(t1), s1 * std::cos(t2), s1 * std::sin(t2) * std::cos(phi),
          s1 * std::sin(t2) * std::sin(phi)};
}

inline Eigen::Vector3d s3_components(FieldEngine& engine, double t, double t1,
                                     double t2, double phi) {
  const double s1 = std::sin(t1), c1 = std::cos(t1);
  const double s2 = std::sin(t2), c2 = std::cos(t2);
  const double sp = std::sin(phi), cp = std::cos(phi);
  const Eigen::Vector4d z{c1, s1 * c2, s1 * s2 * cp, s1 * s2 * sp};
  Eigen::VectorXd x(4);
  engine.velocity(t, z, x);
  const Eigen::Vector4d d1{-s1, c1 * c2, c1 * s2 * cp, c1 * s2 * sp};
  const Eigen::Vector4d d2{0.0, -s1 * s2, s1 * c2 * cp, s1 * c2 * sp};
  const Eigen::Vector4d d3{0.0, 0.0, -s1 * s2 * sp, s1 * s2 * cp};
  return {x.dot(d1), x.dot(d2) / (s1 * s1), x.dot(d3) / (s1 * s1 * s2 * s2)};
}

}  // namespace detail

/// Finite-difference Riemannian divergence of the assembled field at q,
/// computed in a spherical coordinate chart (step `h`, central differences).
/// Only valid away from the chart poles; pair with
/// sample_point_away_from_poles.
inline double chart_divergence_fd(const CoefficientNet& net, double t,
                                  const ManifoldPoint& q, double h = 1e-4) {
  FieldEngine engine;
  engine.bind(net);
  const Eigen::VectorXd& z = q.coords();
  if (q.ambient_dim() == 3) {
    const double theta = std::acos(std::clamp(z[2], -1.0, 1.0));
    const double phi = std::atan2(z[1], z[0]);
    auto comp = [&](double th, double ph) {
      return detail::s2_components(engine, t, th, ph);
    };
    const double dtheta =
        (std::sin(theta + h) * comp(theta + h, phi)[0] -
         std::sin(theta - h) * comp(theta - h, phi)[0]) /
        (2.0 * h);
    const double dphi =
        (comp(theta, phi + h)[1] - comp(theta, phi - h)[1]) / (2.0 * h);
    return dtheta / std::sin(theta) + dphi;
  }
  if (q.ambient_dim() == 4) {
    const double t1 = std::acos(std::clamp(z[0], -1.0, 1.0));
    const double s1 = std::sin(t1);
    const double t2 = std::acos(std::clamp(z[1] / s1, -1.0, 1.0));
    const double phi = std::atan2(z[3], z[2]);
    auto sqrt_g = [](double a, double b) {
      return std::sin(a) * std::sin(a) * std::sin(b);
    };
    auto comp = [&](double a, double b, double c) {
      return detail::s3_components(engine, t, a, b, c);
    };
    const double g0 = sqrt_g(t1, t2);
    const double d1 = (sqrt_g(t1 + h, t2) * comp(t1 + h, t2, phi)[0] -
                       sqrt_g(t1 - h, t2) * comp(t1 - h, t2, phi)[0]) /
                      (2.0 * h);
    const double d2 = (sqrt_g(t1, t2 + h) * comp(t1, t2 + h, phi)[1] -
                       sqrt_g(t1, t2 - h) * comp(t1, t2 - h, phi)[1]) /
                      (2.0 * h);
    const double d3 =
        (comp(t1, t2, phi + h)[2] - comp(t1, t2, phi - h)[2]) / (2.0 * h) * g0;
    return (d1 + d2 + d3) / g0;
  }
  throw ConfigError("chart divergence oracle supports S^2 and S^3 only");
}

/// Uniform sample conditioned to stay `cap` radians away from the coordinate
/// singularities of the chart used by chart_divergence_fd.
inline ManifoldPoint sample_point_away_from_poles(const SphereSpec& spec,
                                                  Rng& rng, double cap = 0.1) {
  if (spec.n != 2 && spec.n != 3)
    throw ConfigError("pole-avoiding sampler supports S^2 and S^3 only");
  const double margin = std::cos(cap);
  for (int attempt = 0; attempt < 100000; ++attempt) {
    ManifoldPoint q = sample_uniform(spec, 1, rng).front();
    if (spec.n == 2) {
      if (std::abs(q[2]) < margin) return q;
    } else {
      const double s1 = std::sqrt(std::max(0.0, 1.0 - q[0] * q[0]));
      if (std::abs(q[0]) < margin && s1 > 0.0 && std::abs(q[1] / s1) < margin)
        return q;
    }
  }
  throw NumericError("failed to sample a point away from chart poles");
}

/// Closed-form divergence vs the chart finite-difference oracle on random
/// (net, point) pairs, split between S^2 and S^3.
inline CheckResult check_divergence(std::uint64_t seed, int pairs = 100,
                                    double tol = 1e-4) {
  double worst = 0.0;
  Rng rng(seed);
  for (int i = 0; i < pairs; ++i) {
    const int m = (i % 2 == 0) ? 3 : 4;
    const CoefficientNet net =
        random_bounded_net(m, {10, 10}, derive_seed(seed, 100 + i), 1.0);
    const SphereSpec spec{m - 1};
    const ManifoldPoint q = sample_point_away_from_poles(spec, rng);
    const double t = rng.uniform();
    const double closed = eval_divergence(net, t, q);
    const double fd = chart_divergence_fd(net, t, q);
    worst = std::max(worst, std::abs(closed - fd));
  }
  return CheckResult{"divergence vs chart finite differences", worst, tol,
                     worst <= tol};
}

namespace detail {

inline double grad_pair_rel_error(const BackwardResult& a,
                                  const BackwardResult& b) {
  double diff_sq = (a.grad_q0 - b.grad_q0).squaredNorm();
  double norm_a = a.grad_q0.squaredNorm();
  double norm_b = b.grad_q0.squaredNorm();
  for (std::size_t l = 0; l < a.param_grad.weights.size(); ++l) {
    diff_sq += (a.param_grad.weights[l] - b.param_grad.weights[l]).squaredNorm();
    diff_sq += (a.param_grad.biases[l] - b.param_grad.biases[l]).squaredNorm();
    norm_a += a.param_grad.weights[l].squaredNorm() +
              a.param_grad.biases[l].squaredNorm();
    norm_b += b.param_grad.weights[l].squaredNorm() +
              b.param_grad.biases[l].squaredNorm();
  }
  const double denom = std::sqrt(std::max(norm_a, norm_b));
  return denom > 0.0 ? std::sqrt(diff_sq) / denom : std::sqrt(diff_sq);
}

/// Random parameter direction with unit norm.
inline ParamGradient random_direction(const CoefficientNet& net, Rng& rng) {
  ParamGradient dir = ParamGradient::zeros_like(net);
  for (auto& w : dir.weights)
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  for (auto& b : dir.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.normal();
  dir.scale(1.0 / dir.norm());
  return dir;
}

inline CoefficientNet perturbed(const CoefficientNet& net,
                                const ParamGradient& dir, double eps) {
  CoefficientNet out = net;
  for (std::size_t l = 0; l < out.weights.size(); ++l) {
    out.weights[l] += eps * dir.weights[l];
    out.biases[l] += eps * dir.biases[l];
  }
  return out;
}

}  // namespace detail

/// Adjoint-mode vs discretize-mode gradients on random instances.
inline CheckResult check_adjoint_vs_discretize(std::uint64_t seed,
                                               int instances = 50,
                                               double tol = 1e-4,
                                               int steps = 100) {
  double worst = 0.0;
  Rng rng(seed);
  IntegratorConfig cfg;
  cfg.steps = steps;
  for (int i = 0; i < instances; ++i) {
    const int m = (i % 2 == 0) ? 3 : 4;
    const CoefficientNet net =
        random_bounded_net(m, {10, 10}, derive_seed(seed, 300 + i), 0.8);
    const ManifoldPoint q0 =
        sample_uniform(SphereSpec{m - 1}, 1, rng).front();
    const Eigen::VectorXd lg_q1 = rng.normal_vector(m);
    const double lg_ld = rng.normal();
    const ForwardResult fr = integrate_forward(net, q0, cfg);
    const BackwardResult adj =
        integrate_backward_adjoint(net, fr.q1, lg_q1, lg_ld, cfg);
    const BackwardResult disc =
        backprop_discretize(net, q0, cfg, lg_q1, lg_ld);
    worst = std::max(worst, detail::grad_pair_rel_error(adj, disc));
  }
  return CheckResult{"adjoint vs discretize gradients", worst, tol,
                     worst <= tol};
}

/// Discretize-mode directional derivatives vs central finite differences of
/// the scalar loss <w, q1> + c * delta_log_density.
inline CheckResult check_grad_finite_difference(std::uint64_t seed,
                                                int instances = 10,
                                                int directions = 5,
                                                double tol = 1e-4,
                                                int steps = 100) {
  double worst = 0.0;
  Rng rng(seed);
  IntegratorConfig cfg;
  cfg.steps = steps;
  const double eps = 1e-4;
  for (int i = 0; i < instances; ++i) {
    const int m = (i % 2 == 0) ? 3 : 4;
    const CoefficientNet net =
        random_bounded_net(m, {10, 10}, derive_seed(seed, 600 + i), 0.8);
    const ManifoldPoint q0 =
        sample_uniform(SphereSpec{m - 1}, 1, rng).front();
    const Eigen::VectorXd w = rng.normal_vector(m);
    const double c = rng.normal();
    auto loss = [&](const CoefficientNet& candidate) {
      const ForwardResult fr = integrate_forward(candidate, q0, cfg);
      return w.dot(fr.q1.coords()) + c * fr.delta_log_density;
    };
    const BackwardResult back = backprop_discretize(net, q0, cfg, w, c);
    for (int d = 0; d < directions; ++d) {
      const ParamGradient dir = detail::random_direction(net, rng);
      const double fd = (loss(detail::perturbed(net, dir, eps)) -
                         loss(detail::perturbed(net, dir, -eps))) /
                        (2.0 * eps);
      const double an = back.param_grad.dot(dir);
      const double rel =
          std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return CheckResult{"discretize gradient vs finite differences", worst, tol,
                     worst <= tol};
}

/// phi^{t,t} = Id (must be exact) plus the composition law discrepancy.
inline std::vector<CheckResult> check_flow_laws(std::uint64_t seed) {
  std::vector<CheckResult> results;
  Rng rng(seed);
  const CoefficientNet net =
      random_bounded_net(3, {10, 10}, derive_seed(seed, 900), 1.0);
  const ManifoldPoint q0 = sample_uniform(SphereSpec{2}, 1, rng).front();

  const ManifoldPoint same = flow_map(net, q0, 0.7, 0.7, 100);
  const double id_err = (same.coords() - q0.coords()).norm();
  results.push_back(CheckResult{"phi^{t,t} identity", id_err, 0.0, id_err == 0.0});

  IntegratorConfig cfg;
  cfg.steps = 200;
  const double comp = flow_compose_check(net, q0, 0.5, 0.0, 1.0, cfg);
  results.push_back(
      CheckResult{"flow composition phi^{r,s} phi^{s,t} = phi^{r,t}", comp,
                  1e-6, comp <= 1e-6});
  // incommensurate split: the legs run on step grids the direct integration
  // never visits, so the law is not a grid coincidence
  const double comp_off = flow_compose_check(net, q0, 1.0 / 3.0, 0.0, 1.0, cfg);
  results.push_back(
      CheckResult{"flow composition at an incommensurate split", comp_off, 1e-6,
                  comp_off <= 1e-6});

  IntegratorConfig fwd;
  fwd.steps = 100;
  const ForwardResult fr = integrate_forward(net, q0, fwd);
  const ForwardResult back = integrate_forward(net, fr.q1, fwd.reversed());
  const double round = geodesic_distance(back.q1, q0);
  results.push_back(
      CheckResult{"forward-backward round trip", round, 1e-6, round <= 1e-6});
  return results;
}

/// Hamiltonian H(q,p) = <p, X(q)> along the numerically integrated cotangent
/// lift of a time-independent field; reports the worst drift from H(0).
inline CheckResult check_hamiltonian_drift(std::uint64_t seed,
                                           int instances = 5,
                                           double tol = 1e-6) {
  double worst = 0.0;
  Rng rng(seed);
  for (int i = 0; i < instances; ++i) {
    const int m = (i % 2 == 0) ? 3 : 4;
    CoefficientNet net =
        random_bounded_net(m, {10, 10}, derive_seed(seed, 1200 + i), 1.0);
    net.zero_time_column();
    const ManifoldPoint q = sample_uniform(SphereSpec{m - 1}, 1, rng).front();
    const Eigen::VectorXd p = rng.normal_vector(m);

    FieldEngine engine;
    engine.bind(net);
    Eigen::VectorXd velocity(m);
    double h0 = 0.0;
    bool first = true;
    double drift = 0.0;
    IntegratorConfig cfg;
    cfg.steps = 100;
    integrate_cotangent(net, CotangentState{q, p}, cfg, nullptr,
                        [&](double, const Eigen::VectorXd& z,
                            const Eigen::VectorXd& pv) {
                          engine.velocity(0.0, z, velocity);
                          const double ham = pv.dot(velocity);
                          if (first) {
                            h0 = ham;
                            first = false;
                          }
                          drift = std::max(drift, std::abs(ham - h0));
                        });
    worst = std::max(worst, drift);
  }
  return CheckResult{"Hamiltonian drift along cotangent lift", worst, tol,
                     worst <= tol};
}

/// Fiber linearity of the cotangent lift (Property: the lift is linear on
/// the fibers of T*M).
inline CheckResult check_fiber_linearity(std::uint64_t seed, int instances = 20,
                                         double tol = 1e-13) {
  double worst = 0.0;
  Rng rng(seed);
  for (int i = 0; i < instances; ++i) {
    const int m = (i % 2 == 0) ? 3 : 4;
    const CoefficientNet net =
        random_bounded_net(m, {10, 10}, derive_seed(seed, 1500 + i), 1.0);
    const ManifoldPoint q = sample_uniform(SphereSpec{m - 1}, 1, rng).front();
    const Eigen::VectorXd p1 = rng.normal_vector(m);
    const Eigen::VectorXd p2 = rng.normal_vector(m);
    const double a = rng.uniform(-2.0, 2.0);
    const double b = rng.uniform(-2.0, 2.0);
    const double t = rng.uniform();
    const CotangentRhs r1 = cotangent_lift_rhs(net, t, {q, p1});
    const CotangentRhs r2 = cotangent_lift_rhs(net, t, {q, p2});
    const CotangentRhs rc = cotangent_lift_rhs(net, t, {q, a * p1 + b * p2});
    const double scale =
        std::max(1.0, (a * r1.dp + b * r2.dp).norm());
    worst = std::max(worst,
                     (rc.dp - a * r1.dp - b * r2.dp).norm() / scale);
  }
  return CheckResult{"cotangent lift fiber linearity", worst, tol, worst <= tol};
}

/// Order-of-accuracy study: log-log slope of the endpoint error of
/// RK4 + retraction against a 10x-finer reference, over the given step counts.
inline CheckResult check_convergence_order(
    std::uint64_t seed, const std::vector<int>& step_counts = {25, 50, 100, 200},
    double expected = 4.0, double tol = 0.3) {
  Rng rng(seed);
  const CoefficientNet net =
      random_bounded_net(3, {10, 10}, derive_seed(seed, 1800), 1.0);
  const ManifoldPoint q0 = sample_uniform(SphereSpec{2}, 1, rng).front();

  IntegratorConfig ref_cfg;
  ref_cfg.steps = 10 * *std::max_element(step_counts.begin(), step_counts.end());
  const ManifoldPoint ref = integrate_forward(net, q0, ref_cfg).q1;

  std::vector<double> log_h, log_err;
  for (int steps : step_counts) {
    IntegratorConfig cfg;
    cfg.steps = steps;
    const ManifoldPoint q1 = integrate_forward(net, q0, cfg).q1;
    const double err = geodesic_distance(q1, ref);
    log_h.push_back(std::log(1.0 / steps));
    log_err.push_back(std::log(std::max(err, 1e-300)));
  }
  const int n = static_cast<int>(log_h.size());
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += log_h[i];
    my += log_err[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    sxx += (log_h[i] - mx) * (log_h[i] - mx);
    sxy += (log_h[i] - mx) * (log_err[i] - my);
  }
  const double slope = sxy / sxx;
  return CheckResult{"RK4 + retraction empirical order",
                     std::abs(slope - expected), tol,
                     std::abs(slope - expected) <= tol};
}

/// Scope dispatch used by the CLI `check` subcommand.
inline std::vector<CheckResult> run_checks(const std::string& scope,
                                           std::uint64_t seed) {
  std::vector<CheckResult> results;
  const bool all = (scope == "all");
  if (!all && scope != "gradients" && scope != "divergence" &&
      scope != "flow-laws")
    throw ConfigError(
        "check scope must be one of: gradients, divergence, flow-laws, all");
  if (all || scope == "divergence")
    results.push_back(check_divergence(seed));
  if (all || scope == "gradients") {
    results.push_back(check_adjoint_vs_discretize(seed));
    results.push_back(check_grad_finite_difference(seed));
  }
  if (all || scope == "flow-laws") {
    for (auto& r : check_flow_laws(seed)) results.push_back(std::move(r));
    results.push_back(check_hamiltonian_drift(seed));
    results.push_back(check_fiber_linearity(seed));
    results.push_back(check_convergence_order(seed));
  }
  return results;
}

}  // namespace spherecnf
