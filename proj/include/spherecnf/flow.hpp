#pragma once

#include <array>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "spherecnf/coefficient_net.hpp"
#include "spherecnf/errors.hpp"
#include "spherecnf/sphere.hpp"
#include "spherecnf/vector_field.hpp"

namespace spherecnf {

/// Fixed-step classical RK4 with projection retraction after each full step.
struct IntegratorConfig {
  int steps = 100;
  double t0 = 0.0;
  double t1 = 1.0;
  bool record_trajectory = false;

  void validate() const {
    if (steps < 1) throw ConfigError("integrator steps must be >= 1");
    if (!std::isfinite(t0) || !std::isfinite(t1))
      throw ConfigError("integrator time span must be finite");
  }

  IntegratorConfig reversed() const {
    IntegratorConfig r = *this;
    std::swap(r.t0, r.t1);
    return r;
  }
};

struct ForwardResult {
  ManifoldPoint q1;
  /// Accumulated log-density change: - integral of div X along the curve.
  double delta_log_density = 0.0;
  /// (t, q) knots at step boundaries; filled when cfg.record_trajectory.
  std::vector<std::pair<double, Eigen::VectorXd>> trajectory;
};

struct BackwardResult {
  Eigen::VectorXd grad_q0;   ///< tangential at q0
  ParamGradient param_grad;
};

/// Stage inputs recorded by a taped forward integration; consumed by the
/// unrolled reverse sweep.
struct ForwardTape {
  IntegratorConfig cfg;
  std::vector<std::array<Eigen::VectorXd, 4>> stages;
  std::vector<double> zpre_norm;
  Eigen::VectorXd q1;
};

namespace detail {

inline void check_state(const Eigen::VectorXd& z, double ell, int step) {
  if (!z.allFinite() || !std::isfinite(ell))
    throw IntegrationError("integration produced a non-finite state", step);
}

}  // namespace detail

/// Integrates dq/dt = X_t(q), dl/dt = -div X_t(q) from t0 to t1 (either time
/// order). The divergence is evaluated at every RK4 stage point; the point is
/// renormalized after each full step.
inline ForwardResult integrate_forward(const CoefficientNet& net,
                                       const ManifoldPoint& q0,
                                       const IntegratorConfig& cfg,
                                       FieldEngine* engine = nullptr,
                                       ForwardTape* tape = nullptr) {
  cfg.validate();
  FieldEngine local;
  if (engine == nullptr) {
    local.bind(net);
    engine = &local;
  }
  const int m = net.ambient_dim();
  if (q0.ambient_dim() != m)
    throw ConfigError("point dimension does not match the network");

  const double h = (cfg.t1 - cfg.t0) / cfg.steps;
  Eigen::VectorXd z = q0.coords();
  double ell = 0.0;

  ForwardResult out{q0, 0.0, {}};
  if (cfg.record_trajectory) {
    out.trajectory.reserve(cfg.steps + 1);
    out.trajectory.emplace_back(cfg.t0, z);
  }
  if (tape != nullptr) {
    tape->cfg = cfg;
    // keep existing buffer capacity across calls
    if (static_cast<int>(tape->stages.size()) != cfg.steps)
      tape->stages.resize(cfg.steps);
    tape->zpre_norm.assign(cfg.steps, 1.0);
  }
  if (h == 0.0) {
    if (tape != nullptr) {
      for (int i = 0; i < cfg.steps; ++i)
        for (auto& stage : tape->stages[i]) stage = z;
      tape->q1 = z;
    }
    return out;
  }

  Eigen::VectorXd k1(m), k2(m), k3(m), k4(m), zs(m);
  for (int i = 0; i < cfg.steps; ++i) {
    const double t = cfg.t0 + i * h;
    try {
      const double d1 = -engine->velocity_and_divergence(t, z, k1);
      if (tape != nullptr) tape->stages[i][0] = z;

      zs = z + (0.5 * h) * k1;
      if (tape != nullptr) tape->stages[i][1] = zs;
      const double d2 = -engine->velocity_and_divergence(t + 0.5 * h, zs, k2);

      zs = z + (0.5 * h) * k2;
      if (tape != nullptr) tape->stages[i][2] = zs;
      const double d3 = -engine->velocity_and_divergence(t + 0.5 * h, zs, k3);

      zs = z + h * k3;
      if (tape != nullptr) tape->stages[i][3] = zs;
      const double d4 = -engine->velocity_and_divergence(t + h, zs, k4);

      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      ell += (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
    } catch (const IntegrationError&) {
      throw;
    } catch (const NumericError& e) {
      throw IntegrationError(e.what(), i);
    }
    detail::check_state(z, ell, i);

    const double norm = z.norm();
    if (!(norm > 1e-12))
      throw IntegrationError("point collapsed to the origin", i);
    z /= norm;
    if (tape != nullptr) tape->zpre_norm[i] = norm;
    if (cfg.record_trajectory) out.trajectory.emplace_back(t + h, z);
  }

  if (tape != nullptr) tape->q1 = z;
  out.q1 = ManifoldPoint(z);
  out.delta_log_density = ell;
  return out;
}

/// Reverse-mode sweep through the exact RK4 + retraction recursion recorded
/// in `tape`. Returns the gradient of loss(q1, l) with the given output
/// cotangents; grad_q0 is projected tangentially at q0.
inline BackwardResult backprop_from_tape(const CoefficientNet& net,
                                         const ForwardTape& tape,
                                         const Eigen::VectorXd& loss_grad_q1,
                                         double loss_grad_logdet,
                                         FieldEngine* engine = nullptr) {
  FieldEngine local;
  if (engine == nullptr) {
    local.bind(net);
    engine = &local;
  }
  const IntegratorConfig& cfg = tape.cfg;
  const double h = (cfg.t1 - cfg.t0) / cfg.steps;
  const int m = net.ambient_dim();

  BackwardResult out;
  out.param_grad = ParamGradient::zeros_like(net);
  Eigen::VectorXd bar_z = loss_grad_q1;
  Eigen::VectorXd bar_zpre(m), bar_k(m), gz(m), acc(m);

  if (h != 0.0) {
    for (int i = cfg.steps - 1; i >= 0; --i) {
      const double t = cfg.t0 + i * h;
      const Eigen::VectorXd& zhat =
          (i + 1 < cfg.steps) ? tape.stages[i + 1][0] : tape.q1;
      bar_zpre = (bar_z - zhat.dot(bar_z) * zhat) / tape.zpre_norm[i];
      acc = bar_zpre;

      // stage 4: z4 = z + h k3
      bar_k = (h / 6.0) * bar_zpre;
      engine->stage_vjp(t + h, tape.stages[i][3], bar_k,
                        -(h / 6.0) * loss_grad_logdet, gz, &out.param_grad);
      acc += gz;
      // stage 3: z3 = z + (h/2) k2
      bar_k = (h / 3.0) * bar_zpre + h * gz;
      engine->stage_vjp(t + 0.5 * h, tape.stages[i][2], bar_k,
                        -(h / 3.0) * loss_grad_logdet, gz, &out.param_grad);
      acc += gz;
      // stage 2: z2 = z + (h/2) k1
      bar_k = (h / 3.0) * bar_zpre + (0.5 * h) * gz;
      engine->stage_vjp(t + 0.5 * h, tape.stages[i][1], bar_k,
                        -(h / 3.0) * loss_grad_logdet, gz, &out.param_grad);
      acc += gz;
      // stage 1: z1 = z
      bar_k = (h / 6.0) * bar_zpre + (0.5 * h) * gz;
      engine->stage_vjp(t, tape.stages[i][0], bar_k,
                        -(h / 6.0) * loss_grad_logdet, gz, &out.param_grad);
      acc += gz;

      bar_z = acc;
      if (!bar_z.allFinite())
        throw IntegrationError("backward sweep produced a non-finite state", i);
    }
  }

  const Eigen::VectorXd& q0 =
      (cfg.steps > 0 && h != 0.0) ? tape.stages[0][0] : tape.q1;
  out.grad_q0 = bar_z - q0.dot(bar_z) * q0;
  return out;
}

/// Discretize-then-optimize gradient: exact reverse-mode differentiation of
/// the discrete forward map (every RK4 stage, retraction and divergence
/// evaluation).
inline BackwardResult backprop_discretize(const CoefficientNet& net,
                                          const ManifoldPoint& q0,
                                          const IntegratorConfig& cfg,
                                          const Eigen::VectorXd& loss_grad_q1,
                                          double loss_grad_logdet,
                                          FieldEngine* engine = nullptr) {
  ForwardTape tape;
  integrate_forward(net, q0, cfg, engine, &tape);
  return backprop_from_tape(net, tape, loss_grad_q1, loss_grad_logdet, engine);
}

/// Continuous adjoint: integrates the cotangent-lift system backward from t1
/// to t0, re-integrating the base point alongside the covector and
/// accumulating the parameter gradient. The log-density channel enters
/// through its constant cotangent `loss_grad_logdet`, which sources the
/// divergence-gradient term of the adjoint equation.
///
/// If `stored` points at a ForwardResult with a recorded trajectory on the
/// same step grid, the base point is reset to the stored knots instead of
/// trusting the reverse integration (debugging aid for drift).
inline BackwardResult integrate_backward_adjoint(
    const CoefficientNet& net, const ManifoldPoint& q1,
    const Eigen::VectorXd& loss_grad_q1, double loss_grad_logdet,
    const IntegratorConfig& cfg, FieldEngine* engine = nullptr,
    const ForwardResult* stored = nullptr) {
  cfg.validate();
  FieldEngine local;
  if (engine == nullptr) {
    local.bind(net);
    engine = &local;
  }
  const int m = net.ambient_dim();
  if (!loss_grad_q1.allFinite() || !std::isfinite(loss_grad_logdet))
    throw NumericError("non-finite loss gradient");
  if (stored != nullptr &&
      static_cast<int>(stored->trajectory.size()) != cfg.steps + 1)
    throw ConfigError("stored trajectory does not match the step grid");

  const double h = (cfg.t0 - cfg.t1) / cfg.steps;  // runs t1 -> t0
  Eigen::VectorXd z = q1.coords();
  Eigen::VectorXd p = loss_grad_q1 - z.dot(loss_grad_q1) * z;

  BackwardResult out;
  out.param_grad = ParamGradient::zeros_like(net);

  if (h != 0.0) {
    Eigen::VectorXd k1z(m), k2z(m), k3z(m), k4z(m);
    Eigen::VectorXd k1p(m), k2p(m), k3p(m), k4p(m);
    Eigen::VectorXd zs(m), ps(m);
    const double s_div = -loss_grad_logdet;

    auto stage = [&](double t, const Eigen::VectorXd& zi,
                     const Eigen::VectorXd& pi, double weight,
                     Eigen::VectorXd& kz, Eigen::VectorXd& kp) {
      engine->stage_vjp(t, zi, pi, s_div, kp, &out.param_grad,
                        -(h * weight) / 6.0, &kz);
      kp = -kp;
    };

    for (int i = 0; i < cfg.steps; ++i) {
      const double t = cfg.t1 + i * h;
      stage(t, z, p, 1.0, k1z, k1p);
      zs = z + (0.5 * h) * k1z;
      ps = p + (0.5 * h) * k1p;
      stage(t + 0.5 * h, zs, ps, 2.0, k2z, k2p);
      zs = z + (0.5 * h) * k2z;
      ps = p + (0.5 * h) * k2p;
      stage(t + 0.5 * h, zs, ps, 2.0, k3z, k3p);
      zs = z + h * k3z;
      ps = p + h * k3p;
      stage(t + h, zs, ps, 1.0, k4z, k4p);

      z += (h / 6.0) * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
      p += (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
      detail::check_state(z, 0.0, i);
      if (!p.allFinite())
        throw IntegrationError("adjoint covector became non-finite", i);

      const double norm = z.norm();
      if (!(norm > 1e-12))
        throw IntegrationError("point collapsed to the origin", i);
      z /= norm;
      if (stored != nullptr)
        z = stored->trajectory[cfg.steps - i - 1].second;
    }
  }

  out.grad_q0 = p - z.dot(p) * z;
  return out;
}

/// One evaluation of the time-dependent flow map: integrates from time `from`
/// to time `to` with the given number of steps (0 steps = identity).
inline ManifoldPoint flow_map(const CoefficientNet& net, const ManifoldPoint& q,
                              double from, double to, int steps,
                              FieldEngine* engine = nullptr) {
  if (steps == 0 || from == to) return q;
  IntegratorConfig cfg;
  cfg.steps = steps;
  cfg.t0 = from;
  cfg.t1 = to;
  return integrate_forward(net, q, cfg, engine).q1;
}

/// Geodesic discrepancy of the two-parameter flow law
///   phi^{r,s} ( phi^{s,t} (q0) )  vs  phi^{r,t} (q0),
/// with step counts scaled proportionally to each leg length so all legs run
/// at (roughly) the same step size. cfg.steps counts the direct t -> r leg.
inline double flow_compose_check(const CoefficientNet& net,
                                 const ManifoldPoint& q0, double s, double t,
                                 double r, const IntegratorConfig& cfg,
                                 FieldEngine* engine = nullptr) {
  cfg.validate();
  const double unit =
      std::max({std::abs(r - t), std::abs(s - t), std::abs(r - s)});
  auto leg_steps = [&](double a, double b) -> int {
    if (a == b) return 0;
    if (unit == 0.0) return cfg.steps;
    return std::max(1, static_cast<int>(
                           std::lround(cfg.steps * std::abs(b - a) / unit)));
  };
  const ManifoldPoint via =
      flow_map(net, flow_map(net, q0, t, s, leg_steps(t, s), engine), s, r,
               leg_steps(s, r), engine);
  const ManifoldPoint direct = flow_map(net, q0, t, r, leg_steps(t, r), engine);
  return geodesic_distance(via, direct);
}

/// RK4 integration of the cotangent-lift vector field of the ambient
/// extension. No retraction is applied: the lift lives on T*R^m and projecting
/// the base point mid-run perturbs the conserved Hamiltonian at the same order
/// as the integrator error. The base point stays on the sphere to O(h^4); the
/// endpoint is normalized at readout. The observer (if any) sees the initial
/// state and the state after every step.
inline CotangentState integrate_cotangent(
    const CoefficientNet& net, const CotangentState& start,
    const IntegratorConfig& cfg, FieldEngine* engine = nullptr,
    const std::function<void(double, const Eigen::VectorXd&,
                             const Eigen::VectorXd&)>& observer = nullptr) {
  cfg.validate();
  FieldEngine local;
  if (engine == nullptr) {
    local.bind(net);
    engine = &local;
  }
  const int m = net.ambient_dim();
  const double h = (cfg.t1 - cfg.t0) / cfg.steps;
  Eigen::VectorXd z = start.q.coords();
  Eigen::VectorXd p = start.p;
  if (observer) observer(cfg.t0, z, p);
  if (h == 0.0) return CotangentState{ManifoldPoint(z), p};

  Eigen::VectorXd k1z(m), k2z(m), k3z(m), k4z(m);
  Eigen::VectorXd k1p(m), k2p(m), k3p(m), k4p(m);
  Eigen::VectorXd zs(m), ps(m);
  for (int i = 0; i < cfg.steps; ++i) {
    const double t = cfg.t0 + i * h;
    engine->cotangent_rhs(t, z, p, k1z, k1p);
    zs = z + (0.5 * h) * k1z;
    ps = p + (0.5 * h) * k1p;
    engine->cotangent_rhs(t + 0.5 * h, zs, ps, k2z, k2p);
    zs = z + (0.5 * h) * k2z;
    ps = p + (0.5 * h) * k2p;
    engine->cotangent_rhs(t + 0.5 * h, zs, ps, k3z, k3p);
    zs = z + h * k3z;
    ps = p + h * k3p;
    engine->cotangent_rhs(t + h, zs, ps, k4z, k4p);

    z += (h / 6.0) * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
    p += (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
    detail::check_state(z, 0.0, i);
    if (!p.allFinite())
      throw IntegrationError("covector became non-finite", i);
    if (observer) observer(t + h, z, p);
  }
  return CotangentState{ManifoldPoint::normalized(z), p};
}

}  // namespace spherecnf
