#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "spherecnf/coefficient_net.hpp"
#include "spherecnf/sphere.hpp"

namespace spherecnf {

/// Velocity and divergence of the assembled field at one (t, q).
struct FieldEval {
  TangentVector velocity;
  double divergence = 0.0;
};

/// Point on the cotangent bundle: base point plus an ambient covector.
/// Tangency of p is not enforced; the lift is evaluated for the ambient
/// extension and the normal component is annihilated at gradient readout.
struct CotangentState {
  ManifoldPoint q;
  Eigen::VectorXd p;
};

struct CotangentRhs {
  Eigen::VectorXd dq;  ///< field velocity at q (ambient)
  Eigen::VectorXd dp;  ///< -(dX/dq)^T p
};

/// Evaluation engine for the sphere vector field
///
///   X(t, z) = sum_i f_i(t, z) (e_i - z_i z) = f(t, z) - <f, z> z
///
/// assembled from the coefficient network over the projected coordinate
/// generators. Divergence uses the closed-form generator divergences
/// (-n z_i), so it costs the primal pass plus n+1 dual channels. The engine
/// owns all scratch buffers; keep one per thread.
class FieldEngine {
 public:
  void bind(const CoefficientNet& net) {
    const int m = net.ambient_dim();
    eval_.bind(net, m);
    dirs_.assign(m, Eigen::VectorXd::Zero(m));
    chan_cots_.assign(m, Eigen::VectorXd::Zero(m));
    grad_dirs_.assign(m, Eigen::VectorXd::Zero(m));
    f_.setZero(m);
    out_cot_.setZero(m);
    grad_net_.setZero(m);
    m_ = m;
  }

  const CoefficientNet& net() const { return eval_.net(); }

  /// X(t, z) into `out`. Valid for any ambient z (smooth extension).
  void velocity(double t, const Eigen::VectorXd& z, Eigen::VectorXd& out) {
    const Eigen::VectorXd& f = eval_.forward(t, z);
    out = f - f.dot(z) * z;
  }

  /// X(t, z) into `out`; returns div X(t, z).
  double velocity_and_divergence(double t, const Eigen::VectorXd& z,
                                 Eigen::VectorXd& out) {
    const Eigen::VectorXd& f = eval_.forward(t, z);
    out = f - f.dot(z) * z;
    set_generator_dirs(z);
    eval_.clear_channels();
    eval_.push_channels(dirs_);
    const double n = static_cast<double>(m_ - 1);
    double div = -n * f.dot(z);
    for (int k = 0; k < m_; ++k) div += eval_.channel_output(k)[k];
    return div;
  }

  /// div X(t, z) alone.
  double divergence(double t, const Eigen::VectorXd& z) {
    Eigen::VectorXd scratch(m_);
    return velocity_and_divergence(t, z, scratch);
  }

  /// Gradient of S(z, theta) = <c, X(t,z)> + s * div X(t,z).
  ///
  /// Writes dS/dz into grad_z; accumulates pg += pg_coeff * dS/dtheta when pg
  /// is non-null. This is the single reverse pass behind both the adjoint
  /// right-hand side and the unrolled backward sweep. Second derivatives of
  /// the network enter through the dual channels recorded for the divergence.
  void stage_vjp(double t, const Eigen::VectorXd& z, const Eigen::VectorXd& c,
                 double s, Eigen::VectorXd& grad_z, ParamGradient* pg,
                 double pg_coeff = 1.0, Eigen::VectorXd* velocity_out = nullptr) {
    f_ = eval_.forward(t, z);  // copied: the engine buffer is reused below
    const Eigen::VectorXd& f = f_;
    if (velocity_out != nullptr) *velocity_out = f - f.dot(z) * z;
    set_generator_dirs(z);
    eval_.clear_channels();
    eval_.push_channels(dirs_);

    const double n = static_cast<double>(m_ - 1);
    const double cz = c.dot(z);
    const double fz = f.dot(z);
    // network-path cotangents: <c, X> contributes (c - <c,z> z) on f,
    // s*div contributes -n*s*z on f and s*e_k on channel k
    out_cot_ = c - cz * z - (n * s) * z;
    for (int k = 0; k < m_; ++k) {
      chan_cots_[k].setZero();
      chan_cots_[k][k] = s;
    }
    eval_.reverse(out_cot_, chan_cots_, &grad_net_, nullptr, &grad_dirs_, pg,
                  pg_coeff);

    // explicit z-dependence outside the network:
    //   d/dz [ -<f,z><c,z> ]      = -(<c,z> f + <f,z> c)
    //   d/dz [ -n s <f,z> ]       = -n s f
    //   d/dz [ sum_k <b_k, g_k(z)> ] with g_k = e_k - z_k z
    //                             = -sum_k (<z,b_k> e_k + z_k b_k)
    grad_z = grad_net_ - cz * f - fz * c - (n * s) * f;
    for (int k = 0; k < m_; ++k) {
      const Eigen::VectorXd& bk = grad_dirs_[k];
      grad_z[k] -= z.dot(bk);
      grad_z -= z[k] * bk;
    }
  }

  /// Cotangent-lift right-hand side at (t, z, p):
  ///   dq = X(t, z)
  ///   dp = -(dX/dz)^T p = -[ J^T (p - <z,p> z) - <z,p> f - <f,z> p ]
  /// with J = df/dz. One reverse pass; no dual channels needed.
  void cotangent_rhs(double t, const Eigen::VectorXd& z,
                     const Eigen::VectorXd& p, Eigen::VectorXd& dq,
                     Eigen::VectorXd& dp) {
    f_ = eval_.forward(t, z);
    const Eigen::VectorXd& f = f_;
    const double fz = f.dot(z);
    const double pz = p.dot(z);
    dq = f - fz * z;
    eval_.clear_channels();
    out_cot_ = p - pz * z;
    eval_.reverse(out_cot_, {}, &grad_net_, nullptr, nullptr, nullptr);
    dp = -grad_net_ + pz * f + fz * p;
  }

  /// Parameter gradient of <c, X(t,z)>, accumulated as pg += coeff * d/dtheta.
  /// Shares the vjp cotangent with cotangent_rhs: d<c,X>/dtheta = d<Pc,f>/dtheta.
  void velocity_param_vjp(double t, const Eigen::VectorXd& z,
                          const Eigen::VectorXd& c, ParamGradient& pg,
                          double coeff) {
    eval_.forward(t, z);
    eval_.clear_channels();
    out_cot_ = c - c.dot(z) * z;
    eval_.reverse(out_cot_, {}, nullptr, nullptr, nullptr, &pg, coeff);
  }

 private:
  void set_generator_dirs(const Eigen::VectorXd& z) {
    for (int k = 0; k < m_; ++k) {
      dirs_[k] = -z[k] * z;
      dirs_[k][k] += 1.0;
    }
  }

  NetEval eval_;
  int m_ = 0;
  std::vector<Eigen::VectorXd> dirs_, chan_cots_, grad_dirs_;
  Eigen::VectorXd f_, out_cot_, grad_net_;
};

/// X(t, q) as a tangent vector at q.
inline TangentVector eval_field(const CoefficientNet& net, double t,
                                const ManifoldPoint& q) {
  FieldEngine engine;
  engine.bind(net);
  Eigen::VectorXd v(net.ambient_dim());
  engine.velocity(t, q.coords(), v);
  return TangentVector(q, std::move(v));
}

/// div X(t, q) from the generator decomposition:
///   div X = sum_i [ J g_i ]_i + sum_i f_i (-n q_i),
/// evaluated with n+1 dual-channel (jvp) passes plus the primal pass.
inline double eval_divergence(const CoefficientNet& net, double t,
                              const ManifoldPoint& q) {
  FieldEngine engine;
  engine.bind(net);
  return engine.divergence(t, q.coords());
}

inline FieldEval eval_field_and_divergence(const CoefficientNet& net, double t,
                                           const ManifoldPoint& q) {
  FieldEngine engine;
  engine.bind(net);
  Eigen::VectorXd v(net.ambient_dim());
  const double div = engine.velocity_and_divergence(t, q.coords(), v);
  return FieldEval{TangentVector(q, std::move(v)), div};
}

/// Right-hand side of the cotangent-lift ODE for the ambient extension.
inline CotangentRhs cotangent_lift_rhs(const CoefficientNet& net, double t,
                                       const CotangentState& state) {
  if (!state.p.allFinite())
    throw NumericError("non-finite covector in cotangent state");
  FieldEngine engine;
  engine.bind(net);
  CotangentRhs rhs;
  rhs.dq.resize(net.ambient_dim());
  rhs.dp.resize(net.ambient_dim());
  engine.cotangent_rhs(t, state.q.coords(), state.p, rhs.dq, rhs.dp);
  return rhs;
}

}  // namespace spherecnf
