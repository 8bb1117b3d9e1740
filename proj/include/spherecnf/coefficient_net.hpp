#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spherecnf/errors.hpp"
#include "spherecnf/rng.hpp"

namespace spherecnf {

/// Parameters of the time-dependent coefficient function
///
///   f : R x R^m -> R^m,   f(t, z) = MLP([t; z])
///
/// with tanh hidden layers and a linear output layer. The input is the time
/// value concatenated with ambient coordinates, so the network is defined on
/// all of R^m and does not assume unit-norm inputs.
struct CoefficientNet {
  std::vector<int> layer_sizes;          ///< [1+m, hidden..., m]
  std::vector<Eigen::MatrixXd> weights;  ///< weights[l]: sizes[l+1] x sizes[l]
  std::vector<Eigen::VectorXd> biases;

  int num_layers() const noexcept { return static_cast<int>(weights.size()); }
  int input_dim() const noexcept { return layer_sizes.front(); }
  int ambient_dim() const noexcept { return layer_sizes.back(); }

  std::size_t parameter_count() const {
    std::size_t count = 0;
    for (int l = 0; l < num_layers(); ++l)
      count += static_cast<std::size_t>(weights[l].size()) + biases[l].size();
    return count;
  }

  void validate() const {
    if (layer_sizes.size() < 2)
      throw ConfigError("network needs at least input and output sizes");
    for (int s : layer_sizes)
      if (s < 1) throw ConfigError("layer sizes must be positive");
    if (layer_sizes.front() != layer_sizes.back() + 1)
      throw ConfigError("input size must be 1 + ambient dimension");
    if (weights.size() + 1 != layer_sizes.size() ||
        biases.size() != weights.size())
      throw ConfigError("parameter tensors inconsistent with layer sizes");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows() != layer_sizes[l + 1] ||
          weights[l].cols() != layer_sizes[l] ||
          biases[l].size() != layer_sizes[l + 1])
        throw ConfigError("parameter tensors inconsistent with layer sizes");
      if (!weights[l].allFinite() || !biases[l].allFinite())
        throw NumericError("network parameters are not finite");
    }
  }

  /// Zeroes the time column of the first layer, making the field autonomous.
  void zero_time_column() { weights.front().col(0).setZero(); }
};

/// Gradient (or any accumulator) shaped like the parameters of a net.
struct ParamGradient {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static ParamGradient zeros_like(const CoefficientNet& net) {
    ParamGradient g;
    g.weights.reserve(net.weights.size());
    g.biases.reserve(net.biases.size());
    for (int l = 0; l < net.num_layers(); ++l) {
      g.weights.emplace_back(
          Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
      g.biases.emplace_back(Eigen::VectorXd::Zero(net.biases[l].size()));
    }
    return g;
  }

  void set_zero() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
  }

  ParamGradient& operator+=(const ParamGradient& o) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += o.weights[l];
      biases[l] += o.biases[l];
    }
    return *this;
  }

  /// this += a * o
  void axpy(double a, const ParamGradient& o) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += a * o.weights[l];
      biases[l] += a * o.biases[l];
    }
  }

  void scale(double a) {
    for (auto& w : weights) w *= a;
    for (auto& b : biases) b *= a;
  }

  double dot(const ParamGradient& o) const {
    double s = 0.0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      s += weights[l].cwiseProduct(o.weights[l]).sum();
      s += biases[l].dot(o.biases[l]);
    }
    return s;
  }

  double squared_norm() const { return dot(*this); }
  double norm() const { return std::sqrt(squared_norm()); }

  bool all_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }
};

/// Fan-in scaled initialization; the output layer starts at zero so the
/// initial vector field vanishes and the flow is the identity map.
inline CoefficientNet init_params(const std::vector<int>& layer_sizes,
                                  std::uint64_t seed) {
  if (layer_sizes.size() < 2)
    throw ConfigError("network needs at least input and output sizes");
  for (int s : layer_sizes)
    if (s < 1) throw ConfigError("layer sizes must be positive");

  CoefficientNet net;
  net.layer_sizes = layer_sizes;
  Rng rng(seed);
  const int num_layers = static_cast<int>(layer_sizes.size()) - 1;
  for (int l = 0; l < num_layers; ++l) {
    const int rows = layer_sizes[l + 1];
    const int cols = layer_sizes[l];
    Eigen::MatrixXd w(rows, cols);
    if (l == num_layers - 1) {
      w.setZero();
    } else {
      const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) w(i, j) = scale * rng.normal();
    }
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(Eigen::VectorXd::Zero(rows));
  }
  net.validate();
  return net;
}

/// Convenience builder from ambient dimension and hidden sizes.
inline CoefficientNet make_net(int ambient_dim, const std::vector<int>& hidden,
                               std::uint64_t seed) {
  std::vector<int> sizes;
  sizes.push_back(ambient_dim + 1);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(ambient_dim);
  return init_params(sizes, seed);
}

/// Reusable evaluation engine for one net architecture.
///
/// Holds the primal tape plus up to `channels` forward-mode (dual) channels,
/// and runs reverse passes through both. All buffers are preallocated in
/// bind(), so repeated evaluation does not allocate. One engine per thread;
/// the net itself stays immutable during evaluation.
class NetEval {
 public:
  void bind(const CoefficientNet& net, int channels) {
    net.validate();
    net_ = &net;
    const int L = net.num_layers();
    u_.assign(L + 1, {});
    bar_u_.assign(L + 1, {});
    sphi_.assign(L, {});
    bar_pre_.assign(L + 1, {});
    for (int l = 0; l <= L; ++l) {
      u_[l].setZero(net.layer_sizes[l]);
      bar_u_[l].setZero(net.layer_sizes[l]);
      bar_pre_[l].setZero(net.layer_sizes[l]);
    }
    for (int l = 0; l + 1 < L; ++l) sphi_[l].setZero(net.layer_sizes[l + 1]);
    bar_sphi_.setZero(max_width());
    du_.assign(channels, u_);
    dpre_.assign(channels, u_);
    bar_du_.assign(channels, u_);
    bar_dpre_.assign(channels, u_);
    num_channels_used_ = 0;
  }

  const CoefficientNet& net() const { return *net_; }
  int capacity() const { return static_cast<int>(du_.size()); }

  /// Primal pass; records the tape used by the passes below.
  const Eigen::VectorXd& forward(double t, const Eigen::VectorXd& z) {
    const int L = net_->num_layers();
    if (z.size() + 1 != net_->input_dim())
      throw ConfigError("input dimension does not match the network");
    if (!std::isfinite(t) || !z.allFinite())
      throw NumericError("non-finite input to coefficient network");
    u_[0][0] = t;
    u_[0].tail(z.size()) = z;
    for (int l = 0; l < L; ++l) {
      Eigen::VectorXd& out = u_[l + 1];
      out.noalias() = net_->weights[l] * u_[l];
      out += net_->biases[l];
      if (l + 1 < L) {
        out = out.array().tanh();
        sphi_[l] = 1.0 - out.array().square();
      }
    }
    num_channels_used_ = 0;
    return u_[L];
  }

  /// Forward-mode channels for ambient directions (time component zero).
  /// Requires forward() on the same (t, z) first.
  template <typename DirRange>
  void push_channels(const DirRange& dirs) {
    const int L = net_->num_layers();
    int k = num_channels_used_;
    for (const Eigen::VectorXd& d : dirs) {
      if (k >= capacity())
        throw ConfigError("engine bound with too few dual channels");
      du_[k][0][0] = 0.0;
      du_[k][0].tail(d.size()) = d;
      for (int l = 0; l < L; ++l) {
        dpre_[k][l + 1].noalias() = net_->weights[l] * du_[k][l];
        if (l + 1 < L)
          du_[k][l + 1] = sphi_[l].cwiseProduct(dpre_[k][l + 1]);
        else
          du_[k][l + 1] = dpre_[k][l + 1];
      }
      ++k;
    }
    num_channels_used_ = k;
  }

  int num_channels() const { return num_channels_used_; }
  void clear_channels() { num_channels_used_ = 0; }

  /// Output of the k-th recorded channel: (df/dz) * dir_k.
  const Eigen::VectorXd& channel_output(int k) const {
    return du_[k][net_->num_layers()];
  }

  /// Primal output recorded by the last forward().
  const Eigen::VectorXd& output() const { return u_[net_->num_layers()]; }

  /// Reverse pass through the primal tape and all recorded channels.
  ///
  /// Differentiates   S = <out_cot, f(t,z)> + sum_k <chan_cots[k], J(t,z) d_k>
  /// and returns the gradient of S with respect to the inputs (z holding the
  /// directions fixed, t, and each direction d_k). If pg is non-null the
  /// parameter gradient is accumulated as pg += pg_coeff * dS/dtheta.
  void reverse(const Eigen::VectorXd& out_cot,
               const std::vector<Eigen::VectorXd>& chan_cots,
               Eigen::VectorXd* grad_z, double* grad_t,
               std::vector<Eigen::VectorXd>* grad_dirs, ParamGradient* pg,
               double pg_coeff = 1.0) {
    const int L = net_->num_layers();
    const int K = static_cast<int>(chan_cots.size());
    if (K != num_channels_used_)
      throw ConfigError("channel cotangent count does not match recorded channels");
    bar_u_[L] = out_cot;
    for (int k = 0; k < K; ++k) bar_du_[k][L] = chan_cots[k];

    for (int l = L - 1; l >= 0; --l) {
      const bool hidden = (l + 1 < L);
      if (hidden) {
        // du[l+1] = sphi[l] .* dpre[l+1],  sphi[l] = 1 - u[l+1]^2
        if (K > 0) {
          bar_sphi_.head(u_[l + 1].size()).setZero();
          for (int k = 0; k < K; ++k) {
            bar_sphi_.head(u_[l + 1].size()) +=
                dpre_[k][l + 1].cwiseProduct(bar_du_[k][l + 1]);
            bar_dpre_[k][l + 1] = sphi_[l].cwiseProduct(bar_du_[k][l + 1]);
          }
          bar_u_[l + 1] -= 2.0 * u_[l + 1].cwiseProduct(
                                     bar_sphi_.head(u_[l + 1].size()));
        }
        bar_pre_[l + 1] = sphi_[l].cwiseProduct(bar_u_[l + 1]);
      } else {
        bar_pre_[l + 1] = bar_u_[l + 1];
        for (int k = 0; k < K; ++k) bar_dpre_[k][l + 1] = bar_du_[k][l + 1];
      }
      if (pg != nullptr) {
        pg->weights[l].noalias() += pg_coeff * bar_pre_[l + 1] * u_[l].transpose();
        for (int k = 0; k < K; ++k)
          pg->weights[l].noalias() +=
              pg_coeff * bar_dpre_[k][l + 1] * du_[k][l].transpose();
        pg->biases[l] += pg_coeff * bar_pre_[l + 1];
      }
      bar_u_[l].noalias() = net_->weights[l].transpose() * bar_pre_[l + 1];
      for (int k = 0; k < K; ++k)
        bar_du_[k][l].noalias() = net_->weights[l].transpose() * bar_dpre_[k][l + 1];
    }

    const Eigen::Index m = net_->ambient_dim();
    if (grad_t != nullptr) *grad_t = bar_u_[0][0];
    if (grad_z != nullptr) *grad_z = bar_u_[0].tail(m);
    if (grad_dirs != nullptr) {
      grad_dirs->resize(K);
      for (int k = 0; k < K; ++k) (*grad_dirs)[k] = bar_du_[k][0].tail(m);
    }
  }

 private:
  int max_width() const {
    int w = 0;
    for (int s : net_->layer_sizes) w = std::max(w, s);
    return w;
  }

  const CoefficientNet* net_ = nullptr;
  int num_channels_used_ = 0;
  std::vector<Eigen::VectorXd> u_, sphi_, bar_u_, bar_pre_;
  Eigen::VectorXd bar_sphi_;
  std::vector<std::vector<Eigen::VectorXd>> du_, dpre_, bar_du_, bar_dpre_;
};

/// f(t, z); see CoefficientNet.
inline Eigen::VectorXd forward(const CoefficientNet& net, double t,
                               const Eigen::VectorXd& z) {
  NetEval eval;
  eval.bind(net, 0);
  return eval.forward(t, z);
}

/// Directional derivative (df/dz)(t,z) * dz by forward-mode dual propagation.
inline Eigen::VectorXd jvp(const CoefficientNet& net, double t,
                           const Eigen::VectorXd& z,
                           const Eigen::VectorXd& dz) {
  NetEval eval;
  eval.bind(net, 1);
  eval.forward(t, z);
  eval.push_channels(std::vector<Eigen::VectorXd>{dz});
  return eval.channel_output(0);
}

struct VjpResult {
  Eigen::VectorXd input_grad;  ///< (df/dz)^T ct
  double time_grad = 0.0;      ///< (df/dt)^T ct
  ParamGradient param_grad;    ///< d<ct, f>/dtheta
};

/// Reverse-mode pull-back of a covector through the network.
inline VjpResult vjp(const CoefficientNet& net, double t,
                     const Eigen::VectorXd& z, const Eigen::VectorXd& ct) {
  NetEval eval;
  eval.bind(net, 0);
  eval.forward(t, z);
  VjpResult res;
  res.param_grad = ParamGradient::zeros_like(net);
  eval.reverse(ct, {}, &res.input_grad, &res.time_grad, nullptr,
               &res.param_grad);
  return res;
}

}  // namespace spherecnf
