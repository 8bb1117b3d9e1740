#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "spherecnf/flow.hpp"
#include "spherecnf/parallel.hpp"
#include "spherecnf/sphere.hpp"
#include "spherecnf/vmf.hpp"

namespace spherecnf {

/// One reparameterized model sample with its exact (integrator-limited)
/// log-density under the model.
struct ModelSample {
  ManifoldPoint x;
  double log_q = 0.0;
};

/// Draws `count` base points from the uniform base distribution and pushes
/// them through the flow; log_q = log rho_0 + accumulated log-density change.
/// Base points are drawn serially from `rng` so results do not depend on the
/// thread count.
inline std::vector<ModelSample> sample_model(const CoefficientNet& net,
                                             const SphereSpec& spec,
                                             const IntegratorConfig& cfg,
                                             int count, Rng& rng,
                                             int threads = 1) {
  cfg.validate();
  const double log_rho0 = log_uniform_density(spec);
  std::vector<ManifoldPoint> base = sample_uniform(spec, count, rng);

  std::vector<ModelSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i)
    out.push_back(ModelSample{base[i], 0.0});

  const int block_size = 64;
  const int num_blocks = (count + block_size - 1) / block_size;
  std::vector<FieldEngine> engines(std::max(1, std::min(threads, num_blocks)));
  for (auto& e : engines) e.bind(net);

  parallel_for_blocks(num_blocks, threads, [&](int worker, int block) {
    FieldEngine& engine = engines[worker];
    const int begin = block * block_size;
    const int end = std::min(count, begin + block_size);
    for (int i = begin; i < end; ++i) {
      ForwardResult fr = integrate_forward(net, base[i], cfg, &engine);
      out[i] = ModelSample{fr.q1, log_rho0 + fr.delta_log_density};
    }
  });
  return out;
}

/// Model log-density at an arbitrary point, computed by flowing backward to
/// the base distribution and transporting the density along the way:
///   log rho_1(x) = log rho_0(phi^{0,1}(x)) - int_0^1 div X_s ds,
/// where the integral is taken along the curve through x. Evaluating at a
/// point produced by sample_model reproduces its log_q up to integrator error.
inline double log_density_at(const CoefficientNet& net, const ManifoldPoint& x,
                             const IntegratorConfig& cfg,
                             FieldEngine* engine = nullptr) {
  SphereSpec spec{x.ambient_dim() - 1};
  // Reversed integration accumulates -int_{t1}^{t0} div = +int_{t0}^{t1} div.
  const ForwardResult back =
      integrate_forward(net, x, cfg.reversed(), engine);
  return log_uniform_density(spec) - back.delta_log_density;
}

struct KlEstimate {
  double kl = 0.0;
  double std_error = 0.0;
  int n = 0;
};

/// Monte Carlo estimate of the reverse KL divergence
///   KL(q || p*) = E_q[ log q - log p* ]
/// from model samples; reports the standard error of the mean alongside.
inline KlEstimate estimate_kl(const std::vector<ModelSample>& samples,
                              const VmfMixture& target) {
  target.validate();
  if (samples.empty()) throw ConfigError("estimate_kl needs samples");
  const int n = static_cast<int>(samples.size());
  double mean = 0.0;
  double m2 = 0.0;
  int count = 0;
  for (const ModelSample& s : samples) {
    const double v = s.log_q - mixture_log_density(target, s.x);
    ++count;
    const double delta = v - mean;
    mean += delta / count;
    m2 += delta * (v - mean);
  }
  KlEstimate est;
  est.kl = mean;
  est.n = n;
  est.std_error = (n > 1) ? std::sqrt(m2 / (n - 1.0) / n) : 0.0;
  return est;
}

/// Normalized importance-weight effective sample size, as a percentage:
///   w_j = p*(x_j) / q(x_j),   ESS% = 100 (sum w)^2 / (N sum w^2).
/// Weights are max-shifted in the log domain before exponentiation.
inline double estimate_ess(const std::vector<ModelSample>& samples,
                           const VmfMixture& target) {
  target.validate();
  if (samples.empty()) throw ConfigError("estimate_ess needs samples");
  std::vector<double> log_w(samples.size());
  double max_log_w = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < samples.size(); ++j) {
    log_w[j] = mixture_log_density(target, samples[j].x) - samples[j].log_q;
    max_log_w = std::max(max_log_w, log_w[j]);
  }
  if (!std::isfinite(max_log_w))
    throw NumericError("all importance weights are zero");
  double sum = 0.0, sum_sq = 0.0;
  for (double lw : log_w) {
    const double w = std::exp(lw - max_log_w);
    sum += w;
    sum_sq += w * w;
  }
  return 100.0 * sum * sum / (static_cast<double>(samples.size()) * sum_sq);
}

/// Evaluation summary for one (model, target) pair.
struct EvalReport {
  double kl_nats = 0.0;
  double kl_std_error = 0.0;
  double ess_percent = 0.0;
  int n_samples = 0;
  std::uint64_t seed = 0;
};

inline EvalReport evaluate_model(const CoefficientNet& net,
                                 const VmfMixture& target,
                                 const IntegratorConfig& cfg, int n_samples,
                                 std::uint64_t seed, int threads = 1) {
  target.validate();
  if (n_samples < 1) throw ConfigError("evaluation sample count must be >= 1");
  SphereSpec spec{net.ambient_dim() - 1};
  if (target.ambient_dim() != spec.ambient_dim())
    throw ConfigError("target dimension does not match the model");
  Rng rng(seed);
  const std::vector<ModelSample> samples =
      sample_model(net, spec, cfg, n_samples, rng, threads);
  const KlEstimate kl = estimate_kl(samples, target);
  EvalReport report;
  report.kl_nats = kl.kl;
  report.kl_std_error = kl.std_error;
  report.ess_percent = estimate_ess(samples, target);
  report.n_samples = n_samples;
  report.seed = seed;
  return report;
}

}  // namespace spherecnf
