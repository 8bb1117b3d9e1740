#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spherecnf/adam.hpp"
#include "spherecnf/flow.hpp"
#include "spherecnf/metrics.hpp"
#include "spherecnf/parallel.hpp"
#include "spherecnf/sphere.hpp"
#include "spherecnf/vmf.hpp"

namespace spherecnf {

enum class GradMode { kDiscretize, kAdjoint };

inline std::string to_string(GradMode mode) {
  return mode == GradMode::kDiscretize ? "discretize" : "adjoint";
}

inline GradMode grad_mode_from_string(const std::string& s) {
  if (s == "discretize") return GradMode::kDiscretize;
  if (s == "adjoint") return GradMode::kAdjoint;
  throw ConfigError("gradient mode must be 'discretize' or 'adjoint'");
}

/// Training protocol for the density-matching task.
struct TrainConfig {
  int sphere_n = 2;
  std::vector<int> hidden = {10, 10};
  double learning_rate = 1e-3;
  int batch_size = 256;
  int epochs = 10000;
  int integrator_steps = 100;
  GradMode grad_mode = GradMode::kDiscretize;
  std::uint64_t seed = 0;
  int checkpoint_interval = 500;  ///< also the KL/ESS evaluation cadence
  int eval_samples = 20000;
  std::string target_path;
  int threads = 1;
  bool deterministic = true;  ///< sample-block-ordered gradient reduction

  void validate() const {
    if (sphere_n < 1) throw ConfigError("sphere dimension must be >= 1");
    for (int hd : hidden)
      if (hd < 1) throw ConfigError("hidden sizes must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (integrator_steps < 1) throw ConfigError("integrator steps must be >= 1");
    if (checkpoint_interval < 1)
      throw ConfigError("checkpoint interval must be >= 1");
    if (eval_samples < 1) throw ConfigError("eval sample count must be >= 1");
    if (threads < 1) throw ConfigError("thread count must be >= 1");
  }

  IntegratorConfig integrator() const {
    IntegratorConfig cfg;
    cfg.steps = integrator_steps;
    return cfg;
  }
};

struct BatchResult {
  double loss = 0.0;
  ParamGradient grad;
};

/// Reverse-KL loss and parameter gradient on an explicit batch of base
/// points:
///   loss = (1/B) sum_j [ log q(x_j) - log p*(x_j) ],   x_j = flow(q0_j).
/// Per sample the backward pass is seeded with the tangential gradient
/// -(1/B) grad log p*(x_j) on the endpoint and 1/B on the log-density
/// channel. The reduction is ordered by fixed sample blocks when
/// cfg.deterministic, making the result independent of the thread count.
inline BatchResult loss_and_grad_on_batch(const CoefficientNet& net,
                                          const VmfMixture& target,
                                          const std::vector<ManifoldPoint>& batch,
                                          const TrainConfig& cfg) {
  cfg.validate();
  target.validate();
  if (batch.empty()) throw ConfigError("empty batch");
  const int b = static_cast<int>(batch.size());
  const double inv_b = 1.0 / b;
  const SphereSpec spec{cfg.sphere_n};
  const double log_rho0 = log_uniform_density(spec);
  const IntegratorConfig icfg = cfg.integrator();

  const int block_size = cfg.deterministic ? 32 : (b + cfg.threads - 1) / cfg.threads;
  const int num_blocks = (b + block_size - 1) / block_size;
  const int workers = std::max(1, std::min(cfg.threads, num_blocks));

  std::vector<FieldEngine> engines(workers);
  for (auto& e : engines) e.bind(net);
  std::vector<ParamGradient> partial(num_blocks);
  std::vector<double> partial_loss(num_blocks, 0.0);
  for (auto& p : partial) p = ParamGradient::zeros_like(net);

  parallel_for_blocks(num_blocks, workers, [&](int worker, int block) {
    FieldEngine& engine = engines[worker];
    ForwardTape tape;
    const int begin = block * block_size;
    const int end = std::min(b, begin + block_size);
    for (int j = begin; j < end; ++j) {
      BackwardResult back;
      double log_q, log_p;
      if (cfg.grad_mode == GradMode::kDiscretize) {
        ForwardResult fr = integrate_forward(net, batch[j], icfg, &engine, &tape);
        log_q = log_rho0 + fr.delta_log_density;
        const DensityValueGrad tg = mixture_log_density_grad(target, fr.q1);
        log_p = tg.log_density;
        back = backprop_from_tape(net, tape, -inv_b * tg.grad, inv_b, &engine);
      } else {
        ForwardResult fr = integrate_forward(net, batch[j], icfg, &engine);
        log_q = log_rho0 + fr.delta_log_density;
        const DensityValueGrad tg = mixture_log_density_grad(target, fr.q1);
        log_p = tg.log_density;
        back = integrate_backward_adjoint(net, fr.q1, -inv_b * tg.grad, inv_b,
                                          icfg, &engine);
      }
      partial_loss[block] += inv_b * (log_q - log_p);
      partial[block] += back.param_grad;
    }
  });

  BatchResult out;
  out.grad = ParamGradient::zeros_like(net);
  for (int blk = 0; blk < num_blocks; ++blk) {
    out.loss += partial_loss[blk];
    out.grad += partial[blk];
  }
  if (!out.grad.all_finite() || !std::isfinite(out.loss))
    throw NumericError("batch produced a non-finite loss or gradient");
  return out;
}

/// Draws a fresh batch from the base distribution and evaluates
/// loss_and_grad_on_batch.
inline BatchResult loss_and_grad(const CoefficientNet& net,
                                 const VmfMixture& target, int batch_size,
                                 const TrainConfig& cfg, Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  const std::vector<ManifoldPoint> batch =
      sample_uniform(SphereSpec{cfg.sphere_n}, batch_size, rng);
  return loss_and_grad_on_batch(net, target, batch, cfg);
}

/// One metrics row; KL/ESS are populated on evaluation epochs only.
struct EpochRow {
  int epoch = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
  std::optional<double> kl;
  std::optional<double> kl_std_error;
  std::optional<double> ess;
};

struct TrainResult {
  CoefficientNet net;
  AdamState adam;
  Rng rng;
  std::vector<EpochRow> history;
  int epoch = 0;  ///< epochs completed
};

/// State snapshot passed to the per-epoch callback (checkpointing, logging).
struct TrainCallbackContext {
  const EpochRow& row;
  const CoefficientNet& net;
  const AdamState& adam;
  const Rng& rng;
  bool is_eval_epoch = false;
};

using TrainCallback = std::function<void(const TrainCallbackContext&)>;

/// Starting state for train(); used to resume from a checkpoint.
struct TrainStart {
  CoefficientNet net;
  AdamState adam;
  std::string rng_state;
  int epoch = 0;
};

/// Runs the training loop: one optimizer step per epoch on one fresh batch.
/// Evaluation (KL/ESS on cfg.eval_samples fresh samples from a stream derived
/// from the epoch index) runs every cfg.checkpoint_interval epochs and at the
/// end. Fully reproducible given the config; with cfg.deterministic the
/// result is also independent of cfg.threads.
inline TrainResult train(const TrainConfig& cfg, const VmfMixture& target,
                         const TrainCallback& callback = nullptr,
                         const TrainStart* resume = nullptr) {
  cfg.validate();
  target.validate();
  const SphereSpec spec{cfg.sphere_n};
  if (target.ambient_dim() != spec.ambient_dim())
    throw ConfigError("target dimension does not match the sphere");

  TrainResult result;
  if (resume != nullptr) {
    result.net = resume->net;
    result.adam = resume->adam;
    result.rng.restore_state(resume->rng_state);
    result.epoch = resume->epoch;
  } else {
    result.net = make_net(spec.ambient_dim(), cfg.hidden, cfg.seed);
    result.adam = AdamState::init(result.net);
    result.rng = Rng(cfg.seed);
  }

  auto evaluate = [&](int epoch) {
    return evaluate_model(result.net, target, cfg.integrator(),
                          cfg.eval_samples, derive_seed(cfg.seed, epoch),
                          cfg.threads);
  };

  for (int epoch = result.epoch; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const BatchResult batch =
        loss_and_grad(result.net, target, cfg.batch_size, cfg, result.rng);
    adam_step(result.adam, result.net, batch.grad, cfg.learning_rate);
    const auto stop = std::chrono::steady_clock::now();

    EpochRow row;
    row.epoch = epoch;
    row.loss = batch.loss;
    row.wall_ms =
        std::chrono::duration<double, std::milli>(stop - start).count();
    const bool eval_epoch =
        (epoch + 1) % cfg.checkpoint_interval == 0 || epoch + 1 == cfg.epochs;
    if (eval_epoch) {
      const EvalReport report = evaluate(epoch + 1);
      row.kl = report.kl_nats;
      row.kl_std_error = report.kl_std_error;
      row.ess = report.ess_percent;
    }
    result.history.push_back(row);
    result.epoch = epoch + 1;
    if (callback)
      callback(TrainCallbackContext{result.history.back(), result.net,
                                    result.adam, result.rng, eval_epoch});
  }
  return result;
}

}  // namespace spherecnf
