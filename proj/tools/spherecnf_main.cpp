// Command-line frontend: train / eval / sample / grid / check.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spherecnf/diagnostics.hpp"
#include "spherecnf/io.hpp"
#include "spherecnf/metrics.hpp"
#include "spherecnf/trainer.hpp"
#include "spherecnf/vmf.hpp"

namespace fs = std::filesystem;
using namespace spherecnf;

namespace {

int default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

struct TrainCli {
  TrainConfig cfg;
  std::string grad_mode_name = "discretize";
  std::string out_dir;
  std::string resume_path;
};

int run_train(TrainCli& cli) {
  cli.cfg.grad_mode = grad_mode_from_string(cli.grad_mode_name);
  cli.cfg.validate();
  if (cli.cfg.target_path.empty())
    throw ConfigError("train requires a target file (--target)");
  const VmfMixture target = load_target(cli.cfg.target_path);
  if (target.ambient_dim() != cli.cfg.sphere_n + 1)
    throw ConfigError("target dimension does not match --n");

  if (cli.out_dir.empty()) cli.out_dir = "run";
  fs::create_directories(cli.out_dir);
  const std::string started_at = iso8601_now();

  TrainStart start;
  const TrainStart* resume = nullptr;
  if (!cli.resume_path.empty()) {
    const Checkpoint ck = load_checkpoint(cli.resume_path);
    start.net = ck.net;
    start.adam = ck.adam;
    start.rng_state = ck.rng_state;
    start.epoch = ck.epoch;
    resume = &start;
    std::cout << "resuming from epoch " << ck.epoch << "\n";
  }

  MetricsCsvWriter metrics(cli.out_dir + "/metrics.csv");
  {
    const CoefficientNet init_net =
        resume ? start.net
               : make_net(cli.cfg.sphere_n + 1, cli.cfg.hidden, cli.cfg.seed);
    write_manifest(cli.out_dir + "/manifest.json", cli.cfg, init_net,
                   started_at, "");
  }

  auto checkpoint_path = [&](int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "checkpoint_%06d.json", epoch);
    return cli.out_dir + "/" + buf;
  };

  const TrainResult result = train(
      cli.cfg, target,
      [&](const TrainCallbackContext& ctx) {
        metrics.write_row(ctx.row);
        if (ctx.is_eval_epoch) {
          std::cout << "epoch " << ctx.row.epoch << "  loss " << ctx.row.loss
                    << "  kl " << *ctx.row.kl << " +/- " << *ctx.row.kl_std_error
                    << "  ess% " << *ctx.row.ess << std::endl;
          Checkpoint ck{cli.cfg, ctx.net, ctx.adam, ctx.rng.save_state(),
                        ctx.row.epoch + 1};
          save_checkpoint(checkpoint_path(ctx.row.epoch + 1), ck);
        }
      },
      resume);

  Checkpoint final_ck{cli.cfg, result.net, result.adam,
                      result.rng.save_state(), result.epoch};
  save_checkpoint(cli.out_dir + "/checkpoint_final.json", final_ck);
  write_manifest(cli.out_dir + "/manifest.json", cli.cfg, result.net,
                 started_at, iso8601_now());
  std::cout << "wrote " << cli.out_dir << "/checkpoint_final.json  (param hash "
            << param_content_hash(result.net) << ")\n";
  return 0;
}

struct EvalCli {
  std::string checkpoint_path;
  std::string target_path;
  int samples = 20000;
  std::uint64_t seed = 0;
  int steps = 0;  // 0 = use checkpoint config
  int threads = default_threads();
  std::string out_path;
};

int run_eval(const EvalCli& cli) {
  const Checkpoint ck = load_checkpoint(cli.checkpoint_path);
  const std::string target_path =
      cli.target_path.empty() ? ck.config.target_path : cli.target_path;
  if (target_path.empty())
    throw ConfigError("eval requires a target file (--target)");
  const VmfMixture target = load_target(target_path);
  IntegratorConfig icfg;
  icfg.steps = cli.steps > 0 ? cli.steps : ck.config.integrator_steps;
  const EvalReport report = evaluate_model(ck.net, target, icfg, cli.samples,
                                           cli.seed, cli.threads);
  std::cout << "kl_nats " << report.kl_nats << "\n"
            << "kl_std_error " << report.kl_std_error << "\n"
            << "ess_percent " << report.ess_percent << "\n"
            << "n_samples " << report.n_samples << "\n"
            << "seed " << report.seed << "\n";
  if (!cli.out_path.empty()) {
    nlohmann::json j;
    j["kl_nats"] = report.kl_nats;
    j["kl_std_error"] = report.kl_std_error;
    j["ess_percent"] = report.ess_percent;
    j["n_samples"] = report.n_samples;
    j["seed"] = report.seed;
    j["checkpoint"] = cli.checkpoint_path;
    j["target"] = target_path;
    j["param_hash"] = param_content_hash(ck.net);
    std::ofstream out(cli.out_path);
    if (!out) throw ConfigError("cannot write report: " + cli.out_path);
    out << j.dump(1) << "\n";
  }
  return 0;
}

struct SampleCli {
  std::string checkpoint_path;
  int count = 1000;
  std::uint64_t seed = 0;
  std::string out_path = "samples.csv";
  int steps = 0;
  int threads = default_threads();
};

int run_sample(const SampleCli& cli) {
  const Checkpoint ck = load_checkpoint(cli.checkpoint_path);
  IntegratorConfig icfg;
  icfg.steps = cli.steps > 0 ? cli.steps : ck.config.integrator_steps;
  Rng rng(cli.seed);
  const SphereSpec spec{ck.net.ambient_dim() - 1};
  const std::vector<ModelSample> samples =
      sample_model(ck.net, spec, icfg, cli.count, rng, cli.threads);
  write_samples_csv(cli.out_path, samples);
  std::cout << "wrote " << cli.out_path << " (" << samples.size() << " rows)\n";
  return 0;
}

struct GridCli {
  std::string checkpoint_path;
  int n_lat = 200;
  int n_lon = 400;
  std::string out_path = "grid.csv";
  int steps = 0;
  int threads = default_threads();
};

int run_grid(const GridCli& cli) {
  const Checkpoint ck = load_checkpoint(cli.checkpoint_path);
  if (ck.net.ambient_dim() != 3)
    throw ConfigError("grid is only defined for S^2 checkpoints");
  if (cli.n_lat < 1 || cli.n_lon < 1)
    throw ConfigError("grid resolution must be positive");
  IntegratorConfig icfg;
  icfg.steps = cli.steps > 0 ? cli.steps : ck.config.integrator_steps;

  std::vector<double> thetas(cli.n_lat), phis(cli.n_lon);
  for (int i = 0; i < cli.n_lat; ++i)
    thetas[i] = (i + 0.5) * std::numbers::pi / cli.n_lat;
  for (int j = 0; j < cli.n_lon; ++j)
    phis[j] = (j + 0.5) * 2.0 * std::numbers::pi / cli.n_lon;

  std::vector<double> values(thetas.size() * phis.size());
  std::vector<FieldEngine> engines(std::max(1, cli.threads));
  for (auto& e : engines) e.bind(ck.net);
  parallel_for_blocks(cli.n_lat, cli.threads, [&](int worker, int row) {
    FieldEngine& engine = engines[worker];
    const double theta = thetas[row];
    for (int j = 0; j < cli.n_lon; ++j) {
      Eigen::VectorXd z(3);
      z << std::sin(theta) * std::cos(phis[j]),
          std::sin(theta) * std::sin(phis[j]), std::cos(theta);
      values[static_cast<std::size_t>(row) * phis.size() + j] =
          log_density_at(ck.net, ManifoldPoint::normalized(z), icfg, &engine);
    }
  });
  write_grid_csv(cli.out_path, thetas, phis, values);
  std::cout << "wrote " << cli.out_path << " (" << values.size() << " cells)\n";
  return 0;
}

int run_check(const std::string& scope, std::uint64_t seed) {
  const std::vector<CheckResult> results = run_checks(scope, seed);
  bool all_pass = true;
  for (const CheckResult& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << "  observed "
              << r.observed << "  tolerance " << r.tolerance << "\n";
    all_pass = all_pass && r.pass;
  }
  if (!all_pass) throw NumericError("self-checks failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous normalizing flows on hyperspheres"};
  app.require_subcommand(1);
  app.set_config("--config")->envname("SPHERECNF_CONFIG");

  TrainCli train_cli;
  train_cli.cfg.threads = default_threads();
  auto* train_cmd = app.add_subcommand("train", "train a flow against a target density");
  train_cmd->add_option("--target", train_cli.cfg.target_path, "target density file")
      ->envname("SPHERECNF_TARGET");
  train_cmd->add_option("--out", train_cli.out_dir, "output directory")
      ->envname("SPHERECNF_OUT");
  train_cmd->add_option("--n", train_cli.cfg.sphere_n, "sphere dimension n");
  train_cmd->add_option("--hidden", train_cli.cfg.hidden, "hidden layer sizes");
  train_cmd->add_option("--lr", train_cli.cfg.learning_rate, "learning rate");
  train_cmd->add_option("--batch", train_cli.cfg.batch_size, "batch size");
  train_cmd->add_option("--epochs", train_cli.cfg.epochs, "optimizer steps")
      ->envname("SPHERECNF_EPOCHS");
  train_cmd->add_option("--steps", train_cli.cfg.integrator_steps, "integrator steps")
      ->envname("SPHERECNF_STEPS");
  train_cmd->add_option("--grad-mode", train_cli.grad_mode_name,
                        "gradient mode: discretize | adjoint")
      ->envname("SPHERECNF_GRAD_MODE");
  train_cmd->add_option("--seed", train_cli.cfg.seed, "rng seed")
      ->envname("SPHERECNF_SEED");
  train_cmd->add_option("--checkpoint-interval", train_cli.cfg.checkpoint_interval,
                        "epochs between checkpoints and KL/ESS evaluations");
  train_cmd->add_option("--eval-samples", train_cli.cfg.eval_samples,
                        "samples per KL/ESS evaluation");
  train_cmd->add_option("--threads", train_cli.cfg.threads, "worker threads")
      ->envname("SPHERECNF_THREADS");
  train_cmd->add_flag("--deterministic,!--no-deterministic",
                      train_cli.cfg.deterministic,
                      "sample-ordered gradient reduction (thread-count independent)");
  train_cmd->add_option("--resume", train_cli.resume_path, "checkpoint to resume from");

  EvalCli eval_cli;
  auto* eval_cmd = app.add_subcommand("eval", "KL/ESS of a checkpoint against a target");
  eval_cmd->add_option("--checkpoint", eval_cli.checkpoint_path, "checkpoint file")
      ->required();
  eval_cmd->add_option("--target", eval_cli.target_path,
                       "target density file (default: from checkpoint)");
  eval_cmd->add_option("--samples", eval_cli.samples, "evaluation sample count");
  eval_cmd->add_option("--seed", eval_cli.seed, "rng seed")->envname("SPHERECNF_SEED");
  eval_cmd->add_option("--steps", eval_cli.steps, "integrator steps override");
  eval_cmd->add_option("--threads", eval_cli.threads, "worker threads")
      ->envname("SPHERECNF_THREADS");
  eval_cmd->add_option("--out", eval_cli.out_path, "write report JSON here");

  SampleCli sample_cli;
  auto* sample_cmd = app.add_subcommand("sample", "draw model samples with log-densities");
  sample_cmd->add_option("--checkpoint", sample_cli.checkpoint_path, "checkpoint file")
      ->required();
  sample_cmd->add_option("--count", sample_cli.count, "number of samples");
  sample_cmd->add_option("--seed", sample_cli.seed, "rng seed")->envname("SPHERECNF_SEED");
  sample_cmd->add_option("--out", sample_cli.out_path, "output CSV path");
  sample_cmd->add_option("--steps", sample_cli.steps, "integrator steps override");
  sample_cmd->add_option("--threads", sample_cli.threads, "worker threads")
      ->envname("SPHERECNF_THREADS");

  GridCli grid_cli;
  auto* grid_cmd = app.add_subcommand("grid", "log-density on a lat-lon grid (S^2)");
  grid_cmd->add_option("--checkpoint", grid_cli.checkpoint_path, "checkpoint file")
      ->required();
  grid_cmd->add_option("--lat", grid_cli.n_lat, "latitude resolution");
  grid_cmd->add_option("--lon", grid_cli.n_lon, "longitude resolution");
  grid_cmd->add_option("--out", grid_cli.out_path, "output CSV path");
  grid_cmd->add_option("--steps", grid_cli.steps, "integrator steps override");
  grid_cmd->add_option("--threads", grid_cli.threads, "worker threads")
      ->envname("SPHERECNF_THREADS");

  std::string check_scope = "all";
  std::uint64_t check_seed = 20240917;
  auto* check_cmd = app.add_subcommand("check", "run numerical self-diagnostics");
  check_cmd->add_option("--scope", check_scope,
                        "gradients | divergence | flow-laws | all");
  check_cmd->add_option("--seed", check_seed, "rng seed")->envname("SPHERECNF_SEED");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train_cmd->parsed()) return run_train(train_cli);
    if (eval_cmd->parsed()) return run_eval(eval_cli);
    if (sample_cmd->parsed()) return run_sample(sample_cli);
    if (grid_cmd->parsed()) return run_grid(grid_cli);
    if (check_cmd->parsed()) return run_check(check_scope, check_seed);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
