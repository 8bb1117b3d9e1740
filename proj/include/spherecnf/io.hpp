#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spherecnf/adam.hpp"
#include "spherecnf/coefficient_net.hpp"
#include "spherecnf/errors.hpp"
#include "spherecnf/metrics.hpp"
#include "spherecnf/trainer.hpp"

namespace spherecnf {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kCheckpointFormat = "spherecnf-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, int rows,
                                        int cols) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows)
    throw ConfigError("checkpoint matrix has wrong shape");
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(j[i].size()) != cols)
      throw ConfigError("checkpoint matrix has wrong shape");
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j, int size) {
  if (!j.is_array() || static_cast<int>(j.size()) != size)
    throw ConfigError("checkpoint vector has wrong shape");
  Eigen::VectorXd v(size);
  for (int i = 0; i < size; ++i) v[i] = j[i].get<double>();
  return v;
}

inline nlohmann::json params_to_json(const std::vector<Eigen::MatrixXd>& w,
                                     const std::vector<Eigen::VectorXd>& b) {
  nlohmann::json j;
  j["weights"] = nlohmann::json::array();
  j["biases"] = nlohmann::json::array();
  for (const auto& m : w) j["weights"].push_back(matrix_to_json(m));
  for (const auto& v : b) j["biases"].push_back(vector_to_json(v));
  return j;
}

}  // namespace detail

inline nlohmann::json net_to_json(const CoefficientNet& net) {
  net.validate();
  nlohmann::json j = detail::params_to_json(net.weights, net.biases);
  j["layer_sizes"] = net.layer_sizes;
  return j;
}

inline CoefficientNet net_from_json(const nlohmann::json& j) {
  CoefficientNet net;
  net.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  const auto& jw = j.at("weights");
  const auto& jb = j.at("biases");
  if (jw.size() + 1 != net.layer_sizes.size() || jb.size() != jw.size())
    throw ConfigError("checkpoint layer count mismatch");
  for (std::size_t l = 0; l < jw.size(); ++l) {
    net.weights.push_back(detail::matrix_from_json(
        jw[l], net.layer_sizes[l + 1], net.layer_sizes[l]));
    net.biases.push_back(detail::vector_from_json(jb[l], net.layer_sizes[l + 1]));
  }
  net.validate();
  return net;
}

inline nlohmann::json config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["sphere_n"] = cfg.sphere_n;
  j["hidden"] = cfg.hidden;
  j["learning_rate"] = cfg.learning_rate;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["integrator_steps"] = cfg.integrator_steps;
  j["grad_mode"] = to_string(cfg.grad_mode);
  j["seed"] = cfg.seed;
  j["checkpoint_interval"] = cfg.checkpoint_interval;
  j["eval_samples"] = cfg.eval_samples;
  j["target_path"] = cfg.target_path;
  j["threads"] = cfg.threads;
  j["deterministic"] = cfg.deterministic;
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.sphere_n = j.at("sphere_n").get<int>();
  cfg.hidden = j.at("hidden").get<std::vector<int>>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.integrator_steps = j.at("integrator_steps").get<int>();
  cfg.grad_mode = grad_mode_from_string(j.at("grad_mode").get<std::string>());
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.checkpoint_interval = j.at("checkpoint_interval").get<int>();
  cfg.eval_samples = j.at("eval_samples").get<int>();
  cfg.target_path = j.at("target_path").get<std::string>();
  cfg.threads = j.at("threads").get<int>();
  cfg.deterministic = j.at("deterministic").get<bool>();
  return cfg;
}

/// Versioned training checkpoint: config echo, parameters, optimizer moments,
/// rng state and epoch counter. Doubles survive the JSON round trip exactly.
struct Checkpoint {
  TrainConfig config;
  CoefficientNet net;
  AdamState adam;
  std::string rng_state;
  int epoch = 0;
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["tool_version"] = kToolVersion;
  j["epoch"] = ck.epoch;
  j["config"] = config_to_json(ck.config);
  j["net"] = net_to_json(ck.net);
  nlohmann::json adam;
  adam["step"] = ck.adam.step;
  adam["beta1"] = ck.adam.beta1;
  adam["beta2"] = ck.adam.beta2;
  adam["epsilon"] = ck.adam.epsilon;
  adam["m"] = detail::params_to_json(ck.adam.m.weights, ck.adam.m.biases);
  adam["v"] = detail::params_to_json(ck.adam.v.weights, ck.adam.v.biases);
  j["adam"] = std::move(adam);
  j["rng_state"] = ck.rng_state;

  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
  out << j.dump(1) << "\n";
  if (!out) throw ConfigError("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint is not valid JSON: " + path + ": " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat)
      throw ConfigError("not a spherecnf checkpoint: " + path);
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ConfigError("unsupported checkpoint version in " + path);
    Checkpoint ck;
    ck.epoch = j.at("epoch").get<int>();
    ck.config = config_from_json(j.at("config"));
    ck.net = net_from_json(j.at("net"));
    ck.adam.step = j.at("adam").at("step").get<long>();
    ck.adam.beta1 = j.at("adam").at("beta1").get<double>();
    ck.adam.beta2 = j.at("adam").at("beta2").get<double>();
    ck.adam.epsilon = j.at("adam").at("epsilon").get<double>();
    const auto& jm = j.at("adam").at("m");
    const auto& jv = j.at("adam").at("v");
    ck.adam.m = ParamGradient::zeros_like(ck.net);
    ck.adam.v = ParamGradient::zeros_like(ck.net);
    for (std::size_t l = 0; l < ck.net.weights.size(); ++l) {
      const int rows = ck.net.layer_sizes[l + 1];
      const int cols = ck.net.layer_sizes[l];
      ck.adam.m.weights[l] = detail::matrix_from_json(jm.at("weights")[l], rows, cols);
      ck.adam.m.biases[l] = detail::vector_from_json(jm.at("biases")[l], rows);
      ck.adam.v.weights[l] = detail::matrix_from_json(jv.at("weights")[l], rows, cols);
      ck.adam.v.biases[l] = detail::vector_from_json(jv.at("biases")[l], rows);
    }
    ck.rng_state = j.at("rng_state").get<std::string>();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed checkpoint " + path + ": " + e.what());
  }
}

/// FNV-1a content hash over the parameter bytes (and layer sizes), printed as
/// hex. Identifies parameter snapshots in manifests and reports.
inline std::string param_content_hash(const CoefficientNet& net) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix_bytes = [&h](const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (int s : net.layer_sizes) mix_bytes(&s, sizeof(s));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    mix_bytes(net.weights[l].data(),
              sizeof(double) * static_cast<std::size_t>(net.weights[l].size()));
    mix_bytes(net.biases[l].data(),
              sizeof(double) * static_cast<std::size_t>(net.biases[l].size()));
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Incremental metrics log: one CSV row per epoch, KL/ESS columns populated
/// on evaluation epochs.
class MetricsCsvWriter {
 public:
  explicit MetricsCsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw ConfigError("cannot write metrics csv: " + path);
    out_ << "epoch,loss,wall_ms,kl,kl_std_error,ess\n";
  }

  void write_row(const EpochRow& row) {
    out_ << row.epoch << ',' << format(row.loss) << ',' << format(row.wall_ms)
         << ',';
    if (row.kl) out_ << format(*row.kl);
    out_ << ',';
    if (row.kl_std_error) out_ << format(*row.kl_std_error);
    out_ << ',';
    if (row.ess) out_ << format(*row.ess);
    out_ << '\n';
    out_.flush();
  }

 private:
  static std::string format(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
  }
  std::ofstream out_;
};

inline void write_samples_csv(const std::string& path,
                              const std::vector<ModelSample>& samples) {
  if (samples.empty()) throw ConfigError("no samples to write");
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write samples csv: " + path);
  const int m = samples.front().x.ambient_dim();
  for (int i = 0; i < m; ++i) out << 'x' << i << ',';
  out << "log_q\n";
  out << std::setprecision(17);
  for (const ModelSample& s : samples) {
    for (int i = 0; i < m; ++i) out << s.x[i] << ',';
    out << s.log_q << '\n';
  }
  if (!out) throw ConfigError("failed writing samples csv: " + path);
}

/// Row-major (theta, phi, log_density) grid for S^2 plots.
inline void write_grid_csv(const std::string& path,
                           const std::vector<double>& thetas,
                           const std::vector<double>& phis,
                           const std::vector<double>& log_density) {
  if (log_density.size() != thetas.size() * phis.size())
    throw ConfigError("grid size mismatch");
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write grid csv: " + path);
  out << "theta,phi,log_density\n";
  out << std::setprecision(17);
  std::size_t idx = 0;
  for (double theta : thetas)
    for (double phi : phis) out << theta << ',' << phi << ',' << log_density[idx++] << '\n';
  if (!out) throw ConfigError("failed writing grid csv: " + path);
}

inline void write_manifest(const std::string& path, const TrainConfig& cfg,
                           const CoefficientNet& net,
                           const std::string& started_at,
                           const std::string& finished_at) {
  nlohmann::json j;
  j["tool"] = "spherecnf";
  j["tool_version"] = kToolVersion;
  j["config"] = config_to_json(cfg);
  j["seed"] = cfg.seed;
  j["param_hash"] = param_content_hash(net);
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write manifest: " + path);
  out << j.dump(1) << "\n";
  if (!out) throw ConfigError("failed writing manifest: " + path);
}

inline std::string iso8601_now() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

}  // namespace spherecnf
