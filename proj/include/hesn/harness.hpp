#pragma once

// Experiment harness: flat key = value configs, grid sweeps over seeds with a
// worker pool and per-job checkpoints, online alpha paths, and report files.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hesn/error.hpp"
#include "hesn/online.hpp"
#include "hesn/readout.hpp"
#include "hesn/reservoir.hpp"
#include "hesn/rng.hpp"
#include "hesn/tasks.hpp"

namespace hesn {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kSurfaceSchema = 1;

enum class Task { narma10, narma5, telegraph_state, telegraph_regime, telegraph_joint, psmnist, delayed_narma };
enum class Trainer { ridge, online };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::narma10: return "narma10";
    case Task::narma5: return "narma5";
    case Task::telegraph_state: return "telegraph-state";
    case Task::telegraph_regime: return "telegraph-regime";
    case Task::telegraph_joint: return "telegraph-joint";
    case Task::psmnist: return "psmnist";
    case Task::delayed_narma: return "delayed-narma";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  for (Task t : {Task::narma10, Task::narma5, Task::telegraph_state, Task::telegraph_regime, Task::telegraph_joint,
                 Task::psmnist, Task::delayed_narma}) {
    if (to_string(t) == s) return t;
  }
  throw ParseError("unknown task '" + s + "'");
}

inline std::string to_string(Trainer t) { return t == Trainer::ridge ? "ridge" : "online"; }

inline Trainer parse_trainer(const std::string& s) {
  if (s == "ridge") return Trainer::ridge;
  if (s == "online") return Trainer::online;
  throw ParseError("unknown trainer '" + s + "'");
}

/// True when larger metric values are better (accuracy); NRMSE tasks minimize.
inline bool higher_is_better(Task t) {
  return !(t == Task::narma10 || t == Task::narma5 || t == Task::delayed_narma);
}

inline bool is_narma(Task t) { return t == Task::narma10 || t == Task::narma5 || t == Task::delayed_narma; }

inline bool is_telegraph(Task t) {
  return t == Task::telegraph_state || t == Task::telegraph_regime || t == Task::telegraph_joint;
}

inline std::vector<double> default_alpha_grid() { return {0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}; }

struct ExperimentConfig {
  Task task = Task::narma10;
  Topology topology = Topology::hierarchical;
  Index n_total = 100;
  std::vector<double> alpha1 = default_alpha_grid();
  std::vector<double> alpha2 = default_alpha_grid();
  std::vector<double> rho{0.95};
  std::vector<double> gamma{0.2};
  std::vector<double> coupling_strength{1.0};
  std::vector<Index> delay{0};
  WeightDist dist = WeightDist::normal;
  Index degree = 10;
  int seeds = 20;
  std::uint64_t seed = 1;
  Trainer trainer = Trainer::ridge;
  OnlineSchedule schedule;

  // Stream protocol.
  Index washout = 200;
  Index train_len = 4000;
  Index val_len = 1000;
  Index test_len = 1000;
  Index telegraph_train = 100000;
  Index telegraph_test = 20000;
  double sigma = 1.0;
  double p1 = 0.05;
  double p2 = 0.1;
  double p3 = 0.0005;

  // psMNIST.
  std::string mnist_dir = "data/mnist";
  Index mnist_train = 2000;
  Index mnist_test = 500;
  Index frame_stride = 196;
  std::uint64_t perm_seed = 1;
  int readout_epochs = 200;
  double readout_eta = 5e-3;
  Index readout_batch = 50;

  // Online alpha paths.
  double alpha1_start = 0.5;
  double alpha2_start = 0.5;
  bool train_alpha = true;
  std::vector<double> sigma_stages;
  std::vector<double> phase_p1;
  std::vector<double> phase_p2;
  long stage_steps = 50000;

  std::string output_dir = "out";
  int jobs = 1;
  bool resume = true;

  Index partition_size() const { return topology == Topology::single ? n_total : n_total / 2; }

  void validate() const;
};

// ---------------------------------------------------------------------------
// Config file

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParseError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParseError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(to_double(key, item));
  return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

}  // namespace detail

using ConfigSetter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, ConfigSetter>& config_keys() {
  using namespace detail;
  static const std::map<std::string, ConfigSetter> keys = {
      {"task", [](auto& c, auto&, auto& v) { c.task = parse_task(v); }},
      {"topology", [](auto& c, auto&, auto& v) { c.topology = parse_topology(v); }},
      {"n_total", [](auto& c, auto& k, auto& v) { c.n_total = to_int(k, v); }},
      {"alpha1", [](auto& c, auto& k, auto& v) { c.alpha1 = to_doubles(k, v); }},
      {"alpha2", [](auto& c, auto& k, auto& v) { c.alpha2 = to_doubles(k, v); }},
      {"rho", [](auto& c, auto& k, auto& v) { c.rho = to_doubles(k, v); }},
      {"gamma", [](auto& c, auto& k, auto& v) { c.gamma = to_doubles(k, v); }},
      {"coupling_strength", [](auto& c, auto& k, auto& v) { c.coupling_strength = to_doubles(k, v); }},
      {"delay",
       [](auto& c, auto& k, auto& v) {
         c.delay.clear();
         for (const auto& item : split_list(v)) c.delay.push_back(to_int(k, item));
       }},
      {"dist", [](auto& c, auto&, auto& v) { c.dist = parse_weight_dist(v); }},
      {"degree", [](auto& c, auto& k, auto& v) { c.degree = to_int(k, v); }},
      {"seeds", [](auto& c, auto& k, auto& v) { c.seeds = static_cast<int>(to_int(k, v)); }},
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"trainer", [](auto& c, auto&, auto& v) { c.trainer = parse_trainer(v); }},
      {"eta_W", [](auto& c, auto& k, auto& v) { c.schedule.eta_W = to_double(k, v); }},
      {"eta_alpha", [](auto& c, auto& k, auto& v) { c.schedule.eta_alpha = to_double(k, v); }},
      {"beta1_W", [](auto& c, auto& k, auto& v) { c.schedule.beta1_W = to_double(k, v); }},
      {"beta1_alpha", [](auto& c, auto& k, auto& v) { c.schedule.beta1_alpha = to_double(k, v); }},
      {"beta2", [](auto& c, auto& k, auto& v) { c.schedule.beta2 = to_double(k, v); }},
      {"epsilon", [](auto& c, auto& k, auto& v) { c.schedule.epsilon = to_double(k, v); }},
      {"n_batch", [](auto& c, auto& k, auto& v) { c.schedule.N_batch = to_int(k, v); }},
      {"reinit_patience", [](auto& c, auto& k, auto& v) { c.schedule.reinit_patience = to_int(k, v); }},
      {"reinit_min_gap", [](auto& c, auto& k, auto& v) { c.schedule.reinit_min_gap = to_int(k, v); }},
      {"convergence_tol", [](auto& c, auto& k, auto& v) { c.schedule.convergence_tol = to_double(k, v); }},
      {"stability_tol", [](auto& c, auto& k, auto& v) { c.schedule.stability_tol = to_double(k, v); }},
      {"max_steps", [](auto& c, auto& k, auto& v) { c.schedule.max_steps = to_int(k, v); }},
      {"stop_on_stable", [](auto& c, auto& k, auto& v) { c.schedule.stop_on_stable = to_bool(k, v); }},
      {"weight_init_scale", [](auto& c, auto& k, auto& v) { c.schedule.weight_init_scale = to_double(k, v); }},
      {"washout", [](auto& c, auto& k, auto& v) { c.washout = to_int(k, v); }},
      {"train_len", [](auto& c, auto& k, auto& v) { c.train_len = to_int(k, v); }},
      {"val_len", [](auto& c, auto& k, auto& v) { c.val_len = to_int(k, v); }},
      {"test_len", [](auto& c, auto& k, auto& v) { c.test_len = to_int(k, v); }},
      {"telegraph_train", [](auto& c, auto& k, auto& v) { c.telegraph_train = to_int(k, v); }},
      {"telegraph_test", [](auto& c, auto& k, auto& v) { c.telegraph_test = to_int(k, v); }},
      {"sigma", [](auto& c, auto& k, auto& v) { c.sigma = to_double(k, v); }},
      {"p1", [](auto& c, auto& k, auto& v) { c.p1 = to_double(k, v); }},
      {"p2", [](auto& c, auto& k, auto& v) { c.p2 = to_double(k, v); }},
      {"p3", [](auto& c, auto& k, auto& v) { c.p3 = to_double(k, v); }},
      {"mnist_dir", [](auto& c, auto&, auto& v) { c.mnist_dir = v; }},
      {"mnist_train", [](auto& c, auto& k, auto& v) { c.mnist_train = to_int(k, v); }},
      {"mnist_test", [](auto& c, auto& k, auto& v) { c.mnist_test = to_int(k, v); }},
      {"frame_stride", [](auto& c, auto& k, auto& v) { c.frame_stride = to_int(k, v); }},
      {"perm_seed", [](auto& c, auto& k, auto& v) { c.perm_seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"readout_epochs", [](auto& c, auto& k, auto& v) { c.readout_epochs = static_cast<int>(to_int(k, v)); }},
      {"readout_eta", [](auto& c, auto& k, auto& v) { c.readout_eta = to_double(k, v); }},
      {"readout_batch", [](auto& c, auto& k, auto& v) { c.readout_batch = to_int(k, v); }},
      {"alpha1_start", [](auto& c, auto& k, auto& v) { c.alpha1_start = to_double(k, v); }},
      {"alpha2_start", [](auto& c, auto& k, auto& v) { c.alpha2_start = to_double(k, v); }},
      {"train_alpha", [](auto& c, auto& k, auto& v) { c.train_alpha = to_bool(k, v); }},
      {"sigma_stages", [](auto& c, auto& k, auto& v) { c.sigma_stages = to_doubles(k, v); }},
      {"phase_p1", [](auto& c, auto& k, auto& v) { c.phase_p1 = to_doubles(k, v); }},
      {"phase_p2", [](auto& c, auto& k, auto& v) { c.phase_p2 = to_doubles(k, v); }},
      {"stage_steps", [](auto& c, auto& k, auto& v) { c.stage_steps = to_int(k, v); }},
      {"output_dir", [](auto& c, auto&, auto& v) { c.output_dir = v; }},
      {"jobs", [](auto& c, auto& k, auto& v) { c.jobs = static_cast<int>(to_int(k, v)); }},
      {"resume", [](auto& c, auto& k, auto& v) { c.resume = to_bool(k, v); }},
  };
  return keys;
}

/// `key = value` per line; '#' starts a comment; lists are comma-separated.
/// Unknown or repeated keys are errors.
inline ExperimentConfig parse_config(std::istream& is, ExperimentConfig cfg = {}) {
  const auto& keys = config_keys();
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = keys.find(key);
    if (it == keys.end()) throw ParseError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) {
      throw ParseError("config line " + std::to_string(lineno) + ": key '" + key + "' given twice");
    }
    try {
      it->second(cfg, key, value);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config '" + path + "'");
  return parse_config(in);
}

/// Full config echo; parse_config(write_config(c)) == c.
inline void write_config(std::ostream& os, const ExperimentConfig& c) {
  using detail::join;
  os.precision(17);
  const auto& s = c.schedule;
  os << "task = " << to_string(c.task) << "\n"
     << "topology = " << to_string(c.topology) << "\n"
     << "n_total = " << c.n_total << "\n"
     << "alpha1 = " << join(c.alpha1) << "\n"
     << "alpha2 = " << join(c.alpha2) << "\n"
     << "rho = " << join(c.rho) << "\n"
     << "gamma = " << join(c.gamma) << "\n"
     << "coupling_strength = " << join(c.coupling_strength) << "\n"
     << "delay = " << join(c.delay) << "\n"
     << "dist = " << to_string(c.dist) << "\n"
     << "degree = " << c.degree << "\n"
     << "seeds = " << c.seeds << "\n"
     << "seed = " << c.seed << "\n"
     << "trainer = " << to_string(c.trainer) << "\n"
     << "eta_W = " << s.eta_W << "\n"
     << "eta_alpha = " << s.eta_alpha << "\n"
     << "beta1_W = " << s.beta1_W << "\n"
     << "beta1_alpha = " << s.beta1_alpha << "\n"
     << "beta2 = " << s.beta2 << "\n"
     << "epsilon = " << s.epsilon << "\n"
     << "n_batch = " << s.N_batch << "\n"
     << "reinit_patience = " << s.reinit_patience << "\n"
     << "reinit_min_gap = " << s.reinit_min_gap << "\n"
     << "convergence_tol = " << s.convergence_tol << "\n"
     << "stability_tol = " << s.stability_tol << "\n"
     << "max_steps = " << s.max_steps << "\n"
     << "stop_on_stable = " << (s.stop_on_stable ? "true" : "false") << "\n"
     << "weight_init_scale = " << s.weight_init_scale << "\n"
     << "washout = " << c.washout << "\n"
     << "train_len = " << c.train_len << "\n"
     << "val_len = " << c.val_len << "\n"
     << "test_len = " << c.test_len << "\n"
     << "telegraph_train = " << c.telegraph_train << "\n"
     << "telegraph_test = " << c.telegraph_test << "\n"
     << "sigma = " << c.sigma << "\n"
     << "p1 = " << c.p1 << "\n"
     << "p2 = " << c.p2 << "\n"
     << "p3 = " << c.p3 << "\n"
     << "mnist_dir = " << c.mnist_dir << "\n"
     << "mnist_train = " << c.mnist_train << "\n"
     << "mnist_test = " << c.mnist_test << "\n"
     << "frame_stride = " << c.frame_stride << "\n"
     << "perm_seed = " << c.perm_seed << "\n"
     << "readout_epochs = " << c.readout_epochs << "\n"
     << "readout_eta = " << c.readout_eta << "\n"
     << "readout_batch = " << c.readout_batch << "\n"
     << "alpha1_start = " << c.alpha1_start << "\n"
     << "alpha2_start = " << c.alpha2_start << "\n"
     << "train_alpha = " << (c.train_alpha ? "true" : "false") << "\n"
     << "sigma_stages = " << join(c.sigma_stages) << "\n"
     << "phase_p1 = " << join(c.phase_p1) << "\n"
     << "phase_p2 = " << join(c.phase_p2) << "\n"
     << "stage_steps = " << c.stage_steps << "\n"
     << "output_dir = " << c.output_dir << "\n"
     << "jobs = " << c.jobs << "\n"
     << "resume = " << (c.resume ? "true" : "false") << "\n";
}

inline void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidArgument("config: " + m); };
  if (alpha1.empty() || alpha2.empty() || rho.empty() || gamma.empty() || coupling_strength.empty() ||
      delay.empty()) {
    fail("grid lists must not be empty");
  }
  for (double a : alpha1)
    if (!(a > 0.0 && a <= 1.0)) fail("alpha1 values must lie in (0, 1]");
  for (double a : alpha2)
    if (!(a > 0.0 && a <= 1.0)) fail("alpha2 values must lie in (0, 1]");
  for (double r : rho)
    if (!(r >= 0.0 && r <= 1.0)) fail("rho values must lie in [0, 1]");
  for (double g : gamma)
    if (!(g >= 0.0)) fail("gamma values must be >= 0");
  for (double c : coupling_strength)
    if (!(c >= 0.0)) fail("coupling_strength values must be >= 0");
  for (Index d : delay)
    if (d < 0) fail("delay values must be >= 0");
  if (n_total < 2 || (topology != Topology::single && n_total % 2 != 0)) {
    fail("n_total must be >= 2 and even for two-partition topologies");
  }
  if (degree < 1 || degree > partition_size()) fail("degree must lie in [1, partition size]");
  if (seeds < 1) fail("seeds must be >= 1");
  if (jobs < 1) fail("jobs must be >= 1");
  if (washout < 0 || train_len < 2 || val_len < 1 || test_len < 2) fail("stream lengths must be positive");
  if (telegraph_train < 10 || telegraph_test < 2) fail("telegraph lengths must be positive");
  check_telegraph(p1, p2, p3, sigma);
  if (frame_stride < 1 || 784 % frame_stride != 0) fail("frame_stride must divide 784");
  if (mnist_train < 10 || mnist_test < 10) fail("mnist_train and mnist_test must be >= 10");
  if (readout_epochs < 1 || readout_batch < 1 || !(readout_eta > 0.0)) fail("readout training settings must be positive");
  for (double a : {alpha1_start, alpha2_start})
    if (!(a > 0.0 && a <= 1.0)) fail("alpha starts must lie in (0, 1]");
  if (phase_p1.size() != phase_p2.size()) fail("phase_p1 and phase_p2 must have equal length");
  for (double s : sigma_stages)
    if (!(s >= 0.0)) fail("sigma_stages must be >= 0");
  if (stage_steps < 1) fail("stage_steps must be >= 1");
  schedule.validate();
}

// ---------------------------------------------------------------------------
// Grid cells

struct CellParams {
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  double rho = 0.95;
  double gamma = 0.2;
  double coupling = 1.0;
  Index delay = 0;
};

/// Cartesian product, alpha1 outermost. Lists that do not apply to the
/// topology or task collapse to their first value.
inline std::vector<CellParams> enumerate_cells(const ExperimentConfig& cfg) {
  const bool two = cfg.topology != Topology::single || cfg.task == Task::delayed_narma;
  const std::vector<double> a1 = cfg.task == Task::delayed_narma ? std::vector<double>{1.0} : cfg.alpha1;
  const std::vector<double> a2 = two ? cfg.alpha2 : std::vector<double>{0.0};
  const std::vector<double> cs =
      cfg.topology == Topology::hierarchical ? cfg.coupling_strength : std::vector<double>{0.0};
  const std::vector<Index> ds = cfg.task == Task::delayed_narma ? cfg.delay : std::vector<Index>{0};
  std::vector<CellParams> cells;
  for (double x1 : a1)
    for (double x2 : a2)
      for (double r : cfg.rho)
        for (double g : cfg.gamma)
          for (double c : cs)
            for (Index d : ds) cells.push_back({x1, two ? x2 : x1, r, g, c, d});
  return cells;
}

inline std::uint64_t network_seed(const ExperimentConfig& cfg, int seed_index) {
  return Rng::derive(cfg.seed, 1000 + static_cast<std::uint64_t>(seed_index)).next_u64();
}

inline std::uint64_t data_seed(const ExperimentConfig& cfg, int seed_index) {
  return Rng::derive(cfg.seed, 2000 + static_cast<std::uint64_t>(seed_index)).next_u64();
}

inline NetworkConfig network_config(const ExperimentConfig& cfg, const CellParams& p, Index input_dim = 1) {
  NetworkConfig nc;
  nc.topology = cfg.topology;
  nc.coupling_strength = p.coupling;
  nc.coupling_degree = cfg.degree;
  nc.coupling_dist = cfg.dist;
  SubReservoirConfig part;
  part.n = cfg.partition_size();
  part.input_dim = input_dim;
  part.degree = cfg.degree;
  part.dist = cfg.dist;
  part.rho = p.rho;
  part.gamma = p.gamma;
  part.alpha = p.alpha1;
  nc.parts = {part};
  if (cfg.topology != Topology::single) {
    part.alpha = p.alpha2;
    nc.parts.push_back(part);
  }
  return nc;
}

/// Test and validation score of one (cell, seed) job.
struct CellMetric {
  double test = std::numeric_limits<double>::quiet_NaN();
  double validation = std::numeric_limits<double>::quiet_NaN();
};

/// Data shared read-only by every job of an experiment.
struct SharedData {
  std::optional<PsmnistDataset> mnist_train;
  std::optional<PsmnistDataset> mnist_test;
};

inline SharedData load_shared_data(const ExperimentConfig& cfg) {
  SharedData sd;
  if (cfg.task == Task::psmnist) {
    const std::filesystem::path dir(cfg.mnist_dir);
    const auto tr = load_mnist_idx((dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string());
    const auto te = load_mnist_idx((dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string());
    const auto n_tr = static_cast<std::size_t>(cfg.mnist_train);
    const auto n_te = static_cast<std::size_t>(cfg.mnist_test);
    sd.mnist_train = permute_serialize(tr, cfg.perm_seed, n_tr < tr.labels.size() ? std::optional(n_tr) : std::nullopt);
    sd.mnist_test = permute_serialize(te, cfg.perm_seed, n_te < te.labels.size() ? std::optional(n_te) : std::nullopt);
  }
  return sd;
}

namespace detail {

/// NRMSE on a validation-selected ridge readout over [washout | train | val | test].
inline CellMetric ridge_nrmse(const Mat& states, const Vec& target, const ExperimentConfig& cfg) {
  const Mat X = with_bias(states);
  const Index tr = cfg.train_len;
  const Index va = cfg.val_len;
  const Index te = cfg.test_len;
  const auto lambdas = default_lambda_grid();
  const auto sel = select_ridge(X.topRows(tr), Mat(target.head(tr)), X.middleRows(tr, va),
                                Mat(target.segment(tr, va)), lambdas);
  const Vec pred = predict(sel.model, X.middleRows(tr + va, te)).col(0);
  return {nrmse(pred, Vec(target.segment(tr + va, te))), sel.validation_score};
}

inline CellMetric narma_cell(const ExperimentConfig& cfg, const HierarchicalNetwork& net, std::uint64_t dseed) {
  NarmaConfig nc;
  nc.D = cfg.task == Task::narma5 ? 5 : 10;
  nc.length = cfg.washout + cfg.train_len + cfg.val_len + cfg.test_len;
  nc.seed = dseed;
  const auto data = gen_narma(nc);
  if (cfg.trainer == Trainer::ridge) {
    const auto traj = run(net, data.s, cfg.washout);
    return ridge_nrmse(traj.states, data.y.tail(traj.length()), cfg);
  }
  // Online readout on independent lanes, scored on the held-out stream.
  std::vector<NarmaStream> lanes;
  for (Index m = 0; m < cfg.schedule.N_batch; ++m) {
    NarmaConfig lc = nc;
    lc.seed = Rng::derive(dseed, 100 + static_cast<std::uint64_t>(m)).next_u64();
    lanes.emplace_back(lc);
  }
  LaneSource src = [&](std::size_t m, long) {
    const auto [s, y] = lanes[m].next();
    return StreamSample{Vec::Constant(1, s), Vec::Constant(1, y)};
  };
  const auto res = train_online(net, src, cfg.schedule, false, dseed, 1);
  const auto traj = run(net, data.s, cfg.washout);
  const Vec pred = (with_bias(traj.states) * res.readout.W).col(0);
  const Vec y = data.y.tail(traj.length());
  const Index tr = cfg.train_len;
  const Index va = cfg.val_len;
  const Index te = cfg.test_len;
  return {nrmse(Vec(pred.segment(tr + va, te)), Vec(y.segment(tr + va, te))),
          nrmse(Vec(pred.segment(tr, va)), Vec(y.segment(tr, va)))};
}

/// Second partition driven by the delayed-input surrogate instead of a
/// first reservoir. The coupling matrix becomes its input matrix and the
/// readout sees [surrogate, states].
inline CellMetric delayed_cell(const ExperimentConfig& cfg, const CellParams& p, std::uint64_t nseed,
                               std::uint64_t dseed) {
  const Index n = cfg.n_total / 2;
  SubReservoirConfig q;
  q.n = n;
  q.input_dim = n;
  q.degree = cfg.degree;
  q.dist = cfg.dist;
  q.alpha = p.alpha2;
  q.rho = p.rho;
  q.gamma = p.coupling;
  HierarchicalNetwork net;
  net.dt = 1.0;
  net.partitions.push_back(build_sub_reservoir(Rng::derive(nseed, 11).next_u64(), q));
  net.partitions[0].W_in = Mat(build_coupling_matrix(Rng::derive(nseed, 99).next_u64(), n, n, cfg.degree, cfg.dist));
  net.receives_input = {true};

  NarmaConfig nc;
  nc.D = 10;
  nc.length = cfg.washout + cfg.train_len + cfg.val_len + cfg.test_len;
  nc.seed = dseed;
  const auto data = gen_narma(nc);
  DelayExpansionConfig dc;
  dc.delay = p.delay;
  dc.n = n;
  dc.seed = nseed;
  const Mat feat = delayed_expansion(data.s, dc);
  const auto traj = run(net, feat, cfg.washout);
  Mat Z(traj.length(), 2 * n);
  Z << feat.bottomRows(traj.length()), traj.states;
  return ridge_nrmse(Z, data.y.tail(traj.length()), cfg);
}

inline double telegraph_accuracy(Task task, const Mat& pred, const Mat& truth) {
  if (task == Task::telegraph_joint) return accuracy(pred, argmax_rows(truth));
  return threshold_accuracy(Vec(pred.col(0)), Vec(truth.col(0)));
}

inline Mat telegraph_targets(Task task, const TelegraphData& d) {
  if (task == Task::telegraph_state) return Mat(d.state);
  if (task == Task::telegraph_regime) return Mat(d.regime);
  return d.joint;
}

inline CellMetric telegraph_cell(const ExperimentConfig& cfg, const HierarchicalNetwork& net, std::uint64_t dseed) {
  TelegraphConfig tc;
  tc.p1 = cfg.p1;
  tc.p2 = cfg.p2;
  tc.p3 = cfg.p3;
  tc.sigma = cfg.sigma;
  tc.length = cfg.washout + cfg.telegraph_train + cfg.telegraph_test;
  tc.seed = dseed;
  const auto data = gen_telegraph(tc);
  const Mat Y = telegraph_targets(cfg.task, data).bottomRows(tc.length - cfg.washout);
  const auto traj = run(net, data.input, cfg.washout);
  const Mat X = with_bias(traj.states);
  const Index tr = cfg.telegraph_train;
  const Index te = cfg.telegraph_test;
  const Task task = cfg.task;

  if (cfg.trainer == Trainer::ridge) {
    // lambda from an 80/20 split of the training block, then refit on all of it.
    const Index fit = tr * 4 / 5;
    const auto lambdas = default_lambda_grid();
    const auto sel = select_ridge(X.topRows(fit), Y.topRows(fit), X.middleRows(fit, tr - fit),
                                  Y.middleRows(fit, tr - fit), lambdas,
                                  [task](const Mat& P, const Mat& T) { return -telegraph_accuracy(task, P, T); });
    const auto model = ridge_fit(Mat(X.topRows(tr)), Mat(Y.topRows(tr)), sel.lambda);
    return {telegraph_accuracy(task, predict(model, X.middleRows(tr, te)), Y.middleRows(tr, te)),
            -sel.validation_score};
  }
  std::vector<TelegraphStream> lanes;
  for (Index m = 0; m < cfg.schedule.N_batch; ++m) {
    TelegraphConfig lc = tc;
    lc.seed = Rng::derive(dseed, 100 + static_cast<std::uint64_t>(m)).next_u64();
    lanes.emplace_back(lc);
  }
  LaneSource src = [&](std::size_t m, long) {
    const auto s = lanes[m].next();
    Vec target;
    if (task == Task::telegraph_state) {
      target = Vec::Constant(1, s.state);
    } else if (task == Task::telegraph_regime) {
      target = Vec::Constant(1, s.regime);
    } else {
      target = Vec::Zero(4);
      target(joint_class(s.regime, s.state)) = 1.0;
    }
    return StreamSample{Vec::Constant(1, s.input), target};
  };
  const auto res = train_online(net, src, cfg.schedule, false, dseed, Y.cols());
  const Mat pred = X * res.readout.W;
  return {telegraph_accuracy(task, pred.middleRows(tr, te), Y.middleRows(tr, te)),
          telegraph_accuracy(task, pred.topRows(tr), Y.topRows(tr))};
}

/// Concatenated-frame features of every image, bias column last.
inline Mat psmnist_features(const HierarchicalNetwork& net, const Mat& sequences, Index stride) {
  const Index T = sequences.cols();
  Mat F(sequences.rows(), (T / stride) * net.size() + 1);
  for (Index r = 0; r < sequences.rows(); ++r) {
    const auto traj = run(net, Mat(sequences.row(r).transpose()), 0);
    F.row(r).head(F.cols() - 1) = concat_frames(traj, stride, T).transpose();
    F(r, F.cols() - 1) = 1.0;
  }
  return F;
}

inline CellMetric psmnist_cell(const ExperimentConfig& cfg, const HierarchicalNetwork& net, const SharedData& sd,
                               std::uint64_t dseed) {
  if (!sd.mnist_train || !sd.mnist_test) throw InvalidArgument("psmnist: dataset not loaded");
  const auto& tr = *sd.mnist_train;
  const auto& te = *sd.mnist_test;
  const Mat Ftr = psmnist_features(net, tr.sequences, cfg.frame_stride);
  const Mat Fte = psmnist_features(net, te.sequences, cfg.frame_stride);
  const Mat Ytr = tr.onehot();
  const Index fit = Ftr.rows() * 4 / 5;
  const Index val = Ftr.rows() - fit;
  if (cfg.trainer == Trainer::ridge) {
    const auto lambdas = default_lambda_grid();
    const auto sel = select_ridge(Ftr.topRows(fit), Ytr.topRows(fit), Ftr.bottomRows(val), Ytr.bottomRows(val),
                                  lambdas, [](const Mat& P, const Mat& T) { return -accuracy(P, argmax_rows(T)); });
    const auto model = ridge_fit(Ftr, Ytr, sel.lambda);
    return {accuracy(predict(model, Fte), te.labels), -sel.validation_score};
  }
  const auto held = train_sigmoid_readout(Ftr.topRows(fit), Ytr.topRows(fit), cfg.readout_epochs,
                                          cfg.readout_batch, cfg.readout_eta, dseed);
  const std::vector<int> val_labels(tr.labels.begin() + fit, tr.labels.end());
  const double v = accuracy(predict(held.model, Ftr.bottomRows(val)), val_labels);
  const auto full = train_sigmoid_readout(Ftr, Ytr, cfg.readout_epochs, cfg.readout_batch, cfg.readout_eta, dseed);
  return {accuracy(predict(full.model, Fte), te.labels), v};
}

}  // namespace detail

/// Build, train and score one (cell, seed) job.
inline CellMetric evaluate_cell(const ExperimentConfig& cfg, const CellParams& p, int seed_index,
                                const SharedData& sd = {}) {
  const std::uint64_t nseed = network_seed(cfg, seed_index);
  const std::uint64_t dseed = data_seed(cfg, seed_index);
  if (cfg.task == Task::delayed_narma) return detail::delayed_cell(cfg, p, nseed, dseed);
  const auto net = make_network(network_config(cfg, p), nseed);
  if (cfg.task == Task::narma10 || cfg.task == Task::narma5) return detail::narma_cell(cfg, net, dseed);
  if (is_telegraph(cfg.task)) return detail::telegraph_cell(cfg, net, dseed);
  return detail::psmnist_cell(cfg, net, sd, dseed);
}

// ---------------------------------------------------------------------------
// Surfaces

struct CellResult {
  CellParams params;
  std::vector<double> per_seed;
  std::vector<double> per_seed_validation;
  std::vector<std::string> errors;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stddev = std::numeric_limits<double>::quiet_NaN();
  double validation_mean = std::numeric_limits<double>::quiet_NaN();
  double smoothed = std::numeric_limits<double>::quiet_NaN();
  int ok = 0;

  bool failed() const { return ok == 0; }
};

struct SurfaceReport {
  ExperimentConfig config;
  std::vector<CellResult> cells;
  std::size_t best_cell = 0;
  bool higher_is_better = false;
  double runtime_seconds = 0.0;

  const CellResult& best() const { return cells.at(best_cell); }

  /// Cell with the given alpha pair among cells that share the best cell's
  /// other parameters.
  const CellResult* find(double a1, double a2) const {
    const auto& b = best().params;
    for (const auto& c : cells) {
      if (c.params.alpha1 == a1 && c.params.alpha2 == a2 && c.params.rho == b.rho && c.params.gamma == b.gamma &&
          c.params.coupling == b.coupling && c.params.delay == b.delay) {
        return &c;
      }
    }
    return nullptr;
  }
};

namespace detail {

inline double median_of(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

inline void finalize_cell(CellResult& c) {
  double sum = 0.0;
  double vsum = 0.0;
  int vok = 0;
  c.ok = 0;
  for (std::size_t j = 0; j < c.per_seed.size(); ++j) {
    if (std::isfinite(c.per_seed[j])) {
      sum += c.per_seed[j];
      ++c.ok;
    }
    if (std::isfinite(c.per_seed_validation[j])) {
      vsum += c.per_seed_validation[j];
      ++vok;
    }
  }
  if (c.ok > 0) {
    c.mean = sum / c.ok;
    double ss = 0.0;
    for (double v : c.per_seed)
      if (std::isfinite(v)) ss += (v - c.mean) * (v - c.mean);
    c.stddev = c.ok > 1 ? std::sqrt(ss / (c.ok - 1)) : 0.0;
  }
  if (vok > 0) c.validation_mean = vsum / vok;
}

}  // namespace detail

/// 3x3 running median of the seed means over the (alpha1, alpha2) grid,
/// separately for every combination of the remaining parameters; a window of
/// 3 along alpha1 when there is a single alpha2.
inline void smooth_surface(SurfaceReport& r) {
  auto same_slice = [](const CellParams& a, const CellParams& b) {
    return a.rho == b.rho && a.gamma == b.gamma && a.coupling == b.coupling && a.delay == b.delay;
  };
  auto axis = [&](auto getter) {
    std::vector<double> v;
    for (const auto& c : r.cells) v.push_back(getter(c.params));
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  };
  const auto a1 = axis([](const CellParams& p) { return p.alpha1; });
  const auto a2 = axis([](const CellParams& p) { return p.alpha2; });
  auto pos = [](const std::vector<double>& ax, double v) {
    return static_cast<long>(std::lower_bound(ax.begin(), ax.end(), v) - ax.begin());
  };
  for (auto& c : r.cells) {
    const long i = pos(a1, c.params.alpha1);
    const long j = pos(a2, c.params.alpha2);
    std::vector<double> window;
    for (const auto& o : r.cells) {
      if (!same_slice(c.params, o.params)) continue;
      if (std::abs(pos(a1, o.params.alpha1) - i) <= 1 && std::abs(pos(a2, o.params.alpha2) - j) <= 1) {
        window.push_back(o.mean);
      }
    }
    c.smoothed = detail::median_of(window);
  }
}

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

namespace detail {

inline std::filesystem::path checkpoint_path(const ExperimentConfig& cfg, std::size_t cell, int seed) {
  return std::filesystem::path(cfg.output_dir) / "cells" /
         ("c" + std::to_string(cell) + "_s" + std::to_string(seed) + ".txt");
}

inline bool read_checkpoint(const std::filesystem::path& p, CellMetric& m, std::string& err) {
  std::ifstream in(p);
  if (!in) return false;
  std::string tag;
  in >> tag;
  if (tag == "ok") {
    std::string a, b;
    in >> a >> b;
    if (!in) return false;
    m.test = std::stod(a);
    m.validation = std::stod(b);
    return true;
  }
  if (tag == "error") {
    std::getline(in, err);
    err = trim(err);
    return true;
  }
  return false;
}

inline void write_checkpoint(const std::filesystem::path& p, const CellMetric* m, const std::string& err) {
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out.precision(17);
    if (m) {
      out << "ok " << m->test << " " << m->validation << "\n";
    } else {
      out << "error " << err << "\n";
    }
  }
  std::filesystem::rename(tmp, p);
}

}  // namespace detail

/// Every (cell, seed) job on a pool of cfg.jobs threads. Failed jobs are
/// recorded and the sweep continues. With checkpoint = true each finished job
/// is written to <output_dir>/cells/ and reused on a later run when
/// cfg.resume is set.
inline SurfaceReport run_experiment(const ExperimentConfig& cfg, bool checkpoint = false,
                                    const ProgressFn& progress = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  SurfaceReport rep;
  rep.config = cfg;
  rep.higher_is_better = higher_is_better(cfg.task);
  const auto cells = enumerate_cells(cfg);
  rep.cells.resize(cells.size());
  const auto S = static_cast<std::size_t>(cfg.seeds);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    rep.cells[c].params = cells[c];
    rep.cells[c].per_seed.assign(S, std::numeric_limits<double>::quiet_NaN());
    rep.cells[c].per_seed_validation.assign(S, std::numeric_limits<double>::quiet_NaN());
    rep.cells[c].errors.assign(S, "");
  }
  if (checkpoint) std::filesystem::create_directories(std::filesystem::path(cfg.output_dir) / "cells");
  const SharedData shared = load_shared_data(cfg);

  const std::size_t total = cells.size() * S;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t job = next++; job < total; job = next++) {
      const std::size_t c = job / S;
      const int s = static_cast<int>(job % S);
      auto& cell = rep.cells[c];
      const auto ckpt = detail::checkpoint_path(cfg, c, s);
      CellMetric m;
      std::string err;
      if (!(checkpoint && cfg.resume && detail::read_checkpoint(ckpt, m, err))) {
        try {
          m = evaluate_cell(cfg, cells[c], s, shared);
        } catch (const std::exception& e) {
          err = e.what();
          if (err.empty()) err = "unknown failure";
        }
        if (checkpoint) detail::write_checkpoint(ckpt, err.empty() ? &m : nullptr, err);
      }
      if (err.empty()) {
        cell.per_seed[static_cast<std::size_t>(s)] = m.test;
        cell.per_seed_validation[static_cast<std::size_t>(s)] = m.validation;
      } else {
        cell.errors[static_cast<std::size_t>(s)] = err;
      }
      const std::size_t d = ++done;
      if (progress) {
        std::lock_guard<std::mutex> lock(progress_mutex);
        progress(d, total);
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(total)));
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (auto& c : rep.cells) detail::finalize_cell(c);
  smooth_surface(rep);
  bool any = false;
  for (std::size_t c = 0; c < rep.cells.size(); ++c) {
    if (rep.cells[c].failed()) continue;
    const double v = rep.cells[c].mean;
    const double b = rep.cells[rep.best_cell].mean;
    if (!any || (rep.higher_is_better ? v > b : v < b)) {
      rep.best_cell = c;
      any = true;
    }
  }
  rep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!any) throw NumericalError("run_experiment: every cell failed; first error: " + rep.cells[0].errors[0]);
  return rep;
}

/// Cell chosen by validation score rather than test score.
inline std::size_t best_by_validation(const SurfaceReport& r) {
  std::size_t best = r.best_cell;
  bool any = false;
  for (std::size_t c = 0; c < r.cells.size(); ++c) {
    const double v = r.cells[c].validation_mean;
    if (!std::isfinite(v)) continue;
    const double b = r.cells[best].validation_mean;
    if (!any || (r.higher_is_better ? v > b : v < b)) {
      best = c;
      any = true;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Topology comparison

struct TopologyRow {
  Topology topology = Topology::single;
  CellParams best;
  double mean = 0.0;
  double stddev = 0.0;
};

struct TopologyComparison {
  std::vector<TopologyRow> rows;
  /// Best two-partition metric over the best single metric (nan without a single row).
  double ratio = std::numeric_limits<double>::quiet_NaN();
};

inline TopologyComparison compare_topologies(std::span<const SurfaceReport> reports) {
  if (reports.empty()) throw InvalidArgument("compare_topologies: no reports");
  const Task task = reports.front().config.task;
  for (const auto& r : reports) {
    if (r.config.task != task) throw InvalidArgument("compare_topologies: reports are for different tasks");
  }
  TopologyComparison out;
  const bool hib = higher_is_better(task);
  std::optional<double> single;
  std::optional<double> best_two;
  for (const auto& r : reports) {
    const auto& b = r.best();
    out.rows.push_back({r.config.topology, b.params, b.mean, b.stddev});
    if (r.config.topology == Topology::single) {
      single = b.mean;
    } else if (!best_two || (hib ? b.mean > *best_two : b.mean < *best_two)) {
      best_two = b.mean;
    }
  }
  if (single && best_two) out.ratio = *best_two / *single;
  return out;
}

// ---------------------------------------------------------------------------
// Online alpha paths

struct OnlinePath {
  OnlineResult result;
  /// Stage index of every recorded step (0 without a stage schedule).
  std::vector<int> stage;
};

/// Trains W_out and alpha online from (alpha1_start, alpha2_start) with the
/// first value of every other grid list. Telegraph tasks may step sigma
/// through sigma_stages, or alternate (p1, p2) through phase_p1/phase_p2,
/// every stage_steps learning steps; the run then lasts the full schedule.
inline OnlinePath run_online_path(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.task == Task::psmnist || cfg.task == Task::delayed_narma) {
    throw InvalidArgument("run_online_path: task " + to_string(cfg.task) + " has no online stream");
  }
  CellParams p;
  p.alpha1 = cfg.alpha1_start;
  p.alpha2 = cfg.alpha2_start;
  p.rho = cfg.rho.front();
  p.gamma = cfg.gamma.front();
  p.coupling = cfg.topology == Topology::hierarchical ? cfg.coupling_strength.front() : 0.0;
  const auto net = make_network(network_config(cfg, p), network_seed(cfg, 0));
  const std::uint64_t dseed = data_seed(cfg, 0);

  OnlineSchedule sched = cfg.schedule;
  const std::size_t stages = std::max(cfg.sigma_stages.size(), cfg.phase_p1.size());
  if (stages > 0) {
    sched.max_steps = cfg.stage_steps * static_cast<long>(stages);
    sched.stop_on_stable = false;
  }
  const long washout = sched.washout;
  auto stage_of = [&](long step) -> std::size_t {
    if (stages == 0 || step < washout) return 0;
    return std::min(stages - 1, static_cast<std::size_t>((step - washout) / cfg.stage_steps));
  };

  LaneSource src;
  std::vector<NarmaStream> narma;
  std::vector<TelegraphStream> tele;
  Index outputs = 1;
  if (cfg.task == Task::narma10 || cfg.task == Task::narma5) {
    for (Index m = 0; m < sched.N_batch; ++m) {
      NarmaConfig nc;
      nc.D = cfg.task == Task::narma5 ? 5 : 10;
      nc.seed = Rng::derive(dseed, 100 + static_cast<std::uint64_t>(m)).next_u64();
      narma.emplace_back(nc);
    }
    src = [&](std::size_t m, long) {
      const auto [s, y] = narma[m].next();
      return StreamSample{Vec::Constant(1, s), Vec::Constant(1, y)};
    };
  } else {
    const Task task = cfg.task;
    outputs = task == Task::telegraph_joint ? 4 : 1;
    for (Index m = 0; m < sched.N_batch; ++m) {
      TelegraphConfig tc;
      tc.p1 = cfg.phase_p1.empty() ? cfg.p1 : cfg.phase_p1.front();
      tc.p2 = cfg.phase_p2.empty() ? cfg.p2 : cfg.phase_p2.front();
      tc.p3 = cfg.p3;
      tc.sigma = cfg.sigma_stages.empty() ? cfg.sigma : cfg.sigma_stages.front();
      tc.seed = Rng::derive(dseed, 100 + static_cast<std::uint64_t>(m)).next_u64();
      tele.emplace_back(tc);
    }
    src = [&, task](std::size_t m, long step) {
      const std::size_t k = stage_of(step);
      if (!cfg.sigma_stages.empty()) tele[m].set_sigma(cfg.sigma_stages[std::min(k, cfg.sigma_stages.size() - 1)]);
      if (!cfg.phase_p1.empty()) {
        const std::size_t ph = k % cfg.phase_p1.size();
        tele[m].set_probabilities(cfg.phase_p1[ph], cfg.phase_p2[ph]);
      }
      const auto s = tele[m].next();
      Vec target;
      if (task == Task::telegraph_state) {
        target = Vec::Constant(1, s.state);
      } else if (task == Task::telegraph_regime) {
        target = Vec::Constant(1, s.regime);
      } else {
        target = Vec::Zero(4);
        target(joint_class(s.regime, s.state)) = 1.0;
      }
      return StreamSample{Vec::Constant(1, s.input), target};
    };
  }
  OnlinePath path;
  path.result = train_online(net, src, sched, cfg.train_alpha, dseed, outputs);
  for (long t = 0; t < path.result.alpha_trajectory.rows(); ++t) {
    path.stage.push_back(static_cast<int>(stage_of(t + washout)));
  }
  return path;
}

/// Per-stage median of alpha(k) over the second half of every stage.
inline std::vector<double> stage_alpha(const OnlinePath& p, Index k) {
  const auto& traj = p.result.alpha_trajectory;
  int stages = 0;
  for (int s : p.stage) stages = std::max(stages, s + 1);
  std::vector<double> out;
  for (int s = 0; s < stages; ++s) {
    std::vector<long> idx;
    for (long t = 0; t < static_cast<long>(p.stage.size()); ++t)
      if (p.stage[static_cast<std::size_t>(t)] == s) idx.push_back(t);
    std::vector<double> vals;
    for (std::size_t i = idx.size() / 2; i < idx.size(); ++i) vals.push_back(traj(idx[i], k));
    out.push_back(detail::median_of(vals));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report files

inline void write_surface_csv(std::ostream& os, const SurfaceReport& r) {
  os << "cell,alpha1,alpha2,rho,gamma,coupling,delay,mean,std,smoothed,validation_mean,n_ok,n_failed\n";
  os.precision(10);
  for (std::size_t c = 0; c < r.cells.size(); ++c) {
    const auto& x = r.cells[c];
    os << c << "," << x.params.alpha1 << "," << x.params.alpha2 << "," << x.params.rho << "," << x.params.gamma
       << "," << x.params.coupling << "," << x.params.delay << "," << x.mean << "," << x.stddev << ","
       << x.smoothed << "," << x.validation_mean << "," << x.ok << ","
       << static_cast<int>(x.per_seed.size()) - x.ok << "\n";
  }
}

inline void write_seeds_csv(std::ostream& os, const SurfaceReport& r) {
  os << "cell,seed,metric,validation,error\n";
  os.precision(10);
  for (std::size_t c = 0; c < r.cells.size(); ++c) {
    const auto& x = r.cells[c];
    for (std::size_t s = 0; s < x.per_seed.size(); ++s) {
      std::string e = x.errors[s];
      std::replace(e.begin(), e.end(), ',', ';');
      os << c << "," << s << "," << x.per_seed[s] << "," << x.per_seed_validation[s] << "," << e << "\n";
    }
  }
}

inline void write_path_csv(std::ostream& os, const OnlinePath& p) {
  const auto& r = p.result;
  os << "step,alpha_1,alpha_2,loss,stage\n";
  os.precision(10);
  for (Index t = 0; t < r.alpha_trajectory.rows(); ++t) {
    os << t << "," << r.alpha_trajectory(t, 0) << ",";
    if (r.alpha_trajectory.cols() > 1) os << r.alpha_trajectory(t, 1);
    os << "," << r.loss[static_cast<std::size_t>(t)] << "," << p.stage[static_cast<std::size_t>(t)] << "\n";
  }
}

inline std::string metric_name(Task t) { return higher_is_better(t) ? "accuracy" : "nrmse"; }

inline void write_summary(std::ostream& os, const SurfaceReport& r) {
  const auto& b = r.best();
  os.precision(6);
  os << "task: " << to_string(r.config.task) << "\n"
     << "topology: " << to_string(r.config.topology) << "\n"
     << "metric: " << metric_name(r.config.task) << (r.higher_is_better ? " (higher is better)" : " (lower is better)")
     << "\n"
     << "cells: " << r.cells.size() << "\n"
     << "seeds: " << r.config.seeds << "\n"
     << "best cell: " << r.best_cell << " alpha1=" << b.params.alpha1 << " alpha2=" << b.params.alpha2
     << " rho=" << b.params.rho << " gamma=" << b.params.gamma << " coupling=" << b.params.coupling
     << " delay=" << b.params.delay << "\n"
     << "best seed-mean: " << b.mean << " (std " << b.stddev << ", " << b.ok << " seeds)\n";
  int failed = 0;
  for (const auto& c : r.cells) failed += c.failed();
  os << "failed cells: " << failed << "\n"
     << "runtime: " << r.runtime_seconds << " s\n";
}

inline void write_meta(std::ostream& os, const ExperimentConfig& cfg, double runtime_seconds = 0.0) {
  os << "# hesn " << kVersion << ", surface schema " << kSurfaceSchema << "\n"
     << "# master seed " << cfg.seed << "\n"
     << "# surface smoothing: 3x3 running median over (alpha1, alpha2)\n"
     << "# ridge lambda: validation-selected from 1e-8..1 by decades\n"
     << "# narma protocol: washout " << cfg.washout << ", train " << cfg.train_len << ", validation " << cfg.val_len
     << ", test " << cfg.test_len << "\n"
     << "# telegraph protocol: washout " << cfg.washout << ", train " << cfg.telegraph_train << " (80/20 for lambda), test "
     << cfg.telegraph_test << "\n"
     << "# psmnist protocol: " << cfg.mnist_train << " train (80/20 for selection) / " << cfg.mnist_test
     << " test images, frame stride " << cfg.frame_stride << "\n"
     << "# eigen " << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION << "\n";
  if (runtime_seconds > 0.0) os << "# runtime " << runtime_seconds << " s\n";
  write_config(os, cfg);
}

/// surface.csv, seeds.csv, summary.txt and meta.txt under cfg.output_dir.
inline void write_reports(const SurfaceReport& r) {
  const std::filesystem::path dir(r.config.output_dir);
  std::filesystem::create_directories(dir);
  std::ofstream surface(dir / "surface.csv");
  write_surface_csv(surface, r);
  std::ofstream seeds(dir / "seeds.csv");
  write_seeds_csv(seeds, r);
  std::ofstream summary(dir / "summary.txt");
  write_summary(summary, r);
  std::ofstream meta(dir / "meta.txt");
  write_meta(meta, r.config, r.runtime_seconds);
}

}  // namespace hesn
