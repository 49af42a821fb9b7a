#pragma once

// Leaky echo state networks: single partitions, feed-forward ensembles of
// partitions, and their discrete-time update
//
//   h(k) = gamma(k) W_in(k) s + sum_l rho(kl) W(kl) x(l)
//   x(k) <- (1 - alpha(k)) x(k) + alpha(k) tanh(h(k))
//
// All partitions are updated synchronously from the pre-update state.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>

#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hesn/error.hpp"
#include "hesn/rng.hpp"

namespace hesn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Index = Eigen::Index;

enum class WeightDist { normal, uniform };

inline std::string to_string(WeightDist d) { return d == WeightDist::normal ? "normal" : "uniform"; }

inline WeightDist parse_weight_dist(const std::string& s) {
  if (s == "normal") return WeightDist::normal;
  if (s == "uniform") return WeightDist::uniform;
  throw InvalidArgument("unknown weight distribution '" + s + "'");
}

/// Activation and its derivative. tanh is odd, saturating, f(0)=0, f'(0)=1.
inline double activation(double h) { return std::tanh(h); }
inline double activation_derivative(double h) {
  const double t = std::tanh(h);
  return 1.0 - t * t;
}

struct SubReservoirConfig {
  Index n = 50;
  Index input_dim = 1;
  Index degree = 10;
  WeightDist dist = WeightDist::normal;
  double alpha = 1.0;
  double rho = 0.95;
  double gamma = 0.2;
};

/// One recurrent partition. W has unit spectral radius; rho scales it.
struct SubReservoir {
  SpMat W;
  Mat W_in;
  double alpha = 1.0;
  double rho = 0.95;
  double gamma = 0.2;
  /// Spectral radius of W before normalization.
  double raw_spectral_radius = 0.0;
  /// eig(W) after normalization, cached at construction.
  CVec W_eigvals;

  Index size() const { return W.rows(); }
  Index input_dim() const { return W_in.cols(); }
  Mat dense_W() const { return Mat(W); }
};

inline void check_leakage(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw InvalidArgument("leakage alpha must lie in (0, 1], got " + std::to_string(alpha));
  }
}

inline void check_scaling(double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw InvalidArgument("spectral scaling rho must lie in [0, 1], got " + std::to_string(rho));
  }
}

/// eig(A) from a dense real Schur decomposition.
///
/// If the QR sweeps fail to converge the error carries a Gelfand-formula
/// estimate ||A^k||^(1/k) of the spectral radius.
inline CVec spectrum(const Mat& A) {
  if (A.rows() != A.cols()) throw InvalidArgument("spectral_radius: matrix must be square");
  if (!A.allFinite()) throw InvalidArgument("spectral_radius: matrix has non-finite entries");
  Eigen::EigenSolver<Mat> es(A, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) {
    Mat P = A;
    double estimate = A.norm();
    double log_scale = 0.0;
    for (int k = 1; k <= 64; ++k) {
      const double nrm = P.norm();
      if (nrm == 0.0) {
        estimate = 0.0;
        break;
      }
      log_scale += std::log(nrm);
      P /= nrm;
      estimate = std::exp(log_scale / k);
      P = P * A;
    }
    throw SpectralRadiusError("spectral_radius: eigenvalue iteration did not converge", estimate);
  }
  return es.eigenvalues();
}

/// max |eig(A)|, relative accuracy well below 1e-8 for well-scaled inputs.
inline double spectral_radius(const Mat& A) {
  if (A.size() == 0 && A.rows() == A.cols()) return 0.0;
  return spectrum(A).cwiseAbs().maxCoeff();
}

namespace detail {

inline double draw(Rng& rng, WeightDist dist) {
  return dist == WeightDist::normal ? rng.normal() : rng.uniform(-1.0, 1.0);
}

/// Dense-sample a rows x cols matrix, then keep `degree` random entries per row.
inline SpMat sample_sparse(Rng& rng, Index rows, Index cols, Index degree, WeightDist dist) {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(rows * std::min(degree, cols)));
  std::vector<Index> columns(static_cast<std::size_t>(cols));
  std::vector<double> row(static_cast<std::size_t>(cols));
  for (Index i = 0; i < rows; ++i) {
    for (auto& v : row) v = draw(rng, dist);
    std::iota(columns.begin(), columns.end(), Index{0});
    const Index keep = std::min(degree, cols);
    // Partial Fisher-Yates: the first `keep` slots become a uniform subset.
    for (Index j = 0; j < keep; ++j) {
      const auto pick = j + static_cast<Index>(rng.below(static_cast<std::uint64_t>(cols - j)));
      std::swap(columns[static_cast<std::size_t>(j)], columns[static_cast<std::size_t>(pick)]);
    }
    for (Index j = 0; j < keep; ++j) {
      const Index c = columns[static_cast<std::size_t>(j)];
      triplets.emplace_back(i, c, row[static_cast<std::size_t>(c)]);
    }
  }
  SpMat m(rows, cols);
  m.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

inline Mat sample_dense(Rng& rng, Index rows, Index cols, WeightDist dist) {
  Mat m(rows, cols);
  // Row-major fill order so the stream does not depend on Eigen's storage.
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = draw(rng, dist);
  return m;
}

}  // namespace detail

/// Build a partition. Fully determined by (seed, cfg).
inline SubReservoir build_sub_reservoir(std::uint64_t seed, const SubReservoirConfig& cfg) {
  if (cfg.n < 1) throw InvalidArgument("build_sub_reservoir: n must be >= 1");
  if (cfg.input_dim < 0) throw InvalidArgument("build_sub_reservoir: input_dim must be >= 0");
  if (cfg.degree < 1 || cfg.degree > cfg.n) {
    throw InvalidArgument("build_sub_reservoir: degree must lie in [1, n]");
  }
  check_leakage(cfg.alpha);
  check_scaling(cfg.rho);
  if (!(cfg.gamma >= 0.0)) throw InvalidArgument("build_sub_reservoir: gamma must be >= 0");

  Rng w_rng = Rng::derive(seed, 1);
  Rng in_rng = Rng::derive(seed, 2);

  SubReservoir sub;
  sub.W = detail::sample_sparse(w_rng, cfg.n, cfg.n, cfg.degree, cfg.dist);
  if (sub.W.norm() == 0.0) throw ConstructionError("build_sub_reservoir: zero recurrent matrix");
  const CVec eig = spectrum(Mat(sub.W));
  const double radius = eig.cwiseAbs().maxCoeff();
  if (!(radius > 0.0)) {
    throw ConstructionError("build_sub_reservoir: recurrent matrix is nilpotent (spectral radius 0)");
  }
  sub.W /= radius;
  sub.raw_spectral_radius = radius;
  sub.W_eigvals = eig / radius;
  sub.W_in = detail::sample_dense(in_rng, cfg.n, cfg.input_dim, cfg.dist);
  sub.alpha = cfg.alpha;
  sub.rho = cfg.rho;
  sub.gamma = cfg.gamma;
  return sub;
}

/// Feed-forward drive from partition `from` into partition `to` (from < to).
struct Coupling {
  std::size_t to = 1;
  std::size_t from = 0;
  double strength = 1.0;
  SpMat W;
};

/// Ordered partitions with feed-forward couplings only.
struct HierarchicalNetwork {
  std::vector<SubReservoir> partitions;
  std::vector<Coupling> couplings;
  /// Partition k sees the external signal iff receives_input[k].
  std::vector<bool> receives_input;
  double dt = 1.0;

  std::size_t num_partitions() const { return partitions.size(); }

  Index size() const {
    Index total = 0;
    for (const auto& p : partitions) total += p.size();
    return total;
  }

  Index offset(std::size_t k) const {
    Index off = 0;
    for (std::size_t i = 0; i < k; ++i) off += partitions[i].size();
    return off;
  }

  Index input_dim() const {
    for (std::size_t k = 0; k < partitions.size(); ++k)
      if (receives_input[k]) return partitions[k].input_dim();
    return partitions.empty() ? 0 : partitions.front().input_dim();
  }

  std::vector<double> alphas() const {
    std::vector<double> a;
    for (const auto& p : partitions) a.push_back(p.alpha);
    return a;
  }

  void validate() const {
    if (partitions.empty()) throw InvalidArgument("network has no partitions");
    if (receives_input.size() != partitions.size()) {
      throw InvalidArgument("network: receives_input must have one flag per partition");
    }
    for (const auto& p : partitions) {
      check_leakage(p.alpha);
      check_scaling(p.rho);
    }
    for (const auto& c : couplings) {
      if (c.from >= c.to || c.to >= partitions.size()) {
        throw InvalidArgument("network: couplings must run from a lower to a higher partition index");
      }
      if (c.W.rows() != partitions[c.to].size() || c.W.cols() != partitions[c.from].size()) {
        throw InvalidArgument("network: coupling matrix has wrong shape");
      }
    }
  }
};

struct NetworkState {
  Vec x;
  long t = 0;
};

inline NetworkState zero_state(const HierarchicalNetwork& net) { return {Vec::Zero(net.size()), 0}; }

/// Pre-activations h(k) for every partition, all computed from `x`.
inline std::vector<Vec> preactivations(const HierarchicalNetwork& net, const Vec& x, const Vec& s) {
  std::vector<Vec> h(net.num_partitions());
  for (std::size_t k = 0; k < net.num_partitions(); ++k) {
    const auto& p = net.partitions[k];
    const Index off = net.offset(k);
    h[k] = p.rho * (p.W * x.segment(off, p.size()));
    if (net.receives_input[k] && p.gamma != 0.0) {
      if (s.size() != p.input_dim()) {
        throw InvalidArgument("step: input has dimension " + std::to_string(s.size()) + ", partition " +
                              std::to_string(k) + " expects " + std::to_string(p.input_dim()));
      }
      h[k].noalias() += p.gamma * (p.W_in * s);
    }
  }
  for (const auto& c : net.couplings) {
    if (c.strength == 0.0) continue;
    h[c.to].noalias() += c.strength * (c.W * x.segment(net.offset(c.from), net.partitions[c.from].size()));
  }
  return h;
}

/// Leaky update given pre-activations.
inline Vec leaky_update(const HierarchicalNetwork& net, const Vec& x, const std::vector<Vec>& h) {
  Vec next(x.size());
  for (std::size_t k = 0; k < net.num_partitions(); ++k) {
    const auto& p = net.partitions[k];
    const Index off = net.offset(k);
    auto seg = next.segment(off, p.size());
    seg = (1.0 - p.alpha) * x.segment(off, p.size()) + p.alpha * h[k].unaryExpr(&activation);
    for (Index i = 0; i < p.size(); ++i) {
      if (!std::isfinite(seg[i])) {
        throw NumericalError("non-finite activation in partition " + std::to_string(k) + ", node " +
                             std::to_string(i));
      }
    }
  }
  return next;
}

inline NetworkState step(const HierarchicalNetwork& net, const NetworkState& state, const Vec& s) {
  const auto h = preactivations(net, state.x, s);
  return {leaky_update(net, state.x, h), state.t + 1};
}

/// States retained after washout, one row per time step.
struct StateTrajectory {
  Mat states;
  Index washout = 0;

  Index length() const { return states.rows(); }
};

/// Drive the network with `signal` (one row per time step). Row r of the
/// result is the state after consuming signal row washout + r.
inline StateTrajectory run(const HierarchicalNetwork& net, const Mat& signal, Index washout,
                           const std::optional<Vec>& x0 = std::nullopt) {
  net.validate();
  const Index T = signal.rows();
  if (washout < 0 || washout >= T) {
    throw InvalidArgument("run: washout (" + std::to_string(washout) + ") must be < sequence length (" +
                          std::to_string(T) + ")");
  }
  NetworkState state = zero_state(net);
  if (x0) {
    if (x0->size() != net.size()) throw InvalidArgument("run: initial state has wrong size");
    state.x = *x0;
  }
  StateTrajectory traj;
  traj.washout = washout;
  traj.states.resize(T - washout, net.size());
  Vec s(signal.cols());
  for (Index t = 0; t < T; ++t) {
    s = signal.row(t).transpose();
    try {
      state = step(net, state, s);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at t=" + std::to_string(t));
    }
    if (t >= washout) traj.states.row(t - washout) = state.x.transpose();
  }
  return traj;
}

inline StateTrajectory run(const HierarchicalNetwork& net, const Vec& scalar_signal, Index washout) {
  return run(net, Mat(scalar_signal), washout);
}

// ---------------------------------------------------------------------------
// Topologies

enum class Topology { single, parallel, hierarchical };

inline std::string to_string(Topology t) {
  switch (t) {
    case Topology::single: return "single";
    case Topology::parallel: return "parallel";
    case Topology::hierarchical: return "hierarchical";
  }
  return "?";
}

inline Topology parse_topology(const std::string& s) {
  if (s == "single") return Topology::single;
  if (s == "parallel") return Topology::parallel;
  if (s == "hierarchical") return Topology::hierarchical;
  throw InvalidArgument("unknown topology '" + s + "'");
}

struct NetworkConfig {
  Topology topology = Topology::single;
  /// One entry for single, two for parallel/hierarchical.
  std::vector<SubReservoirConfig> parts{SubReservoirConfig{}};
  /// Strength rho(21) of the partition-1 -> partition-2 drive.
  double coupling_strength = 1.0;
  Index coupling_degree = 10;
  WeightDist coupling_dist = WeightDist::normal;
  double dt = 1.0;
};

/// Coupling matrices are sampled like recurrent ones and scaled to unit
/// spectral radius (square) or unit largest singular value (rectangular).
inline SpMat build_coupling_matrix(std::uint64_t seed, Index rows, Index cols, Index degree, WeightDist dist) {
  Rng rng = Rng::derive(seed, 3);
  SpMat W = detail::sample_sparse(rng, rows, cols, std::min(degree, cols), dist);
  const Mat dense(W);
  double scale = 0.0;
  if (rows == cols) {
    scale = spectral_radius(dense);
  } else {
    Eigen::JacobiSVD<Mat> svd(dense);
    scale = svd.singularValues()(0);
  }
  if (!(scale > 0.0)) throw ConstructionError("coupling matrix is degenerate");
  W /= scale;
  return W;
}

/// Seeds: partition k uses derive(seed, 10 + k); the coupling uses derive(seed, 99).
inline HierarchicalNetwork make_network(const NetworkConfig& cfg, std::uint64_t seed) {
  const std::size_t expected = cfg.topology == Topology::single ? 1 : 2;
  if (cfg.parts.size() != expected) {
    throw InvalidArgument("make_network: topology " + to_string(cfg.topology) + " needs " +
                          std::to_string(expected) + " partition configs");
  }
  HierarchicalNetwork net;
  net.dt = cfg.dt;
  for (std::size_t k = 0; k < cfg.parts.size(); ++k) {
    net.partitions.push_back(
        build_sub_reservoir(Rng::derive(seed, 10 + k).next_u64(), cfg.parts[k]));
  }
  net.receives_input.assign(cfg.parts.size(), true);
  if (cfg.topology == Topology::hierarchical) {
    net.receives_input[1] = false;
    Coupling c;
    c.to = 1;
    c.from = 0;
    c.strength = cfg.coupling_strength;
    c.W = build_coupling_matrix(Rng::derive(seed, 99).next_u64(), cfg.parts[1].n, cfg.parts[0].n,
                                cfg.coupling_degree, cfg.coupling_dist);
    net.couplings.push_back(std::move(c));
  }
  net.validate();
  return net;
}

// ---------------------------------------------------------------------------
// Reproducibility dump: the network is regenerated from (seed, config).

inline void write_network_spec(std::ostream& os, const NetworkConfig& cfg, std::uint64_t seed) {
  os << "seed = " << seed << "\n";
  os << "topology = " << to_string(cfg.topology) << "\n";
  os.precision(17);
  os << "dt = " << cfg.dt << "\n";
  os << "coupling_strength = " << cfg.coupling_strength << "\n";
  os << "coupling_degree = " << cfg.coupling_degree << "\n";
  os << "coupling_dist = " << to_string(cfg.coupling_dist) << "\n";
  os << "partitions = " << cfg.parts.size() << "\n";
  for (std::size_t k = 0; k < cfg.parts.size(); ++k) {
    const auto& p = cfg.parts[k];
    os << "p" << k << " = " << p.n << " " << p.input_dim << " " << p.degree << " " << to_string(p.dist) << " "
       << p.alpha << " " << p.rho << " " << p.gamma << "\n";
  }
}

inline std::pair<NetworkConfig, std::uint64_t> read_network_spec(std::istream& is) {
  NetworkConfig cfg;
  cfg.parts.clear();
  std::uint64_t seed = 0;
  std::string line;
  std::size_t declared = 0;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (line.empty() || eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    std::istringstream val(line.substr(eq + 1));
    if (key == "seed") {
      val >> seed;
    } else if (key == "topology") {
      std::string t;
      val >> t;
      cfg.topology = parse_topology(t);
    } else if (key == "dt") {
      val >> cfg.dt;
    } else if (key == "coupling_strength") {
      val >> cfg.coupling_strength;
    } else if (key == "coupling_degree") {
      val >> cfg.coupling_degree;
    } else if (key == "coupling_dist") {
      std::string d;
      val >> d;
      cfg.coupling_dist = parse_weight_dist(d);
    } else if (key == "partitions") {
      val >> declared;
    } else if (key.size() > 1 && key[0] == 'p') {
      SubReservoirConfig p;
      std::string d;
      val >> p.n >> p.input_dim >> p.degree >> d >> p.alpha >> p.rho >> p.gamma;
      p.dist = parse_weight_dist(d);
      cfg.parts.push_back(p);
    } else {
      throw ParseError("network spec: unknown key '" + key + "'");
    }
    if (val.fail()) throw ParseError("network spec: bad value for '" + key + "'");
  }
  if (cfg.parts.size() != declared) throw ParseError("network spec: partition count mismatch");
  return {cfg, seed};
}

}  // namespace hesn
