#pragma once

// Linearization of a (at most two-partition) network around x = 0.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <complex>
#include <vector>

#include "hesn/error.hpp"
#include "hesn/reservoir.hpp"

namespace hesn {

/// Modal structure of one partition.
struct PartitionModes {
  /// M = (alpha/dt) [I - f'(0) rho W], the continuous-time decay operator.
  Mat M;
  /// eig(W), in the same order as every other per-mode quantity below.
  CVec W_eigvals;
  /// eig(M) (the diagonal of Lambda).
  CVec eigvals;
  /// Eigenvalues of the discrete map: 1 - alpha (1 - rho lambda_W).
  CVec discrete_eigvals;
  /// Rows are left eigenvectors: V M = Lambda V.
  CMat left_eigvecs;
  /// 2-norm condition number of the eigenbasis.
  double condition_number = 1.0;
};

struct LinearizedSystem {
  /// Composed connectivity: rho(k) W(kk) on the diagonal, rho(kl) W(kl) below.
  Mat W_tilde;
  std::vector<PartitionModes> partitions;
  /// T(1) = -(Lambda(1))^-1, diagonal stored as a vector.
  CVec characteristic_times;
};

inline constexpr double kMaxEigenbasisCondition = 1e12;

inline PartitionModes partition_modes(const SubReservoir& p, double dt) {
  const Mat W = p.dense_W();
  const Index n = W.rows();
  Eigen::EigenSolver<Mat> es(W, /*computeEigenvectors=*/true);
  if (es.info() != Eigen::Success) throw IllConditionedError("linearize: eigensolver did not converge");

  PartitionModes m;
  m.M = (p.alpha / dt) * (Mat::Identity(n, n) - p.rho * W);
  m.W_eigvals = es.eigenvalues();
  m.eigvals = (p.alpha / dt) * (CVec::Ones(n) - p.rho * m.W_eigvals);
  m.discrete_eigvals = CVec::Ones(n) - p.alpha * (CVec::Ones(n) - p.rho * m.W_eigvals);

  const CMat R = es.eigenvectors();
  Eigen::JacobiSVD<CMat> svd(R);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  m.condition_number = smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
  if (!(m.condition_number <= kMaxEigenbasisCondition)) {
    throw IllConditionedError("linearize: eigenbasis condition number " + std::to_string(m.condition_number) +
                              " exceeds 1e12 (defective spectrum); re-seed the reservoir");
  }
  m.left_eigvecs = R.inverse();
  return m;
}

inline LinearizedSystem linearize(const HierarchicalNetwork& net) {
  net.validate();
  if (net.num_partitions() > 2) {
    throw InvalidArgument("linearize: only networks with at most two partitions are supported");
  }
  LinearizedSystem sys;
  const Index N = net.size();
  sys.W_tilde = Mat::Zero(N, N);
  for (std::size_t k = 0; k < net.num_partitions(); ++k) {
    const auto& p = net.partitions[k];
    const Index off = net.offset(k);
    sys.W_tilde.block(off, off, p.size(), p.size()) = p.rho * p.dense_W();
    sys.partitions.push_back(partition_modes(p, net.dt));
  }
  for (const auto& c : net.couplings) {
    sys.W_tilde.block(net.offset(c.to), net.offset(c.from), c.W.rows(), c.W.cols()) += c.strength * Mat(c.W);
  }
  sys.characteristic_times = -sys.partitions.front().eigvals.cwiseInverse();
  return sys;
}

/// Greedy nearest-neighbour matching of two eigenvalue multisets; returns the
/// largest pairing distance (infinity on size mismatch).
inline double multiset_distance(const CVec& a, const CVec& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  std::vector<bool> used(static_cast<std::size_t>(b.size()), false);
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Index best_j = -1;
    for (Index j = 0; j < b.size(); ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      const double d = std::abs(a(i) - b(j));
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    used[static_cast<std::size_t>(best_j)] = true;
    worst = std::max(worst, best);
  }
  return worst;
}

inline CVec eigenvalues(const Mat& A) {
  Eigen::EigenSolver<Mat> es(A, false);
  if (es.info() != Eigen::Success) throw IllConditionedError("eigenvalues: solver did not converge");
  return es.eigenvalues();
}

}  // namespace hesn
