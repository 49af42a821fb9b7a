#pragma once

// Linear readouts and the metrics used to score them.
//
// Feature matrices carry one row per sample; the bias is an explicit
// constant-1 column appended by with_bias() and regularized like any other
// weight.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hesn/error.hpp"
#include "hesn/reservoir.hpp"

namespace hesn {

enum class Head { linear, sigmoid };

struct ReadoutModel {
  /// (features + 1) x outputs, bias row last.
  Mat W;
  Head head = Head::linear;

  Index width() const { return W.rows(); }
  Index outputs() const { return W.cols(); }
};

inline Mat with_bias(const Mat& X) {
  Mat out(X.rows(), X.cols() + 1);
  out.leftCols(X.cols()) = X;
  out.col(X.cols()).setOnes();
  return out;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Solves (X^T X + lambda I) W = X^T Y by Cholesky.
inline ReadoutModel ridge_fit(const Mat& X, const Mat& Y, double lambda) {
  if (X.rows() != Y.rows()) throw InvalidArgument("ridge_fit: row count of X and targets differ");
  if (!(lambda >= 0.0)) throw InvalidArgument("ridge_fit: lambda must be >= 0");
  Mat G = X.transpose() * X;
  G.diagonal().array() += lambda;
  Eigen::LLT<Mat> llt(G);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-15)) {
    throw NumericalError("ridge_fit: normal equations are singular; use lambda > 0");
  }
  return {llt.solve(X.transpose() * Y), Head::linear};
}

inline ReadoutModel ridge_fit(const Mat& X, const Vec& y, double lambda) { return ridge_fit(X, Mat(y), lambda); }

inline Mat predict(const ReadoutModel& model, const Mat& X) {
  if (X.cols() != model.width()) {
    throw InvalidArgument("predict: feature width " + std::to_string(X.cols()) + " does not match model width " +
                          std::to_string(model.width()));
  }
  Mat out = X * model.W;
  if (model.head == Head::sigmoid) out = out.unaryExpr(&sigmoid);
  return out;
}

/// sqrt(mean((pred - truth)^2) / Var(truth)), population variance.
inline double nrmse(const Vec& pred, const Vec& truth) {
  if (pred.size() != truth.size() || truth.size() == 0) throw InvalidArgument("nrmse: length mismatch");
  const double var = (truth.array() - truth.mean()).square().mean();
  if (!(var > 0.0)) throw InvalidArgument("nrmse: target has zero variance");
  return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(truth.size()) / var);
}

/// Mean NRMSE over output columns.
inline double nrmse(const Mat& pred, const Mat& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) throw InvalidArgument("nrmse: shape mismatch");
  double sum = 0.0;
  for (Index j = 0; j < truth.cols(); ++j) sum += nrmse(Vec(pred.col(j)), Vec(truth.col(j)));
  return sum / static_cast<double>(truth.cols());
}

inline constexpr double kProbabilityClamp = 1e-12;

struct CrossEntropy {
  double value = 0.0;
  /// True if any prediction had to be clamped away from 0 or 1.
  bool clamped = false;
};

/// Minibatch mean of -sum_j [y log p + (1 - y) log(1 - p)].
inline CrossEntropy cross_entropy(const Mat& probs, const Mat& onehot) {
  if (probs.rows() != onehot.rows() || probs.cols() != onehot.cols() || probs.rows() == 0) {
    throw InvalidArgument("cross_entropy: shape mismatch");
  }
  CrossEntropy ce;
  double total = 0.0;
  for (Index m = 0; m < probs.rows(); ++m) {
    for (Index j = 0; j < probs.cols(); ++j) {
      double p = probs(m, j);
      if (p < kProbabilityClamp || p > 1.0 - kProbabilityClamp) {
        ce.clamped = true;
        p = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
      }
      const double y = onehot(m, j);
      total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
  }
  ce.value = total / static_cast<double>(probs.rows());
  return ce;
}

inline std::vector<int> argmax_rows(const Mat& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Index m = 0; m < scores.rows(); ++m) {
    Index best = 0;
    scores.row(m).maxCoeff(&best);
    out[static_cast<std::size_t>(m)] = static_cast<int>(best);
  }
  return out;
}

/// Fraction of rows whose argmax equals the label.
inline double accuracy(const Mat& scores, std::span<const int> labels) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size() || labels.empty()) {
    throw InvalidArgument("accuracy: size mismatch");
  }
  const auto picks = argmax_rows(scores);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += picks[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Fraction of samples where (pred > threshold) matches the 0/1 truth.
inline double threshold_accuracy(const Vec& pred, const Vec& truth, double threshold = 0.5) {
  if (pred.size() != truth.size() || pred.size() == 0) throw InvalidArgument("threshold_accuracy: size mismatch");
  Index hits = 0;
  for (Index i = 0; i < pred.size(); ++i) hits += (pred(i) > threshold) == (truth(i) > threshold);
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// [x(M), x(2M), ..., x(T)] from a trajectory whose row r is x(r + 1).
inline Vec concat_frames(const StateTrajectory& traj, Index M, Index T) {
  if (M <= 0 || T <= 0 || T % M != 0) {
    throw InvalidArgument("concat_frames: frame stride " + std::to_string(M) + " must divide " + std::to_string(T));
  }
  if (traj.length() < T) throw InvalidArgument("concat_frames: trajectory shorter than T");
  const Index frames = T / M;
  const Index width = traj.states.cols();
  Vec out(frames * width);
  for (Index f = 0; f < frames; ++f) out.segment(f * width, width) = traj.states.row((f + 1) * M - 1).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Regularization selection

inline std::vector<double> default_lambda_grid() {
  return {1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
}

struct RidgeSelection {
  ReadoutModel model;
  double lambda = 0.0;
  double validation_score = 0.0;
};

using ScoreFn = std::function<double(const Mat& pred, const Mat& truth)>;

/// Fit on the training rows for every lambda; keep the lowest validation
/// score (mean NRMSE unless `score` is given). The Gram matrix is formed once.
inline RidgeSelection select_ridge(const Mat& X_train, const Mat& Y_train, const Mat& X_val, const Mat& Y_val,
                                   std::span<const double> lambdas, const ScoreFn& score = {}) {
  if (lambdas.empty()) throw InvalidArgument("select_ridge: empty lambda grid");
  const Mat G = X_train.transpose() * X_train;
  const Mat B = X_train.transpose() * Y_train;
  RidgeSelection best;
  best.validation_score = std::numeric_limits<double>::infinity();
  for (double lambda : lambdas) {
    Mat A = G;
    A.diagonal().array() += lambda;
    Eigen::LLT<Mat> llt(A);
    if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-15)) continue;
    ReadoutModel m{llt.solve(B), Head::linear};
    const Mat pred = predict(m, X_val);
    const double s = score ? score(pred, Y_val) : nrmse(pred, Y_val);
    if (std::isfinite(s) && s < best.validation_score) {
      best = {std::move(m), lambda, s};
    }
  }
  if (!std::isfinite(best.validation_score)) throw NumericalError("select_ridge: no lambda gave a finite score");
  return best;
}

// ---------------------------------------------------------------------------
// Text dump: "head rows cols" then one row of weights per line.

inline void write_model(std::ostream& os, const ReadoutModel& m) {
  os << (m.head == Head::linear ? "linear" : "sigmoid") << " " << m.W.rows() << " " << m.W.cols() << "\n";
  os.precision(17);
  for (Index i = 0; i < m.W.rows(); ++i) {
    for (Index j = 0; j < m.W.cols(); ++j) os << (j ? " " : "") << m.W(i, j);
    os << "\n";
  }
}

inline ReadoutModel read_model(std::istream& is) {
  std::string head;
  Index rows = 0;
  Index cols = 0;
  if (!(is >> head >> rows >> cols) || rows < 0 || cols < 0) throw ParseError("read_model: bad header");
  ReadoutModel m;
  if (head == "linear") {
    m.head = Head::linear;
  } else if (head == "sigmoid") {
    m.head = Head::sigmoid;
  } else {
    throw ParseError("read_model: unknown head '" + head + "'");
  }
  m.W.resize(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      if (!(is >> m.W(i, j))) throw ParseError("read_model: truncated weights");
  if (!m.W.allFinite()) throw ParseError("read_model: non-finite weight");
  return m;
}

}  // namespace hesn
