#pragma once

// Online learning of leakage rates and readout weights.
//
// e(k,i)(t) = dx(k)(t)/d alpha(i) is carried forward alongside the state:
//
//   e(k,i)(t+1) = (1 - alpha(k)) e(k,i)(t) + delta(k,i) [f(h(k)) - x(k)(t)]
//                 + alpha(k) f'(h(k)) . sum_l rho(kl) W(kl) e(l,i)(t)
//
// where the sum includes l = k, so e is the exact derivative of the state.
// The per-step gradient dE(t)/d alpha(i) = (y~ - y) W_out e(., i)(t) keeps only
// the same-time term of the unrolled gradient.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hesn/error.hpp"
#include "hesn/readout.hpp"
#include "hesn/reservoir.hpp"
#include "hesn/rng.hpp"

namespace hesn {

// ---------------------------------------------------------------------------
// Eligibility traces

struct TraceSet {
  /// e[k][i]: derivative of partition k's state with respect to alpha(i).
  std::vector<std::vector<Vec>> e;

  static TraceSet zeros(const HierarchicalNetwork& net) {
    TraceSet t;
    const std::size_t P = net.num_partitions();
    t.e.resize(P);
    for (std::size_t k = 0; k < P; ++k) t.e[k].assign(P, Vec::Zero(net.partitions[k].size()));
    return t;
  }

  std::size_t partitions() const { return e.size(); }

  /// dx/d alpha(i) over the whole network.
  Vec stacked(std::size_t i) const {
    Index n = 0;
    for (const auto& row : e) n += row[i].size();
    Vec out(n);
    Index off = 0;
    for (const auto& row : e) {
      out.segment(off, row[i].size()) = row[i];
      off += row[i].size();
    }
    return out;
  }
};

/// Advance the traces across one step x -> x'. `h` are the pre-activations
/// computed from the pre-update state `x` and the input of that step.
inline TraceSet update_traces(const HierarchicalNetwork& net, const Vec& x, const std::vector<Vec>& h,
                              const TraceSet& traces, long t = -1) {
  const std::size_t P = net.num_partitions();
  if (traces.partitions() != P || h.size() != P) throw InvalidArgument("update_traces: partition count mismatch");
  TraceSet next;
  next.e.resize(P);
  for (std::size_t k = 0; k < P; ++k) {
    const auto& p = net.partitions[k];
    const Index off = net.offset(k);
    const Vec fh = h[k].unaryExpr(&activation);
    const Vec gain = p.alpha * h[k].unaryExpr(&activation_derivative);
    next.e[k].resize(P);
    for (std::size_t i = 0; i < P; ++i) {
      Vec drive = p.rho * (p.W * traces.e[k][i]);
      for (const auto& c : net.couplings) {
        if (c.to == k && c.strength != 0.0) drive.noalias() += c.strength * (c.W * traces.e[c.from][i]);
      }
      Vec v = (1.0 - p.alpha) * traces.e[k][i] + gain.cwiseProduct(drive);
      if (i == k) v += fh - x.segment(off, p.size());
      if (!v.allFinite()) {
        throw NumericalError("update_traces: non-finite trace e(" + std::to_string(k + 1) + "," +
                             std::to_string(i + 1) + ") at t=" + std::to_string(t));
      }
      next.e[k][i] = std::move(v);
    }
  }
  return next;
}

inline TraceSet update_traces(const HierarchicalNetwork& net, const Vec& x, const TraceSet& traces, const Vec& s,
                              long t = -1) {
  return update_traces(net, x, preactivations(net, x, s), traces, t);
}

/// dE/d alpha(i) = sum_o err_o W_out[:, o] . e(., i), with err = prediction -
/// target and W_out's bias row ignored.
inline Vec grad_alpha(const Vec& err, const Mat& W_out, const TraceSet& traces) {
  if (W_out.cols() != err.size()) throw InvalidArgument("grad_alpha: error vector does not match readout outputs");
  const std::size_t P = traces.partitions();
  Vec g(static_cast<Index>(P));
  const Vec back = W_out * err;
  for (std::size_t i = 0; i < P; ++i) {
    const Vec e = traces.stacked(i);
    if (e.size() != W_out.rows() && e.size() + 1 != W_out.rows()) {
      throw InvalidArgument("grad_alpha: readout width does not match network size");
    }
    g(static_cast<Index>(i)) = back.head(e.size()).dot(e);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Unrolled reference gradient (tests only)

inline constexpr Index kMaxOracleLength = 200;

struct BpttGradient {
  /// dE/d alpha summed over the sequence.
  Vec total;
  /// Row t: a(t) . dx(t)/d alpha|immediate, with a(t) the full adjoint
  /// sum_{t' >= t} dE(t')/dx(t') J(t', t).
  Mat per_step;
  /// Row t: dE(t)/dx(t) . dx(t)/d alpha (the t' = t term alone).
  Mat same_time;
};

/// Dense one-step Jacobian dx(t+1)/dx(t) given pre-activations h at that step.
inline Mat step_jacobian(const HierarchicalNetwork& net, const std::vector<Vec>& h) {
  const Index N = net.size();
  Mat J = Mat::Zero(N, N);
  for (std::size_t k = 0; k < net.num_partitions(); ++k) {
    const auto& p = net.partitions[k];
    const Index off = net.offset(k);
    const Vec gain = p.alpha * h[k].unaryExpr(&activation_derivative);
    J.block(off, off, p.size(), p.size()) = gain.asDiagonal() * (p.rho * p.dense_W());
    J.block(off, off, p.size(), p.size()).diagonal().array() += 1.0 - p.alpha;
  }
  for (const auto& c : net.couplings) {
    const Vec gain = net.partitions[c.to].alpha * h[c.to].unaryExpr(&activation_derivative);
    J.block(net.offset(c.to), net.offset(c.from), c.W.rows(), c.W.cols()) +=
        gain.asDiagonal() * (c.strength * Mat(c.W));
  }
  return J;
}

/// E = sum_t 1/2 |W_out^T [x(t); 1] - y(t)|^2 over t = 1..T, where x(t) is
/// the state after consuming signal row t-1. x(0) defaults to zero and is
/// treated as independent of alpha.
inline BpttGradient bptt_gradient_oracle(const HierarchicalNetwork& net, const Mat& signal, const Mat& targets,
                                         const Mat& W_out, const std::optional<Vec>& x0 = std::nullopt) {
  const Index T = signal.rows();
  if (T < 1 || T > kMaxOracleLength) {
    throw InvalidArgument("bptt_gradient_oracle: sequence length " + std::to_string(T) + " outside [1, 200]");
  }
  if (targets.rows() != T || targets.cols() != W_out.cols() || W_out.rows() != net.size() + 1) {
    throw InvalidArgument("bptt_gradient_oracle: shape mismatch");
  }
  const Index N = net.size();
  const auto P = static_cast<Index>(net.num_partitions());

  std::vector<Mat> J(static_cast<std::size_t>(T));        // dx(t+1)/dx(t)
  std::vector<Mat> immediate(static_cast<std::size_t>(T));  // N x P
  std::vector<Vec> dEdx(static_cast<std::size_t>(T));
  Vec x = x0 ? *x0 : Vec::Zero(N);
  if (x.size() != N) throw InvalidArgument("bptt_gradient_oracle: initial state has wrong size");
  Vec feat(N + 1);
  for (Index t = 0; t < T; ++t) {
    const auto h = preactivations(net, x, signal.row(t).transpose());
    Mat imm = Mat::Zero(N, P);
    for (Index k = 0; k < P; ++k) {
      const auto& p = net.partitions[static_cast<std::size_t>(k)];
      const Index off = net.offset(static_cast<std::size_t>(k));
      imm.block(off, k, p.size(), 1) = h[static_cast<std::size_t>(k)].unaryExpr(&activation) - x.segment(off, p.size());
    }
    J[static_cast<std::size_t>(t)] = step_jacobian(net, h);
    immediate[static_cast<std::size_t>(t)] = std::move(imm);
    x = leaky_update(net, x, h);
    feat << x, 1.0;
    const Vec err = W_out.transpose() * feat - targets.row(t).transpose();
    dEdx[static_cast<std::size_t>(t)] = (W_out * err).head(N);
  }

  BpttGradient out;
  out.per_step.resize(T, P);
  out.same_time.resize(T, P);

  // Forward: D(t) = J(t) D(t-1) + immediate(t), the full dx(t)/d alpha.
  Mat D = Mat::Zero(N, P);
  for (Index t = 0; t < T; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    D = J[ts] * D + immediate[ts];
    out.same_time.row(t) = dEdx[ts].transpose() * D;
  }

  // Reverse: a(t) = dE(t)/dx(t) + a(t+1) J(t+1).
  Vec a = Vec::Zero(N);
  for (Index t = T - 1; t >= 0; --t) {
    const auto ts = static_cast<std::size_t>(t);
    if (t + 1 < T) a = J[ts + 1].transpose() * a;
    a += dEdx[ts];
    out.per_step.row(t) = a.transpose() * immediate[ts];
  }
  out.total = out.per_step.colwise().sum().transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  Mat m;
  Mat v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double eta = 1e-3;

  static AdamState like(const Mat& theta, double eta, double beta1, double beta2 = 0.999, double epsilon = 1e-8) {
    return {Mat::Zero(theta.rows(), theta.cols()), Mat::Zero(theta.rows(), theta.cols()), 0, beta1, beta2,
            epsilon, eta};
  }
};

/// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; theta -= eta m^ / (sqrt(v^) + eps).
inline void adam_step(AdamState& opt, Mat& theta, const Mat& grad) {
  if (grad.rows() != theta.rows() || grad.cols() != theta.cols() || opt.m.rows() != theta.rows() ||
      opt.m.cols() != theta.cols()) {
    throw InvalidArgument("adam_step: shape mismatch");
  }
  if (!grad.allFinite()) throw NumericalError("adam_step: non-finite gradient");
  ++opt.t;
  opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * grad;
  opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
  theta.array() -= opt.eta * (opt.m.array() / c1) / ((opt.v.array() / c2).sqrt() + opt.epsilon);
}

// ---------------------------------------------------------------------------
// Online training loop

struct OnlineSchedule {
  double eta_W = 1e-3;
  double eta_alpha = 5e-6;
  double beta1_W = 0.9;
  double beta1_alpha = 0.99;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Index N_batch = 10;
  long reinit_patience = 500;
  double convergence_tol = 1e-3;
  /// Minimum steps between re-initializations, so the readout can relearn.
  long reinit_min_gap = 10000;
  /// alpha must return within this distance after a re-initialization to stop.
  double stability_tol = 0.02;
  long max_steps = 200000;
  /// Steps of state warm-up per lane before any update.
  long washout = 200;
  double alpha_min = 1e-3;
  /// Std of the fresh output weights.
  double weight_init_scale = 0.01;
  /// When false the run lasts max_steps; re-initializations still happen.
  bool stop_on_stable = true;

  void validate() const {
    if (!(eta_W >= 0.0 && eta_alpha >= 0.0 && N_batch > 0 && reinit_patience > 0 && convergence_tol > 0.0 &&
          max_steps > 0 && washout >= 0 && alpha_min > 0.0 && alpha_min <= 1.0)) {
      throw InvalidArgument("OnlineSchedule: rates, batch size, patience and tolerance must be positive");
    }
  }
};

inline OnlineSchedule narma_schedule() { return {}; }

inline OnlineSchedule psmnist_schedule() {
  OnlineSchedule s;
  s.eta_W = 5e-2;
  s.eta_alpha = 1e-4;
  s.beta1_alpha = 0.999;
  s.N_batch = 50;
  s.washout = 0;
  return s;
}

/// One step of one lane: the input that drives the reservoir and the target
/// for the state it produces.
struct StreamSample {
  Vec input;
  Vec target;
};

using LaneSource = std::function<StreamSample(std::size_t lane, long step)>;

struct OnlineResult {
  ReadoutModel readout;
  /// Row per recorded step: alpha of every partition.
  Mat alpha_trajectory;
  std::vector<double> loss;
  std::vector<int> reinit_flag;
  std::vector<double> final_alpha;
  long steps = 0;
  int reinits = 0;
  bool stable = false;
};

inline Mat init_readout(Rng& rng, Index width, Index outputs, double scale) {
  Mat W(width, outputs);
  for (Index i = 0; i < width; ++i)
    for (Index j = 0; j < outputs; ++j) W(i, j) = scale * rng.normal();
  return W;
}

/// Minibatch online training of W_out (and alpha if train_alpha). Steps
/// 0..washout-1 only advance the lanes. The loss at each step is
/// 1/(2 N_batch) sum_m |y~ - y|^2.
inline OnlineResult train_online(HierarchicalNetwork net, const LaneSource& source, const OnlineSchedule& sched,
                                 bool train_alpha, std::uint64_t seed, Index outputs) {
  sched.validate();
  net.validate();
  const auto P = static_cast<Index>(net.num_partitions());
  const Index N = net.size();
  const auto B = static_cast<std::size_t>(sched.N_batch);
  Rng rng = Rng::derive(seed, 21);

  OnlineResult res;
  res.readout.W = init_readout(rng, N + 1, outputs, sched.weight_init_scale);
  AdamState opt_W = AdamState::like(res.readout.W, sched.eta_W, sched.beta1_W, sched.beta2, sched.epsilon);
  Mat alpha(P, 1);
  for (Index k = 0; k < P; ++k) alpha(k) = net.partitions[static_cast<std::size_t>(k)].alpha;
  AdamState opt_a = AdamState::like(alpha, sched.eta_alpha, sched.beta1_alpha, sched.beta2, sched.epsilon);

  std::vector<Vec> x(B, Vec::Zero(N));
  std::vector<TraceSet> traces(B, TraceSet::zeros(net));

  std::vector<std::vector<double>> traj;
  Mat ref_alpha = alpha;
  long ref_step = 0;
  long last_reinit = sched.washout;
  std::optional<Mat> alpha_at_reinit;
  Vec feat(N + 1);

  long step = 0;
  for (; step < sched.max_steps + sched.washout; ++step) {
    const bool learning = step >= sched.washout;
    Mat gW = Mat::Zero(N + 1, outputs);
    Vec ga = Vec::Zero(P);
    double loss = 0.0;
    for (std::size_t m = 0; m < B; ++m) {
      const StreamSample smp = source(m, step);
      const auto h = preactivations(net, x[m], smp.input);
      if (train_alpha) traces[m] = update_traces(net, x[m], h, traces[m], step);
      try {
        x[m] = leaky_update(net, x[m], h);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " in lane " + std::to_string(m) + " at t=" + std::to_string(step));
      }
      if (!learning) continue;
      feat << x[m], 1.0;
      const Vec err = res.readout.W.transpose() * feat - smp.target;
      loss += 0.5 * err.squaredNorm();
      gW.noalias() += feat * err.transpose();
      if (train_alpha) ga += grad_alpha(err, res.readout.W, traces[m]);
    }
    if (!learning) continue;
    const double bd = static_cast<double>(B);
    loss /= bd;
    if (!(loss <= 1e6)) {
      throw NumericalError("train_online: loss diverged (" + std::to_string(loss) + ") at step " +
                           std::to_string(step) + " with alpha = " + std::to_string(alpha(0)) +
                           (P > 1 ? ", " + std::to_string(alpha(1)) : std::string()));
    }
    adam_step(opt_W, res.readout.W, gW / bd);
    if (train_alpha) {
      adam_step(opt_a, alpha, Mat(ga / bd));
      for (Index k = 0; k < P; ++k) {
        alpha(k) = std::clamp(alpha(k), sched.alpha_min, 1.0);
        net.partitions[static_cast<std::size_t>(k)].alpha = alpha(k);
      }
    }

    int flag = 0;
    if (!train_alpha) {
      // Nothing to converge: the readout just keeps learning.
    } else if ((alpha - ref_alpha).cwiseAbs().maxCoeff() >= sched.convergence_tol) {
      ref_alpha = alpha;
      ref_step = step;
    } else if (step - ref_step >= sched.reinit_patience && step - last_reinit >= sched.reinit_min_gap) {
      if (alpha_at_reinit && (alpha - *alpha_at_reinit).cwiseAbs().maxCoeff() < sched.stability_tol) {
        res.stable = true;
      }
      res.readout.W = init_readout(rng, N + 1, outputs, sched.weight_init_scale);
      opt_W = AdamState::like(res.readout.W, sched.eta_W, sched.beta1_W, sched.beta2, sched.epsilon);
      alpha_at_reinit = alpha;
      ref_step = step;
      last_reinit = step;
      ++res.reinits;
      flag = 1;
    }
    res.loss.push_back(loss);
    res.reinit_flag.push_back(flag);
    traj.emplace_back(alpha.data(), alpha.data() + P);
    if (res.stable && sched.stop_on_stable) {
      ++step;
      break;
    }
  }
  res.steps = step - sched.washout;
  res.alpha_trajectory.resize(static_cast<Index>(traj.size()), P);
  for (std::size_t r = 0; r < traj.size(); ++r)
    for (Index k = 0; k < P; ++k) res.alpha_trajectory(static_cast<Index>(r), k) = traj[r][static_cast<std::size_t>(k)];
  res.final_alpha.assign(alpha.data(), alpha.data() + P);
  return res;
}

/// Running median with an odd window, shrinking at the ends.
inline std::vector<double> running_median(std::span<const double> xs, std::size_t window = 51) {
  if (window == 0 || window % 2 == 0) throw InvalidArgument("running_median: window must be odd");
  const std::size_t half = window / 2;
  std::vector<double> out(xs.size());
  std::vector<double> buf;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(xs.size(), i + half + 1);
    buf.assign(xs.begin() + static_cast<std::ptrdiff_t>(lo), xs.begin() + static_cast<std::ptrdiff_t>(hi));
    auto mid = buf.begin() + static_cast<std::ptrdiff_t>(buf.size() / 2);
    std::nth_element(buf.begin(), mid, buf.end());
    out[i] = *mid;
  }
  return out;
}

inline void write_training_log_csv(std::ostream& os, const OnlineResult& r) {
  os << "step,loss,alpha_1,alpha_2,reinit_flag\n";
  os.precision(10);
  for (Index t = 0; t < r.alpha_trajectory.rows(); ++t) {
    const auto ts = static_cast<std::size_t>(t);
    os << t << "," << r.loss[ts] << "," << r.alpha_trajectory(t, 0) << ",";
    if (r.alpha_trajectory.cols() > 1) os << r.alpha_trajectory(t, 1);
    os << "," << r.reinit_flag[ts] << "\n";
  }
}

// ---------------------------------------------------------------------------
// Sigmoid readout on fixed features (psMNIST)

struct SigmoidTraining {
  ReadoutModel model;
  std::vector<double> epoch_loss;
};

/// Minibatch Adam on binary cross-entropy; with sigmoid outputs the gradient
/// with respect to the logits is (p - y). X carries the bias column.
inline SigmoidTraining train_sigmoid_readout(const Mat& X, const Mat& Y, int epochs, Index batch, double eta,
                                             std::uint64_t seed, double beta1 = 0.9, double beta2 = 0.999) {
  if (X.rows() != Y.rows() || X.rows() == 0) throw InvalidArgument("train_sigmoid_readout: shape mismatch");
  if (epochs < 1 || batch < 1) throw InvalidArgument("train_sigmoid_readout: epochs and batch must be positive");
  Rng rng = Rng::derive(seed, 31);
  SigmoidTraining out;
  out.model.head = Head::sigmoid;
  out.model.W = Mat::Zero(X.cols(), Y.cols());
  AdamState opt = AdamState::like(out.model.W, eta, beta1, beta2);
  std::vector<Index> order(static_cast<std::size_t>(X.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  for (int ep = 0; ep < epochs; ++ep) {
    rng.shuffle(std::span<Index>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
      const auto nb = static_cast<Index>(end - start);
      Mat Xb(nb, X.cols());
      Mat Yb(nb, Y.cols());
      for (std::size_t r = start; r < end; ++r) {
        Xb.row(static_cast<Index>(r - start)) = X.row(order[r]);
        Yb.row(static_cast<Index>(r - start)) = Y.row(order[r]);
      }
      const Mat probs = predict(out.model, Xb);
      total += cross_entropy(probs, Yb).value * static_cast<double>(nb);
      adam_step(opt, out.model.W, Xb.transpose() * (probs - Yb) / static_cast<double>(nb));
    }
    out.epoch_loss.push_back(total / static_cast<double>(X.rows()));
  }
  return out;
}

}  // namespace hesn
