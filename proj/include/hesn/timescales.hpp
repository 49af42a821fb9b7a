#pragma once

// Timescales of the linearized dynamics.
//
// A recurrent eigenvalue lambda_W maps to the discrete eigenvalue
// 1 - alpha (1 - rho lambda_W) and to the decay time
// tau = dt / (alpha (1 - rho Re lambda_W)). If eig(W) fills the unit disk
// uniformly, Re lambda_W has the semicircle density (2/pi) sqrt(1 - x^2),
// which induces a closed-form density, CDF and extrema for tau.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <vector>

#include "hesn/error.hpp"
#include "hesn/linearize.hpp"
#include "hesn/reservoir.hpp"

namespace hesn {

enum class TauSource { empirical_eigen, analytic_density };

struct TimescaleSample {
  std::vector<double> taus;
  TauSource source = TauSource::empirical_eigen;
};

inline TimescaleSample eigen_timescales(const CVec& W_eigvals, double alpha, double rho, double dt) {
  TimescaleSample out;
  out.taus.reserve(static_cast<std::size_t>(W_eigvals.size()));
  for (Index i = 0; i < W_eigvals.size(); ++i) {
    const double re_lambda = 1.0 - alpha * (1.0 - rho * W_eigvals(i).real());
    if (!(re_lambda < 1.0)) {
      throw NumericalError("eigen_timescales: Re(lambda) = " + std::to_string(re_lambda) +
                           " >= 1, mode does not decay");
    }
    out.taus.push_back(dt / (alpha * (1.0 - rho * W_eigvals(i).real())));
  }
  return out;
}

inline TimescaleSample eigen_timescales(const SubReservoir& sub, double dt) {
  const CVec eig = sub.W_eigvals.size() == sub.size() ? sub.W_eigvals : eigenvalues(sub.dense_W());
  return eigen_timescales(eig, sub.alpha, sub.rho, dt);
}

struct TauExtrema {
  double tau_min = 0.0;
  double tau_max = 0.0;
  double tau_peak = 0.0;
  /// rho = 1: tau_max is infinite.
  bool unbounded = false;
};

inline TauExtrema tau_extrema(double alpha, double rho, double dt) {
  check_leakage(alpha);
  check_scaling(rho);
  TauExtrema e;
  e.tau_min = dt / (alpha * (1.0 + rho));
  if (rho >= 1.0) {
    e.unbounded = true;
    e.tau_max = std::numeric_limits<double>::infinity();
  } else {
    e.tau_max = dt / (alpha * (1.0 - rho));
  }
  // Rationalized form of 5dt/(4 alpha (1-rho^2)) (1 - sqrt(1 - 24/25 (1-rho^2))),
  // finite at rho = 1.
  e.tau_peak = 6.0 * dt / (alpha * (5.0 + std::sqrt(1.0 + 24.0 * rho * rho)));
  return e;
}

/// p(tau) = 2 dt / (pi alpha^2 rho^2 tau^2) sqrt(alpha^2 rho^2 - (alpha - dt/tau)^2),
/// zero outside [tau_min, tau_max].
inline double analytic_tau_density(double alpha, double rho, double dt, double tau) {
  check_leakage(alpha);
  check_scaling(rho);
  if (rho == 0.0) {
    throw InvalidArgument("analytic_tau_density: rho = 0 is a degenerate point mass at dt/alpha");
  }
  if (!(tau > 0.0)) return 0.0;
  const double ar = alpha * rho;
  const double u = alpha - dt / tau;
  const double radicand = ar * ar - u * u;
  if (radicand <= 0.0) return 0.0;
  return 2.0 * dt / (std::numbers::pi * ar * ar * tau * tau) * std::sqrt(radicand);
}

/// Closed-form CDF of the density above.
inline double analytic_tau_cdf(double alpha, double rho, double dt, double tau) {
  check_leakage(alpha);
  check_scaling(rho);
  if (rho == 0.0) return tau >= dt / alpha ? 1.0 : 0.0;
  if (!(tau > 0.0)) return 0.0;
  // tau is increasing in x = Re(lambda_W) = (1 - dt/(alpha tau)) / rho.
  const double x = std::clamp((1.0 - dt / (alpha * tau)) / rho, -1.0, 1.0);
  return 0.5 + (x * std::sqrt(1.0 - x * x) + std::asin(x)) / std::numbers::pi;
}

/// sup |F_empirical - F| over the sample.
inline double ks_distance(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw InvalidArgument("ks_distance: empty sample");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, std::abs(static_cast<double>(i + 1) / n - f), std::abs(f - static_cast<double>(i) / n)});
  }
  return d;
}

/// Log-spaced histogram, normalized to a density.
struct Histogram {
  std::vector<double> edges;
  std::vector<double> density;
};

inline Histogram log_histogram(std::span<const double> xs, double lo, double hi, std::size_t bins) {
  if (!(lo > 0.0 && hi > lo) || bins == 0) throw InvalidArgument("log_histogram: bad range");
  Histogram h;
  const double llo = std::log(lo);
  const double lhi = std::log(hi);
  for (std::size_t i = 0; i <= bins; ++i) {
    h.edges.push_back(std::exp(llo + (lhi - llo) * static_cast<double>(i) / static_cast<double>(bins)));
  }
  std::vector<double> counts(bins, 0.0);
  for (double x : xs) {
    if (x < lo || x > hi) continue;
    auto b = static_cast<std::size_t>((std::log(x) - llo) / (lhi - llo) * static_cast<double>(bins));
    counts[std::min(b, bins - 1)] += 1.0;
  }
  const double n = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < bins; ++i) h.density.push_back(counts[i] / (n * (h.edges[i + 1] - h.edges[i])));
  return h;
}

// ---------------------------------------------------------------------------
// Impulse response against the linear prediction.

struct ImpulseFitReport {
  double gamma = 0.0;
  double rmse = 0.0;
  double nrmse1 = 0.0;
  /// RMSE of each projected mode.
  std::vector<double> per_mode_error;
};

/// Drive with a unit square pulse of `pulse_len` steps, then let the network
/// relax for `relax_len` steps with zero input. Each left eigenvector v gives
/// an observed trace y(t) = Re(v x(t)) and the linear prediction
/// e^{Re(l) t} [Re(v x0) cos(Im(l) t) - Im(v x0) sin(Im(l) t)], with l the
/// complex log of the discrete eigenvalue (exact for the linear map).
inline std::vector<ImpulseFitReport> impulse_response_fit(const HierarchicalNetwork& net,
                                                          std::span<const double> gammas,
                                                          Index pulse_len = 200, Index relax_len = 200) {
  if (net.num_partitions() != 1) throw InvalidArgument("impulse_response_fit: needs a single partition");
  if (pulse_len < 0 || relax_len < 1) throw InvalidArgument("impulse_response_fit: bad window lengths");
  const auto modes = partition_modes(net.partitions[0], net.dt);
  const Index n = net.size();
  const Index T = relax_len + 1;

  std::vector<ImpulseFitReport> reports;
  for (double gamma : gammas) {
    HierarchicalNetwork probe = net;
    probe.partitions[0].gamma = gamma;
    NetworkState state = zero_state(probe);
    const Vec pulse = Vec::Ones(probe.input_dim());
    const Vec silence = Vec::Zero(probe.input_dim());
    for (Index t = 0; t < pulse_len; ++t) state = step(probe, state, pulse);

    // Observed projections, one column per time step.
    CMat observed(n, T);
    observed.col(0) = modes.left_eigvecs * state.x.cast<std::complex<double>>();
    for (Index t = 1; t < T; ++t) {
      state = step(probe, state, silence);
      observed.col(t) = modes.left_eigvecs * state.x.cast<std::complex<double>>();
    }

    ImpulseFitReport rep;
    rep.gamma = gamma;
    double total_sq = 0.0;
    for (Index i = 0; i < n; ++i) {
      const std::complex<double> rate = std::log(modes.discrete_eigvals(i));
      const std::complex<double> c0 = observed(i, 0);
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      double sq = 0.0;
      double abs_sum = 0.0;
      for (Index t = 0; t < T; ++t) {
        const double td = static_cast<double>(t);
        const double predicted = std::exp(rate.real() * td) *
                                 (c0.real() * std::cos(rate.imag() * td) - c0.imag() * std::sin(rate.imag() * td));
        const double y = observed(i, t).real();
        lo = std::min(lo, y);
        hi = std::max(hi, y);
        const double e = predicted - y;
        sq += e * e;
        abs_sum += std::sqrt(e * e / static_cast<double>(T - 1));
      }
      total_sq += sq;
      rep.per_mode_error.push_back(std::sqrt(sq / static_cast<double>(T)));
      const double range = std::abs(hi - lo);
      if (range > 0.0) rep.nrmse1 += abs_sum / (static_cast<double>(n) * range);
    }
    rep.rmse = std::sqrt(total_sq / static_cast<double>(n * T));
    reports.push_back(std::move(rep));
  }
  return reports;
}

// CSV emitters.

inline void write_tau_samples_csv(std::ostream& os, double alpha, double rho, const TimescaleSample& s,
                                  bool header = true) {
  if (header) os << "alpha,rho,tau\n";
  os.precision(12);
  for (double tau : s.taus) os << alpha << "," << rho << "," << tau << "\n";
}

inline void write_density_csv(std::ostream& os, double alpha, double rho, double dt, std::size_t points = 400) {
  const auto ex = tau_extrema(alpha, rho, dt);
  const double hi = ex.unbounded ? 50.0 * ex.tau_peak : ex.tau_max;
  os << "tau,density\n";
  os.precision(12);
  for (std::size_t i = 0; i < points; ++i) {
    const double tau = ex.tau_min + (hi - ex.tau_min) * static_cast<double>(i) / static_cast<double>(points - 1);
    os << tau << "," << analytic_tau_density(alpha, rho, dt, tau) << "\n";
  }
}

inline void write_impulse_csv(std::ostream& os, std::span<const ImpulseFitReport> reports) {
  os << "gamma,rmse,nrmse1\n";
  os.precision(12);
  for (const auto& r : reports) os << r.gamma << "," << r.rmse << "," << r.nrmse1 << "\n";
}

}  // namespace hesn
