#pragma once

// Benchmark data: NARMA-D, the regime-switching telegraph process, psMNIST
// streams from IDX files, and the delayed-input surrogate for a fast first
// partition.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hesn/error.hpp"
#include "hesn/reservoir.hpp"
#include "hesn/rng.hpp"

namespace hesn {

// ---------------------------------------------------------------------------
// NARMA

struct NarmaConfig {
  int D = 10;
  double a = 0.3;
  double b = 0.05;
  double c = 1.5;
  double d = 0.1;
  Index length = 1000;
  std::uint64_t seed = 1;
  /// Reseed attempts before giving up on a diverging recursion.
  int max_reseeds = 100;
};

struct NarmaData {
  Vec s;
  Vec y;
  /// Seeds that diverged (|y| > 10) and were skipped.
  std::vector<std::uint64_t> skipped_seeds;
  std::uint64_t used_seed = 0;
};

/// y[n] = y[n-1] (a + b sum_{k=1..D} y[n-k]) + c s[n-1] s[n-D] + d,
/// with s, y zero before the start. s ~ U[0, 0.5].
inline Vec narma_recursion(const NarmaConfig& cfg, const Vec& s) {
  const Index L = s.size();
  Vec y = Vec::Zero(L);
  auto at = [](const Vec& v, Index i) { return i >= 0 ? v(i) : 0.0; };
  for (Index n = 0; n < L; ++n) {
    double window = 0.0;
    for (int k = 1; k <= cfg.D; ++k) window += at(y, n - k);
    y(n) = at(y, n - 1) * (cfg.a + cfg.b * window) + cfg.c * at(s, n - 1) * at(s, n - cfg.D) + cfg.d;
  }
  return y;
}

inline NarmaData gen_narma(const NarmaConfig& cfg) {
  if (cfg.D < 1) throw InvalidArgument("gen_narma: D must be >= 1");
  if (cfg.length <= cfg.D) throw InvalidArgument("gen_narma: length must exceed D");
  NarmaData out;
  std::uint64_t seed = cfg.seed;
  for (int attempt = 0; attempt <= cfg.max_reseeds; ++attempt, ++seed) {
    Rng rng(seed);
    Vec s(cfg.length);
    for (Index i = 0; i < cfg.length; ++i) s(i) = rng.uniform(0.0, 0.5);
    Vec y = narma_recursion(cfg, s);
    if (y.allFinite() && y.cwiseAbs().maxCoeff() <= 10.0) {
      out.s = std::move(s);
      out.y = std::move(y);
      out.used_seed = seed;
      return out;
    }
    out.skipped_seeds.push_back(seed);
  }
  throw NumericalError("gen_narma: recursion diverged for every reseed");
}

/// Unbounded NARMA source for online training. On divergence the recursion
/// restarts from zero history under seed + 1 and the skip is recorded.
class NarmaStream {
 public:
  explicit NarmaStream(const NarmaConfig& cfg) : cfg_(cfg), seed_(cfg.seed), rng_(cfg.seed) {
    if (cfg.D < 1) throw InvalidArgument("NarmaStream: D must be >= 1");
    reset_history();
  }

  /// Next (s_n, y_n) pair.
  std::pair<double, double> next() {
    for (int attempt = 0; attempt <= cfg_.max_reseeds; ++attempt) {
      const double s = rng_.uniform(0.0, 0.5);
      const auto D = static_cast<std::size_t>(cfg_.D);
      // s_hist_[0] = s_{n-1}, y_hist_[0] = y_{n-1}.
      double window = 0.0;
      for (double v : y_hist_) window += v;
      const double y = y_hist_[0] * (cfg_.a + cfg_.b * window) + cfg_.c * s_hist_[0] * s_hist_[D - 1] + cfg_.d;
      if (std::isfinite(y) && std::abs(y) <= 10.0) {
        s_hist_.insert(s_hist_.begin(), s);
        s_hist_.pop_back();
        y_hist_.insert(y_hist_.begin(), y);
        y_hist_.pop_back();
        return {s, y};
      }
      skipped_.push_back(seed_);
      rng_ = Rng(++seed_);
      reset_history();
    }
    throw NumericalError("NarmaStream: recursion diverged for every reseed");
  }

  const std::vector<std::uint64_t>& skipped_seeds() const { return skipped_; }

 private:
  void reset_history() {
    s_hist_.assign(static_cast<std::size_t>(cfg_.D), 0.0);
    y_hist_.assign(static_cast<std::size_t>(cfg_.D), 0.0);
  }

  NarmaConfig cfg_;
  std::uint64_t seed_;
  Rng rng_;
  std::vector<double> s_hist_;
  std::vector<double> y_hist_;
  std::vector<std::uint64_t> skipped_;
};

// ---------------------------------------------------------------------------
// Telegraph

struct TelegraphConfig {
  double p1 = 0.05;
  double p2 = 0.1;
  double p3 = 0.0005;
  double sigma = 1.0;
  Index length = 100000;
  Index burn_in = 10000;
  std::uint64_t seed = 1;
};

struct TelegraphData {
  /// s1 + sigma N(0,1).
  Vec input;
  /// Fast process s1 in {0,1}.
  Vec state;
  /// Slow process s2 in {0,1}.
  Vec regime;
  /// One-hot over the four (regime, state) combinations; class = 2 s2 + s1.
  Mat joint;
};

inline int joint_class(int regime, int state) { return 2 * regime + state; }

inline void check_telegraph(double p1, double p2, double p3, double sigma) {
  for (double p : {p1, p2, p3}) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("telegraph: probabilities must lie in (0, 1)");
  }
  if (!(sigma >= 0.0)) throw InvalidArgument("telegraph: sigma must be >= 0");
}

/// s2 flips with probability p3. Given s2(t), s1 goes 0 -> 1 with probability
/// p1 (s2 = 0) or p2 (s2 = 1) and 1 -> 0 with probability p2 (s2 = 0) or
/// p1 (s2 = 1). Both start at 0 and run `burn_in` unrecorded steps.
///
/// Probabilities and sigma may be changed between steps.
class TelegraphStream {
 public:
  struct Sample {
    double input;
    int state;
    int regime;
  };

  explicit TelegraphStream(const TelegraphConfig& cfg)
      : p1_(cfg.p1), p2_(cfg.p2), p3_(cfg.p3), sigma_(cfg.sigma), switch_rng_(Rng::derive(cfg.seed, 1)),
        noise_rng_(Rng::derive(cfg.seed, 2)) {
    check_telegraph(p1_, p2_, p3_, sigma_);
    for (Index t = 0; t < cfg.burn_in; ++t) advance();
  }

  void set_probabilities(double p1, double p2) {
    check_telegraph(p1, p2, p3_, sigma_);
    p1_ = p1;
    p2_ = p2;
  }

  void set_sigma(double sigma) {
    check_telegraph(p1_, p2_, p3_, sigma);
    sigma_ = sigma;
  }

  Sample next() {
    advance();
    return {s1_ + (sigma_ > 0.0 ? sigma_ * noise_rng_.normal() : 0.0), s1_, s2_};
  }

 private:
  void advance() {
    if (switch_rng_.bernoulli(p3_)) s2_ = 1 - s2_;
    const double up = s2_ == 0 ? p1_ : p2_;
    const double down = s2_ == 0 ? p2_ : p1_;
    if (s1_ == 0) {
      if (switch_rng_.bernoulli(up)) s1_ = 1;
    } else {
      if (switch_rng_.bernoulli(down)) s1_ = 0;
    }
  }

  double p1_, p2_, p3_, sigma_;
  Rng switch_rng_;
  Rng noise_rng_;
  int s1_ = 0;
  int s2_ = 0;
};

inline TelegraphData gen_telegraph(const TelegraphConfig& cfg) {
  TelegraphStream stream(cfg);
  TelegraphData out;
  out.input.resize(cfg.length);
  out.state.resize(cfg.length);
  out.regime.resize(cfg.length);
  out.joint = Mat::Zero(cfg.length, 4);
  for (Index t = 0; t < cfg.length; ++t) {
    const auto smp = stream.next();
    out.state(t) = smp.state;
    out.regime(t) = smp.regime;
    out.joint(t, joint_class(smp.regime, smp.state)) = 1.0;
    out.input(t) = smp.input;
  }
  return out;
}

// ---------------------------------------------------------------------------
// MNIST IDX

struct RawMnist {
  /// One row per image, row-major pixels scaled to [0, 1].
  Mat images;
  std::vector<int> labels;
  Index rows = 28;
  Index cols = 28;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& path) {
  if (offset + 4 > buf.size()) {
    throw ParseError(path + ": truncated header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

inline RawMnist load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);

  const auto img_magic = detail::read_be32(img, 0, images_path);
  if (img_magic != kIdxImagesMagic) {
    throw ParseError(images_path + ": bad magic at offset 0 (expected 0x00000803)");
  }
  const auto lab_magic = detail::read_be32(lab, 0, labels_path);
  if (lab_magic != kIdxLabelsMagic) {
    throw ParseError(labels_path + ": bad magic at offset 0 (expected 0x00000801)");
  }
  const auto count = detail::read_be32(img, 4, images_path);
  const auto rows = detail::read_be32(img, 8, images_path);
  const auto cols = detail::read_be32(img, 12, images_path);
  const auto label_count = detail::read_be32(lab, 4, labels_path);
  if (count != label_count) {
    throw ParseError("image count " + std::to_string(count) + " does not match label count " +
                     std::to_string(label_count));
  }
  const std::size_t pixels = std::size_t{rows} * cols;
  if (img.size() < 16 + count * pixels) {
    throw ParseError(images_path + ": truncated pixel data at offset " + std::to_string(img.size()));
  }
  if (lab.size() < 8 + std::size_t{count}) {
    throw ParseError(labels_path + ": truncated label data at offset " + std::to_string(lab.size()));
  }
  RawMnist raw;
  raw.rows = rows;
  raw.cols = cols;
  raw.images.resize(count, static_cast<Index>(pixels));
  raw.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) {
      raw.images(static_cast<Index>(i), static_cast<Index>(p)) = img[16 + i * pixels + p] / 255.0;
    }
    raw.labels[i] = lab[8 + i];
    if (raw.labels[i] > 9) {
      throw ParseError(labels_path + ": label out of range at offset " + std::to_string(8 + i));
    }
  }
  return raw;
}

/// Write IDX pair (used for fixtures and data conversion).
inline void write_mnist_idx(const std::string& images_path, const std::string& labels_path,
                            std::span<const unsigned char> pixels, std::span<const unsigned char> labels,
                            std::uint32_t rows = 28, std::uint32_t cols = 28) {
  auto be32 = [](std::ofstream& o, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                                static_cast<char>(v)};
    o.write(b.data(), 4);
  };
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw ParseError("cannot write IDX files");
  be32(img, kIdxImagesMagic);
  be32(img, static_cast<std::uint32_t>(labels.size()));
  be32(img, rows);
  be32(img, cols);
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  be32(lab, kIdxLabelsMagic);
  be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

struct PsmnistDataset {
  /// One row per image: the permuted 784-step pixel stream.
  Mat sequences;
  std::vector<int> labels;
  /// sequences(i, t) = raw pixel permutation[t].
  std::vector<Index> permutation;

  Index size() const { return sequences.rows(); }
  Index length() const { return sequences.cols(); }

  Mat onehot(int classes = 10) const {
    Mat y = Mat::Zero(static_cast<Index>(labels.size()), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Index>(i), labels[i]) = 1.0;
    return y;
  }
};

inline std::vector<Index> make_permutation(Index n, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng = Rng::derive(seed, 7);
  rng.shuffle(std::span<Index>(perm));
  return perm;
}

inline std::vector<Index> invert_permutation(std::span<const Index> perm) {
  std::vector<Index> inv(perm.size());
  for (std::size_t t = 0; t < perm.size(); ++t) inv[static_cast<std::size_t>(perm[t])] = static_cast<Index>(t);
  return inv;
}

inline Vec apply_permutation(const Vec& stream, std::span<const Index> perm) {
  Vec out(stream.size());
  for (Index t = 0; t < stream.size(); ++t) out(t) = stream(perm[static_cast<std::size_t>(t)]);
  return out;
}

/// Indices of the first `per_class` images of each label, in file order,
/// interleaved by class.
inline std::vector<std::size_t> balanced_subset(std::span<const int> labels, std::size_t total, int classes = 10) {
  const std::size_t per_class = total / static_cast<std::size_t>(classes);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& bucket = by_class[static_cast<std::size_t>(labels[i])];
    if (bucket.size() < per_class) bucket.push_back(i);
  }
  std::vector<std::size_t> picked;
  for (std::size_t j = 0; j < per_class; ++j)
    for (const auto& bucket : by_class)
      if (j < bucket.size()) picked.push_back(bucket[j]);
  return picked;
}

/// One shared permutation for every image; optional class-balanced subsample.
/// `identity` skips the shuffle (sequential MNIST).
inline PsmnistDataset permute_serialize(const RawMnist& raw, std::uint64_t perm_seed,
                                        std::optional<std::size_t> subsample = std::nullopt,
                                        bool identity = false) {
  PsmnistDataset ds;
  const Index len = raw.images.cols();
  if (identity) {
    ds.permutation.resize(static_cast<std::size_t>(len));
    std::iota(ds.permutation.begin(), ds.permutation.end(), Index{0});
  } else {
    ds.permutation = make_permutation(len, perm_seed);
  }
  std::vector<std::size_t> idx;
  if (subsample) {
    idx = balanced_subset(raw.labels, *subsample);
  } else {
    idx.resize(raw.labels.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  ds.sequences.resize(static_cast<Index>(idx.size()), len);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    for (Index t = 0; t < len; ++t) {
      ds.sequences(static_cast<Index>(r), t) =
          raw.images(static_cast<Index>(idx[r]), ds.permutation[static_cast<std::size_t>(t)]);
    }
    ds.labels.push_back(raw.labels[idx[r]]);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Delayed-input surrogate

struct DelayExpansionConfig {
  Index delay = 0;
  double decay = 0.8;
  Index n = 50;
  std::uint64_t seed = 1;
};

/// x_i(t) = sum_{j=0..delay} xi_ij decay^j s(t-j), s = 0 before the start.
/// Each row of xi is drawn Gaussian and rescaled so that, for a white input
/// with the sample variance of `s`, Var[x_i] = 1 exactly.
inline Mat delayed_expansion(const Vec& s, const DelayExpansionConfig& cfg) {
  if (cfg.delay < 0) throw InvalidArgument("delayed_expansion: delay must be >= 0");
  if (cfg.n < 1) throw InvalidArgument("delayed_expansion: n must be >= 1");
  const Index T = s.size();
  const double mean = s.mean();
  const double var_s = T > 1 ? (s.array() - mean).square().sum() / static_cast<double>(T) : 0.0;
  if (!(var_s > 0.0)) throw InvalidArgument("delayed_expansion: input has zero variance");

  Rng rng = Rng::derive(cfg.seed, 5);
  Mat xi(cfg.n, cfg.delay + 1);
  for (Index i = 0; i < cfg.n; ++i) {
    double energy = 0.0;
    for (Index j = 0; j <= cfg.delay; ++j) {
      xi(i, j) = rng.normal() * std::pow(cfg.decay, static_cast<double>(j));
      energy += xi(i, j) * xi(i, j);
    }
    xi.row(i) /= std::sqrt(energy * var_s);
  }
  Mat x = Mat::Zero(T, cfg.n);
  for (Index t = 0; t < T; ++t) {
    for (Index j = 0; j <= cfg.delay && j <= t; ++j) x.row(t) += s(t - j) * xi.col(j).transpose();
  }
  return x;
}

// ---------------------------------------------------------------------------

/// Normalized autocorrelation; lag 0 is 1.
inline Vec autocorrelation(const Vec& x, Index max_lag) {
  const Index T = x.size();
  if (max_lag < 0 || T <= max_lag) throw InvalidArgument("autocorrelation: sequence shorter than max_lag + 1");
  const Vec c = x.array() - x.mean();
  const double denom = c.squaredNorm();
  if (!(denom > 0.0)) throw InvalidArgument("autocorrelation: zero variance");
  Vec ac(max_lag + 1);
  for (Index k = 0; k <= max_lag; ++k) ac(k) = c.head(T - k).dot(c.tail(T - k)) / denom;
  return ac;
}

inline void write_series_csv(std::ostream& os, const Vec& input, const Mat& targets) {
  os << "t,input";
  for (Index j = 0; j < targets.cols(); ++j) os << ",target" << j;
  os << "\n";
  os.precision(12);
  for (Index t = 0; t < input.size(); ++t) {
    os << t << "," << input(t);
    for (Index j = 0; j < targets.cols(); ++j) os << "," << targets(t, j);
    os << "\n";
  }
}

}  // namespace hesn
