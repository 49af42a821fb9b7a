// hesn: grid sweeps, online alpha paths, timescale analysis and MNIST setup.

#include <curl/curl.h>
#include <zlib.h>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hesn/hesn.hpp"

namespace fs = std::filesystem;
using namespace hesn;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> out;
};

ExperimentConfig load_with_overrides(const std::string& path, const Overrides& o) {
  ExperimentConfig cfg = load_config(path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (o.out) cfg.output_dir = *o.out;
  cfg.validate();
  return cfg;
}

void print_progress(std::size_t done, std::size_t total) {
  std::fprintf(stderr, "\r%zu/%zu jobs", done, total);
  if (done == total) std::fprintf(stderr, "\n");
}

int cmd_grid(const std::string& config, const Overrides& o, bool single_cell) {
  ExperimentConfig cfg = load_with_overrides(config, o);
  if (single_cell) {
    cfg.alpha1.resize(1);
    cfg.alpha2.resize(1);
    cfg.rho.resize(1);
    cfg.gamma.resize(1);
    cfg.coupling_strength.resize(1);
    cfg.delay.resize(1);
  }
  const auto report = run_experiment(cfg, true, print_progress);
  write_reports(report);
  write_summary(std::cout, report);
  std::cout << "reports written to " << cfg.output_dir << "\n";
  return 0;
}

int cmd_online(const std::string& config, const Overrides& o) {
  const ExperimentConfig cfg = load_with_overrides(config, o);
  const auto path = run_online_path(cfg);
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "path.csv");
    write_path_csv(f, path);
  }
  {
    std::ofstream f(dir / "training_log.csv");
    write_training_log_csv(f, path.result);
  }
  std::ostringstream summary;
  const auto& r = path.result;
  summary << "task: " << to_string(cfg.task) << "\n"
          << "topology: " << to_string(cfg.topology) << "\n"
          << "steps: " << r.steps << "\n"
          << "reinits: " << r.reinits << "\n"
          << "stable: " << (r.stable ? "yes" : "no") << "\n"
          << "final alpha:";
  for (double a : r.final_alpha) summary << " " << a;
  summary << "\n";
  if (!cfg.sigma_stages.empty() || !cfg.phase_p1.empty()) {
    for (Index k = 0; k < r.alpha_trajectory.cols(); ++k) {
      summary << "stage alpha_" << k + 1 << ":";
      for (double a : stage_alpha(path, k)) summary << " " << a;
      summary << "\n";
    }
  }
  {
    std::ofstream f(dir / "summary.txt");
    f << summary.str();
    std::ofstream m(dir / "meta.txt");
    write_meta(m, cfg);
  }
  std::cout << summary.str() << "reports written to " << cfg.output_dir << "\n";
  return 0;
}

struct TauArgs {
  double alpha = 1.0;
  double rho = 0.95;
  double dt = 1.0;
  Index n = 1000;
  Index degree = 10;
  int networks = 1;
  std::string dist = "normal";
};

int cmd_tau(const TauArgs& a, std::uint64_t seed, const std::string& out) {
  check_leakage(a.alpha);
  check_scaling(a.rho);
  if (!(a.dt > 0.0)) throw InvalidArgument("--dt must be > 0");
  if (a.networks < 1) throw InvalidArgument("--networks must be >= 1");
  SubReservoirConfig sc;
  sc.n = a.n;
  sc.degree = a.degree;
  sc.dist = parse_weight_dist(a.dist);
  sc.alpha = a.alpha;
  sc.rho = a.rho;
  std::vector<double> taus;
  for (int k = 0; k < a.networks; ++k) {
    const auto sub = build_sub_reservoir(Rng::derive(seed, static_cast<std::uint64_t>(k)).next_u64(), sc);
    const auto s = eigen_timescales(sub, a.dt);
    taus.insert(taus.end(), s.taus.begin(), s.taus.end());
  }
  const auto ex = tau_extrema(a.alpha, a.rho, a.dt);
  const double ks = ks_distance(taus, [&](double t) { return analytic_tau_cdf(a.alpha, a.rho, a.dt, t); });
  const fs::path dir(out);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "timescales.csv");
    write_tau_samples_csv(f, a.alpha, a.rho, TimescaleSample{taus, TauSource::empirical_eigen});
  }
  {
    std::ofstream f(dir / "density.csv");
    write_density_csv(f, a.alpha, a.rho, a.dt);
  }
  std::ostringstream s;
  s.precision(8);
  s << "alpha: " << a.alpha << "\nrho: " << a.rho << "\ndt: " << a.dt << "\n"
    << "samples: " << taus.size() << " (" << a.networks << " networks of " << a.n << ")\n"
    << "tau_min: " << ex.tau_min << "\n"
    << "tau_max: " << (ex.unbounded ? std::string("inf") : std::to_string(ex.tau_max)) << "\n"
    << "tau_peak: " << ex.tau_peak << "\n"
    << "ks_distance: " << ks << "\n";
  std::ofstream(dir / "summary.txt") << s.str();
  std::cout << s.str();
  return 0;
}

int cmd_impulse(double alpha, double rho, Index n, const std::vector<double>& gammas, std::uint64_t seed,
                const std::string& out) {
  NetworkConfig nc;
  nc.parts[0].n = n;
  nc.parts[0].alpha = alpha;
  nc.parts[0].rho = rho;
  const auto net = make_network(nc, seed);
  const auto reports = impulse_response_fit(net, gammas);
  fs::create_directories(out);
  std::ofstream f(fs::path(out) / "impulse.csv");
  write_impulse_csv(f, reports);
  write_impulse_csv(std::cout, reports);
  return 0;
}

// ---------------------------------------------------------------------------
// fetch-mnist

const char* const kMnistFiles[] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                                   "t10k-labels-idx1-ubyte"};

std::optional<std::string> validate_mnist(const fs::path& dir) {
  try {
    const auto tr = load_mnist_idx((dir / kMnistFiles[0]).string(), (dir / kMnistFiles[1]).string());
    const auto te = load_mnist_idx((dir / kMnistFiles[2]).string(), (dir / kMnistFiles[3]).string());
    std::cout << dir.string() << ": " << tr.labels.size() << " train and " << te.labels.size()
              << " test images, IDX headers valid\n";
    return std::nullopt;
  } catch (const std::exception& e) {
    return std::string(e.what());
  }
}

size_t append_bytes(char* data, size_t size, size_t n, void* user) {
  auto* buf = static_cast<std::vector<unsigned char>*>(user);
  buf->insert(buf->end(), data, data + size * n);
  return size * n;
}

std::vector<unsigned char> download(const std::string& url) {
  std::vector<unsigned char> buf;
  CURL* curl = curl_easy_init();
  if (!curl) throw std::runtime_error("curl initialization failed");
  curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl, CURLOPT_CONNECTTIMEOUT, 20L);
  curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, append_bytes);
  curl_easy_setopt(curl, CURLOPT_WRITEDATA, &buf);
  const CURLcode rc = curl_easy_perform(curl);
  curl_easy_cleanup(curl);
  if (rc != CURLE_OK) throw std::runtime_error(url + ": " + curl_easy_strerror(rc));
  return buf;
}

std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw std::runtime_error("zlib initialization failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<unsigned char> out;
  unsigned char chunk[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk;
    zs.avail_out = sizeof chunk;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw std::runtime_error("gzip stream is corrupt");
    }
    out.insert(out.end(), chunk, chunk + (sizeof chunk - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

int cmd_fetch_mnist(const std::string& dir_arg, const std::string& base_url) {
  const fs::path dir(dir_arg);
  const auto problem = validate_mnist(dir);
  if (!problem) return 0;
  std::cout << "local files unusable (" << *problem << "); downloading from " << base_url << "\n";
  fs::create_directories(dir);
  curl_global_init(CURL_GLOBAL_DEFAULT);
  try {
    for (const char* name : kMnistFiles) {
      const auto raw = gunzip(download(base_url + name + ".gz"));
      std::ofstream f(dir / name, std::ios::binary);
      f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    }
  } catch (const std::exception& e) {
    curl_global_cleanup();
    std::cerr << "fetch-mnist: download failed: " << e.what() << "\n"
              << "place the four IDX files (" << kMnistFiles[0] << ", ...) in " << dir.string()
              << " by hand; the build tree also carries a desk-scale copy under data/mnist\n";
    return 3;
  }
  curl_global_cleanup();
  if (const auto again = validate_mnist(dir)) {
    std::cerr << "fetch-mnist: downloaded files do not validate: " << *again << "\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical echo-state network experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  Overrides o;
  auto add_overrides = [&o](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>("--seed", [&o](const std::uint64_t& v) { o.seed = v; }, "master seed");
    sub->add_option_function<int>("--jobs", [&o](const int& v) { o.jobs = v; }, "worker threads")
        ->check(CLI::PositiveNumber);
    sub->add_option_function<std::string>("--out", [&o](const std::string& v) { o.out = v; }, "output directory");
  };

  std::string config;
  auto* run_cmd = app.add_subcommand("run", "evaluate the first cell of every grid list over all seeds");
  run_cmd->add_option("config", config, "key = value config file")->required()->check(CLI::ExistingFile);
  add_overrides(run_cmd);

  auto* grid_cmd = app.add_subcommand("grid", "sweep the full grid; resumable from <out>/cells");
  grid_cmd->add_option("config", config, "key = value config file")->required()->check(CLI::ExistingFile);
  add_overrides(grid_cmd);

  auto* online_cmd = app.add_subcommand("online", "train readout and leakage online; writes path.csv");
  online_cmd->add_option("config", config, "key = value config file")->required()->check(CLI::ExistingFile);
  add_overrides(online_cmd);

  auto* analyze = app.add_subcommand("analyze", "timescale analysis");
  analyze->require_subcommand(1);
  TauArgs tau;
  std::uint64_t seed = 1;
  std::string out = "out";
  auto* tau_cmd = analyze->add_subcommand("tau", "eigenvalue timescales against the closed-form density");
  tau_cmd->add_option("--alpha", tau.alpha, "leakage rate")->required();
  tau_cmd->add_option("--rho", tau.rho, "spectral scaling")->required();
  tau_cmd->add_option("--dt", tau.dt, "time step")->required();
  tau_cmd->add_option("--n", tau.n, "reservoir size")->capture_default_str();
  tau_cmd->add_option("--degree", tau.degree, "nonzeros per row")->capture_default_str();
  tau_cmd->add_option("--networks", tau.networks, "independent networks pooled")->capture_default_str();
  tau_cmd->add_option("--dist", tau.dist, "weight distribution")->check(CLI::IsMember({"normal", "uniform"}));
  tau_cmd->add_option("--seed", seed, "seed")->capture_default_str();
  tau_cmd->add_option("--out", out, "output directory")->capture_default_str();

  std::vector<double> gammas{0.01, 0.05, 0.1, 0.2, 0.5, 1.0};
  double imp_alpha = 1.0;
  double imp_rho = 0.95;
  Index imp_n = 100;
  auto* imp_cmd = analyze->add_subcommand("impulse", "linear mode predictions against impulse responses");
  imp_cmd->add_option("--alpha", imp_alpha, "leakage rate")->capture_default_str();
  imp_cmd->add_option("--rho", imp_rho, "spectral scaling")->capture_default_str();
  imp_cmd->add_option("--n", imp_n, "reservoir size")->capture_default_str();
  imp_cmd->add_option("--gamma", gammas, "input scalings")->delimiter(',');
  imp_cmd->add_option("--seed", seed, "seed")->capture_default_str();
  imp_cmd->add_option("--out", out, "output directory")->capture_default_str();

  std::string mnist_dir = "data/mnist";
  std::string base_url = "https://storage.googleapis.com/cvdf-datasets/mnist/";
  auto* fetch_cmd = app.add_subcommand("fetch-mnist", "validate or download the MNIST IDX files");
  fetch_cmd->add_option("--dir", mnist_dir, "target directory")->capture_default_str();
  fetch_cmd->add_option("--url", base_url, "base URL of the gzipped IDX files")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return cmd_grid(config, o, true);
    if (*grid_cmd) return cmd_grid(config, o, false);
    if (*online_cmd) return cmd_online(config, o);
    if (*tau_cmd) return cmd_tau(tau, seed, out);
    if (*imp_cmd) return cmd_impulse(imp_alpha, imp_rho, imp_n, gammas, seed, out);
    if (*fetch_cmd) return cmd_fetch_mnist(mnist_dir, base_url);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
