#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hesn/harness.hpp"

using namespace hesn;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

std::string echo(const ExperimentConfig& c) {
  std::ostringstream os;
  write_config(os, c);
  return os.str();
}

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path p = fs::temp_directory_path() / (std::string("hesn_") + info->test_suite_name() + "_" + info->name());
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// A small NARMA10 grid that runs in well under a second.
ExperimentConfig tiny_narma() {
  ExperimentConfig c;
  c.n_total = 20;
  c.degree = 5;
  c.alpha1 = {0.5, 1.0};
  c.alpha2 = {0.2, 1.0};
  c.seeds = 2;
  c.washout = 50;
  c.train_len = 400;
  c.val_len = 100;
  c.test_len = 100;
  return c;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Config, ParsesKeysListsAndComments) {
  const auto c = parse(
      "# experiment\n"
      "task = telegraph-joint\n"
      "topology = parallel   # two partitions\n"
      "alpha1 = 0.1, 0.5,1.0\n"
      "n_total = 40\n"
      "eta_alpha = 1e-4\n"
      "n_batch = 7\n"
      "stop_on_stable = false\n"
      "\n");
  EXPECT_EQ(c.task, Task::telegraph_joint);
  EXPECT_EQ(c.topology, Topology::parallel);
  EXPECT_EQ(c.alpha1, (std::vector<double>{0.1, 0.5, 1.0}));
  EXPECT_EQ(c.alpha2, default_alpha_grid());
  EXPECT_EQ(c.n_total, 40);
  EXPECT_EQ(c.partition_size(), 20);
  EXPECT_EQ(c.schedule.eta_alpha, 1e-4);
  EXPECT_EQ(c.schedule.N_batch, 7);
  EXPECT_FALSE(c.schedule.stop_on_stable);
}

TEST(Config, RejectsUnknownAndRepeatedKeys) {
  try {
    parse("task = narma10\nlearning_rate = 3\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2: unknown key 'learning_rate'"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse("seeds = 2\nseeds = 3\n"), ParseError);
  EXPECT_THROW(parse("seeds\n"), ParseError);
  EXPECT_THROW(parse("seeds = two\n"), ParseError);
  EXPECT_THROW(parse("task = narma7\n"), Error);
  EXPECT_THROW(parse("stop_on_stable = maybe\n"), ParseError);
}

TEST(Config, ValidatesRanges) {
  EXPECT_THROW(parse("alpha1 = 0.5, 1.5\n"), InvalidArgument);
  EXPECT_THROW(parse("rho = -0.1\n"), InvalidArgument);
  EXPECT_THROW(parse("n_total = 21\n"), InvalidArgument);
  EXPECT_NO_THROW(parse("topology = single\nn_total = 21\n"));
  EXPECT_THROW(parse("frame_stride = 100\n"), InvalidArgument);
  EXPECT_THROW(parse("phase_p1 = 0.05,0.1\nphase_p2 = 0.1\n"), InvalidArgument);
  EXPECT_THROW(parse("p3 = 0\n"), InvalidArgument);
  EXPECT_THROW(parse("degree = 60\n"), InvalidArgument);
}

TEST(Config, EchoRoundTrips) {
  auto c = parse(
      "task = delayed-narma\ntopology = hierarchical\nn_total = 60\nalpha2 = 0.3,0.7\ndelay = 0,2,5\n"
      "sigma_stages = 1,2.5\nseed = 99\neta_W = 0.002\noutput_dir = /tmp/x y\nresume = false\n");
  const std::string first = echo(c);
  std::istringstream is(first);
  const auto back = parse_config(is);
  EXPECT_EQ(echo(back), first);
  EXPECT_EQ(back.delay, (std::vector<Index>{0, 2, 5}));
  EXPECT_EQ(back.output_dir, "/tmp/x y");
  EXPECT_FALSE(back.resume);
  EXPECT_EQ(back.seed, 99u);
}

TEST(Config, EveryKeyAppearsInTheEcho) {
  const std::string e = "\n" + echo(ExperimentConfig{});
  for (const auto& [key, setter] : config_keys()) {
    EXPECT_NE(e.find("\n" + key + " = "), std::string::npos) << key;
  }
}

// ---------------------------------------------------------------------------

TEST(Cells, GridShapePerTopology) {
  ExperimentConfig c;
  EXPECT_EQ(enumerate_cells(c).size(), 121u);
  EXPECT_EQ(enumerate_cells(c).front().alpha1, 0.05);
  EXPECT_EQ(enumerate_cells(c)[1].alpha2, 0.1);
  c.coupling_strength = {0.5, 1.0};
  EXPECT_EQ(enumerate_cells(c).size(), 242u);
  c.topology = Topology::parallel;
  const auto par = enumerate_cells(c);
  EXPECT_EQ(par.size(), 121u);
  for (const auto& p : par) EXPECT_EQ(p.coupling, 0.0);
  c.topology = Topology::single;
  const auto single = enumerate_cells(c);
  EXPECT_EQ(single.size(), 11u);
  for (const auto& p : single) EXPECT_EQ(p.alpha1, p.alpha2);
  c.topology = Topology::hierarchical;
  c.task = Task::delayed_narma;
  c.delay = {0, 2, 5, 10};
  c.coupling_strength = {1.0};
  const auto del = enumerate_cells(c);
  EXPECT_EQ(del.size(), 44u);
  for (const auto& p : del) EXPECT_EQ(p.alpha1, 1.0);
}

TEST(Cells, SeedsAreDistinctAndDeterministic) {
  ExperimentConfig c;
  std::set<std::uint64_t> seen;
  for (int j = 0; j < 20; ++j) {
    seen.insert(network_seed(c, j));
    seen.insert(data_seed(c, j));
  }
  EXPECT_EQ(seen.size(), 40u);
  ExperimentConfig d;
  d.seed = 2;
  EXPECT_NE(network_seed(c, 0), network_seed(d, 0));
  EXPECT_EQ(network_seed(c, 3), network_seed(ExperimentConfig{}, 3));
}

TEST(Cells, NetworkConfigFollowsCell) {
  ExperimentConfig c;
  c.n_total = 40;
  const auto nc = network_config(c, {0.3, 0.7, 0.9, 0.4, 0.5, 0});
  ASSERT_EQ(nc.parts.size(), 2u);
  EXPECT_EQ(nc.parts[0].n, 20);
  EXPECT_EQ(nc.parts[0].alpha, 0.3);
  EXPECT_EQ(nc.parts[1].alpha, 0.7);
  EXPECT_EQ(nc.parts[1].rho, 0.9);
  EXPECT_EQ(nc.parts[1].gamma, 0.4);
  EXPECT_EQ(nc.coupling_strength, 0.5);
}

// ---------------------------------------------------------------------------

TEST(Smoothing, RunningMedianOverNeighbours) {
  SurfaceReport r;
  const double vals[3][3] = {{1, 9, 2}, {8, 3, 7}, {4, 6, 100}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      CellResult c;
      c.params.alpha1 = 0.1 * (i + 1);
      c.params.alpha2 = 0.1 * (j + 1);
      c.mean = vals[i][j];
      r.cells.push_back(c);
    }
  CellResult other;
  other.params.alpha1 = 0.2;
  other.params.alpha2 = 0.2;
  other.params.rho = 0.5;
  other.mean = -50.0;
  r.cells.push_back(other);
  smooth_surface(r);
  EXPECT_EQ(r.cells[4].smoothed, 6.0);         // median of all nine
  EXPECT_EQ(r.cells[0].smoothed, 5.5);         // {1, 9, 8, 3}
  EXPECT_EQ(r.cells[8].smoothed, 6.5);         // {3, 7, 6, 100}
  EXPECT_EQ(r.cells[9].smoothed, -50.0);       // its own slice
}

TEST(Smoothing, SkipsFailedCells) {
  SurfaceReport r;
  for (int i = 0; i < 3; ++i) {
    CellResult c;
    c.params.alpha1 = 0.1 * (i + 1);
    c.params.alpha2 = c.params.alpha1;
    c.mean = i == 1 ? std::nan("") : 1.0 + i;
    r.cells.push_back(c);
  }
  smooth_surface(r);
  EXPECT_EQ(r.cells[1].smoothed, 2.0);
}

// ---------------------------------------------------------------------------

TEST(Experiment, MatchesDirectEvaluation) {
  auto c = tiny_narma();
  c.output_dir = scratch_dir().string();
  const auto rep = run_experiment(c);
  ASSERT_EQ(rep.cells.size(), 4u);
  EXPECT_FALSE(rep.higher_is_better);
  for (std::size_t k = 0; k < rep.cells.size(); ++k) {
    for (int s = 0; s < c.seeds; ++s) {
      const auto m = evaluate_cell(c, rep.cells[k].params, s);
      EXPECT_EQ(rep.cells[k].per_seed[static_cast<std::size_t>(s)], m.test);
      EXPECT_EQ(rep.cells[k].per_seed_validation[static_cast<std::size_t>(s)], m.validation);
    }
    EXPECT_NEAR(rep.cells[k].mean, 0.5 * (rep.cells[k].per_seed[0] + rep.cells[k].per_seed[1]), 1e-15);
    EXPECT_EQ(rep.cells[k].ok, 2);
  }
  for (const auto& cell : rep.cells) EXPECT_GE(cell.mean, rep.best().mean);
  const std::size_t v = best_by_validation(rep);
  for (const auto& cell : rep.cells) EXPECT_GE(cell.validation_mean, rep.cells[v].validation_mean);
}

TEST(Experiment, ThreadCountDoesNotChangeResults) {
  auto c = tiny_narma();
  const auto one = run_experiment(c);
  c.jobs = 3;
  const auto three = run_experiment(c);
  for (std::size_t k = 0; k < one.cells.size(); ++k) EXPECT_EQ(one.cells[k].per_seed, three.cells[k].per_seed);
}

TEST(Experiment, ResumeReusesCheckpoints) {
  auto c = tiny_narma();
  c.output_dir = scratch_dir().string();
  const auto first = run_experiment(c, true);
  const fs::path cells = fs::path(c.output_dir) / "cells";
  EXPECT_EQ(std::distance(fs::directory_iterator(cells), fs::directory_iterator{}), 8);

  const auto again = run_experiment(c, true);
  for (std::size_t k = 0; k < first.cells.size(); ++k) EXPECT_EQ(first.cells[k].per_seed, again.cells[k].per_seed);

  // A checkpoint is trusted as written.
  {
    std::ofstream o(cells / "c0_s1.txt");
    o << "ok 0.123 0.456\n";
  }
  const auto patched = run_experiment(c, true);
  EXPECT_EQ(patched.cells[0].per_seed[1], 0.123);
  EXPECT_EQ(patched.cells[0].per_seed_validation[1], 0.456);

  c.resume = false;
  const auto fresh = run_experiment(c, true);
  EXPECT_EQ(fresh.cells[0].per_seed[1], first.cells[0].per_seed[1]);
}

TEST(Experiment, FailedJobsAreRecordedAndSkipped) {
  auto c = tiny_narma();
  c.output_dir = scratch_dir().string();
  run_experiment(c, true);
  const fs::path cells = fs::path(c.output_dir) / "cells";
  for (int s = 0; s < 2; ++s) {
    std::ofstream o(cells / ("c3_s" + std::to_string(s) + ".txt"));
    o << "error non-finite activation\n";
  }
  {
    std::ofstream o(cells / "c2_s0.txt");
    o << "error boom\n";
  }
  const auto rep = run_experiment(c, true);
  EXPECT_TRUE(rep.cells[3].failed());
  EXPECT_EQ(rep.cells[3].errors[0], "non-finite activation");
  EXPECT_TRUE(std::isnan(rep.cells[3].mean));
  EXPECT_NE(rep.best_cell, 3u);
  EXPECT_EQ(rep.cells[2].ok, 1);
  EXPECT_EQ(rep.cells[2].mean, rep.cells[2].per_seed[1]);

  std::ostringstream surface;
  write_surface_csv(surface, rep);
  EXPECT_NE(surface.str().find(",0,2\n"), std::string::npos);
  std::ostringstream seeds;
  write_seeds_csv(seeds, rep);
  EXPECT_NE(seeds.str().find("2,0,nan,nan,boom"), std::string::npos) << seeds.str();
}

TEST(Experiment, ReportFiles) {
  auto c = tiny_narma();
  c.output_dir = (scratch_dir() / "out").string();
  const auto rep = run_experiment(c);
  write_reports(rep);
  const fs::path out(c.output_dir);
  for (const char* f : {"surface.csv", "seeds.csv", "summary.txt", "meta.txt"}) EXPECT_TRUE(fs::exists(out / f)) << f;
  const std::string surface = read_all(out / "surface.csv");
  EXPECT_EQ(surface.substr(0, surface.find('\n')),
            "cell,alpha1,alpha2,rho,gamma,coupling,delay,mean,std,smoothed,validation_mean,n_ok,n_failed");
  EXPECT_EQ(std::count(surface.begin(), surface.end(), '\n'), 5);
  const std::string meta = read_all(out / "meta.txt");
  EXPECT_NE(meta.find("surface schema 1"), std::string::npos);
  EXPECT_NE(meta.find(std::string("hesn ") + kVersion), std::string::npos);
  // The echoed config, minus comment lines, parses back to the same run.
  std::istringstream is(meta);
  EXPECT_EQ(echo(parse_config(is)), echo(c));
  const std::string summary = read_all(out / "summary.txt");
  EXPECT_NE(summary.find("metric: nrmse (lower is better)"), std::string::npos);
  EXPECT_NE(summary.find("best cell: " + std::to_string(rep.best_cell)), std::string::npos);
}

TEST(Experiment, MissingMnistIsReported) {
  ExperimentConfig c;
  c.task = Task::psmnist;
  c.mnist_dir = "/nonexistent";
  c.seeds = 1;
  c.alpha1 = {1.0};
  c.alpha2 = {1.0};
  EXPECT_THROW(run_experiment(c), ParseError);
}

// ---------------------------------------------------------------------------

TEST(Topologies, RatioOfBestTwoPartitionToSingle) {
  auto make = [](Topology t, double best) {
    SurfaceReport r;
    r.config.topology = t;
    CellResult c;
    c.mean = best;
    c.stddev = 0.01;
    CellResult worse;
    worse.mean = best + 1.0;
    r.cells = {worse, c};
    r.best_cell = 1;
    return r;
  };
  const std::vector<SurfaceReport> reps{make(Topology::single, 0.5), make(Topology::parallel, 0.45),
                                        make(Topology::hierarchical, 0.4)};
  const auto cmp = compare_topologies(reps);
  ASSERT_EQ(cmp.rows.size(), 3u);
  EXPECT_NEAR(cmp.ratio, 0.8, 1e-15);
  EXPECT_EQ(cmp.rows[2].topology, Topology::hierarchical);
  EXPECT_EQ(cmp.rows[2].mean, 0.4);

  auto mixed = reps;
  mixed[1].config.task = Task::narma5;
  EXPECT_THROW(compare_topologies(mixed), InvalidArgument);
  EXPECT_TRUE(std::isnan(compare_topologies(std::span(reps).subspan(1)).ratio));
}

// ---------------------------------------------------------------------------

TEST(OnlinePathRun, FrozenLeakageStaysAtStart) {
  ExperimentConfig c;
  c.n_total = 20;
  c.degree = 5;
  c.alpha1_start = 0.8;
  c.alpha2_start = 0.3;
  c.schedule.eta_alpha = 0.0;
  c.schedule.N_batch = 2;
  c.schedule.max_steps = 500;
  const auto p = run_online_path(c);
  ASSERT_EQ(p.result.alpha_trajectory.rows(), 500);
  EXPECT_EQ(p.result.alpha_trajectory.col(0).minCoeff(), 0.8);
  EXPECT_EQ(p.result.alpha_trajectory.col(1).maxCoeff(), 0.3);
  std::ostringstream os;
  write_path_csv(os, p);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "step,alpha_1,alpha_2,loss,stage");
}

TEST(OnlinePathRun, StagesCoverTheSchedule) {
  ExperimentConfig c;
  c.task = Task::telegraph_state;
  c.topology = Topology::single;
  c.n_total = 20;
  c.degree = 5;
  c.sigma_stages = {0.5, 1.0, 2.0};
  c.stage_steps = 200;
  c.schedule.N_batch = 2;
  const auto p = run_online_path(c);
  ASSERT_EQ(p.stage.size(), 600u);
  EXPECT_EQ(p.stage.front(), 0);
  EXPECT_EQ(p.stage[199], 0);
  EXPECT_EQ(p.stage[200], 1);
  EXPECT_EQ(p.stage.back(), 2);
  EXPECT_EQ(stage_alpha(p, 0).size(), 3u);
  const auto again = run_online_path(c);
  EXPECT_EQ(again.result.loss, p.result.loss);
}

TEST(OnlinePathRun, RejectsTasksWithoutStream) {
  ExperimentConfig c;
  c.task = Task::psmnist;
  EXPECT_THROW(run_online_path(c), InvalidArgument);
}
