#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "hesn/linearize.hpp"
#include "hesn/reservoir.hpp"
#include "oracles.hpp"

using namespace hesn;

namespace {

SubReservoirConfig part(Index n, Index degree, WeightDist dist, double alpha = 1.0, double rho = 0.95,
                        double gamma = 0.2) {
  SubReservoirConfig c;
  c.n = n;
  c.degree = degree;
  c.dist = dist;
  c.alpha = alpha;
  c.rho = rho;
  c.gamma = gamma;
  return c;
}

NetworkConfig two_part(Topology t, double a1 = 0.9, double a2 = 0.3, Index n = 30) {
  NetworkConfig nc;
  nc.topology = t;
  nc.parts = {part(n, 10, WeightDist::normal, a1), part(n, 10, WeightDist::normal, a2)};
  return nc;
}

std::vector<oracle::cd> to_std(const CVec& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST(BuildSubReservoir, RowsHaveDegreeNonzerosAndUnitRadius) {
  const auto sub = build_sub_reservoir(1, part(50, 10, WeightDist::normal));
  const Mat W = sub.dense_W();
  for (Index i = 0; i < 50; ++i) EXPECT_EQ((W.row(i).array() != 0.0).count(), 10) << "row " << i;
  EXPECT_NEAR(oracle::spectral_radius(W), 1.0, 1e-8);
  EXPECT_NEAR(spectral_radius(W), 1.0, 1e-8);
}

TEST(BuildSubReservoir, OneByOneNormalizesToUnitMagnitude) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    const auto sub = build_sub_reservoir(seed, part(1, 1, WeightDist::normal));
    EXPECT_NEAR(std::abs(sub.dense_W()(0, 0)), 1.0, 1e-15);
  }
}

TEST(BuildSubReservoir, RawRadiusMatchesQrOracle) {
  SubReservoirConfig c = part(20, 5, WeightDist::uniform);
  const auto sub = build_sub_reservoir(7, c);
  // Re-sample the unnormalized matrix with the same stream.
  Rng rng = Rng::derive(7, 1);
  const Mat raw(detail::sample_sparse(rng, 20, 20, 5, WeightDist::uniform));
  EXPECT_NEAR(sub.raw_spectral_radius, oracle::spectral_radius(raw), 1e-8 * sub.raw_spectral_radius);
  EXPECT_TRUE(sub.dense_W().isApprox(raw / sub.raw_spectral_radius, 1e-14));
}

TEST(BuildSubReservoir, CachedEigenvaluesMatchOracle) {
  const auto sub = build_sub_reservoir(11, part(40, 10, WeightDist::normal));
  EXPECT_LT(oracle::match_distance(to_std(sub.W_eigvals), oracle::qr_eigenvalues(sub.dense_W())), 1e-8);
}

TEST(BuildSubReservoir, DeterministicPerSeed) {
  const auto a = build_sub_reservoir(5, part(30, 10, WeightDist::normal));
  const auto b = build_sub_reservoir(5, part(30, 10, WeightDist::normal));
  const auto c = build_sub_reservoir(6, part(30, 10, WeightDist::normal));
  EXPECT_EQ(a.dense_W(), b.dense_W());
  EXPECT_EQ(a.W_in, b.W_in);
  EXPECT_NE(a.dense_W(), c.dense_W());
}

TEST(BuildSubReservoir, InputMatrixIsDense) {
  auto c = part(30, 10, WeightDist::uniform);
  c.input_dim = 3;
  const auto sub = build_sub_reservoir(2, c);
  EXPECT_EQ(sub.W_in.rows(), 30);
  EXPECT_EQ(sub.W_in.cols(), 3);
  EXPECT_EQ((sub.W_in.array() == 0.0).count(), 0);
  EXPECT_LE(sub.W_in.cwiseAbs().maxCoeff(), 1.0);
}

TEST(BuildSubReservoir, RejectsBadParameters) {
  EXPECT_THROW(build_sub_reservoir(1, part(10, 5, WeightDist::normal, 0.0)), InvalidArgument);
  EXPECT_THROW(build_sub_reservoir(1, part(10, 5, WeightDist::normal, 1.5)), InvalidArgument);
  EXPECT_THROW(build_sub_reservoir(1, part(10, 5, WeightDist::normal, 0.5, -0.1)), InvalidArgument);
  EXPECT_THROW(build_sub_reservoir(1, part(10, 5, WeightDist::normal, 0.5, 1.1)), InvalidArgument);
  EXPECT_THROW(build_sub_reservoir(1, part(10, 11, WeightDist::normal)), InvalidArgument);
  EXPECT_THROW(build_sub_reservoir(1, part(0, 1, WeightDist::normal)), InvalidArgument);
}

TEST(BuildSubReservoir, DegreeOneIsNeverNilpotent) {
  // One entry per row means every node has an out-edge, so the pattern holds a cycle.
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    for (Index n : {2, 3, 5}) {
      const auto sub = build_sub_reservoir(seed, part(n, 1, WeightDist::normal));
      EXPECT_GT(sub.raw_spectral_radius, 0.0);
      EXPECT_NEAR(sub.W_eigvals.cwiseAbs().maxCoeff(), 1.0, 1e-12);
    }
  }
}

TEST(SpectralRadius, Examples) {
  EXPECT_NEAR(spectral_radius(Mat::Identity(5, 5)), 1.0, 1e-12);
  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 0.5;
  d(1, 1) = -2.0;
  EXPECT_NEAR(spectral_radius(d), 2.0, 1e-12);
  Rng rng(30);
  Mat A(30, 30);
  for (Index i = 0; i < 30; ++i)
    for (Index j = 0; j < 30; ++j) A(i, j) = rng.normal();
  const double ref = oracle::spectral_radius(A);
  EXPECT_NEAR(spectral_radius(A), ref, 1e-8 * ref);
}

TEST(SpectralRadius, RotationHasComplexDominantPair) {
  Mat R(2, 2);
  R << 0.0, -3.0, 3.0, 0.0;
  EXPECT_NEAR(spectral_radius(R), 3.0, 1e-12);
}

TEST(SpectralRadius, RejectsNonSquareAndNonFinite) {
  EXPECT_THROW(spectral_radius(Mat::Zero(2, 3)), InvalidArgument);
  Mat A = Mat::Identity(3, 3);
  A(1, 2) = std::nan("");
  EXPECT_THROW(spectral_radius(A), Error);
}

// ---------------------------------------------------------------------------

HierarchicalNetwork scalar_net(double alpha, double rho, double w, double w_in, double gamma) {
  HierarchicalNetwork net;
  SubReservoir p;
  p.W = SpMat(1, 1);
  if (w != 0.0) p.W.insert(0, 0) = w;
  p.W_in = Mat::Constant(1, 1, w_in);
  p.alpha = alpha;
  p.rho = rho;
  p.gamma = gamma;
  net.partitions.push_back(p);
  net.receives_input = {true};
  return net;
}

TEST(Step, PureLeakWithZeroDrive) {
  const auto net = scalar_net(0.5, 1.0, 0.0, 0.0, 0.0);
  const auto next = step(net, {Vec::Constant(1, 0.8), 0}, Vec::Zero(1));
  EXPECT_DOUBLE_EQ(next.x(0), 0.4);
  EXPECT_EQ(next.t, 1);
}

TEST(Step, ScalarHandEvaluation) {
  const auto net = scalar_net(0.5, 1.0, 1.0, 1.0, 0.2);
  const auto next = step(net, zero_state(net), Vec::Constant(1, 1.0));
  EXPECT_NEAR(next.x(0), 0.5 * std::tanh(0.2), 1e-15);
  EXPECT_NEAR(next.x(0), 0.098688, 5e-7);
}

TEST(Step, TinyLeakBarelyMoves) {
  auto nc = two_part(Topology::hierarchical, 1e-12, 1e-12);
  const auto net = make_network(nc, 3);
  Rng rng(1);
  Vec x(net.size());
  for (Index i = 0; i < x.size(); ++i) x(i) = rng.uniform(-0.9, 0.9);
  const auto next = step(net, {x, 0}, Vec::Constant(1, 0.4));
  EXPECT_LE((next.x - x).cwiseAbs().maxCoeff(), 2e-12);
}

TEST(Step, MatchesExplicitSynchronousFormula) {
  const auto net = make_network(two_part(Topology::hierarchical), 4);
  Rng rng(2);
  Vec x(net.size());
  for (Index i = 0; i < x.size(); ++i) x(i) = rng.uniform(-0.5, 0.5);
  const Vec s = Vec::Constant(1, 0.3);
  const auto& p1 = net.partitions[0];
  const auto& p2 = net.partitions[1];
  const Vec x1 = x.head(30), x2 = x.tail(30);
  const Vec h1 = p1.rho * p1.dense_W() * x1 + p1.gamma * p1.W_in * s;
  const Vec h2 = p2.rho * p2.dense_W() * x2 + net.couplings[0].strength * Mat(net.couplings[0].W) * x1;
  Vec expect(60);
  expect.head(30) = (1 - p1.alpha) * x1 + p1.alpha * h1.array().tanh().matrix();
  expect.tail(30) = (1 - p2.alpha) * x2 + p2.alpha * h2.array().tanh().matrix();
  EXPECT_LT((step(net, {x, 0}, s).x - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Step, InputDimensionMismatchThrows) {
  const auto net = make_network(two_part(Topology::parallel), 1);
  EXPECT_THROW(step(net, zero_state(net), Vec::Zero(2)), InvalidArgument);
}

TEST(Step, NonFiniteActivationNamesPartitionAndNode) {
  const auto net = make_network(two_part(Topology::parallel), 1);
  Vec x = Vec::Zero(net.size());
  x(35) = std::nan("");
  try {
    step(net, {x, 0}, Vec::Zero(1));
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("partition 1"), std::string::npos) << e.what();
  }
}

TEST(Run, ZeroSignalStaysAtOrigin) {
  const auto net = make_network(two_part(Topology::hierarchical), 8);
  const auto traj = run(net, Vec(Vec::Zero(50)), 10);
  EXPECT_EQ(traj.length(), 40);
  EXPECT_EQ(traj.states.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Run, WashoutBoundary) {
  const auto net = make_network(two_part(Topology::parallel), 8);
  const Vec s = Vec::LinSpaced(20, 0.0, 0.5);
  EXPECT_EQ(run(net, s, 19).length(), 1);
  EXPECT_THROW(run(net, s, 20), InvalidArgument);
}

TEST(Run, RowsAreStatesAfterEachInput) {
  const auto net = make_network(two_part(Topology::hierarchical), 9);
  const Vec s = Vec::LinSpaced(12, 0.0, 0.5);
  const auto traj = run(net, s, 3);
  NetworkState st = zero_state(net);
  for (Index t = 0; t < 12; ++t) {
    st = step(net, st, Vec::Constant(1, s(t)));
    if (t >= 3) EXPECT_EQ(Vec(traj.states.row(t - 3).transpose()), st.x);
  }
}

TEST(Run, DeterministicAndBitIdentical) {
  const auto a = make_network(two_part(Topology::hierarchical), 12);
  const auto b = make_network(two_part(Topology::hierarchical), 12);
  Rng rng(3);
  Vec s(300);
  for (Index t = 0; t < 300; ++t) s(t) = rng.uniform(0.0, 0.5);
  EXPECT_EQ(run(a, s, 0).states, run(b, s, 0).states);
}

TEST(Run, ImpulseDecayBoundedByLinearEnvelope) {
  // Small input keeps the dynamics linear; the decay rate of the slowest mode
  // is |1 - alpha(1 - rho lambda)| <= 1 - alpha(1 - rho).
  NetworkConfig nc;
  nc.parts[0] = part(60, 10, WeightDist::normal, 0.6, 0.8, 0.01);
  const auto net = make_network(nc, 21);
  Vec s = Vec::Zero(400);
  s.head(200).setOnes();
  const auto traj = run(net, s, 199);
  const double rate = 1.0 - 0.6 * (1.0 - 0.8);
  const double x0 = traj.states.row(0).norm();
  // Non-normal W allows transient growth; bound with a fitted constant.
  double C = 0.0;
  for (Index t = 0; t < traj.length(); ++t) C = std::max(C, traj.states.row(t).norm() / (x0 * std::pow(rate, t)));
  EXPECT_LT(C, 50.0);
  EXPECT_LT(traj.states.row(traj.length() - 1).norm(), 50.0 * x0 * std::pow(rate, traj.length() - 1));
}

TEST(Run, EchoStateContraction) {
  const auto net = make_network(two_part(Topology::hierarchical, 0.7, 0.4), 13);
  Rng rng(4);
  Vec s(600);
  for (Index t = 0; t < 600; ++t) s(t) = rng.uniform(0.0, 0.5);
  Vec xa(net.size()), xb(net.size());
  for (Index i = 0; i < net.size(); ++i) {
    xa(i) = rng.uniform(-1, 1);
    xb(i) = rng.uniform(-1, 1);
  }
  const auto ta = run(net, Mat(s), 599, xa);
  const auto tb = run(net, Mat(s), 599, xb);
  EXPECT_LT((ta.states - tb.states).norm(), 1e-6);
}

TEST(Run, PartitionOrderDoesNotMatterForParallel) {
  const auto net = make_network(two_part(Topology::parallel), 14);
  HierarchicalNetwork swapped = net;
  std::swap(swapped.partitions[0], swapped.partitions[1]);
  Rng rng(5);
  Vec s(100);
  for (Index t = 0; t < 100; ++t) s(t) = rng.uniform(0.0, 0.5);
  const auto a = run(net, s, 0).states;
  const auto b = run(swapped, s, 0).states;
  EXPECT_EQ(a.leftCols(30), b.rightCols(30));
  EXPECT_EQ(a.rightCols(30), b.leftCols(30));
}

// ---------------------------------------------------------------------------

TEST(MakeNetwork, TopologyStructure) {
  const auto s = make_network(NetworkConfig{}, 1);
  EXPECT_EQ(s.num_partitions(), 1u);
  const auto p = make_network(two_part(Topology::parallel), 1);
  EXPECT_EQ(p.num_partitions(), 2u);
  EXPECT_TRUE(p.couplings.empty());
  EXPECT_TRUE(p.receives_input[0] && p.receives_input[1]);
  const auto h = make_network(two_part(Topology::hierarchical), 1);
  ASSERT_EQ(h.couplings.size(), 1u);
  EXPECT_EQ(h.couplings[0].from, 0u);
  EXPECT_EQ(h.couplings[0].to, 1u);
  EXPECT_TRUE(h.receives_input[0]);
  EXPECT_FALSE(h.receives_input[1]);
  EXPECT_THROW(make_network(two_part(Topology::single), 1), InvalidArgument);
}

TEST(MakeNetwork, FeedbackCouplingRejected) {
  auto net = make_network(two_part(Topology::hierarchical), 1);
  std::swap(net.couplings[0].from, net.couplings[0].to);
  EXPECT_THROW(net.validate(), InvalidArgument);
}

TEST(MakeNetwork, CouplingNormalization) {
  const SpMat sq = build_coupling_matrix(3, 30, 30, 10, WeightDist::normal);
  EXPECT_NEAR(oracle::spectral_radius(Mat(sq)), 1.0, 1e-8);
  const SpMat rect = build_coupling_matrix(3, 20, 30, 10, WeightDist::normal);
  Eigen::JacobiSVD<Mat> svd{Mat(rect)};
  EXPECT_NEAR(svd.singularValues()(0), 1.0, 1e-12);
}

TEST(NetworkSpec, RoundTripRegeneratesNetwork) {
  auto nc = two_part(Topology::hierarchical, 0.8, 0.25);
  nc.coupling_strength = 0.1;
  std::stringstream ss;
  write_network_spec(ss, nc, 77);
  const auto [cfg, seed] = read_network_spec(ss);
  EXPECT_EQ(seed, 77u);
  const auto a = make_network(nc, 77);
  const auto b = make_network(cfg, seed);
  const Vec s = Vec::LinSpaced(40, 0.0, 0.5);
  EXPECT_EQ(run(a, s, 0).states, run(b, s, 0).states);
}

TEST(NetworkSpec, UnknownKeyRejected) {
  std::stringstream ss("seed = 1\nbogus = 2\n");
  EXPECT_THROW(read_network_spec(ss), ParseError);
}

// ---------------------------------------------------------------------------

TEST(Linearize, BlockSpectrumIsUnionForManySeeds) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto net = make_network(two_part(Topology::hierarchical, 0.9, 0.3, 20), seed);
    const auto sys = linearize(net);
    std::vector<oracle::cd> parts = to_std(eigenvalues(net.partitions[0].rho * net.partitions[0].dense_W()));
    const auto p2 = to_std(eigenvalues(net.partitions[1].rho * net.partitions[1].dense_W()));
    parts.insert(parts.end(), p2.begin(), p2.end());
    EXPECT_LT(oracle::match_distance(oracle::qr_eigenvalues(sys.W_tilde), parts), 1e-6) << "seed " << seed;
  }
}

TEST(Linearize, ParallelAndHierarchicalShareSpectrum) {
  const auto h = linearize(make_network(two_part(Topology::hierarchical), 5));
  const auto p = linearize(make_network(two_part(Topology::parallel), 5));
  EXPECT_LT(multiset_distance(eigenvalues(h.W_tilde), eigenvalues(p.W_tilde)), 1e-8);
}

TEST(Linearize, DiagonalExample) {
  HierarchicalNetwork net;
  SubReservoir p;
  p.W = SpMat(2, 2);
  p.W.insert(0, 0) = 0.5;
  p.W.insert(1, 1) = -0.5;
  p.W_in = Mat::Ones(2, 1);
  p.alpha = 1.0;
  p.rho = 1.0;
  net.partitions.push_back(p);
  net.receives_input = {true};
  const auto modes = partition_modes(net.partitions[0], 1.0);
  std::vector<double> re;
  for (Index i = 0; i < modes.eigvals.size(); ++i) re.push_back(modes.eigvals(i).real());
  std::sort(re.begin(), re.end());
  EXPECT_NEAR(re[0], 0.5, 1e-12);
  EXPECT_NEAR(re[1], 1.5, 1e-12);
}

TEST(Linearize, AffineEigenMap) {
  const auto sub = build_sub_reservoir(3, part(40, 10, WeightDist::normal, 0.7, 0.9));
  HierarchicalNetwork net;
  net.partitions.push_back(sub);
  net.receives_input = {true};
  const auto modes = partition_modes(sub, 1.0);
  const CVec lw = eigenvalues(sub.dense_W());
  const CVec mapped = (1.0 - 0.7 * (1.0 - 0.9 * lw.array())).matrix();
  EXPECT_LT(multiset_distance(modes.discrete_eigvals, mapped), 1e-8);
}

TEST(Linearize, LeftEigenvectorsDiagonalizeM) {
  const auto sub = build_sub_reservoir(4, part(30, 10, WeightDist::normal, 0.6, 0.9));
  const auto m = partition_modes(sub, 1.0);
  const CMat VM = m.left_eigvecs * m.M.cast<std::complex<double>>();
  const CMat LV = m.eigvals.asDiagonal() * m.left_eigvecs;
  EXPECT_LT((VM - LV).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Linearize, RejectsMoreThanTwoPartitions) {
  auto net = make_network(two_part(Topology::parallel), 1);
  net.partitions.push_back(net.partitions[0]);
  net.receives_input.push_back(true);
  EXPECT_THROW(linearize(net), InvalidArgument);
}
