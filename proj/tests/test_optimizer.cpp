#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "modbeam/optimizer.hpp"
#include "modbeam/rng.hpp"
#include "oracles.hpp"

using namespace modbeam;

namespace {

struct Setup {
  BlockDiagonalStructure st{2, 3, 2};  // M=6, cols=4
  ConnectivityMatrix a = ConnectivityMatrix::round_robin(4, 3);
  SystemParams p{1.0, 1.0};
  ChannelRealization h;

  explicit Setup(std::uint64_t seed, std::size_t k = 4, std::size_t b = 2) {
    Rng rng(seed);
    for (std::size_t bb = 0; bb < b; ++bb)
      h.per_bin.push_back(oracle::random_matrix(rng, st.total_rows(), k));
  }
};

}  // namespace

TEST_CASE("init beamformer is feasible, seeded, and phase-uniform") {
  BlockDiagonalStructure big{20, 25, 20};  // 10000 on-block entries
  AnalogBeamformer w1 = init_beamformer(big, 99);
  AnalogBeamformer w2 = init_beamformer(big, 99);
  AnalogBeamformer w3 = init_beamformer(big, 100);
  CHECK(satisfies(w1.matrix, ProjectionSpec::unit(big)));
  CHECK(w1.matrix == w2.matrix);
  CHECK(w1.matrix != w3.matrix);

  // Kolmogorov-Smirnov distance of on-block phases against uniform [-pi, pi)
  std::vector<double> phases;
  for (std::size_t i = 0; i < w1.matrix.rows(); ++i)
    for (std::size_t j = 0; j < w1.matrix.cols(); ++j)
      if (big.on_block(i, j))
        phases.push_back(std::atan2(w1.matrix(i, j).imag(), w1.matrix(i, j).real()));
  std::sort(phases.begin(), phases.end());
  double ks = 0.0;
  const double n = static_cast<double>(phases.size());
  for (std::size_t i = 0; i < phases.size(); ++i) {
    const double cdf = (phases[i] + kPi) / kTwoPi;
    ks = std::max(ks, std::abs(cdf - static_cast<double>(i + 1) / n));
    ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / n));
  }
  CHECK(phases.size() == 10000);
  CHECK(ks < 0.02);
}

TEST_CASE("pga_step with zero steps projects the current iterate") {
  Setup s(1);
  Rng rng(2);
  ComplexMatrix w = oracle::random_matrix(rng, 6, 4);
  ComplexMatrix grad = oracle::random_matrix(rng, 6, 4);
  RealMatrix zero(6, 4, 0.0);
  const ProjectionSpec proj = ProjectionSpec::unit(s.st);
  CHECK(pga_step(w, w, grad, zero, zero, proj, ProjectionMode::hard) ==
        project_unit_modulus(w, s.st));
}

TEST_CASE("momentum term vanishes when consecutive iterates coincide") {
  Setup s(3);
  Rng rng(4);
  ComplexMatrix w = init_beamformer(s.st, 5).matrix;
  ComplexMatrix grad = oracle::random_matrix(rng, 6, 4);
  RealMatrix alpha(6, 4, 0.01);
  RealMatrix beta_zero(6, 4, 0.0), beta_big(6, 4, 0.9);
  const ProjectionSpec proj = ProjectionSpec::unit(s.st);
  CHECK(pga_step(w, w, grad, alpha, beta_zero, proj, ProjectionMode::hard) ==
        pga_step(w, w, grad, alpha, beta_big, proj, ProjectionMode::hard));
  CHECK_THROWS_AS(pga_step(w, ComplexMatrix(3, 3), grad, alpha, beta_zero, proj,
                           ProjectionMode::hard),
                  std::invalid_argument);
}

TEST_CASE("small gradient steps do not decrease the rate") {
  std::size_t improved = 0;
  const std::size_t trials = 200;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Setup s(100 + trial, 3, 1);
    const ComplexMatrix w0 = init_beamformer(s.st, 7000 + trial).matrix;
    const double r0 = sum_rate(w0, s.a, s.h, s.p, s.st);
    const ComplexMatrix grad = rate_gradient(w0, s.a, s.h, s.p, s.st);
    RealMatrix alpha(6, 4, 1e-4), beta(6, 4, 0.0);
    const ComplexMatrix w1 = pga_step(w0, ComplexMatrix(6, 4), grad, alpha, beta,
                                      ProjectionSpec::unit(s.st), ProjectionMode::hard);
    if (sum_rate(w1, s.a, s.h, s.p, s.st) >= r0 - 1e-12) ++improved;
  }
  CHECK(improved >= trials * 95 / 100);
}

TEST_CASE("scalar hyperparameters broadcast onto the block support") {
  BlockDiagonalStructure st{2, 2, 1};
  HyperparameterSet theta = scalar_hyperparameters(3, 0.1, 0.7, st, 0.01);
  REQUIRE(theta.iterations() == 3);
  CHECK(theta.parameter_count(false) == 2 * 3 * 2 * 2 * 1);
  CHECK(theta.parameter_count(true) == 3 * 3 * 2 * 2 * 1);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(theta.alpha[j] == theta.alpha[0]);
    CHECK(theta.beta[j] == theta.beta[0]);
    for (std::size_t i = 0; i < st.total_rows(); ++i)
      for (std::size_t c = 0; c < st.total_cols(); ++c) {
        CHECK(theta.alpha[j](i, c) == (st.on_block(i, c) ? 0.1 : 0.0));
        CHECK(theta.beta[j](i, c) == (st.on_block(i, c) ? 0.7 : 0.0));
        CHECK(theta.lambda[j](i, c) == (st.on_block(i, c) ? 0.01 : 0.0));
      }
  }
  theta.validate();
  theta.lambda[1](0, 0) = -0.5;
  CHECK_THROWS_AS(theta.validate(), std::invalid_argument);
}

TEST_CASE("run_unfolded with zero iterations returns the initial point") {
  Setup s(8);
  HyperparameterSet theta = scalar_hyperparameters(0, 0.1, 0.5, s.st);
  Trajectory traj = run_unfolded(theta, s.a, s.h, s.p, ProjectionSpec::unit(s.st),
                                 ProjectionMode::hard, 77);
  REQUIRE(traj.iterates.size() == 1);
  REQUIRE(traj.rates.size() == 1);
  CHECK(traj.iterates[0] == init_beamformer(s.st, 77).matrix);
}

TEST_CASE("run_unfolded reproduces a straight-line PGA+M loop bit for bit") {
  Setup s(9);
  const std::size_t j_count = 6;
  const double mu = 0.05, beta = 0.6;
  const std::uint64_t seed = 31;
  HyperparameterSet theta = scalar_hyperparameters(j_count, mu, beta, s.st);
  const ProjectionSpec proj = ProjectionSpec::unit(s.st);
  Trajectory traj =
      run_unfolded(theta, s.a, s.h, s.p, proj, ProjectionMode::hard, seed);

  // independent direct loop over the public operations
  ComplexMatrix w = init_beamformer(s.st, seed).matrix;
  ComplexMatrix w_prev(w.rows(), w.cols());
  std::vector<ComplexMatrix> iterates{w};
  for (std::size_t j = 0; j < j_count; ++j) {
    const ComplexMatrix grad = rate_gradient(w, s.a, s.h, s.p, s.st);
    ComplexMatrix v = w;
    for (std::size_t e = 0; e < v.size(); ++e) v.data()[e] += mu * grad.data()[e];
    for (std::size_t e = 0; e < v.size(); ++e)
      v.data()[e] += beta * (w.data()[e] - w_prev.data()[e]);
    ComplexMatrix next = project_unit_modulus(v, s.st);
    w_prev = w;
    w = next;
    iterates.push_back(w);
  }
  REQUIRE(traj.iterates.size() == iterates.size());
  for (std::size_t j = 0; j < iterates.size(); ++j)
    CHECK(traj.iterates[j] == iterates[j]);
  for (std::size_t j = 0; j <= j_count; ++j)
    CHECK(traj.rates[j] == sum_rate(iterates[j], s.a, s.h, s.p, s.st));
}

TEST_CASE("hard-mode iterates stay feasible for all three constraints") {
  Setup s(10);
  HyperparameterSet theta = scalar_hyperparameters(5, 0.1, 0.5, s.st);
  for (const ProjectionSpec& proj :
       {ProjectionSpec::unit(s.st), ProjectionSpec::sparse_at(s.st, 0.5),
        ProjectionSpec::quantized_at(s.st, 16)}) {
    Trajectory traj = run_unfolded(theta, s.a, s.h, s.p, proj, ProjectionMode::hard, 55);
    for (std::size_t j = 1; j < traj.iterates.size(); ++j)
      CHECK(satisfies(traj.iterates[j], proj));
    CHECK(traj.rates.size() == theta.iterations() + 1);
    CHECK(traj.active_counts.size() == theta.iterations() + 1);
  }
}

TEST_CASE("trajectories are deterministic and record sparsity") {
  Setup s(11);
  HyperparameterSet theta = scalar_hyperparameters(4, 0.2, 0.3, s.st, 0.05);
  const ProjectionSpec proj = ProjectionSpec::sparse_at(s.st, 0.5);
  Trajectory t1 = run_unfolded(theta, s.a, s.h, s.p, proj, ProjectionMode::hard, 12);
  Trajectory t2 = run_unfolded(theta, s.a, s.h, s.p, proj, ProjectionMode::hard, 12);
  REQUIRE(t1.iterates.size() == t2.iterates.size());
  for (std::size_t j = 0; j < t1.iterates.size(); ++j) {
    CHECK(t1.iterates[j] == t2.iterates[j]);
    CHECK(t1.rates[j] == t2.rates[j]);
    CHECK(t1.active_counts[j] == count_active(t1.iterates[j]));
  }
}

TEST_CASE("negative step entries are legal and applied as-is") {
  Setup s(12);
  HyperparameterSet theta = scalar_hyperparameters(3, -0.05, 0.4, s.st);
  theta.validate();
  Trajectory traj = run_unfolded(theta, s.a, s.h, s.p, ProjectionSpec::unit(s.st),
                                 ProjectionMode::hard, 21);
  CHECK(traj.rates.size() == 4);
  for (double r : traj.rates) CHECK(std::isfinite(r));

  // the first step actually moved opposite to the gradient
  const ComplexMatrix w0 = init_beamformer(s.st, 21).matrix;
  const ComplexMatrix grad = rate_gradient(w0, s.a, s.h, s.p, s.st);
  ComplexMatrix v = w0;
  for (std::size_t e = 0; e < v.size(); ++e) v.data()[e] += -0.05 * grad.data()[e];
  for (std::size_t e = 0; e < v.size(); ++e) v.data()[e] += 0.4 * w0.data()[e];
  CHECK(traj.iterates[1] == project_unit_modulus(v, s.st));
}

TEST_CASE("surrogate mode uses the smooth projections") {
  Setup s(13);
  HyperparameterSet theta = scalar_hyperparameters(3, 0.05, 0.5, s.st);
  const SurrogateSpec sur;
  Trajectory soft = run_unfolded(theta, s.a, s.h, s.p, ProjectionSpec::sparse_at(s.st, 0.5),
                                 ProjectionMode::surrogate, 33, sur);
  // surrogate magnitudes are strictly inside (0, 1), never exactly feasible
  bool any_interior = false;
  for (std::size_t e = 0; e < soft.final_beamformer().size(); ++e) {
    const double mag = std::abs(soft.final_beamformer().data()[e]);
    if (mag > 1e-9 && mag < 1.0 - 1e-9) any_interior = true;
  }
  CHECK(any_interior);

  // unit-modulus surrogate equals the hard projection
  Trajectory hard = run_unfolded(theta, s.a, s.h, s.p, ProjectionSpec::unit(s.st),
                                 ProjectionMode::hard, 33);
  Trajectory smooth = run_unfolded(theta, s.a, s.h, s.p, ProjectionSpec::unit(s.st),
                                   ProjectionMode::surrogate, 33);
  for (std::size_t j = 0; j < hard.iterates.size(); ++j)
    CHECK(hard.iterates[j] == smooth.iterates[j]);
}
