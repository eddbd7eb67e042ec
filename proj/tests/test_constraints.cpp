#include <catch2/catch_amalgamated.hpp>

#include "modbeam/constraints.hpp"
#include "modbeam/rng.hpp"
#include "oracles.hpp"

using namespace modbeam;

namespace {

const BlockDiagonalStructure kS{2, 2, 2};  // M=4, cols=4

ComplexMatrix random_blocked(Rng& rng, const BlockDiagonalStructure& s, double scale = 1.0) {
  ComplexMatrix w(s.total_rows(), s.total_cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      if (s.on_block(i, j)) w(i, j) = scale * rng.cnormal();
  return w;
}

}  // namespace

TEST_CASE("unit modulus projection basics") {
  ComplexMatrix w(kS.total_rows(), kS.total_cols());
  w(0, 0) = cplx{3.0, 4.0};
  w(0, 3) = cplx{5.0, 0.0};  // off block
  ComplexMatrix p = project_unit_modulus(w, kS);
  CHECK_THAT(p(0, 0).real(), Catch::Matchers::WithinAbs(0.6, 1e-15));
  CHECK_THAT(p(0, 0).imag(), Catch::Matchers::WithinAbs(0.8, 1e-15));
  CHECK(p(0, 3) == cplx{});
  CHECK(p(1, 1) == cplx{1.0, 0.0});  // on-block zero maps to 1
}

TEST_CASE("hard projections are exactly idempotent") {
  Rng rng(404);
  for (int trial = 0; trial < 1000; ++trial) {
    ComplexMatrix w = random_blocked(rng, kS, 1.5);
    const ComplexMatrix pu = project_unit_modulus(w, kS);
    CHECK(project_unit_modulus(pu, kS) == pu);
    const ComplexMatrix ps = project_sparse(w, kS, 0.7);
    CHECK(project_sparse(ps, kS, 0.7) == ps);
    const ComplexMatrix pq = project_quantized(w, kS, 8);
    CHECK(project_quantized(pq, kS, 8) == pq);
  }
}

TEST_CASE("projection outputs are feasible") {
  Rng rng(405);
  for (int trial = 0; trial < 200; ++trial) {
    ComplexMatrix w = random_blocked(rng, kS, 2.0);
    CHECK(satisfies(project_unit_modulus(w, kS), ProjectionSpec::unit(kS)));
    CHECK(satisfies(project_sparse(w, kS, 0.5), ProjectionSpec::sparse_at(kS, 0.5)));
    CHECK(satisfies(project_quantized(w, kS, 16), ProjectionSpec::quantized_at(kS, 16)));
  }
}

TEST_CASE("sparse projection boundary and zero-threshold cases") {
  BlockDiagonalStructure s1{1, 1, 1};
  ComplexMatrix w(1, 1);

  // |w| exactly at the threshold is kept (the case split uses >=)
  w(0, 0) = cplx{0.0, 0.5};
  ComplexMatrix p = project_sparse(w, s1, 0.5);
  CHECK_THAT(std::abs(p(0, 0)), Catch::Matchers::WithinAbs(1.0, 1e-15));

  w(0, 0) = 0.3 * std::polar(1.0, 1.1);
  CHECK(project_sparse(w, s1, 0.5)(0, 0) == cplx{});

  Rng rng(406);
  ComplexMatrix r = random_blocked(rng, kS, 1.3);
  CHECK(project_sparse(r, kS, 0.0) == project_unit_modulus(r, kS));
}

TEST_CASE("quantized projection picks nearest level, ties round up") {
  BlockDiagonalStructure s1{1, 1, 1};
  ComplexMatrix w(1, 1);

  w(0, 0) = std::polar(1.0, 0.3 * kPi);
  ComplexMatrix p = project_quantized(w, s1, 4);
  CHECK_THAT(std::atan2(p(0, 0).imag(), p(0, 0).real()),
             Catch::Matchers::WithinAbs(kPi / 2.0, 1e-12));

  w(0, 0) = std::polar(1.0, kPi / 4.0);  // exactly between 0 and pi/2
  p = project_quantized(w, s1, 4);
  CHECK_THAT(std::atan2(p(0, 0).imag(), p(0, 0).real()),
             Catch::Matchers::WithinAbs(kPi / 2.0, 1e-12));

  w(0, 0) = cplx{7.0, 0.0};
  p = project_quantized(w, s1, 4);
  CHECK(p(0, 0) == cplx{1.0, 0.0});
}

TEST_CASE("magnitude surrogate hits the sigmoid midpoint and saturates") {
  BlockDiagonalStructure s1{1, 1, 1};
  SurrogateSpec spec;  // s_m = 40, zeta_m = 0.5
  ComplexMatrix w(1, 1);

  w(0, 0) = std::polar(0.5, 0.77);
  CHECK_THAT(std::abs(surrogate_magnitude(w, s1, spec)(0, 0)),
             Catch::Matchers::WithinAbs(0.5, 1e-12));

  SurrogateSpec sharp{80.0, 0.5, 40.0};
  w(0, 0) = std::polar(0.2, -0.3);
  CHECK(std::abs(surrogate_magnitude(w, s1, sharp)(0, 0)) < 1e-6);
  w(0, 0) = std::polar(0.9, -0.3);
  CHECK_THAT(std::abs(surrogate_magnitude(w, s1, sharp)(0, 0)),
             Catch::Matchers::WithinAbs(1.0, 1e-6));

  // off-block stays zero
  ComplexMatrix full(kS.total_rows(), kS.total_cols(), cplx{0.8, 0.1});
  ComplexMatrix out = surrogate_magnitude(full, kS, spec);
  CHECK(out(0, 3) == cplx{});
}

TEST_CASE("phase surrogate staircase formula values") {
  // sigmoid(0) sum: s_p -> 0+ drives the staircase value to pi for any input
  for (double psi : {-2.0, 0.0, 1.5}) {
    CHECK_THAT(phase_surrogate_staircase(psi, 8, 1e-9),
               Catch::Matchers::WithinAbs(kPi, 1e-6));
  }
  // Q=2: just above -pi all sigmoids are off -> staircase ~ 0 (first cell)
  CHECK(phase_surrogate_staircase(-kPi + 0.01, 2, 50.0) < 1e-6);
}

TEST_CASE("phase surrogate matches hard projection at cell centers") {
  BlockDiagonalStructure s1{1, 1, 1};
  SurrogateSpec spec{40.0, 0.5, 200.0};
  for (std::size_t q : {4u, 8u, 16u}) {
    for (std::size_t k = 0; k < q; ++k) {
      const double center =
          std::remainder(kTwoPi * static_cast<double>(k) / static_cast<double>(q), kTwoPi);
      ComplexMatrix w(1, 1);
      w(0, 0) = std::polar(1.0, center);
      const ComplexMatrix soft = surrogate_phase(w, s1, q, spec);
      const ComplexMatrix hard = project_quantized(w, s1, q);
      const double phase_gap =
          std::abs(std::remainder(std::arg(soft(0, 0)) - std::arg(hard(0, 0)), kTwoPi));
      CHECK(phase_gap < kTwoPi / (100.0 * static_cast<double>(q)));
    }
  }
}

TEST_CASE("surrogate-to-hard convergence away from discontinuities") {
  // Two readings, both checked. (a) At any fixed point admissible for every
  // sharpness (distance 0.45 > max delta from the discontinuity), the gap to
  // the hard projection decreases strictly in s. (b) The sup-norm gap over a
  // grid that excludes the per-s delta = 4/s neighborhoods stays
  // non-increasing where the grid is non-empty and is below 0.02 at s = 160.
  const std::size_t q = 8;
  const BlockDiagonalStructure s1{1, 1, 1};

  double last_fixed_mag = 1e9, last_fixed_phase = 1e9;
  double last_sup_mag = 1e9, last_sup_phase = 1e9;
  for (double s : {10.0, 40.0, 160.0}) {
    const double delta = 4.0 / s;
    SurrogateSpec spec{s, 0.5, s};

    ComplexMatrix w(1, 1);
    w(0, 0) = std::polar(0.5 + 0.45, 0.9);
    const double fixed_mag = std::abs(surrogate_magnitude(w, s1, spec)(0, 0) -
                                      project_sparse(w, s1, 0.5)(0, 0));
    CHECK(fixed_mag < last_fixed_mag);
    last_fixed_mag = fixed_mag;

    const double cell = kPi / static_cast<double>(q);
    w(0, 0) = std::polar(1.0, 0.55 * cell);  // 0.45 cells from the boundary at pi/Q
    const double fixed_phase_gap = std::abs(surrogate_phase(w, s1, q, spec)(0, 0) -
                                            project_quantized(w, s1, q)(0, 0));
    CHECK(fixed_phase_gap < last_fixed_phase);
    last_fixed_phase = fixed_phase_gap;

    double sup_mag = 0.0;
    for (double r = 0.0; r <= 2.0; r += 0.004) {
      if (std::abs(r - 0.5) < delta) continue;
      w(0, 0) = std::polar(r == 0.0 ? 1e-30 : r, 0.9);
      sup_mag = std::max(sup_mag, std::abs(surrogate_magnitude(w, s1, spec)(0, 0) -
                                           project_sparse(w, s1, 0.5)(0, 0)));
    }
    CHECK(sup_mag <= last_sup_mag + 1e-6);
    last_sup_mag = sup_mag;
    if (s == 160.0) CHECK(sup_mag < 0.02);

    double sup_phase = 0.0;
    std::size_t evaluated = 0;
    for (double psi = -kPi; psi < kPi; psi += kTwoPi / 4096.0) {
      // cell boundaries sit at odd multiples of pi/Q
      const double u = psi * static_cast<double>(q) / kPi;
      const double dist_to_boundary =
          std::abs(std::remainder(u - 1.0, 2.0)) * kPi / static_cast<double>(q);
      if (dist_to_boundary < delta) continue;
      ++evaluated;
      w(0, 0) = std::polar(1.0, psi);
      sup_phase = std::max(sup_phase, std::abs(surrogate_phase(w, s1, q, spec)(0, 0) -
                                               project_quantized(w, s1, q)(0, 0)));
    }
    if (evaluated > 0) {
      CHECK(sup_phase <= last_sup_phase + 1e-6);
      last_sup_phase = sup_phase;
    }
    if (s == 160.0) CHECK(sup_phase < 0.02);
  }
}

TEST_CASE("all constraint outputs preserve the block mask") {
  Rng rng(407);
  SurrogateSpec spec;
  for (int trial = 0; trial < 50; ++trial) {
    ComplexMatrix w = oracle::random_matrix(rng, kS.total_rows(), kS.total_cols());
    CHECK(off_block_is_zero(project_unit_modulus(w, kS), kS));
    CHECK(off_block_is_zero(project_sparse(w, kS, 0.5), kS));
    CHECK(off_block_is_zero(project_quantized(w, kS, 8), kS));
    CHECK(off_block_is_zero(surrogate_magnitude(w, kS, spec), kS));
    CHECK(off_block_is_zero(surrogate_phase(w, kS, 8, spec), kS));
  }
}
