#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "modbeam/constraints.hpp"
#include "modbeam/linalg.hpp"
#include "modbeam/objective.hpp"
#include "modbeam/rng.hpp"

namespace modbeam {

struct AnalogBeamformer {
  ComplexMatrix matrix;  // M x (L*P), zero off the block support
  BlockDiagonalStructure structure;
};

/// Per-iteration, per-entry step sizes, momentum weights and l1 coefficients.
/// All matrices live on the block-diagonal support; lambda is all-zero when
/// the run is not power-aware.
struct HyperparameterSet {
  BlockDiagonalStructure structure;
  std::vector<RealMatrix> alpha;
  std::vector<RealMatrix> beta;
  std::vector<RealMatrix> lambda;

  std::size_t iterations() const { return alpha.size(); }

  bool lambda_active() const {
    for (const auto& l : lambda)
      for (std::size_t e = 0; e < l.size(); ++e)
        if (l.data()[e] != 0.0) return true;
    return false;
  }

  /// 2*J*P*N*L without lambda, 3*J*P*N*L with it.
  std::size_t parameter_count(bool include_lambda) const {
    const std::size_t per_matrix =
        structure.panels * structure.rows_per_block * structure.cols_per_block;
    return (include_lambda ? 3 : 2) * iterations() * per_matrix;
  }

  void validate() const {
    if (beta.size() != alpha.size() || lambda.size() != alpha.size())
      throw std::invalid_argument("HyperparameterSet: alpha/beta/lambda length mismatch");
    const RealMatrix mask = block_support_mask(structure);
    auto check = [&](const std::vector<RealMatrix>& mats, const char* name) {
      for (const auto& m : mats) {
        if (m.rows() != structure.total_rows() || m.cols() != structure.total_cols())
          throw std::invalid_argument(std::string("HyperparameterSet: ") + name +
                                      " has wrong shape");
        for (std::size_t i = 0; i < m.rows(); ++i)
          for (std::size_t j = 0; j < m.cols(); ++j)
            if (!structure.on_block(i, j) && m(i, j) != 0.0)
              throw std::invalid_argument(std::string("HyperparameterSet: ") + name +
                                          " has off-block entries");
      }
    };
    check(alpha, "alpha");
    check(beta, "beta");
    check(lambda, "lambda");
    for (const auto& l : lambda)
      for (std::size_t e = 0; e < l.size(); ++e)
        if (l.data()[e] < 0.0)
          throw std::invalid_argument("HyperparameterSet: lambda entries must be >= 0");
  }
};

/// Broadcasts fixed scalars {mu, beta} (and optionally lambda) onto the block
/// support; the classical optimizer is this special case of the unfolded one.
inline HyperparameterSet scalar_hyperparameters(std::size_t j, double mu, double beta,
                                                const BlockDiagonalStructure& structure,
                                                double lambda = 0.0) {
  HyperparameterSet theta;
  theta.structure = structure;
  RealMatrix mask = block_support_mask(structure);
  RealMatrix a = mask, b = mask, l = mask;
  for (std::size_t e = 0; e < mask.size(); ++e) {
    a.data()[e] *= mu;
    b.data()[e] *= beta;
    l.data()[e] *= lambda;
  }
  theta.alpha.assign(j, a);
  theta.beta.assign(j, b);
  theta.lambda.assign(j, l);
  return theta;
}

/// Iterates W_0..W_J with their rates, active-entry counts and per-iterate
/// numerical-failure flags.
struct Trajectory {
  std::vector<ComplexMatrix> iterates;
  std::vector<double> rates;
  std::vector<std::size_t> active_counts;
  std::vector<bool> iterate_flagged;

  const ComplexMatrix& final_beamformer() const { return iterates.back(); }
  double final_rate() const { return rates.back(); }
  bool any_flagged() const {
    for (bool f : iterate_flagged)
      if (f) return true;
    return false;
  }
};

inline std::size_t count_active(const ComplexMatrix& w) {
  std::size_t n = 0;
  for (std::size_t e = 0; e < w.size(); ++e)
    if (w.data()[e] != cplx{}) ++n;
  return n;
}

/// W_0: i.i.d. complex Gaussian on the block support, then projected onto
/// the unit-modulus set. Entries are drawn in row-major on-block order.
inline AnalogBeamformer init_beamformer(const BlockDiagonalStructure& structure,
                                        std::uint64_t seed) {
  ComplexMatrix w(structure.total_rows(), structure.total_cols());
  Rng rng(seed);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      if (structure.on_block(i, j)) w(i, j) = rng.cnormal();
  return AnalogBeamformer{project_unit_modulus(w, structure), structure};
}

enum class ProjectionMode {
  hard,      // the feasible-set projection (inference)
  surrogate  // differentiable stand-in (training forward pass)
};

/// Applies the projection for the given mode. The unit-modulus projection is
/// differentiable away from zero, so it serves as its own surrogate; sparse
/// and quantized constraints switch to their sigmoid approximations.
inline ComplexMatrix apply_projection(const ComplexMatrix& w, const ProjectionSpec& spec,
                                      ProjectionMode mode, const SurrogateSpec& sur) {
  if (mode == ProjectionMode::hard) return project(w, spec);
  switch (spec.kind) {
    case ConstraintKind::unit_modulus:
      return project_unit_modulus(w, spec.structure);
    case ConstraintKind::sparse:
      return surrogate_magnitude(w, spec.structure, sur);
    case ConstraintKind::quantized:
      return surrogate_phase(w, spec.structure, spec.q, sur);
  }
  throw std::logic_error("apply_projection: unknown constraint kind");
}

/// One iteration: gradient step, momentum, projection — in that order.
inline ComplexMatrix pga_step(const ComplexMatrix& w_cur, const ComplexMatrix& w_prev,
                              const ComplexMatrix& grad, const RealMatrix& alpha,
                              const RealMatrix& beta, const ProjectionSpec& spec,
                              ProjectionMode mode, const SurrogateSpec& sur = {}) {
  detail::require(w_cur.same_shape(w_prev) && w_cur.same_shape(grad),
                  "pga_step: iterate/gradient shape mismatch");
  detail::require(alpha.rows() == w_cur.rows() && alpha.cols() == w_cur.cols() &&
                      beta.rows() == w_cur.rows() && beta.cols() == w_cur.cols(),
                  "pga_step: hyperparameter shape mismatch");
  ComplexMatrix v = w_cur;
  for (std::size_t e = 0; e < v.size(); ++e) v.data()[e] += alpha.data()[e] * grad.data()[e];
  for (std::size_t e = 0; e < v.size(); ++e)
    v.data()[e] += beta.data()[e] * (w_cur.data()[e] - w_prev.data()[e]);
  return apply_projection(v, spec, mode, sur);
}

/// Executes J unfolded iterations from W_{-1} = 0 and a seeded random W_0.
/// The gradient is the plain rate gradient when every lambda_j is zero and
/// the l1-regularized gradient otherwise. An iteration whose rate/gradient
/// evaluation trips the rank guard keeps the previous iterate and flags the
/// trajectory instead of aborting.
inline Trajectory run_unfolded(const HyperparameterSet& theta, const ConnectivityMatrix& a,
                               const ChannelRealization& h, const SystemParams& p,
                               const ProjectionSpec& spec, ProjectionMode mode,
                               std::uint64_t init_seed, const SurrogateSpec& sur = {}) {
  const BlockDiagonalStructure& structure = theta.structure;
  const std::size_t j_count = theta.iterations();
  const bool use_reg = theta.lambda_active();

  Trajectory traj;
  traj.iterates.reserve(j_count + 1);
  traj.rates.reserve(j_count + 1);

  ComplexMatrix w = init_beamformer(structure, init_seed).matrix;
  ComplexMatrix w_prev(w.rows(), w.cols());  // W_{-1} = 0
  traj.iterates.push_back(w);
  traj.active_counts.push_back(count_active(w));

  for (std::size_t j = 0; j < j_count; ++j) {
    bool flagged = false;
    ComplexMatrix next;
    double rate_here = 0.0;
    try {
      RateGradientResult rg = rate_and_gradient(w, a, h, p, structure, true);
      rate_here = rg.rate;
      flagged = rg.flagged;
      ComplexMatrix grad = std::move(rg.gradient);
      if (use_reg) {
        const ComplexMatrix dir = phase_direction(w, structure);
        const RealMatrix& lam = theta.lambda[j];
        for (std::size_t e = 0; e < grad.size(); ++e)
          grad.data()[e] -= lam.data()[e] * dir.data()[e];
      }
      next = pga_step(w, w_prev, grad, theta.alpha[j], theta.beta[j], spec, mode, sur);
    } catch (const NumericalError&) {
      flagged = true;
    }
    traj.rates.push_back(rate_here);
    traj.iterate_flagged.push_back(flagged);
    if (flagged) {
      next = w;  // freeze on numerical failure, keep going
    }
    w_prev = std::move(w);
    w = std::move(next);
    traj.iterates.push_back(w);
    traj.active_counts.push_back(count_active(w));
  }

  bool final_flag = false;
  double final_rate = 0.0;
  try {
    final_rate = sum_rate(w, a, h, p, structure, &final_flag);
  } catch (const NumericalError&) {
    final_flag = true;
  }
  traj.rates.push_back(final_rate);
  traj.iterate_flagged.push_back(final_flag);
  return traj;
}

}  // namespace modbeam
