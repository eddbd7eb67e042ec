#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "modbeam/linalg.hpp"

namespace modbeam {

enum class ConstraintKind {
  unit_modulus,  // every active coefficient is a pure phase shift
  sparse,        // coefficients with magnitude in {0,1}, threshold zeta
  quantized,     // unit modulus with Q-level phases
};

struct ProjectionSpec {
  ConstraintKind kind = ConstraintKind::unit_modulus;
  BlockDiagonalStructure structure;
  double zeta = 0.5;    // sparse magnitude threshold
  std::size_t q = 16;   // quantization levels

  ProjectionSpec() = default;
  ProjectionSpec(ConstraintKind k, BlockDiagonalStructure s, double zeta_ = 0.5,
                 std::size_t q_ = 16)
      : kind(k), structure(s), zeta(zeta_), q(q_) {
    if (zeta < 0.0) throw std::invalid_argument("ProjectionSpec: zeta must be >= 0");
    if (q < 2) throw std::invalid_argument("ProjectionSpec: Q must be >= 2");
  }

  static ProjectionSpec unit(BlockDiagonalStructure s) {
    return ProjectionSpec(ConstraintKind::unit_modulus, s);
  }
  static ProjectionSpec sparse_at(BlockDiagonalStructure s, double zeta_) {
    return ProjectionSpec(ConstraintKind::sparse, s, zeta_);
  }
  static ProjectionSpec quantized_at(BlockDiagonalStructure s, std::size_t q_) {
    return ProjectionSpec(ConstraintKind::quantized, s, 0.5, q_);
  }
};

/// Sharpness/shift parameters of the differentiable training surrogates.
struct SurrogateSpec {
  double s_m = 40.0;    // magnitude sharpness
  double zeta_m = 0.5;  // magnitude shift (imitates the hard threshold)
  double s_p = 40.0;    // phase sharpness

  SurrogateSpec() = default;
  SurrogateSpec(double sm, double zm, double sp) : s_m(sm), zeta_m(zm), s_p(sp) {
    if (!(s_m > 0.0) || !(s_p > 0.0))
      throw std::invalid_argument("SurrogateSpec: sharpness must be positive");
    if (zeta_m < 0.0 || zeta_m > 1.0)
      throw std::invalid_argument("SurrogateSpec: zeta_m must lie in [0,1]");
  }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

namespace detail {

// Entries whose squared magnitude is already this close to 1 are passed
// through unchanged. The window is a few ulps wide, which keeps repeated
// projection exactly idempotent without affecting any stated tolerance.
inline constexpr double kUnitWindow = 16.0 * 2.220446049250313e-16;

inline bool nearly_unit(const cplx& z) {
  return std::abs(std::norm(z) - 1.0) <= kUnitWindow;
}

/// z/|z| with the 0 -> 1+0i convention.
inline cplx unit_direction(const cplx& z) {
  if (z == cplx{}) return cplx{1.0, 0.0};
  if (nearly_unit(z)) return z;
  return z / std::abs(z);
}

}  // namespace detail

/// Projection onto the unit-modulus set: on-block entries normalized to
/// magnitude one (zero maps to 1+0i), off-block entries zeroed.
inline ComplexMatrix project_unit_modulus(const ComplexMatrix& w,
                                          const BlockDiagonalStructure& s) {
  detail::require(w.rows() == s.total_rows() && w.cols() == s.total_cols(),
                  "project_unit_modulus: matrix does not match structure");
  ComplexMatrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      if (s.on_block(i, j)) out(i, j) = detail::unit_direction(w(i, j));
  return out;
}

/// Sparse projection: on-block entries with |w| >= zeta are normalized,
/// smaller ones are set to zero. zeta = 0 coincides with project_unit_modulus.
inline ComplexMatrix project_sparse(const ComplexMatrix& w,
                                    const BlockDiagonalStructure& s, double zeta) {
  if (zeta < 0.0) throw std::invalid_argument("project_sparse: zeta must be >= 0");
  detail::require(w.rows() == s.total_rows() && w.cols() == s.total_cols(),
                  "project_sparse: matrix does not match structure");
  ComplexMatrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      if (s.on_block(i, j)) {
        const cplx z = w(i, j);
        if (std::abs(z) >= zeta) out(i, j) = detail::unit_direction(z);
      }
  return out;
}

/// Nearest multiple of 2*pi/Q under circular distance; ties round to the
/// larger candidate phase. Output magnitude is one.
inline ComplexMatrix project_quantized(const ComplexMatrix& w,
                                       const BlockDiagonalStructure& s, std::size_t q) {
  if (q < 2) throw std::invalid_argument("project_quantized: Q must be >= 2");
  detail::require(w.rows() == s.total_rows() && w.cols() == s.total_cols(),
                  "project_quantized: matrix does not match structure");
  const double cell = kTwoPi / static_cast<double>(q);
  ComplexMatrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      if (s.on_block(i, j)) {
        const cplx z = w(i, j);
        const double phase = (z == cplx{}) ? 0.0 : std::atan2(z.imag(), z.real());
        const double k = std::floor(phase / cell + 0.5);
        out(i, j) = cplx{std::cos(k * cell), std::sin(k * cell)};
      }
  return out;
}

/// Differentiable stand-in for the sparse projection: the phase is kept and
/// the magnitude is replaced by a shifted sigmoid of itself.
inline ComplexMatrix surrogate_magnitude(const ComplexMatrix& w,
                                         const BlockDiagonalStructure& s,
                                         const SurrogateSpec& spec) {
  detail::require(w.rows() == s.total_rows() && w.cols() == s.total_cols(),
                  "surrogate_magnitude: matrix does not match structure");
  ComplexMatrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      if (s.on_block(i, j)) {
        const cplx z = w(i, j);
        const double mag = sigmoid(spec.s_m * (std::abs(z) - spec.zeta_m));
        out(i, j) = detail::unit_direction(z) * mag;
      }
  return out;
}

/// Staircase value of the quantized-phase surrogate: a sum of Q shifted
/// sigmoids over the input phase psi in [-pi, pi), rising by 2*pi/Q at each
/// quantizer cell boundary and spanning [0, 2*pi].
inline double phase_surrogate_staircase(double psi, std::size_t q, double s_p) {
  double acc = 0.0;
  for (std::size_t qq = 1; qq <= q; ++qq) {
    const double boundary = kTwoPi * (static_cast<double>(qq) - 0.5) / static_cast<double>(q);
    acc += sigmoid(s_p * (psi - boundary + kPi));
  }
  return (kTwoPi / static_cast<double>(q)) * acc;
}

/// Differentiable stand-in for the quantized projection. The staircase maps
/// the shifted phase psi + pi in [0, 2*pi) onto [0, 2*pi], so the output
/// phase undoes that shift to land on the quantizer grid (see
/// phase_surrogate_staircase for the raw formula value).
inline ComplexMatrix surrogate_phase(const ComplexMatrix& w,
                                     const BlockDiagonalStructure& s, std::size_t q,
                                     const SurrogateSpec& spec) {
  if (q < 2) throw std::invalid_argument("surrogate_phase: Q must be >= 2");
  detail::require(w.rows() == s.total_rows() && w.cols() == s.total_cols(),
                  "surrogate_phase: matrix does not match structure");
  ComplexMatrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      if (s.on_block(i, j)) {
        const cplx z = w(i, j);
        const double psi = (z == cplx{}) ? 0.0 : std::atan2(z.imag(), z.real());
        const double staircase = phase_surrogate_staircase(psi, q, spec.s_p);
        const double phase = staircase - kPi;
        out(i, j) = cplx{std::cos(phase), std::sin(phase)};
      }
  return out;
}

/// Hard projection dispatch.
inline ComplexMatrix project(const ComplexMatrix& w, const ProjectionSpec& spec) {
  switch (spec.kind) {
    case ConstraintKind::unit_modulus:
      return project_unit_modulus(w, spec.structure);
    case ConstraintKind::sparse:
      return project_sparse(w, spec.structure, spec.zeta);
    case ConstraintKind::quantized:
      return project_quantized(w, spec.structure, spec.q);
  }
  throw std::logic_error("project: unknown constraint kind");
}

/// Feasibility membership test for the three constraint sets.
inline bool satisfies(const ComplexMatrix& w, const ProjectionSpec& spec,
                      double tol = 1e-12) {
  const auto& s = spec.structure;
  if (w.rows() != s.total_rows() || w.cols() != s.total_cols()) return false;
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      const cplx z = w(i, j);
      if (!s.on_block(i, j)) {
        if (z != cplx{}) return false;
        continue;
      }
      const double mag = std::abs(z);
      switch (spec.kind) {
        case ConstraintKind::unit_modulus:
          if (std::abs(mag - 1.0) > tol) return false;
          break;
        case ConstraintKind::sparse:
          if (mag != 0.0 && std::abs(mag - 1.0) > tol) return false;
          break;
        case ConstraintKind::quantized: {
          if (std::abs(mag - 1.0) > tol) return false;
          const double phase = std::atan2(z.imag(), z.real());
          const double cycles = phase * static_cast<double>(spec.q) / kTwoPi;
          if (std::abs(cycles - std::round(cycles)) > tol) return false;
          break;
        }
      }
    }
  return true;
}

}  // namespace modbeam
