#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "modbeam/channel.hpp"
#include "modbeam/constraints.hpp"
#include "modbeam/linalg.hpp"

namespace modbeam {

/// Binary panel-to-CPU wiring matrix A of size L*P x T, fixed across
/// frequency and across a run.
struct ConnectivityMatrix {
  ComplexMatrix a;

  ConnectivityMatrix() = default;
  explicit ConnectivityMatrix(ComplexMatrix m) : a(std::move(m)) { validate(); }

  std::size_t rows() const { return a.rows(); }
  std::size_t cols() const { return a.cols(); }  // T

  void validate() const {
    for (std::size_t e = 0; e < a.size(); ++e) {
      const cplx z = a.data()[e];
      if (z.imag() != 0.0 || (z.real() != 0.0 && z.real() != 1.0))
        throw std::invalid_argument("ConnectivityMatrix: entries must be 0 or 1");
    }
  }

  /// Output q of the panel stack feeds CPU input q mod T.
  static ConnectivityMatrix round_robin(std::size_t lp, std::size_t t) {
    ComplexMatrix m(lp, t);
    for (std::size_t qq = 0; qq < lp; ++qq) m(qq, qq % t) = 1.0;
    return ConnectivityMatrix(std::move(m));
  }

  static ConnectivityMatrix identity_wiring(std::size_t lp) {
    return ConnectivityMatrix(ComplexMatrix::identity(lp));
  }
};

/// G = W * A, the composite analog map seen by the digital side.
struct EquivalentChannel {
  ComplexMatrix g;
};

inline EquivalentChannel equivalent_channel(const ComplexMatrix& w,
                                            const ConnectivityMatrix& a) {
  return EquivalentChannel{matmul(w, a.a)};
}

namespace detail {

/// Shared per-evaluation state: the orthogonal projector onto range(G) and
/// the pseudoinverse piece G^dag = (G^H G)^{-1} G^H. The well-conditioned
/// path factors G directly (thin Householder QR, so I - P is accurate even
/// when G is square). If the smallest/largest R-diagonal ratio indicates a
/// G^H G eigenvalue ratio below 1e-10, or the factorization degenerates, a
/// 1e-9 ridge on G^H G is used instead and the evaluation is flagged.
struct RateCore {
  ComplexMatrix g;     // M x T
  ComplexMatrix proj;  // M x M
  // QR pieces (well-conditioned path): P = Q Q^H, G^dag = R^{-1} Q^H
  ComplexMatrix qh;    // T x M
  ComplexMatrix r;     // T x T upper
  // ridge-path fallback
  ComplexMatrix gdag;  // T x M
  bool has_qr = false;
  bool flagged = false;
};

inline RateCore build_rate_core(const ComplexMatrix& w, const ConnectivityMatrix& a) {
  RateCore core;
  core.g = matmul(w, a.a);
  bool need_ridge = false;
  QrResult qr;
  try {
    qr = householder_qr(core.g);
    double dmin = std::abs(qr.r(0, 0)), dmax = dmin;
    for (std::size_t i = 1; i < qr.r.rows(); ++i) {
      const double d = std::abs(qr.r(i, i));
      dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
    }
    if (!(dmin > 1e-5 * dmax) || !std::isfinite(dmax)) need_ridge = true;
  } catch (const NumericalError&) {
    need_ridge = true;
  }
  if (!need_ridge) {
    core.has_qr = true;
    core.qh = adjoint(qr.q);
    core.r = std::move(qr.r);
    core.proj = matmul(qr.q, core.qh);
    return core;
  }
  core.flagged = true;
  const ComplexMatrix gh = adjoint(core.g);
  ComplexMatrix gram = matmul(gh, core.g);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += 1e-9;
  const ComplexMatrix chol_l = cholesky(gram);
  const ComplexMatrix x = solve_lower(chol_l, gh);  // L^{-1} G^H
  core.gdag = solve_lower_adjoint(chol_l, x);       // (G^H G)^{-1} G^H
  core.proj = matmul(adjoint(x), x);                // G (G^H G)^{-1} G^H
  return core;
}

}  // namespace detail

struct RateGradientResult {
  double rate = 0.0;       // bits per channel use, averaged over bins
  ComplexMatrix gradient;  // M x (L*P), zero off the block support
  bool flagged = false;    // rank guard fired during evaluation
};

/// Rate and its ascent gradient in one pass. The per-bin K x K matrix
/// S_b = I + (rho_s/sigma_w^2) H^H P H carries both the determinant-identity
/// rate and, through H S_b^{-1} H^H = H H^H Q_b^{-1}, the gradient, so every
/// inversion is of a Hermitian positive definite matrix.
inline RateGradientResult rate_and_gradient(const ComplexMatrix& w,
                                            const ConnectivityMatrix& a,
                                            const ChannelRealization& h,
                                            const SystemParams& p,
                                            const BlockDiagonalStructure& structure,
                                            bool want_gradient = true) {
  detail::require(w.rows() == structure.total_rows() && w.cols() == structure.total_cols(),
                  "rate_and_gradient: beamformer does not match structure");
  detail::require(w.cols() == a.rows(), "rate_and_gradient: W and A are incompatible");
  detail::require(h.bins() >= 1, "rate_and_gradient: empty channel realization");
  detail::require(h.antennas() == w.rows(), "rate_and_gradient: channel/antenna mismatch");

  const double c = p.snr();
  const std::size_t b_count = h.bins();
  detail::RateCore core = detail::build_rate_core(w, a);

  RateGradientResult out;
  out.flagged = core.flagged;
  ComplexMatrix grad_sum;
  ComplexMatrix eye_minus_p;
  if (want_gradient) {
    grad_sum = ComplexMatrix(w.rows(), w.cols());
    eye_minus_p = sub(ComplexMatrix::identity(core.proj.rows()), core.proj);
  }

  for (std::size_t bb = 0; bb < b_count; ++bb) {
    const ComplexMatrix& hb = h.per_bin[bb];
    // S_b = I + c H^H P H; with P = Q Q^H this is I + c (Q^H H)^H (Q^H H),
    // which skips the M x M product.
    ComplexMatrix s;
    ComplexMatrix qh_h;
    if (core.has_qr) {
      qh_h = matmul(core.qh, hb);
      s = matmul(adjoint(qh_h), qh_h);
    } else {
      s = matmul(adjoint(hb), matmul(core.proj, hb));
    }
    for (std::size_t e = 0; e < s.size(); ++e) s.data()[e] *= c;
    for (std::size_t i = 0; i < s.rows(); ++i) s(i, i) += 1.0;
    out.rate += logdet_hermitian_pd(s);
    if (!want_gradient) continue;
    const ComplexMatrix s_inv = inverse_hermitian_pd(s);
    const ComplexMatrix gdh =
        core.has_qr ? solve_upper(core.r, qh_h) : matmul(core.gdag, hb);
    const ComplexMatrix t1 = matmul(gdh, s_inv);
    const ComplexMatrix t2 = matmul(t1, adjoint(hb));
    const ComplexMatrix t3 = matmul(t2, eye_minus_p);
    const ComplexMatrix t4 = matmul(a.a, t3);
    grad_sum = add(grad_sum, adjoint(t4));
  }
  out.rate /= static_cast<double>(b_count);
  if (want_gradient) {
    out.gradient = apply_block_mask(scale(grad_sum, c / static_cast<double>(b_count)),
                                    structure);
    if (!out.gradient.all_finite())
      throw NumericalError("rate_and_gradient: non-finite gradient");
  }
  return out;
}

/// Average achievable sum-rate of Eq.-(6) form, evaluated through the K x K
/// determinant identity |I_M + c P H H^H| = |I_K + c H^H P H|.
inline double sum_rate(const ComplexMatrix& w, const ConnectivityMatrix& a,
                       const ChannelRealization& h, const SystemParams& p,
                       const BlockDiagonalStructure& structure, bool* flagged = nullptr) {
  const RateGradientResult r = rate_and_gradient(w, a, h, p, structure, false);
  if (flagged) *flagged = r.flagged;
  return r.rate;
}

/// Ascent direction of the rate with respect to W, masked to the
/// block-diagonal support.
inline ComplexMatrix rate_gradient(const ComplexMatrix& w, const ConnectivityMatrix& a,
                                   const ChannelRealization& h, const SystemParams& p,
                                   const BlockDiagonalStructure& structure,
                                   bool* flagged = nullptr) {
  RateGradientResult r = rate_and_gradient(w, a, h, p, structure, true);
  if (flagged) *flagged = r.flagged;
  return std::move(r.gradient);
}

/// Unit-phase direction e^{i angle(W)} on the block support (0 maps to 1).
inline ComplexMatrix phase_direction(const ComplexMatrix& w,
                                     const BlockDiagonalStructure& structure) {
  return project_unit_modulus(w, structure);
}

/// Gradient of the l1-relaxed objective R - sum(lambda .* |W|):
/// rate_gradient minus lambda .* e^{i angle(W)} elementwise on the support.
inline ComplexMatrix regularized_gradient(const ComplexMatrix& w,
                                          const ConnectivityMatrix& a,
                                          const ChannelRealization& h,
                                          const SystemParams& p,
                                          const BlockDiagonalStructure& structure,
                                          const RealMatrix& lambda,
                                          bool* flagged = nullptr) {
  detail::require(lambda.rows() == w.rows() && lambda.cols() == w.cols(),
                  "regularized_gradient: lambda shape mismatch");
  for (std::size_t e = 0; e < lambda.size(); ++e)
    if (lambda.data()[e] < 0.0)
      throw std::invalid_argument("regularized_gradient: lambda entries must be >= 0");
  ComplexMatrix grad = rate_gradient(w, a, h, p, structure, flagged);
  const ComplexMatrix dir = phase_direction(w, structure);
  for (std::size_t e = 0; e < grad.size(); ++e)
    grad.data()[e] -= lambda.data()[e] * dir.data()[e];
  return grad;
}

/// Complex-multiplication count estimate for J unfolded iterations,
/// J*B*(T^3 + M^2(T+K) + M(T^2 + L*P*T + T*K)), constant factor one.
inline double complexity_estimate(std::size_t j, std::size_t b, std::size_t t,
                                  std::size_t m, std::size_t k, std::size_t l,
                                  std::size_t p) {
  if (j < 1 || b < 1 || t < 1 || m < 1 || k < 1 || l < 1 || p < 1)
    throw std::invalid_argument("complexity_estimate: all counts must be >= 1");
  const double td = static_cast<double>(t), md = static_cast<double>(m),
               kd = static_cast<double>(k), ld = static_cast<double>(l),
               pd = static_cast<double>(p);
  const double per_iter = td * td * td + md * md * (td + kd) +
                          md * (td * td + ld * pd * td + td * kd);
  return static_cast<double>(j) * static_cast<double>(b) * per_iter;
}

}  // namespace modbeam
