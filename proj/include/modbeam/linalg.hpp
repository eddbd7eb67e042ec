#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace modbeam {

using cplx = std::complex<double>;

inline constexpr double kLn2 = 0.6931471805599453094172321214581766;
inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Raised when a factorization meets a pivot below the conditioning
/// threshold, or when a result stops being finite.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SingularMatrixError : NumericalError {
  using NumericalError::NumericalError;
};

/// Dense row-major complex matrix. Value type; all operations below are
/// pure functions with a deterministic summation order, so identical inputs
/// give bitwise identical outputs.
class ComplexMatrix {
 public:
  ComplexMatrix() = default;
  ComplexMatrix(std::size_t rows, std::size_t cols, cplx fill = cplx{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static ComplexMatrix identity(std::size_t n) {
    ComplexMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  cplx& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const cplx& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  cplx* data() { return data_.data(); }
  const cplx* data() const { return data_.data(); }

  bool same_shape(const ComplexMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool operator==(const ComplexMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

  bool all_finite() const {
    for (const cplx& z : data_)
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<cplx> data_;
};

/// Dense row-major real matrix; holds per-entry hyperparameters and masks.
class RealMatrix {
 public:
  RealMatrix() = default;
  RealMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const double& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const RealMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool operator==(const RealMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Partitioning of an analog beamformer into P diagonal blocks of N x L.
/// Entry (i, j) of the full matrix belongs to the block support iff
/// floor(i/N) == floor(j/L), zero-based.
struct BlockDiagonalStructure {
  std::size_t panels = 1;          // P
  std::size_t rows_per_block = 1;  // N
  std::size_t cols_per_block = 1;  // L

  std::size_t total_rows() const { return panels * rows_per_block; }   // M
  std::size_t total_cols() const { return panels * cols_per_block; }   // L*P

  bool on_block(std::size_t i, std::size_t j) const {
    return i / rows_per_block == j / cols_per_block;
  }
};

namespace detail {
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}
}  // namespace detail

inline ComplexMatrix matmul(const ComplexMatrix& a, const ComplexMatrix& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ (" +
                                            std::to_string(a.cols()) + " vs " +
                                            std::to_string(b.rows()) + ")");
  ComplexMatrix c(a.rows(), b.cols());
  const std::size_t n = a.rows(), k_dim = a.cols(), m = b.cols();
  // i-k-j loop: per output entry the k-sum accumulates in ascending order,
  // matching the schoolbook left-to-right order bit for bit.
  for (std::size_t i = 0; i < n; ++i) {
    cplx* crow = c.data() + i * m;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const cplx aik = a(i, k);
      if (aik == cplx{}) continue;
      const cplx* brow = b.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

/// Conjugate transpose.
inline ComplexMatrix adjoint(const ComplexMatrix& a) {
  ComplexMatrix c(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) c(j, i) = std::conj(a(i, j));
  return c;
}

inline ComplexMatrix add(const ComplexMatrix& a, const ComplexMatrix& b) {
  detail::require(a.same_shape(b), "add: shape mismatch");
  ComplexMatrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

inline ComplexMatrix sub(const ComplexMatrix& a, const ComplexMatrix& b) {
  detail::require(a.same_shape(b), "sub: shape mismatch");
  ComplexMatrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

inline ComplexMatrix scale(const ComplexMatrix& a, double s) {
  ComplexMatrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= s;
  return c;
}

/// Elementwise product with a real matrix.
inline ComplexMatrix hadamard_real(const RealMatrix& r, const ComplexMatrix& a) {
  detail::require(r.rows() == a.rows() && r.cols() == a.cols(),
                  "hadamard_real: shape mismatch");
  ComplexMatrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= r.data()[i];
  return c;
}

inline double frobenius_norm(const ComplexMatrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::norm(a.data()[i]);
  return std::sqrt(s);
}

inline double max_abs_diff(const ComplexMatrix& a, const ComplexMatrix& b) {
  detail::require(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
/// A pivot below 1e-12 times the largest input diagonal is reported as
/// singular/ill-conditioned.
inline ComplexMatrix cholesky(const ComplexMatrix& m) {
  detail::require(m.rows() == m.cols(), "cholesky: matrix not square");
  const std::size_t n = m.rows();
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, m(i, i).real());
  const double floor = 1e-12 * max_diag;
  ComplexMatrix L(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      cplx s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= L(i, k) * std::conj(L(j, k));
      if (i == j) {
        const double d = s.real();
        if (!(d > floor) || !std::isfinite(d))
          throw SingularMatrixError(
              "cholesky: pivot " + std::to_string(d) + " below threshold at row " +
              std::to_string(i));
        L(i, i) = std::sqrt(d);
      } else {
        L(i, j) = s / L(j, j).real();
      }
    }
  }
  return L;
}

/// Solves L X = B for lower-triangular L.
inline ComplexMatrix solve_lower(const ComplexMatrix& L, const ComplexMatrix& b) {
  detail::require(L.rows() == L.cols() && L.rows() == b.rows(),
                  "solve_lower: shape mismatch");
  const std::size_t n = L.rows(), m = b.cols();
  ComplexMatrix x = b;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      const cplx f = L(i, k);
      if (f == cplx{}) continue;
      for (std::size_t j = 0; j < m; ++j) x(i, j) -= f * x(k, j);
    }
    const cplx d = L(i, i);
    for (std::size_t j = 0; j < m; ++j) x(i, j) /= d;
  }
  return x;
}

/// Solves L^H X = B for lower-triangular L.
inline ComplexMatrix solve_lower_adjoint(const ComplexMatrix& L, const ComplexMatrix& b) {
  detail::require(L.rows() == L.cols() && L.rows() == b.rows(),
                  "solve_lower_adjoint: shape mismatch");
  const std::size_t n = L.rows(), m = b.cols();
  ComplexMatrix x = b;
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) {
      const cplx f = std::conj(L(k, ii));
      if (f == cplx{}) continue;
      for (std::size_t j = 0; j < m; ++j) x(ii, j) -= f * x(k, j);
    }
    const cplx d = std::conj(L(ii, ii));
    for (std::size_t j = 0; j < m; ++j) x(ii, j) /= d;
  }
  return x;
}

/// Solves R X = B for upper-triangular R.
inline ComplexMatrix solve_upper(const ComplexMatrix& r, const ComplexMatrix& b) {
  detail::require(r.rows() == r.cols() && r.rows() == b.rows(),
                  "solve_upper: shape mismatch");
  const std::size_t n = r.rows(), m = b.cols();
  ComplexMatrix x = b;
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) {
      const cplx f = r(ii, k);
      if (f == cplx{}) continue;
      for (std::size_t j = 0; j < m; ++j) x(ii, j) -= f * x(k, j);
    }
    const cplx d = r(ii, ii);
    for (std::size_t j = 0; j < m; ++j) x(ii, j) /= d;
  }
  return x;
}

struct QrResult {
  ComplexMatrix q;  // thin, rows x cols, near-orthonormal columns
  ComplexMatrix r;  // cols x cols, upper triangular
};

/// Thin QR of a tall matrix by complex Householder reflections. Column k
/// maps to beta * e_k with beta = -e^{i arg(x_0)} ||x||, so diag(R) carries
/// the column norms up to phase.
inline QrResult householder_qr(const ComplexMatrix& a) {
  detail::require(a.rows() >= a.cols(), "householder_qr: matrix must be tall");
  const std::size_t m = a.rows(), n = a.cols();
  ComplexMatrix work = a;
  std::vector<std::vector<cplx>> reflectors;
  reflectors.reserve(n);
  // Applies (I - 2 v v^H / v^H v) to columns [col0, ncols) of `mat`,
  // restricted to rows k..m-1 where v lives.
  auto apply = [&](ComplexMatrix& mat, const std::vector<cplx>& v, std::size_t k) {
    double vnorm2 = 0.0;
    for (const cplx& z : v) vnorm2 += std::norm(z);
    if (vnorm2 == 0.0) return;
    for (std::size_t j = 0; j < mat.cols(); ++j) {
      cplx dot{};
      for (std::size_t i = k; i < m; ++i) dot += std::conj(v[i - k]) * mat(i, j);
      const cplx f = 2.0 * dot / vnorm2;
      for (std::size_t i = k; i < m; ++i) mat(i, j) -= f * v[i - k];
    }
  };
  for (std::size_t k = 0; k < n; ++k) {
    double norm2 = 0.0;
    for (std::size_t i = k; i < m; ++i) norm2 += std::norm(work(i, k));
    const double norm = std::sqrt(norm2);
    std::vector<cplx> v(m - k, cplx{});
    if (norm > 0.0) {
      const cplx x0 = work(k, k);
      const cplx phase = (x0 == cplx{}) ? cplx{1.0} : x0 / std::abs(x0);
      const cplx beta = -phase * norm;
      for (std::size_t i = k; i < m; ++i) v[i - k] = work(i, k);
      v[0] -= beta;
      apply(work, v, k);
      work(k, k) = beta;  // clean the column explicitly
      for (std::size_t i = k + 1; i < m; ++i) work(i, k) = cplx{};
    }
    reflectors.push_back(std::move(v));
  }
  QrResult out;
  out.r = ComplexMatrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) out.r(i, j) = work(i, j);
  out.q = ComplexMatrix(m, n);
  for (std::size_t i = 0; i < n; ++i) out.q(i, i) = 1.0;
  for (std::size_t k = n; k-- > 0;) apply(out.q, reflectors[k], k);
  return out;
}

/// Inverse of a Hermitian positive definite matrix via Cholesky.
inline ComplexMatrix inverse_hermitian_pd(const ComplexMatrix& m) {
  const ComplexMatrix L = cholesky(m);
  const std::size_t n = m.rows();
  // Solve L Y = I (forward), then L^H X = Y (backward), column by column.
  ComplexMatrix X(n, n);
  std::vector<cplx> y(n);
  for (std::size_t col = 0; col < n; ++col) {
    for (std::size_t i = 0; i < n; ++i) {
      cplx s = (i == col) ? cplx{1.0} : cplx{};
      for (std::size_t k = 0; k < i; ++k) s -= L(i, k) * y[k];
      y[i] = s / L(i, i).real();
    }
    for (std::size_t ii = n; ii-- > 0;) {
      cplx s = y[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= std::conj(L(k, ii)) * X(k, col);
      X(ii, col) = s / L(ii, ii).real();
    }
  }
  if (!X.all_finite()) throw NumericalError("inverse_hermitian_pd: non-finite result");
  return X;
}

/// Log-determinant of a Hermitian positive definite matrix in the
/// library-wide base 2 (rates are in bits). The Cholesky route keeps the
/// determinant real by construction.
inline double logdet_hermitian_pd(const ComplexMatrix& m) {
  const ComplexMatrix L = cholesky(m);
  double acc = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) acc += std::log(L(i, i).real());
  const double result = 2.0 * acc / kLn2;
  if (!std::isfinite(result)) throw NumericalError("logdet_hermitian_pd: non-finite result");
  return result;
}

/// Assembles blkdiag{W_1,...,W_P}; off-block entries are exactly zero.
inline ComplexMatrix blkdiag_compose(const std::vector<ComplexMatrix>& blocks,
                                     const BlockDiagonalStructure& structure) {
  detail::require(blocks.size() == structure.panels,
                  "blkdiag_compose: expected " + std::to_string(structure.panels) +
                      " blocks, got " + std::to_string(blocks.size()));
  for (const auto& blk : blocks)
    detail::require(blk.rows() == structure.rows_per_block &&
                        blk.cols() == structure.cols_per_block,
                    "blkdiag_compose: block has wrong shape");
  ComplexMatrix w(structure.total_rows(), structure.total_cols());
  for (std::size_t p = 0; p < structure.panels; ++p)
    for (std::size_t i = 0; i < structure.rows_per_block; ++i)
      for (std::size_t j = 0; j < structure.cols_per_block; ++j)
        w(p * structure.rows_per_block + i, p * structure.cols_per_block + j) =
            blocks[p](i, j);
  return w;
}

inline std::vector<ComplexMatrix> extract_blocks(const ComplexMatrix& w,
                                                 const BlockDiagonalStructure& structure) {
  detail::require(w.rows() == structure.total_rows() && w.cols() == structure.total_cols(),
                  "extract_blocks: matrix does not match structure");
  std::vector<ComplexMatrix> blocks;
  blocks.reserve(structure.panels);
  for (std::size_t p = 0; p < structure.panels; ++p) {
    ComplexMatrix blk(structure.rows_per_block, structure.cols_per_block);
    for (std::size_t i = 0; i < structure.rows_per_block; ++i)
      for (std::size_t j = 0; j < structure.cols_per_block; ++j)
        blk(i, j) = w(p * structure.rows_per_block + i, p * structure.cols_per_block + j);
    blocks.push_back(std::move(blk));
  }
  return blocks;
}

inline ComplexMatrix kronecker(const ComplexMatrix& a, const ComplexMatrix& b) {
  ComplexMatrix c(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t ia = 0; ia < a.rows(); ++ia)
    for (std::size_t ja = 0; ja < a.cols(); ++ja) {
      const cplx f = a(ia, ja);
      if (f == cplx{}) continue;
      for (std::size_t ib = 0; ib < b.rows(); ++ib)
        for (std::size_t jb = 0; jb < b.cols(); ++jb)
          c(ia * b.rows() + ib, ja * b.cols() + jb) = f * b(ib, jb);
    }
  return c;
}

inline RealMatrix kronecker(const RealMatrix& a, const RealMatrix& b) {
  RealMatrix c(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t ia = 0; ia < a.rows(); ++ia)
    for (std::size_t ja = 0; ja < a.cols(); ++ja) {
      const double f = a(ia, ja);
      if (f == 0.0) continue;
      for (std::size_t ib = 0; ib < b.rows(); ++ib)
        for (std::size_t jb = 0; jb < b.cols(); ++jb)
          c(ia * b.rows() + ib, ja * b.cols() + jb) = f * b(ib, jb);
    }
  return c;
}

/// Zeroes every off-block entry.
inline ComplexMatrix apply_block_mask(const ComplexMatrix& w,
                                      const BlockDiagonalStructure& structure) {
  detail::require(w.rows() == structure.total_rows() && w.cols() == structure.total_cols(),
                  "apply_block_mask: matrix does not match structure");
  ComplexMatrix c = w;
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j)
      if (!structure.on_block(i, j)) c(i, j) = cplx{};
  return c;
}

inline RealMatrix block_support_mask(const BlockDiagonalStructure& structure) {
  RealMatrix m(structure.total_rows(), structure.total_cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      m(i, j) = structure.on_block(i, j) ? 1.0 : 0.0;
  return m;
}

inline bool off_block_is_zero(const ComplexMatrix& w, const BlockDiagonalStructure& s) {
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      if (!s.on_block(i, j) && w(i, j) != cplx{}) return false;
  return true;
}

}  // namespace modbeam
