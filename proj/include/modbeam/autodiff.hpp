#pragma once

#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "modbeam/constraints.hpp"
#include "modbeam/linalg.hpp"

namespace modbeam::ad {

// Reverse-mode differentiation over complex matrices, unrolled onto a tape.
//
// Every complex entry is treated as a (real, imaginary) pair; the stored
// adjoint of a node X is the complex matrix
//     adj(X)_{kl} = dL/dRe(X_{kl}) + i * dL/dIm(X_{kl})
// (twice the conjugate Wirtinger derivative of the real loss L). Under this
// convention the matrix-product rule keeps its familiar form with conjugate
// transposes, and non-holomorphic elementwise maps combine both Wirtinger
// partials:
//     adj(z) += adj(w) * conj(dw/dz) + conj(adj(w)) * dw/dzbar.
//
// Hyperparameters are real matrices on the block support; their gradients
// are accumulated as Re(adj(out) .* conj(other input)).

enum class Op {
  constant,
  matmul,
  adjoint_op,     // conjugate transpose
  add,
  sub,
  scale_re,       // s * X, real s
  axpy_eye,       // I + s * X
  eye_minus,      // I - X
  inv_hpd,
  logdet2_hpd,    // 1x1, base-2 log-determinant
  ew_mul_param,   // param .* X, param real
  block_mask,
  unit_dir,       // z / |z| on the block support (0 -> 1)
  surr_mag,       // sigmoid-magnitude surrogate
  surr_phase,     // sum-of-sigmoids phase surrogate
  l1_norm,        // 1x1, sum of on-block |z|
  sq_diff_const,  // 1x1, (x - c)^2
  weighted_sum,   // 1x1, sum of w_i * x_i over 1x1 inputs
};

struct NodeRef {
  int id = -1;
};

class Tape {
 public:
  explicit Tape(BlockDiagonalStructure structure) : structure_(structure) {}

  // --- parameters ---------------------------------------------------------

  int add_parameter(const RealMatrix& value) {
    params_.push_back(value);
    param_grads_.emplace_back(value.rows(), value.cols(), 0.0);
    return static_cast<int>(params_.size()) - 1;
  }

  const RealMatrix& param_value(int pid) const { return params_[pid]; }
  const RealMatrix& param_grad(int pid) const { return param_grads_[pid]; }

  // --- graph construction --------------------------------------------------

  NodeRef constant(ComplexMatrix v) { return push(Op::constant, -1, -1, std::move(v)); }

  NodeRef matmul(NodeRef a, NodeRef b) {
    return push(Op::matmul, a.id, b.id, modbeam::matmul(val(a), val(b)));
  }

  NodeRef adjoint_of(NodeRef a) {
    return push(Op::adjoint_op, a.id, -1, modbeam::adjoint(val(a)));
  }

  NodeRef add(NodeRef a, NodeRef b) {
    return push(Op::add, a.id, b.id, modbeam::add(val(a), val(b)));
  }

  NodeRef sub(NodeRef a, NodeRef b) {
    return push(Op::sub, a.id, b.id, modbeam::sub(val(a), val(b)));
  }

  NodeRef scale_re(NodeRef a, double s) {
    NodeRef r = push(Op::scale_re, a.id, -1, modbeam::scale(val(a), s));
    nodes_[r.id].s0 = s;
    return r;
  }

  /// I + s*X for square X (the S_b = I + c H^H P H construction).
  NodeRef axpy_eye(NodeRef a, double s) {
    ComplexMatrix v = modbeam::scale(val(a), s);
    for (std::size_t i = 0; i < v.rows(); ++i) v(i, i) += 1.0;
    NodeRef r = push(Op::axpy_eye, a.id, -1, std::move(v));
    nodes_[r.id].s0 = s;
    return r;
  }

  NodeRef eye_minus(NodeRef a) {
    ComplexMatrix v = modbeam::sub(ComplexMatrix::identity(val(a).rows()), val(a));
    return push(Op::eye_minus, a.id, -1, std::move(v));
  }

  /// Hermitian-PD inverse with the same rank guard as the objective: a
  /// Cholesky diagonal ratio below 1e-10 (or factorization failure) adds a
  /// 1e-9 ridge and flags the tape.
  NodeRef inv_hpd(NodeRef a) {
    ComplexMatrix m = val(a);
    bool ridge = false;
    try {
      const ComplexMatrix chol = modbeam::cholesky(m);
      double dmin = chol(0, 0).real(), dmax = dmin;
      for (std::size_t i = 1; i < chol.rows(); ++i) {
        const double d = chol(i, i).real();
        dmin = std::min(dmin, d);
        dmax = std::max(dmax, d);
      }
      if (dmin * dmin < 1e-10 * dmax * dmax) ridge = true;
    } catch (const SingularMatrixError&) {
      ridge = true;
    }
    if (ridge) {
      rank_guard_hits_++;
      for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) += 1e-9;
    }
    return push(Op::inv_hpd, a.id, -1, modbeam::inverse_hermitian_pd(m));
  }

  NodeRef logdet2_hpd(NodeRef a) {
    ComplexMatrix v(1, 1, cplx{modbeam::logdet_hermitian_pd(val(a)), 0.0});
    return push(Op::logdet2_hpd, a.id, -1, std::move(v));
  }

  NodeRef ew_mul_param(int pid, NodeRef a) {
    NodeRef r = push(Op::ew_mul_param, a.id, -1,
                     modbeam::hadamard_real(params_[pid], val(a)));
    nodes_[r.id].pid = pid;
    return r;
  }

  NodeRef block_mask(NodeRef a) {
    return push(Op::block_mask, a.id, -1, modbeam::apply_block_mask(val(a), structure_));
  }

  NodeRef unit_dir(NodeRef a) {
    note_small_inputs(val(a));
    return push(Op::unit_dir, a.id, -1, project_unit_modulus(val(a), structure_));
  }

  NodeRef surr_mag(NodeRef a, const SurrogateSpec& sur) {
    note_small_inputs(val(a));
    NodeRef r = push(Op::surr_mag, a.id, -1, surrogate_magnitude(val(a), structure_, sur));
    nodes_[r.id].s0 = sur.s_m;
    nodes_[r.id].s1 = sur.zeta_m;
    return r;
  }

  NodeRef surr_phase(NodeRef a, std::size_t q, const SurrogateSpec& sur) {
    note_small_inputs(val(a));
    NodeRef r = push(Op::surr_phase, a.id, -1, surrogate_phase(val(a), structure_, q, sur));
    nodes_[r.id].s0 = sur.s_p;
    nodes_[r.id].q = q;
    return r;
  }

  NodeRef l1_norm(NodeRef a) {
    double acc = 0.0;
    const ComplexMatrix& w = val(a);
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j)
        if (structure_.on_block(i, j)) acc += std::abs(w(i, j));
    return push(Op::l1_norm, a.id, -1, ComplexMatrix(1, 1, cplx{acc, 0.0}));
  }

  NodeRef sq_diff_const(NodeRef a, double c) {
    const double x = val(a)(0, 0).real();
    NodeRef r = push(Op::sq_diff_const, a.id, -1,
                     ComplexMatrix(1, 1, cplx{(x - c) * (x - c), 0.0}));
    nodes_[r.id].s0 = c;
    return r;
  }

  NodeRef weighted_sum(const std::vector<NodeRef>& terms, const std::vector<double>& w) {
    if (terms.size() != w.size())
      throw std::invalid_argument("weighted_sum: term/weight count mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) acc += w[i] * val(terms[i])(0, 0).real();
    NodeRef r = push(Op::weighted_sum, -1, -1, ComplexMatrix(1, 1, cplx{acc, 0.0}));
    for (const NodeRef& t : terms) nodes_[r.id].multi.push_back(t.id);
    nodes_[r.id].weights = w;
    return r;
  }

  // --- access ---------------------------------------------------------------

  const ComplexMatrix& val(NodeRef r) const { return nodes_[r.id].value; }
  std::size_t node_count() const { return nodes_.size(); }
  int rank_guard_hits() const { return rank_guard_hits_; }
  int nondifferentiable_hits() const { return nondiff_hits_; }

  // --- reverse pass ----------------------------------------------------------

  void backward(NodeRef root) {
    adjoint_of_node(root.id)(0, 0) += 1.0;
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.has_adjoint) continue;
      propagate(n);
    }
  }

 private:
  struct Node {
    Op op;
    int a = -1, b = -1;
    int pid = -1;
    double s0 = 0.0, s1 = 0.0;
    std::size_t q = 0;
    std::vector<int> multi;
    std::vector<double> weights;
    ComplexMatrix value;
    ComplexMatrix adjoint;
    bool has_adjoint = false;
  };

  NodeRef push(Op op, int a, int b, ComplexMatrix v) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return NodeRef{static_cast<int>(nodes_.size()) - 1};
  }

  ComplexMatrix& adjoint_of_node(int id) {
    Node& n = nodes_[id];
    if (!n.has_adjoint) {
      n.adjoint = ComplexMatrix(n.value.rows(), n.value.cols());
      n.has_adjoint = true;
    }
    return n.adjoint;
  }

  void accumulate(int id, const ComplexMatrix& delta) {
    if (id < 0) return;
    ComplexMatrix& a = adjoint_of_node(id);
    for (std::size_t e = 0; e < a.size(); ++e) a.data()[e] += delta.data()[e];
  }

  void note_small_inputs(const ComplexMatrix& w) {
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j)
        if (structure_.on_block(i, j) && std::abs(w(i, j)) < 1e-12) ++nondiff_hits_;
  }

  void propagate(Node& n) {
    const ComplexMatrix& g = n.adjoint;
    switch (n.op) {
      case Op::constant:
        break;
      case Op::matmul: {
        accumulate(n.a, modbeam::matmul(g, modbeam::adjoint(nodes_[n.b].value)));
        accumulate(n.b, modbeam::matmul(modbeam::adjoint(nodes_[n.a].value), g));
        break;
      }
      case Op::adjoint_op:
        accumulate(n.a, modbeam::adjoint(g));
        break;
      case Op::add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::sub:
        accumulate(n.a, g);
        accumulate(n.b, modbeam::scale(g, -1.0));
        break;
      case Op::scale_re:
      case Op::axpy_eye:
        accumulate(n.a, modbeam::scale(g, n.s0));
        break;
      case Op::eye_minus:
        accumulate(n.a, modbeam::scale(g, -1.0));
        break;
      case Op::inv_hpd: {
        const ComplexMatrix yh = modbeam::adjoint(n.value);
        ComplexMatrix t = modbeam::matmul(yh, g);
        t = modbeam::matmul(t, yh);
        accumulate(n.a, modbeam::scale(t, -1.0));
        break;
      }
      case Op::logdet2_hpd: {
        const double gy = g(0, 0).real();
        ComplexMatrix inv = modbeam::inverse_hermitian_pd(nodes_[n.a].value);
        accumulate(n.a, modbeam::scale(modbeam::adjoint(inv), gy / kLn2));
        break;
      }
      case Op::ew_mul_param: {
        const RealMatrix& p = params_[n.pid];
        RealMatrix& pg = param_grads_[n.pid];
        const ComplexMatrix& x = nodes_[n.a].value;
        ComplexMatrix dx(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) {
            dx(i, j) = p(i, j) * g(i, j);
            if (structure_.on_block(i, j))
              pg(i, j) += (g(i, j) * std::conj(x(i, j))).real();
          }
        accumulate(n.a, dx);
        break;
      }
      case Op::block_mask: {
        ComplexMatrix dx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j)
            if (structure_.on_block(i, j)) dx(i, j) = g(i, j);
        accumulate(n.a, dx);
        break;
      }
      case Op::unit_dir: {
        const ComplexMatrix& z = nodes_[n.a].value;
        ComplexMatrix dx(z.rows(), z.cols());
        for (std::size_t i = 0; i < z.rows(); ++i)
          for (std::size_t j = 0; j < z.cols(); ++j) {
            if (!structure_.on_block(i, j)) continue;
            const cplx zz = z(i, j);
            const double r = std::abs(zz);
            if (r < 1e-12) continue;  // gradient frozen at the convention point
            const cplx gw = g(i, j);
            dx(i, j) = gw * (0.5 / r) - std::conj(gw) * (zz * zz) / (2.0 * r * r * r);
          }
        accumulate(n.a, dx);
        break;
      }
      case Op::surr_mag: {
        const double sm = n.s0, zm = n.s1;
        const ComplexMatrix& z = nodes_[n.a].value;
        ComplexMatrix dx(z.rows(), z.cols());
        for (std::size_t i = 0; i < z.rows(); ++i)
          for (std::size_t j = 0; j < z.cols(); ++j) {
            if (!structure_.on_block(i, j)) continue;
            const cplx zz = z(i, j);
            const double r = std::abs(zz);
            if (r < 1e-12) continue;
            const double m = sigmoid(sm * (r - zm));
            const double mp = sm * m * (1.0 - m);
            const double f = m / r;
            const double fp = (mp * r - m) / (r * r);
            const cplx gw = g(i, j);
            // dw/dz = f + r f'/2 (real), dw/dzbar = z^2 f'/(2r)
            dx(i, j) = gw * (f + 0.5 * r * fp) + std::conj(gw) * (zz * zz * fp / (2.0 * r));
          }
        accumulate(n.a, dx);
        break;
      }
      case Op::surr_phase: {
        const double sp = n.s0;
        const std::size_t q = n.q;
        const ComplexMatrix& z = nodes_[n.a].value;
        const ComplexMatrix& w = n.value;
        ComplexMatrix dx(z.rows(), z.cols());
        for (std::size_t i = 0; i < z.rows(); ++i)
          for (std::size_t j = 0; j < z.cols(); ++j) {
            if (!structure_.on_block(i, j)) continue;
            const cplx zz = z(i, j);
            const double r = std::abs(zz);
            if (r < 1e-12) continue;
            const double psi = std::atan2(zz.imag(), zz.real());
            double slope = 0.0;  // d(staircase)/d(psi)
            for (std::size_t qq = 1; qq <= q; ++qq) {
              const double boundary =
                  kTwoPi * (static_cast<double>(qq) - 0.5) / static_cast<double>(q);
              const double s = sigmoid(sp * (psi - boundary + kPi));
              slope += sp * s * (1.0 - s);
            }
            slope *= kTwoPi / static_cast<double>(q);
            const cplx gw = g(i, j);
            // phase-only map: adj(z) = i * slope * Im(adj(w) conj(w)) / conj(z)
            const double tangential = (gw * std::conj(w(i, j))).imag();
            dx(i, j) = cplx{0.0, 1.0} * (slope * tangential) / std::conj(zz);
          }
        accumulate(n.a, dx);
        break;
      }
      case Op::l1_norm: {
        const double gy = g(0, 0).real();
        const ComplexMatrix& z = nodes_[n.a].value;
        ComplexMatrix dx(z.rows(), z.cols());
        for (std::size_t i = 0; i < z.rows(); ++i)
          for (std::size_t j = 0; j < z.cols(); ++j) {
            if (!structure_.on_block(i, j)) continue;
            const cplx zz = z(i, j);
            const double r = std::abs(zz);
            if (r < 1e-12) continue;
            dx(i, j) = gy * zz / r;
          }
        accumulate(n.a, dx);
        break;
      }
      case Op::sq_diff_const: {
        const double x = nodes_[n.a].value(0, 0).real();
        ComplexMatrix dx(1, 1, cplx{2.0 * (x - n.s0) * g(0, 0).real(), 0.0});
        accumulate(n.a, dx);
        break;
      }
      case Op::weighted_sum: {
        const double gy = g(0, 0).real();
        for (std::size_t i = 0; i < n.multi.size(); ++i) {
          ComplexMatrix dx(1, 1, cplx{n.weights[i] * gy, 0.0});
          accumulate(n.multi[i], dx);
        }
        break;
      }
    }
  }

  BlockDiagonalStructure structure_;
  std::vector<Node> nodes_;
  std::vector<RealMatrix> params_;
  std::vector<RealMatrix> param_grads_;
  int rank_guard_hits_ = 0;
  int nondiff_hits_ = 0;
};

}  // namespace modbeam::ad
