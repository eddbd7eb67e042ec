#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "modbeam/autodiff.hpp"
#include "modbeam/channel.hpp"
#include "modbeam/constraints.hpp"
#include "modbeam/linalg.hpp"
#include "modbeam/objective.hpp"
#include "modbeam/optimizer.hpp"
#include "modbeam/parallel.hpp"

namespace modbeam {

enum class LossKind {
  unconstrained,       // C1 forward with exact unit-modulus projection
  power_aware_sparse,  // C2 forward with the magnitude surrogate + l1 penalty
  quantized,           // C3 forward with the phase surrogate
};

/// Everything a loss evaluation needs besides (theta, A, batch, p).
struct LossOptions {
  LossKind kind = LossKind::unconstrained;
  ProjectionSpec projection;  // kind must agree with the loss kind
  SurrogateSpec surrogate;
  double gamma = 0.0;   // weight of the (l1 - S_max)^2 penalty
  double s_max = 0.0;   // active-component budget
  double sigma_e2 = 0.0;        // CSI-noise variance for robust training
  std::uint64_t noise_seed = 0; // stream for the CSI noise draws

  static LossOptions unconstrained_for(const BlockDiagonalStructure& s) {
    LossOptions o;
    o.kind = LossKind::unconstrained;
    o.projection = ProjectionSpec::unit(s);
    return o;
  }
  static LossOptions sparse_for(const BlockDiagonalStructure& s, double gamma,
                                double s_max, double zeta = 0.5) {
    LossOptions o;
    o.kind = LossKind::power_aware_sparse;
    o.projection = ProjectionSpec::sparse_at(s, zeta);
    o.gamma = gamma;
    o.s_max = s_max;
    return o;
  }
  static LossOptions quantized_for(const BlockDiagonalStructure& s, std::size_t q) {
    LossOptions o;
    o.kind = LossKind::quantized;
    o.projection = ProjectionSpec::quantized_at(s, q);
    return o;
  }
};

struct LossReport {
  double total = 0.0;
  std::vector<double> per_iteration;  // J terms, weights log(1+j)
  double penalty = 0.0;               // mean squared l1 budget miss (pre-gamma)
  double gamma = 0.0;
  bool any_flagged = false;

  double weighted_component_sum() const {
    double s = 0.0;
    for (double t : per_iteration) s += t;
    return s + gamma * penalty;
  }
};

inline double l1_norm_on_block(const ComplexMatrix& w, const BlockDiagonalStructure& s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      if (s.on_block(i, j)) acc += std::abs(w(i, j));
  return acc;
}

namespace detail {

/// W_0 seed for sample index i of a dataset: a fixed function of the dataset
/// seed, so every method sharing a dataset shares initial beamformers.
inline std::uint64_t w0_seed_for(const ChannelDataset& d, std::size_t index) {
  return Rng::derive(d.seed, index);
}

struct SampleLossParts {
  std::vector<double> rates;  // rate at W_1..W_J (clean channel)
  double l1_final = 0.0;
  bool flagged = false;
};

/// Forward pass for one sample in training mode (surrogate projections).
/// For robust training the trajectory runs on `h_opt` while the rates that
/// enter the loss are evaluated on `h_clean`.
inline SampleLossParts sample_loss_parts(const HyperparameterSet& theta,
                                         const ConnectivityMatrix& a,
                                         const ChannelRealization& h_opt,
                                         const ChannelRealization* h_clean,
                                         const SystemParams& p, const LossOptions& o,
                                         std::uint64_t init_seed) {
  const Trajectory traj = run_unfolded(theta, a, h_opt, p, o.projection,
                                       ProjectionMode::surrogate, init_seed, o.surrogate);
  SampleLossParts parts;
  parts.flagged = traj.any_flagged();
  const std::size_t j_count = theta.iterations();
  parts.rates.resize(j_count);
  for (std::size_t j = 1; j <= j_count; ++j) {
    if (h_clean == nullptr) {
      parts.rates[j - 1] = traj.rates[j];
    } else {
      bool flag = false;
      parts.rates[j - 1] =
          sum_rate(traj.iterates[j], a, *h_clean, p, theta.structure, &flag);
      parts.flagged = parts.flagged || flag;
    }
  }
  parts.l1_final = l1_norm_on_block(traj.final_beamformer(), theta.structure);
  return parts;
}

inline LossReport assemble_report(const std::vector<SampleLossParts>& parts,
                                  std::size_t j_count, const LossOptions& o) {
  LossReport rep;
  rep.gamma = (o.kind == LossKind::power_aware_sparse) ? o.gamma : 0.0;
  rep.per_iteration.assign(j_count, 0.0);
  const double inv_n = 1.0 / static_cast<double>(parts.size());
  for (const auto& s : parts) rep.any_flagged = rep.any_flagged || s.flagged;
  for (std::size_t j = 1; j <= j_count; ++j) {
    double acc = 0.0;
    for (const auto& s : parts) acc += s.rates[j - 1];
    rep.per_iteration[j - 1] = -std::log(1.0 + static_cast<double>(j)) * acc * inv_n;
  }
  if (rep.gamma != 0.0 || o.kind == LossKind::power_aware_sparse) {
    double acc = 0.0;
    for (const auto& s : parts) {
      const double miss = s.l1_final - o.s_max;
      acc += miss * miss;
    }
    rep.penalty = acc * inv_n;
  }
  rep.total = rep.weighted_component_sum();
  return rep;
}

}  // namespace detail

/// As evaluate_loss below, with explicit per-sample W_0 seeds (the trainer
/// keeps each sample's seed tied to its dataset index across shuffles).
inline LossReport evaluate_loss_seeded(const HyperparameterSet& theta,
                                       const ConnectivityMatrix& a,
                                       const ChannelDataset& batch, const SystemParams& p,
                                       const LossOptions& o,
                                       const std::vector<std::uint64_t>& w0_seeds) {
  if (batch.size() == 0) throw std::invalid_argument("evaluate_loss: empty batch");
  if (w0_seeds.size() != batch.size())
    throw std::invalid_argument("evaluate_loss: seed/sample count mismatch");
  std::vector<detail::SampleLossParts> parts(batch.size());
  std::vector<ChannelRealization> noisy;
  const bool robust = o.sigma_e2 > 0.0;
  if (robust) {
    noisy.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      noisy[i] = perturb_csi(batch.samples[i], o.sigma_e2, Rng::derive(o.noise_seed, i));
  }
  parallel_for(batch.size(), [&](std::size_t i) {
    const ChannelRealization& opt = robust ? noisy[i] : batch.samples[i];
    const ChannelRealization* clean = robust ? &batch.samples[i] : nullptr;
    parts[i] = detail::sample_loss_parts(theta, a, opt, clean, p, o, w0_seeds[i]);
  });
  return detail::assemble_report(parts, theta.iterations(), o);
}

inline std::vector<std::uint64_t> default_w0_seeds(const ChannelDataset& batch) {
  std::vector<std::uint64_t> seeds(batch.size());
  for (std::size_t i = 0; i < seeds.size(); ++i)
    seeds[i] = detail::w0_seed_for(batch, i);
  return seeds;
}

/// General training loss; the named wrappers below fix the usual cases.
inline LossReport evaluate_loss(const HyperparameterSet& theta, const ConnectivityMatrix& a,
                                const ChannelDataset& batch, const SystemParams& p,
                                const LossOptions& o) {
  return evaluate_loss_seeded(theta, a, batch, p, o, default_w0_seeds(batch));
}

/// Eq.-(12)-style loss with logarithmic per-iteration weights, C1 forward.
inline LossReport unfolded_loss(const HyperparameterSet& theta, const ConnectivityMatrix& a,
                                const ChannelDataset& batch, const SystemParams& p) {
  return evaluate_loss(theta, a, batch, p,
                       LossOptions::unconstrained_for(theta.structure));
}

/// unfolded_loss plus gamma * (||W_J||_1 - S_max)^2 averaged over the batch;
/// the forward pass runs the magnitude surrogate.
inline LossReport power_aware_loss(const HyperparameterSet& theta,
                                   const ConnectivityMatrix& a, const ChannelDataset& batch,
                                   const SystemParams& p, double gamma, double s_max) {
  if (gamma < 0.0) throw std::invalid_argument("power_aware_loss: gamma must be >= 0");
  return evaluate_loss(theta, a, batch, p,
                       LossOptions::sparse_for(theta.structure, gamma, s_max));
}

/// CSI-robust loss: trajectories on H + E, rates on the clean H.
inline LossReport robust_loss(const HyperparameterSet& theta, const ConnectivityMatrix& a,
                              const ChannelDataset& batch, const SystemParams& p,
                              double sigma_e2, std::uint64_t seed) {
  if (sigma_e2 < 0.0) throw std::invalid_argument("robust_loss: negative variance");
  LossOptions o = LossOptions::unconstrained_for(theta.structure);
  o.sigma_e2 = sigma_e2;
  o.noise_seed = seed;
  return evaluate_loss(theta, a, batch, p, o);
}

/// Per-entry partials of the loss with respect to every alpha_j, beta_j and
/// lambda_j (block support only).
struct ThetaGradient {
  std::vector<RealMatrix> alpha, beta, lambda;

  void scale_by(double s) {
    auto mul = [s](std::vector<RealMatrix>& v) {
      for (auto& m : v)
        for (std::size_t e = 0; e < m.size(); ++e) m.data()[e] *= s;
    };
    mul(alpha);
    mul(beta);
    mul(lambda);
  }

  void accumulate(const ThetaGradient& o) {
    auto acc = [](std::vector<RealMatrix>& dst, const std::vector<RealMatrix>& src) {
      for (std::size_t j = 0; j < dst.size(); ++j)
        for (std::size_t e = 0; e < dst[j].size(); ++e)
          dst[j].data()[e] += src[j].data()[e];
    };
    acc(alpha, o.alpha);
    acc(beta, o.beta);
    acc(lambda, o.lambda);
  }

  double max_abs() const {
    double m = 0.0;
    auto scan = [&m](const std::vector<RealMatrix>& v) {
      for (const auto& mat : v)
        for (std::size_t e = 0; e < mat.size(); ++e)
          m = std::max(m, std::abs(mat.data()[e]));
    };
    scan(alpha);
    scan(beta);
    scan(lambda);
    return m;
  }

  static ThetaGradient zeros_like(const HyperparameterSet& theta) {
    ThetaGradient g;
    const std::size_t r = theta.structure.total_rows(), c = theta.structure.total_cols();
    g.alpha.assign(theta.iterations(), RealMatrix(r, c));
    g.beta.assign(theta.iterations(), RealMatrix(r, c));
    g.lambda.assign(theta.iterations(), RealMatrix(r, c));
    return g;
  }
};

struct GradientResult {
  ThetaGradient grad;
  LossReport report;
  int rank_guard_hits = 0;
  int nondifferentiable_hits = 0;
};

namespace detail {

struct SampleTapeOut {
  ThetaGradient grad;
  std::vector<double> rates;
  double l1_final = 0.0;
  double sample_loss = 0.0;
  int guard_hits = 0;
  int nondiff_hits = 0;
};

/// Unrolls the full forward computation of one sample onto a tape — the
/// analytic rate gradient is itself part of the graph, so differentiating
/// the loss goes through second-order structure automatically — and runs the
/// reverse pass.
inline SampleTapeOut sample_gradient(const HyperparameterSet& theta,
                                     const ConnectivityMatrix& a,
                                     const ChannelRealization& h_opt,
                                     const ChannelRealization* h_clean,
                                     const SystemParams& p, const LossOptions& o,
                                     std::uint64_t init_seed) {
  using ad::NodeRef;
  const BlockDiagonalStructure& st = theta.structure;
  const std::size_t j_count = theta.iterations();
  const std::size_t bins = h_opt.bins();
  const double c = p.snr();
  const double inv_b = 1.0 / static_cast<double>(bins);

  ad::Tape tape(st);
  std::vector<int> pid_alpha(j_count), pid_beta(j_count), pid_lambda(j_count);
  for (std::size_t j = 0; j < j_count; ++j) {
    pid_alpha[j] = tape.add_parameter(theta.alpha[j]);
    pid_beta[j] = tape.add_parameter(theta.beta[j]);
    pid_lambda[j] = tape.add_parameter(theta.lambda[j]);
  }

  const NodeRef a_node = tape.constant(a.a);
  std::vector<NodeRef> h_nodes, hh_nodes;           // optimizer channel
  std::vector<NodeRef> hc_nodes, hch_nodes;         // loss channel (clean)
  for (std::size_t bb = 0; bb < bins; ++bb) {
    h_nodes.push_back(tape.constant(h_opt.per_bin[bb]));
    hh_nodes.push_back(tape.constant(adjoint(h_opt.per_bin[bb])));
  }
  const bool separate_loss_channel = (h_clean != nullptr);
  if (separate_loss_channel) {
    for (std::size_t bb = 0; bb < bins; ++bb) {
      hc_nodes.push_back(tape.constant(h_clean->per_bin[bb]));
      hch_nodes.push_back(tape.constant(adjoint(h_clean->per_bin[bb])));
    }
  }

  // Projector pieces at iterate W; returns {gdag, proj}.
  auto projector_at = [&](NodeRef w) {
    const NodeRef g = tape.matmul(w, a_node);
    const NodeRef gh = tape.adjoint_of(g);
    const NodeRef gram = tape.matmul(gh, g);
    const NodeRef gram_inv = tape.inv_hpd(gram);
    const NodeRef gdag = tape.matmul(gram_inv, gh);
    const NodeRef proj = tape.matmul(g, gdag);
    return std::pair<NodeRef, NodeRef>(gdag, proj);
  };
  auto s_matrix_at = [&](NodeRef proj, std::size_t bb, bool clean) {
    const NodeRef& h = clean ? hc_nodes[bb] : h_nodes[bb];
    const NodeRef& hh = clean ? hch_nodes[bb] : hh_nodes[bb];
    const NodeRef ph = tape.matmul(proj, h);
    return tape.axpy_eye(tape.matmul(hh, ph), c);
  };

  NodeRef w = tape.constant(init_beamformer(st, init_seed).matrix);
  NodeRef w_prev = tape.constant(
      ComplexMatrix(st.total_rows(), st.total_cols()));  // W_{-1} = 0

  std::vector<NodeRef> rate_nodes;      // per (j, b), j = 1..J
  std::vector<double> rate_weights;
  rate_nodes.reserve(j_count * bins);

  for (std::size_t j = 0; j < j_count; ++j) {
    auto [gdag, proj] = projector_at(w);
    const NodeRef imp = tape.eye_minus(proj);
    NodeRef gsum{-1};
    for (std::size_t bb = 0; bb < bins; ++bb) {
      const NodeRef s = s_matrix_at(proj, bb, false);
      if (j >= 1 && !separate_loss_channel) {
        rate_nodes.push_back(tape.logdet2_hpd(s));
        rate_weights.push_back(-std::log(1.0 + static_cast<double>(j)) * inv_b);
      }
      const NodeRef s_inv = tape.inv_hpd(s);
      const NodeRef gdh = tape.matmul(gdag, h_nodes[bb]);
      const NodeRef t1 = tape.matmul(gdh, s_inv);
      const NodeRef t2 = tape.matmul(t1, hh_nodes[bb]);
      const NodeRef t3 = tape.matmul(t2, imp);
      const NodeRef t4 = tape.matmul(a_node, t3);
      const NodeRef term = tape.adjoint_of(t4);
      gsum = (bb == 0) ? term : tape.add(gsum, term);
    }
    if (j >= 1 && separate_loss_channel) {
      // The projector depends only on W, so the clean-channel rates reuse it.
      for (std::size_t bb = 0; bb < bins; ++bb) {
        rate_nodes.push_back(tape.logdet2_hpd(s_matrix_at(proj, bb, true)));
        rate_weights.push_back(-std::log(1.0 + static_cast<double>(j)) * inv_b);
      }
    }
    NodeRef grad = tape.block_mask(tape.scale_re(gsum, c * inv_b));
    // The l1 direction term is kept in-graph even at lambda = 0 so the
    // lambda partials stay defined for every loss kind.
    grad = tape.sub(grad, tape.ew_mul_param(pid_lambda[j], tape.unit_dir(w)));
    NodeRef step = tape.add(w, tape.ew_mul_param(pid_alpha[j], grad));
    step = tape.add(step, tape.ew_mul_param(pid_beta[j], tape.sub(w, w_prev)));
    NodeRef w_next{-1};
    switch (o.kind) {
      case LossKind::unconstrained:
        w_next = tape.unit_dir(step);
        break;
      case LossKind::power_aware_sparse:
        w_next = tape.surr_mag(step, o.surrogate);
        break;
      case LossKind::quantized:
        w_next = tape.surr_phase(step, o.projection.q, o.surrogate);
        break;
    }
    w_prev = w;
    w = w_next;
  }

  // Rate of the final iterate W_J.
  {
    auto [gdag, proj] = projector_at(w);
    (void)gdag;
    for (std::size_t bb = 0; bb < bins; ++bb) {
      rate_nodes.push_back(tape.logdet2_hpd(s_matrix_at(proj, bb, separate_loss_channel)));
      rate_weights.push_back(-std::log(1.0 + static_cast<double>(j_count)) * inv_b);
    }
  }

  std::vector<NodeRef> loss_terms = rate_nodes;
  std::vector<double> loss_weights = rate_weights;
  NodeRef l1_node{-1};
  if (o.kind == LossKind::power_aware_sparse) {
    l1_node = tape.l1_norm(w);
    loss_terms.push_back(tape.sq_diff_const(l1_node, o.s_max));
    loss_weights.push_back(o.gamma);
  }
  const NodeRef loss = tape.weighted_sum(loss_terms, loss_weights);
  tape.backward(loss);

  SampleTapeOut out;
  out.sample_loss = tape.val(loss)(0, 0).real();
  out.rates.assign(j_count, 0.0);
  for (std::size_t idx = 0; idx < rate_nodes.size(); ++idx) {
    const std::size_t j = idx / bins + 1;
    out.rates[j - 1] += tape.val(rate_nodes[idx])(0, 0).real() * inv_b;
  }
  if (l1_node.id >= 0) out.l1_final = tape.val(l1_node)(0, 0).real();
  out.guard_hits = tape.rank_guard_hits();
  out.nondiff_hits = tape.nondifferentiable_hits();
  out.grad.alpha.reserve(j_count);
  for (std::size_t j = 0; j < j_count; ++j) {
    out.grad.alpha.push_back(tape.param_grad(pid_alpha[j]));
    out.grad.beta.push_back(tape.param_grad(pid_beta[j]));
    out.grad.lambda.push_back(tape.param_grad(pid_lambda[j]));
  }
  return out;
}

}  // namespace detail

/// Reverse-mode gradient of the chosen loss over a batch. Per-sample tapes
/// may run concurrently; accumulation is in sample-index order.
inline GradientResult hyperparameter_gradient_seeded(
    const HyperparameterSet& theta, const ConnectivityMatrix& a,
    const ChannelDataset& batch, const SystemParams& p, const LossOptions& o,
    const std::vector<std::uint64_t>& w0_seeds) {
  if (batch.size() == 0)
    throw std::invalid_argument("hyperparameter_gradient: empty batch");
  if (w0_seeds.size() != batch.size())
    throw std::invalid_argument("hyperparameter_gradient: seed/sample count mismatch");
  const std::size_t n = batch.size();
  std::vector<ChannelRealization> noisy;
  const bool robust = o.sigma_e2 > 0.0;
  if (robust) {
    noisy.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      noisy[i] = perturb_csi(batch.samples[i], o.sigma_e2, Rng::derive(o.noise_seed, i));
  }
  std::vector<detail::SampleTapeOut> outs(n);
  parallel_for(n, [&](std::size_t i) {
    const ChannelRealization& opt = robust ? noisy[i] : batch.samples[i];
    const ChannelRealization* clean = robust ? &batch.samples[i] : nullptr;
    outs[i] = detail::sample_gradient(theta, a, opt, clean, p, o, w0_seeds[i]);
  });

  GradientResult res;
  res.grad = ThetaGradient::zeros_like(theta);
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<detail::SampleLossParts> parts(n);
  for (std::size_t i = 0; i < n; ++i) {
    res.grad.accumulate(outs[i].grad);
    res.rank_guard_hits += outs[i].guard_hits;
    res.nondifferentiable_hits += outs[i].nondiff_hits;
    parts[i].rates = outs[i].rates;
    parts[i].l1_final = outs[i].l1_final;
    parts[i].flagged = outs[i].guard_hits > 0;
  }
  res.grad.scale_by(inv_n);
  res.report = detail::assemble_report(parts, theta.iterations(), o);
  return res;
}

inline GradientResult hyperparameter_gradient(const HyperparameterSet& theta,
                                              const ConnectivityMatrix& a,
                                              const ChannelDataset& batch,
                                              const SystemParams& p,
                                              const LossOptions& o) {
  return hyperparameter_gradient_seeded(theta, a, batch, p, o, default_w0_seeds(batch));
}

/// Central finite differences over every theta entry; the independent check
/// for the reverse-mode path, and a usable (if slow) fallback trainer at
/// small scale.
inline ThetaGradient fd_gradient_oracle(const HyperparameterSet& theta,
                                        const ConnectivityMatrix& a,
                                        const ChannelDataset& batch,
                                        const SystemParams& p, const LossOptions& o,
                                        double step) {
  if (!(step > 0.0)) throw std::invalid_argument("fd_gradient_oracle: step must be > 0");
  ThetaGradient g = ThetaGradient::zeros_like(theta);
  HyperparameterSet probe = theta;
  const BlockDiagonalStructure& st = theta.structure;
  auto sweep = [&](std::vector<RealMatrix>& mats, std::vector<RealMatrix>& out) {
    for (std::size_t j = 0; j < mats.size(); ++j)
      for (std::size_t i = 0; i < mats[j].rows(); ++i)
        for (std::size_t k = 0; k < mats[j].cols(); ++k) {
          if (!st.on_block(i, k)) continue;
          const double saved = mats[j](i, k);
          mats[j](i, k) = saved + step;
          const double up = evaluate_loss(probe, a, batch, p, o).total;
          mats[j](i, k) = saved - step;
          const double dn = evaluate_loss(probe, a, batch, p, o).total;
          mats[j](i, k) = saved;
          out[j](i, k) = (up - dn) / (2.0 * step);
        }
  };
  sweep(probe.alpha, g.alpha);
  sweep(probe.beta, g.beta);
  sweep(probe.lambda, g.lambda);
  return g;
}

struct TrainingConfig {
  double eta = 0.1;            // SGD learning rate
  std::size_t epochs = 40;     // i_max
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;      // shuffling + CSI-noise streams
};

struct TrainResult {
  HyperparameterSet theta;
  std::vector<double> epoch_loss;  // mean training loss per epoch
  bool diverged = false;
  int nondifferentiable_hits = 0;
};

/// Default theta of Alg.-2 style initialization: alpha = 0.05, beta = 0.5 on
/// the block support; lambda = 0.01 for the sparse power-aware kind, else 0.
inline HyperparameterSet default_theta_init(std::size_t j,
                                            const BlockDiagonalStructure& s,
                                            LossKind kind) {
  const double lambda0 = (kind == LossKind::power_aware_sparse) ? 0.01 : 0.0;
  return scalar_hyperparameters(j, 0.05, 0.5, s, lambda0);
}

/// Mini-batch SGD over the hyperparameters. Shuffles per epoch from the
/// config seed; a NaN loss aborts with the last finite theta. lambda is
/// projected back to >= 0 after each update and is trained only for the
/// power-aware kinds.
inline TrainResult train(const HyperparameterSet& theta_init, const ConnectivityMatrix& a,
                         const ChannelDataset& dataset, const SystemParams& p,
                         const TrainingConfig& cfg, const LossOptions& options) {
  if (dataset.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (!(cfg.eta > 0.0)) throw std::invalid_argument("train: eta must be > 0");
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");

  const bool update_lambda = options.kind != LossKind::unconstrained;
  TrainResult result;
  result.theta = theta_init;
  HyperparameterSet prev = theta_init;
  std::uint64_t forward_counter = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(Rng::derive(cfg.seed, 0x5u + epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);

    double epoch_acc = 0.0;
    std::size_t batch_count = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      ChannelDataset batch;
      batch.model_tag = dataset.model_tag;
      batch.seed = dataset.seed;
      batch.samples.reserve(end - start);
      std::vector<std::uint64_t> w0_seeds;
      w0_seeds.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t idx = order[i];
        batch.samples.push_back(dataset.samples[idx]);
        // Each sample keeps the W_0 of its dataset index across shuffles.
        w0_seeds.push_back(detail::w0_seed_for(dataset, idx));
      }
      LossOptions o = options;
      if (o.sigma_e2 > 0.0)
        o.noise_seed = Rng::derive(cfg.seed, 0x900000000ULL + forward_counter);
      ++forward_counter;

      GradientResult gr =
          hyperparameter_gradient_seeded(result.theta, a, batch, p, o, w0_seeds);

      if (!std::isfinite(gr.report.total)) {
        result.theta = prev;
        result.diverged = true;
        result.epoch_loss.push_back(std::numeric_limits<double>::quiet_NaN());
        return result;
      }
      result.nondifferentiable_hits += gr.nondifferentiable_hits;
      epoch_acc += gr.report.total;
      ++batch_count;

      prev = result.theta;
      for (std::size_t j = 0; j < result.theta.iterations(); ++j) {
        for (std::size_t e = 0; e < result.theta.alpha[j].size(); ++e) {
          result.theta.alpha[j].data()[e] -= cfg.eta * gr.grad.alpha[j].data()[e];
          result.theta.beta[j].data()[e] -= cfg.eta * gr.grad.beta[j].data()[e];
          if (update_lambda) {
            double& lam = result.theta.lambda[j].data()[e];
            lam = std::max(0.0, lam - cfg.eta * gr.grad.lambda[j].data()[e]);
          }
        }
      }
    }
    result.epoch_loss.push_back(epoch_acc / static_cast<double>(batch_count));
  }
  return result;
}

/// theta carries no user-count dependence; reusing it across K is the
/// identity (shape-checked by tests).
inline HyperparameterSet transfer_users(const HyperparameterSet& theta) { return theta; }

enum class PanelTransferMode { kronecker, average };

/// Expands P-panel hyperparameters to c*P panels. Kronecker mode replicates
/// the learned block pattern c times (I_c (x) theta_j); average mode keeps
/// the first P panels and fills the added ones with the panel-wise mean of
/// the learned blocks.
inline HyperparameterSet transfer_panels(const HyperparameterSet& theta, std::size_t c,
                                         PanelTransferMode mode) {
  if (c < 1) throw std::invalid_argument("transfer_panels: c must be >= 1");
  if (c == 1) return theta;
  const BlockDiagonalStructure& small = theta.structure;
  BlockDiagonalStructure big{small.panels * c, small.rows_per_block, small.cols_per_block};
  const std::size_t n = small.rows_per_block, l = small.cols_per_block;
  const std::size_t p_small = small.panels;

  auto expand = [&](const RealMatrix& m) {
    RealMatrix out(big.total_rows(), big.total_cols());
    auto copy_block = [&](std::size_t panel_dst, auto&& getter) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t jj = 0; jj < l; ++jj)
          out(panel_dst * n + i, panel_dst * l + jj) = getter(i, jj);
    };
    if (mode == PanelTransferMode::kronecker) {
      for (std::size_t rep = 0; rep < c; ++rep)
        for (std::size_t pp = 0; pp < p_small; ++pp)
          copy_block(rep * p_small + pp,
                     [&](std::size_t i, std::size_t jj) { return m(pp * n + i, pp * l + jj); });
    } else {
      for (std::size_t pp = 0; pp < p_small; ++pp)
        copy_block(pp,
                   [&](std::size_t i, std::size_t jj) { return m(pp * n + i, pp * l + jj); });
      RealMatrix mean(n, l);
      for (std::size_t pp = 0; pp < p_small; ++pp)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t jj = 0; jj < l; ++jj)
            mean(i, jj) += m(pp * n + i, pp * l + jj) / static_cast<double>(p_small);
      for (std::size_t panel = p_small; panel < c * p_small; ++panel)
        copy_block(panel, [&](std::size_t i, std::size_t jj) { return mean(i, jj); });
    }
    return out;
  };

  HyperparameterSet out;
  out.structure = big;
  for (std::size_t j = 0; j < theta.iterations(); ++j) {
    out.alpha.push_back(expand(theta.alpha[j]));
    out.beta.push_back(expand(theta.beta[j]));
    out.lambda.push_back(expand(theta.lambda[j]));
  }
  return out;
}

struct ThetaProvenance {
  std::uint64_t seed = 0;
  std::string config;
  std::string dataset_tag;
};

inline void save_theta(const HyperparameterSet& theta, const std::string& path,
                       const ThetaProvenance& prov = {}) {
  nlohmann::json j;
  j["J"] = theta.iterations();
  j["P"] = theta.structure.panels;
  j["N"] = theta.structure.rows_per_block;
  j["L"] = theta.structure.cols_per_block;
  auto dump = [](const std::vector<RealMatrix>& mats) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : mats) {
      nlohmann::json flat = nlohmann::json::array();
      for (std::size_t e = 0; e < m.size(); ++e) flat.push_back(m.data()[e]);
      arr.push_back(std::move(flat));
    }
    return arr;
  };
  j["alpha"] = dump(theta.alpha);
  j["beta"] = dump(theta.beta);
  j["lambda"] = dump(theta.lambda);
  j["provenance"] = {{"seed", prov.seed}, {"config", prov.config},
                     {"dataset_tag", prov.dataset_tag}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_theta: cannot open '" + path + "'");
  out << j.dump() << '\n';
}

inline HyperparameterSet load_theta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_theta: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("load_theta: malformed JSON in '" + path + "': " + e.what());
  }
  for (const char* field : {"J", "P", "N", "L", "alpha", "beta", "lambda"})
    if (!j.contains(field))
      throw std::invalid_argument(std::string("load_theta: missing field '") + field + "'");
  HyperparameterSet theta;
  theta.structure = BlockDiagonalStructure{j.at("P").get<std::size_t>(),
                                           j.at("N").get<std::size_t>(),
                                           j.at("L").get<std::size_t>()};
  const std::size_t j_count = j.at("J").get<std::size_t>();
  const std::size_t rows = theta.structure.total_rows();
  const std::size_t cols = theta.structure.total_cols();
  auto parse = [&](const nlohmann::json& arr, const char* name) {
    if (!arr.is_array() || arr.size() != j_count)
      throw std::invalid_argument(std::string("load_theta: field '") + name +
                                  "' must hold J matrices");
    std::vector<RealMatrix> mats;
    for (const auto& flat : arr) {
      if (!flat.is_array() || flat.size() != rows * cols)
        throw std::invalid_argument(std::string("load_theta: matrix in '") + name +
                                    "' has wrong size");
      RealMatrix m(rows, cols);
      for (std::size_t e = 0; e < m.size(); ++e) m.data()[e] = flat.at(e).get<double>();
      mats.push_back(std::move(m));
    }
    return mats;
  };
  theta.alpha = parse(j.at("alpha"), "alpha");
  theta.beta = parse(j.at("beta"), "beta");
  theta.lambda = parse(j.at("lambda"), "lambda");
  theta.validate();
  return theta;
}

}  // namespace modbeam
