#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "modbeam/channel.hpp"
#include "modbeam/learning.hpp"
#include "modbeam/optimizer.hpp"
#include "modbeam/parallel.hpp"

namespace modbeam {

/// Grids the paper leaves unspecified; config-exposed and logged in outputs.
inline const std::vector<double>& default_mu_grid() {
  static const std::vector<double> g{1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1};
  return g;
}

inline const std::vector<double>& default_beta_grid() {
  static const std::vector<double> g{0.0, 0.3, 0.5, 0.7, 0.9};
  return g;
}

struct GridTuneResult {
  double mu = 0.0;
  double beta = 0.0;
  double mean_rate = 0.0;
  // mean final rate per (mu, beta) pair, mu-major, for inspection/tests
  std::vector<double> table;
};

/// Exhaustive scalar grid search: evaluates every (mu, beta) pair with fixed
/// hyperparameters for J_eval iterations over the tuning set and returns the
/// mean-rate argmax. Grids are scanned in order, strict improvement replaces,
/// so ties resolve to the lexicographically smallest pair.
inline GridTuneResult grid_tune_fixed(const ConnectivityMatrix& a,
                                      const ChannelDataset& tune_set,
                                      const SystemParams& p, std::size_t j_eval,
                                      const std::vector<double>& mu_grid,
                                      const std::vector<double>& beta_grid,
                                      const ProjectionSpec& projection) {
  if (mu_grid.empty() || beta_grid.empty())
    throw std::invalid_argument("grid_tune_fixed: empty grid");
  if (tune_set.size() == 0) throw std::invalid_argument("grid_tune_fixed: empty tune set");

  const std::size_t n_pairs = mu_grid.size() * beta_grid.size();
  const std::size_t n_samples = tune_set.size();
  std::vector<double> rates(n_pairs * n_samples, 0.0);
  const std::vector<std::uint64_t> seeds = default_w0_seeds(tune_set);

  parallel_for(n_pairs * n_samples, [&](std::size_t idx) {
    const std::size_t pair = idx / n_samples;
    const std::size_t sample = idx % n_samples;
    const double mu = mu_grid[pair / beta_grid.size()];
    const double beta = beta_grid[pair % beta_grid.size()];
    const HyperparameterSet theta =
        scalar_hyperparameters(j_eval, mu, beta, projection.structure);
    const Trajectory traj =
        run_unfolded(theta, a, tune_set.samples[sample], p, projection,
                     ProjectionMode::hard, seeds[sample]);
    rates[idx] = traj.final_rate();
  });

  GridTuneResult best;
  best.table.resize(n_pairs);
  bool first = true;
  for (std::size_t pair = 0; pair < n_pairs; ++pair) {
    double mean = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) mean += rates[pair * n_samples + s];
    mean /= static_cast<double>(n_samples);
    best.table[pair] = mean;
    if (first || mean > best.mean_rate) {
      first = false;
      best.mean_rate = mean;
      best.mu = mu_grid[pair / beta_grid.size()];
      best.beta = beta_grid[pair % beta_grid.size()];
    }
  }
  return best;
}

/// Greedy per-iteration line search: each step commits the (mu, beta) grid
/// pair whose projected iterate maximizes the immediate rate for this
/// channel. Ties resolve to the lexicographically smallest pair.
inline Trajectory line_search_pga(const ConnectivityMatrix& a, const ChannelRealization& h,
                                  const SystemParams& p, std::size_t j_count,
                                  const std::vector<double>& mu_grid,
                                  const std::vector<double>& beta_grid,
                                  const ProjectionSpec& projection,
                                  std::uint64_t init_seed) {
  if (mu_grid.empty() || beta_grid.empty())
    throw std::invalid_argument("line_search_pga: empty grid");
  const BlockDiagonalStructure& st = projection.structure;
  const RealMatrix mask = block_support_mask(st);

  Trajectory traj;
  ComplexMatrix w = init_beamformer(st, init_seed).matrix;
  ComplexMatrix w_prev(w.rows(), w.cols());
  traj.iterates.push_back(w);
  traj.active_counts.push_back(count_active(w));

  for (std::size_t j = 0; j < j_count; ++j) {
    bool flagged = false;
    ComplexMatrix next = w;
    double rate_here = 0.0;
    try {
      RateGradientResult rg = rate_and_gradient(w, a, h, p, st, true);
      rate_here = rg.rate;
      flagged = rg.flagged;
      bool have_best = false;
      double best_rate = 0.0;
      for (double mu : mu_grid)
        for (double beta : beta_grid) {
          // Same two-pass update order as pga_step, so a singleton grid
          // reproduces the fixed-scalar run bit for bit.
          ComplexMatrix v = w;
          for (std::size_t e = 0; e < v.size(); ++e)
            v.data()[e] += mu * rg.gradient.data()[e];
          for (std::size_t e = 0; e < v.size(); ++e)
            v.data()[e] += beta * (w.data()[e] - w_prev.data()[e]);
          ComplexMatrix cand = project(v, projection);
          bool cand_flag = false;
          const double r = sum_rate(cand, a, h, p, st, &cand_flag);
          if (!cand_flag && (!have_best || r > best_rate)) {
            have_best = true;
            best_rate = r;
            next = std::move(cand);
          }
        }
      if (!have_best) flagged = true;
    } catch (const NumericalError&) {
      flagged = true;
    }
    traj.rates.push_back(rate_here);
    traj.iterate_flagged.push_back(flagged);
    if (flagged) next = w;
    w_prev = std::move(w);
    w = std::move(next);
    traj.iterates.push_back(w);
    traj.active_counts.push_back(count_active(w));
  }

  bool final_flag = false;
  double final_rate = 0.0;
  try {
    final_rate = sum_rate(w, a, h, p, st, &final_flag);
  } catch (const NumericalError&) {
    final_flag = true;
  }
  traj.rates.push_back(final_rate);
  traj.iterate_flagged.push_back(final_flag);
  return traj;
}

}  // namespace modbeam
