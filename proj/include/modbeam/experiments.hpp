#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "modbeam/baselines.hpp"
#include "modbeam/channel.hpp"
#include "modbeam/learning.hpp"
#include "modbeam/optimizer.hpp"
#include "modbeam/parallel.hpp"
#include "modbeam/scenarios.hpp"
#include "modbeam/version.hpp"

namespace modbeam {

struct CsvTable {
  std::vector<std::string> comments;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string body() const {
    std::ostringstream out;
    for (std::size_t c = 0; c < columns.size(); ++c)
      out << columns[c] << (c + 1 == columns.size() ? "\n" : ",");
    for (const auto& row : rows)
      for (std::size_t c = 0; c < row.size(); ++c)
        out << row[c] << (c + 1 == row.size() ? "\n" : ",");
    return out.str();
  }

  std::string to_string() const {
    std::ostringstream out;
    for (const auto& line : comments) out << "# " << line << "\n";
    out << body();
    return out.str();
  }

  void write_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("CsvTable: cannot open '" + path + "'");
    out << to_string();
    if (!out) throw std::runtime_error("CsvTable: write failed for '" + path + "'");
  }
};

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// Knobs shared by the experiment drivers; everything lands in the CSV
/// header so a run is reproducible from its output alone.
struct ExperimentOptions {
  std::vector<double> mu_grid = default_mu_grid();
  std::vector<double> beta_grid = default_beta_grid();
  std::size_t j_long = 500;       // "converged" baseline iteration budget
  std::size_t tune_subset = 32;   // train samples used for grid tuning
  std::size_t train_subset = 256; // train samples used for unfolded training
  TrainingConfig train_cfg{4.0, 40, 16, 1};
  double gamma = 0.05;            // power-aware penalty weight
  SurrogateSpec surrogate;
  bool include_line_search = true;
  bool include_long_baseline = true;  // emit the PGA+M@j_long comparison rows
  // when set, drivers that train an unconstrained theta reuse this one
  std::optional<HyperparameterSet> pretrained_theta;
};

namespace detail {

struct ScenarioContext {
  ScenarioConfig scenario;
  ConnectivityMatrix a;
  SystemParams params;
  DatasetSplit split;
  ChannelDataset tune_set;   // leading slice of train, for grid tuning
  ChannelDataset train_set;  // leading slice of train, for unfolded training
};

inline ScenarioContext make_context(const ScenarioConfig& sc, const ExperimentOptions& opt) {
  ScenarioContext ctx;
  ctx.scenario = sc;
  ctx.scenario.validate();
  ctx.a = sc.make_connectivity();
  ctx.params = SystemParams::from_snr_db(sc.snr_db);
  ChannelDataset full = generate_rayleigh(sc.m(), sc.k, sc.b,
                                          sc.n_train + sc.n_val + sc.n_test, sc.seed);
  ctx.split = split_dataset(full, sc.n_train, sc.n_val, sc.n_test);
  const std::size_t n_tune = std::min(opt.tune_subset, ctx.split.train.size());
  const std::size_t n_train = std::min(opt.train_subset, ctx.split.train.size());
  ctx.tune_set = split_dataset(ctx.split.train, n_tune, 0, 0).train;
  ctx.train_set = split_dataset(ctx.split.train, n_train, 0, 0).train;
  return ctx;
}

inline void common_header(CsvTable& t, const ScenarioContext& ctx,
                          const ExperimentOptions& opt, const std::string& experiment) {
  const ScenarioConfig& s = ctx.scenario;
  std::ostringstream line;
  t.comments.push_back("modbeam version " + std::string(kVersion) + ", experiment " +
                       experiment);
  line << "scenario " << s.name << ": T=" << s.t << " P=" << s.p << " L=" << s.l
       << " N=" << s.n << " B=" << s.b << " K=" << s.k << " M=" << s.m()
       << " J=" << s.j_iters << " snr_db=" << fmt_double(s.snr_db)
       << " channel=" << s.channel_model << " A=" << s.a_pattern;
  t.comments.push_back(line.str());
  if (!s.warning.empty()) t.comments.push_back("warning: " + s.warning);
  std::ostringstream sizes;
  sizes << "datasets: train=" << ctx.split.train.size() << " val=" << ctx.split.val.size()
        << " test=" << ctx.split.test.size() << " tune_subset=" << ctx.tune_set.size()
        << " train_subset=" << ctx.train_set.size() << " seed=" << s.seed;
  t.comments.push_back(sizes.str());
  std::ostringstream grids;
  grids << "mu_grid=";
  for (double m : opt.mu_grid) grids << fmt_double(m) << ";";
  grids << " beta_grid=";
  for (double b : opt.beta_grid) grids << fmt_double(b) << ";";
  grids << " j_long=" << opt.j_long;
  t.comments.push_back(grids.str());
  std::ostringstream train;
  train << "training: eta=" << fmt_double(opt.train_cfg.eta)
        << " epochs=" << opt.train_cfg.epochs << " batch=" << opt.train_cfg.batch_size
        << " seed=" << opt.train_cfg.seed << " gamma=" << fmt_double(opt.gamma)
        << " surrogate: s_m=" << fmt_double(opt.surrogate.s_m)
        << " zeta_m=" << fmt_double(opt.surrogate.zeta_m)
        << " s_p=" << fmt_double(opt.surrogate.s_p);
  t.comments.push_back(train.str());
}

/// Per-sample trajectories of one method over a test set.
struct MethodRun {
  std::vector<std::vector<double>> rates;        // [sample][iterate]
  std::vector<double> final_activity;            // ||W_J||_0 / (N*L*P)
  bool any_flagged = false;
};

template <typename RunOne>
MethodRun run_over_test(const ChannelDataset& test, RunOne&& run_one,
                        const BlockDiagonalStructure& st) {
  MethodRun mr;
  const std::size_t n = test.size();
  mr.rates.resize(n);
  mr.final_activity.resize(n);
  std::vector<char> flagged(n, 0);
  const double denom = static_cast<double>(st.panels * st.rows_per_block * st.cols_per_block);
  parallel_for(n, [&](std::size_t i) {
    const Trajectory traj = run_one(test.samples[i], w0_seed_for(test, i));
    mr.rates[i] = traj.rates;
    mr.final_activity[i] =
        static_cast<double>(traj.active_counts.back()) / denom;
    flagged[i] = traj.any_flagged() ? 1 : 0;
  });
  for (char f : flagged) mr.any_flagged |= (f != 0);
  return mr;
}

inline std::pair<double, double> mean_std_at(const MethodRun& mr, std::size_t iter) {
  double mean = 0.0;
  for (const auto& r : mr.rates) mean += r[iter];
  mean /= static_cast<double>(mr.rates.size());
  double var = 0.0;
  for (const auto& r : mr.rates) var += (r[iter] - mean) * (r[iter] - mean);
  var /= static_cast<double>(mr.rates.size());
  return {mean, std::sqrt(var)};
}

inline double mean_final(const MethodRun& mr) {
  return mean_std_at(mr, mr.rates.front().size() - 1).first;
}

inline double mean_activity(const MethodRun& mr) {
  double acc = 0.0;
  for (double a : mr.final_activity) acc += a;
  return acc / static_cast<double>(mr.final_activity.size());
}

inline void append_curve(CsvTable& t, const std::string& method, const MethodRun& mr) {
  const std::size_t iters = mr.rates.front().size();
  for (std::size_t j = 0; j < iters; ++j) {
    auto [mean, sd] = mean_std_at(mr, j);
    t.rows.push_back({method, std::to_string(j), fmt_double(mean), fmt_double(sd)});
  }
}

inline MethodRun run_fixed_pga(const ScenarioContext& ctx, double mu, double beta,
                               std::size_t iters, const ProjectionSpec& proj,
                               const ChannelDataset& test) {
  const HyperparameterSet theta =
      scalar_hyperparameters(iters, mu, beta, proj.structure);
  return run_over_test(
      test,
      [&](const ChannelRealization& h, std::uint64_t seed) {
        return run_unfolded(theta, ctx.a, h, ctx.params, proj, ProjectionMode::hard, seed);
      },
      proj.structure);
}

inline MethodRun run_theta(const ScenarioContext& ctx, const HyperparameterSet& theta,
                           const ProjectionSpec& proj, const ChannelDataset& test) {
  return run_over_test(
      test,
      [&](const ChannelRealization& h, std::uint64_t seed) {
        return run_unfolded(theta, ctx.a, h, ctx.params, proj, ProjectionMode::hard, seed);
      },
      proj.structure);
}

inline MethodRun run_line_search(const ScenarioContext& ctx, const ExperimentOptions& opt,
                                 const ProjectionSpec& proj, const ChannelDataset& test) {
  return run_over_test(
      test,
      [&](const ChannelRealization& h, std::uint64_t seed) {
        return line_search_pga(ctx.a, h, ctx.params, ctx.scenario.j_iters, opt.mu_grid,
                               opt.beta_grid, proj, seed);
      },
      proj.structure);
}

}  // namespace detail

/// Trains theta for the scenario's constraint-free problem and returns it
/// with the tuned scalar baseline pair.
struct PreparedUnconstrained {
  detail::ScenarioContext ctx;
  GridTuneResult tuned;
  HyperparameterSet theta;
  TrainResult train_result;
};

inline PreparedUnconstrained prepare_unconstrained(const ScenarioConfig& sc,
                                                   const ExperimentOptions& opt) {
  PreparedUnconstrained prep{detail::make_context(sc, opt), {}, {}, {}};
  const ProjectionSpec proj = ProjectionSpec::unit(sc.structure());
  prep.tuned = grid_tune_fixed(prep.ctx.a, prep.ctx.tune_set, prep.ctx.params, opt.j_long,
                               opt.mu_grid, opt.beta_grid, proj);
  if (opt.pretrained_theta) {
    const auto& given = *opt.pretrained_theta;
    if (given.structure.total_rows() != sc.m() || given.structure.total_cols() != sc.lp() ||
        given.iterations() != sc.j_iters)
      throw ConfigError("pretrained theta does not match scenario '" + sc.name + "'");
    prep.theta = given;
    return prep;
  }
  LossOptions lo = LossOptions::unconstrained_for(sc.structure());
  lo.surrogate = opt.surrogate;
  TrainingConfig cfg = opt.train_cfg;
  cfg.seed = Rng::derive(sc.seed, 0xA11);
  prep.train_result =
      train(default_theta_init(sc.j_iters, sc.structure(), lo.kind), prep.ctx.a,
            prep.ctx.train_set, prep.ctx.params, cfg, lo);
  prep.theta = prep.train_result.theta;
  return prep;
}

/// Mean/std sum-rate per iteration index for U-PGA+M, fixed PGA+M at J and
/// at j_long, and per-iteration line search.
inline CsvTable experiment_rate_vs_iteration(const ScenarioConfig& sc,
                                             const ExperimentOptions& opt) {
  PreparedUnconstrained prep = prepare_unconstrained(sc, opt);
  const detail::ScenarioContext& ctx = prep.ctx;
  const ProjectionSpec proj = ProjectionSpec::unit(sc.structure());
  const ChannelDataset& test = ctx.split.test;

  CsvTable t;
  detail::common_header(t, ctx, opt, "rate-iter");
  t.comments.push_back("tuned fixed pair: mu=" + fmt_double(prep.tuned.mu) +
                       " beta=" + fmt_double(prep.tuned.beta) +
                       " (mean tune rate " + fmt_double(prep.tuned.mean_rate) + ")");
  t.columns = {"method", "j", "mean_rate", "std_rate"};

  detail::append_curve(t, "U-PGA+M", detail::run_theta(ctx, prep.theta, proj, test));
  detail::append_curve(
      t, "PGA+M@" + std::to_string(sc.j_iters),
      detail::run_fixed_pga(ctx, prep.tuned.mu, prep.tuned.beta, sc.j_iters, proj, test));
  detail::append_curve(
      t, "PGA+M@" + std::to_string(opt.j_long),
      detail::run_fixed_pga(ctx, prep.tuned.mu, prep.tuned.beta, opt.j_long, proj, test));
  if (opt.include_line_search)
    detail::append_curve(t, "LineSearch@" + std::to_string(sc.j_iters),
                         detail::run_line_search(ctx, opt, proj, test));
  return t;
}

/// Mean/std final sum-rate per SNR point; the scalar pair is re-tuned and
/// theta re-trained at every SNR, mirroring per-setting tuning.
inline CsvTable experiment_rate_vs_snr(const ScenarioConfig& sc,
                                       const std::vector<double>& snr_db_list,
                                       const ExperimentOptions& opt) {
  if (snr_db_list.empty()) throw ConfigError("experiment_rate_vs_snr: empty SNR list");
  CsvTable t;
  bool header_done = false;
  t.columns = {"method", "snr_db", "mean_rate", "std_rate"};
  for (double snr : snr_db_list) {
    ScenarioConfig sc_snr = sc;
    sc_snr.snr_db = snr;
    PreparedUnconstrained prep = prepare_unconstrained(sc_snr, opt);
    const ProjectionSpec proj = ProjectionSpec::unit(sc.structure());
    const ChannelDataset& test = prep.ctx.split.test;
    if (!header_done) {
      detail::common_header(t, prep.ctx, opt, "rate-snr");
      header_done = true;
    }
    t.comments.push_back("snr_db=" + fmt_double(snr) + ": tuned mu=" +
                         fmt_double(prep.tuned.mu) + " beta=" + fmt_double(prep.tuned.beta));
    auto emit = [&](const std::string& method, const detail::MethodRun& mr) {
      auto [mean, sd] = detail::mean_std_at(mr, mr.rates.front().size() - 1);
      t.rows.push_back({method, fmt_double(snr), fmt_double(mean), fmt_double(sd)});
    };
    emit("U-PGA+M", detail::run_theta(prep.ctx, prep.theta, proj, test));
    emit("PGA+M@" + std::to_string(sc.j_iters),
         detail::run_fixed_pga(prep.ctx, prep.tuned.mu, prep.tuned.beta, sc.j_iters, proj,
                               test));
    emit("PGA+M@" + std::to_string(opt.j_long),
         detail::run_fixed_pga(prep.ctx, prep.tuned.mu, prep.tuned.beta, opt.j_long, proj,
                               test));
    if (opt.include_line_search)
      emit("LineSearch@" + std::to_string(sc.j_iters),
           detail::run_line_search(prep.ctx, opt, proj, test));
  }
  return t;
}

/// Power-aware sparsity experiment at budget S_max = smax_frac * N*L*P:
/// power-aware U-PGA (trained with the magnitude surrogate and l1 penalty,
/// deployed with the hard sparse projection) against unconstrained U-PGA and
/// fixed PGA+M.
inline CsvTable experiment_sparsity(const ScenarioConfig& sc, double smax_frac,
                                    const ExperimentOptions& opt,
                                    const ExperimentOptions* unconstrained_opt = nullptr) {
  if (!(smax_frac > 0.0) || smax_frac > 1.0)
    throw ConfigError("experiment_sparsity: S_max fraction must lie in (0, 1]");
  const ExperimentOptions& uopt = unconstrained_opt ? *unconstrained_opt : opt;
  PreparedUnconstrained prep = prepare_unconstrained(sc, uopt);
  const detail::ScenarioContext& ctx = prep.ctx;
  const BlockDiagonalStructure st = sc.structure();
  const double nlp = static_cast<double>(st.panels * st.rows_per_block * st.cols_per_block);
  const double s_max = smax_frac * nlp;

  LossOptions lo = LossOptions::sparse_for(st, opt.gamma, s_max);
  lo.surrogate = opt.surrogate;
  TrainingConfig cfg = opt.train_cfg;
  cfg.seed = Rng::derive(sc.seed, 0xA12);
  const TrainResult pa =
      train(default_theta_init(sc.j_iters, st, lo.kind), ctx.a, ctx.train_set, ctx.params,
            cfg, lo);

  const ProjectionSpec unit_proj = ProjectionSpec::unit(st);
  const ProjectionSpec sparse_proj = ProjectionSpec::sparse_at(st, lo.projection.zeta);
  const ChannelDataset& test = ctx.split.test;

  CsvTable t;
  detail::common_header(t, ctx, opt, "sparsity");
  t.comments.push_back("smax_frac=" + fmt_double(smax_frac) + " S_max=" + fmt_double(s_max) +
                       " zeta=" + fmt_double(sparse_proj.zeta));
  t.comments.push_back("tuned fixed pair: mu=" + fmt_double(prep.tuned.mu) +
                       " beta=" + fmt_double(prep.tuned.beta));
  t.columns = {"method", "mean_rate", "std_rate", "mean_activity"};
  auto emit = [&](const std::string& method, const detail::MethodRun& mr) {
    auto [mean, sd] = detail::mean_std_at(mr, mr.rates.front().size() - 1);
    t.rows.push_back(
        {method, fmt_double(mean), fmt_double(sd), fmt_double(detail::mean_activity(mr))});
  };
  emit("U-PGA+M-PA", detail::run_theta(ctx, pa.theta, sparse_proj, test));
  emit("U-PGA+M", detail::run_theta(ctx, prep.theta, unit_proj, test));
  emit("PGA+M@" + std::to_string(sc.j_iters),
       detail::run_fixed_pga(ctx, prep.tuned.mu, prep.tuned.beta, sc.j_iters, unit_proj,
                             test));
  emit("PGA+M@" + std::to_string(opt.j_long),
       detail::run_fixed_pga(ctx, prep.tuned.mu, prep.tuned.beta, opt.j_long, unit_proj,
                             test));
  return t;
}

/// Quantized-phase experiment: every method runs under the hard Q-level
/// projection; U-PGA trains through the phase surrogate.
inline CsvTable experiment_quantized(const ScenarioConfig& sc, std::size_t q_levels,
                                     const ExperimentOptions& opt) {
  if (q_levels < 2) throw ConfigError("experiment_quantized: Q must be >= 2");
  detail::ScenarioContext ctx = detail::make_context(sc, opt);
  const BlockDiagonalStructure st = sc.structure();
  const ProjectionSpec proj = ProjectionSpec::quantized_at(st, q_levels);

  const GridTuneResult tuned = grid_tune_fixed(ctx.a, ctx.tune_set, ctx.params, opt.j_long,
                                               opt.mu_grid, opt.beta_grid, proj);
  LossOptions lo = LossOptions::quantized_for(st, q_levels);
  lo.surrogate = opt.surrogate;
  TrainingConfig cfg = opt.train_cfg;
  cfg.seed = Rng::derive(sc.seed, 0xA13);
  const TrainResult tr =
      train(default_theta_init(sc.j_iters, st, lo.kind), ctx.a, ctx.train_set, ctx.params,
            cfg, lo);
  const ChannelDataset& test = ctx.split.test;

  CsvTable t;
  detail::common_header(t, ctx, opt, "quantized");
  t.comments.push_back("q_levels=" + std::to_string(q_levels));
  t.comments.push_back("tuned fixed pair (quantized): mu=" + fmt_double(tuned.mu) +
                       " beta=" + fmt_double(tuned.beta));
  t.columns = {"method", "j", "mean_rate", "std_rate"};
  detail::append_curve(t, "U-PGA+M", detail::run_theta(ctx, tr.theta, proj, test));
  detail::append_curve(t, "PGA+M@" + std::to_string(sc.j_iters),
                       detail::run_fixed_pga(ctx, tuned.mu, tuned.beta, sc.j_iters, proj,
                                             test));
  detail::append_curve(t, "PGA+M@" + std::to_string(opt.j_long),
                       detail::run_fixed_pga(ctx, tuned.mu, tuned.beta, opt.j_long, proj,
                                             test));
  if (opt.include_line_search)
    detail::append_curve(t, "LineSearch@" + std::to_string(sc.j_iters),
                         detail::run_line_search(ctx, opt, proj, test));
  return t;
}

/// CSI-robustness experiment: optimizers see H + E, rates are scored on the
/// clean H. Robust-trained theta (Eq.-13-style loss at the largest listed
/// variance) is compared with noiseless-trained theta and the fixed baseline.
inline CsvTable experiment_csi_robustness(const ScenarioConfig& sc,
                                          const std::vector<double>& sigma_e2_list,
                                          const ExperimentOptions& opt) {
  if (sigma_e2_list.empty()) throw ConfigError("experiment_csi_robustness: empty list");
  for (double s : sigma_e2_list)
    if (s < 0.0) throw ConfigError("experiment_csi_robustness: variances must be >= 0");
  PreparedUnconstrained prep = prepare_unconstrained(sc, opt);
  const detail::ScenarioContext& ctx = prep.ctx;
  const BlockDiagonalStructure st = sc.structure();
  const ProjectionSpec proj = ProjectionSpec::unit(st);

  double train_sigma = 0.0;
  for (double s : sigma_e2_list) train_sigma = std::max(train_sigma, s);
  LossOptions lo = LossOptions::unconstrained_for(st);
  lo.surrogate = opt.surrogate;
  lo.sigma_e2 = train_sigma;
  lo.noise_seed = Rng::derive(sc.seed, 0xA14);
  TrainingConfig cfg = opt.train_cfg;
  cfg.seed = Rng::derive(sc.seed, 0xA15);
  const TrainResult robust =
      train(default_theta_init(sc.j_iters, st, lo.kind), ctx.a, ctx.train_set, ctx.params,
            cfg, lo);

  const ChannelDataset& test = ctx.split.test;
  CsvTable t;
  detail::common_header(t, ctx, opt, "csi");
  t.comments.push_back("robust training sigma_e2=" + fmt_double(train_sigma));
  t.comments.push_back("tuned fixed pair: mu=" + fmt_double(prep.tuned.mu) +
                       " beta=" + fmt_double(prep.tuned.beta));
  t.columns = {"method", "sigma_e2", "mean_rate", "std_rate"};

  for (double sigma : sigma_e2_list) {
    // One noisy view of the test set per variance; shared by all methods.
    ChannelDataset noisy = perturb_csi(test, sigma, Rng::derive(sc.seed, 0xA16));
    auto eval_noisy = [&](auto&& make_traj) {
      detail::MethodRun mr;
      mr.rates.resize(test.size());
      mr.final_activity.assign(test.size(), 1.0);
      parallel_for(test.size(), [&](std::size_t i) {
        const std::uint64_t seed = detail::w0_seed_for(test, i);
        const Trajectory traj = make_traj(noisy.samples[i], seed);
        bool flag = false;
        mr.rates[i] = {sum_rate(traj.final_beamformer(), ctx.a, test.samples[i],
                                ctx.params, st, &flag)};
      });
      return mr;
    };
    auto emit = [&](const std::string& method, const detail::MethodRun& mr) {
      auto [mean, sd] = detail::mean_std_at(mr, 0);
      t.rows.push_back({method, fmt_double(sigma), fmt_double(mean), fmt_double(sd)});
    };
    emit("U-PGA+M-robust", eval_noisy([&](const ChannelRealization& h, std::uint64_t s) {
           return run_unfolded(robust.theta, ctx.a, h, ctx.params, proj,
                               ProjectionMode::hard, s);
         }));
    emit("U-PGA+M", eval_noisy([&](const ChannelRealization& h, std::uint64_t s) {
           return run_unfolded(prep.theta, ctx.a, h, ctx.params, proj, ProjectionMode::hard,
                               s);
         }));
    const HyperparameterSet fixed_short =
        scalar_hyperparameters(sc.j_iters, prep.tuned.mu, prep.tuned.beta, st);
    emit("PGA+M@" + std::to_string(sc.j_iters),
         eval_noisy([&](const ChannelRealization& h, std::uint64_t s) {
           return run_unfolded(fixed_short, ctx.a, h, ctx.params, proj, ProjectionMode::hard,
                               s);
         }));
    const HyperparameterSet fixed_long =
        scalar_hyperparameters(opt.j_long, prep.tuned.mu, prep.tuned.beta, st);
    emit("PGA+M@" + std::to_string(opt.j_long),
         eval_noisy([&](const ChannelRealization& h, std::uint64_t s) {
           return run_unfolded(fixed_long, ctx.a, h, ctx.params, proj, ProjectionMode::hard,
                               s);
         }));
  }
  return t;
}

enum class TransferKind { users, panels };

/// Transfer experiment: theta trained on the small scenario, deployed on the
/// large one (identity reuse across K; Kronecker and average expansion
/// across P), against baselines tuned natively on the large scenario.
inline CsvTable experiment_transfer(const ScenarioConfig& sc_small,
                                    const ScenarioConfig& sc_large, TransferKind kind,
                                    const ExperimentOptions& opt) {
  if (sc_small.n != sc_large.n || sc_small.l != sc_large.l)
    throw ConfigError("experiment_transfer: panel geometry (N, L) must match");
  if (kind == TransferKind::users) {
    if (sc_small.p != sc_large.p)
      throw ConfigError("experiment_transfer: user transfer needs equal panel counts");
  } else {
    if (sc_large.p % sc_small.p != 0)
      throw ConfigError("experiment_transfer: large P must be a multiple of small P");
  }

  PreparedUnconstrained small = prepare_unconstrained(sc_small, opt);

  ExperimentOptions large_opt = opt;
  detail::ScenarioContext large_ctx = detail::make_context(sc_large, large_opt);
  const BlockDiagonalStructure st_large = sc_large.structure();
  const ProjectionSpec proj_large = ProjectionSpec::unit(st_large);
  const GridTuneResult tuned_large =
      grid_tune_fixed(large_ctx.a, large_ctx.tune_set, large_ctx.params, opt.j_long,
                      opt.mu_grid, opt.beta_grid, proj_large);
  const ChannelDataset& test = large_ctx.split.test;

  CsvTable t;
  detail::common_header(t, large_ctx, opt, "transfer");
  t.comments.push_back("transfer kind: " +
                       std::string(kind == TransferKind::users ? "users" : "panels"));
  t.comments.push_back("small scenario: " + sc_small.name + " (K=" +
                       std::to_string(sc_small.k) + ", P=" + std::to_string(sc_small.p) +
                       ")");
  t.comments.push_back("tuned fixed pair (large): mu=" + fmt_double(tuned_large.mu) +
                       " beta=" + fmt_double(tuned_large.beta));
  t.columns = {"method", "mean_rate", "std_rate"};
  auto emit = [&](const std::string& method, const detail::MethodRun& mr) {
    auto [mean, sd] = detail::mean_std_at(mr, mr.rates.front().size() - 1);
    t.rows.push_back({method, fmt_double(mean), fmt_double(sd)});
  };

  if (kind == TransferKind::users) {
    emit("U-PGA+M-transfer",
         detail::run_theta(large_ctx, transfer_users(small.theta), proj_large, test));
  } else {
    const std::size_t c = sc_large.p / sc_small.p;
    emit("U-PGA+M-kron",
         detail::run_theta(large_ctx,
                           transfer_panels(small.theta, c, PanelTransferMode::kronecker),
                           proj_large, test));
    emit("U-PGA+M-avg",
         detail::run_theta(large_ctx,
                           transfer_panels(small.theta, c, PanelTransferMode::average),
                           proj_large, test));
  }
  emit("PGA+M@" + std::to_string(sc_large.j_iters),
       detail::run_fixed_pga(large_ctx, tuned_large.mu, tuned_large.beta, sc_large.j_iters,
                             proj_large, test));
  if (opt.include_long_baseline)
    emit("PGA+M@" + std::to_string(opt.j_long),
         detail::run_fixed_pga(large_ctx, tuned_large.mu, tuned_large.beta, opt.j_long,
                               proj_large, test));
  return t;
}

}  // namespace modbeam
