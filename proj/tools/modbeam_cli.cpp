// Command-line driver: dataset generation, hyperparameter training, theta
// evaluation, and the experiment suite with CSV reporting.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "modbeam/baselines.hpp"
#include "modbeam/channel.hpp"
#include "modbeam/experiments.hpp"
#include "modbeam/learning.hpp"
#include "modbeam/scenarios.hpp"
#include "modbeam/version.hpp"

namespace {

using namespace modbeam;

struct CommonArgs {
  std::string scenario = "scenario1";
  std::uint64_t seed = 0;  // 0 = keep scenario default
  std::size_t iters = 0;   // 0 = keep scenario default
  double snr_db = std::numeric_limits<double>::quiet_NaN();
  std::string config_path;
  std::string out_path;
  unsigned threads = 0;
};

ScenarioConfig resolve_scenario(const CommonArgs& c) {
  ScenarioConfig sc = scenario_by_name(c.scenario);
  if (c.seed != 0) sc.seed = c.seed;
  if (c.iters != 0) sc.j_iters = c.iters;
  if (!std::isnan(c.snr_db)) sc.snr_db = c.snr_db;
  sc.validate();
  if (!sc.warning.empty()) std::cerr << "warning: " << sc.warning << "\n";
  return sc;
}

ExperimentOptions load_options(const std::string& path) {
  ExperimentOptions opt;
  if (path.empty()) return opt;
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: malformed JSON in '" + path + "': " + e.what());
  }
  auto get = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("mu_grid", opt.mu_grid);
  get("beta_grid", opt.beta_grid);
  get("j_long", opt.j_long);
  get("tune_subset", opt.tune_subset);
  get("train_subset", opt.train_subset);
  get("eta", opt.train_cfg.eta);
  get("epochs", opt.train_cfg.epochs);
  get("batch_size", opt.train_cfg.batch_size);
  get("train_seed", opt.train_cfg.seed);
  get("gamma", opt.gamma);
  get("s_m", opt.surrogate.s_m);
  get("zeta_m", opt.surrogate.zeta_m);
  get("s_p", opt.surrogate.s_p);
  get("include_line_search", opt.include_line_search);
  return opt;
}

void emit(const CsvTable& table, const std::string& out_path) {
  if (out_path.empty())
    std::cout << table.to_string();
  else
    table.write_file(out_path);
}

int run(int argc, char** argv) {
  CLI::App app{"modbeam: learned projected-gradient tuning of modular hybrid "
               "MIMO receive beamformers"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonArgs c;
  app.add_option("--threads", c.threads, "worker thread cap (0 = hardware)");

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate a Rayleigh channel dataset");
  std::size_t gen_n = 100;
  std::string gen_out = "dataset.chjson";
  gen->add_option("--scenario", c.scenario, "scenario name");
  gen->add_option("--seed", c.seed, "dataset seed override");
  gen->add_option("--n", gen_n, "number of samples");
  gen->add_option("--out", gen_out, "output .chjson path")->required();

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train unfolded hyperparameters");
  std::string tr_kind = "unconstrained";
  std::string tr_out = "theta.json";
  double tr_smax_frac = 0.75;
  std::size_t tr_q = 16;
  double tr_sigma_e2 = 0.0;
  tr->add_option("--scenario", c.scenario, "scenario name");
  tr->add_option("--seed", c.seed, "seed override");
  tr->add_option("--iters", c.iters, "unfolded iteration count J");
  tr->add_option("--snr-db", c.snr_db, "SNR in dB");
  tr->add_option("--kind", tr_kind, "unconstrained | sparse | quantized | robust");
  tr->add_option("--smax-frac", tr_smax_frac, "active budget fraction (sparse)");
  tr->add_option("--q-levels", tr_q, "phase levels Q (quantized)");
  tr->add_option("--sigma-e2", tr_sigma_e2, "CSI noise variance (robust)");
  std::string tr_data;
  tr->add_option("--data", tr_data, "train on a stored .chjson dataset");
  tr->add_option("--config", c.config_path, "experiment-options JSON");
  tr->add_option("--out", tr_out, "output theta JSON path");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate a trained theta on a test set");
  std::string ev_theta;
  std::string ev_proj = "unit";
  double ev_zeta = 0.5;
  std::size_t ev_q = 16;
  ev->add_option("--scenario", c.scenario, "scenario name");
  ev->add_option("--seed", c.seed, "seed override");
  ev->add_option("--snr-db", c.snr_db, "SNR in dB");
  ev->add_option("--theta", ev_theta, "trained theta JSON")->required();
  ev->add_option("--projection", ev_proj, "unit | sparse | quantized");
  ev->add_option("--zeta", ev_zeta, "sparse threshold");
  ev->add_option("--q-levels", ev_q, "phase levels Q");
  std::string ev_data;
  ev->add_option("--data", ev_data, "evaluate on a stored .chjson dataset");
  ev->add_option("--out", c.out_path, "CSV output path (default stdout)");

  // ---- experiment ----
  auto* ex = app.add_subcommand("experiment", "run an experiment driver");
  std::string ex_which;
  std::string ex_theta;
  std::vector<double> ex_snr_list{-5.0, 0.0, 5.0, 10.0};
  std::vector<double> ex_sigma_list{0.0, 0.05, 0.1, 0.2};
  double ex_smax_frac = 0.75;
  std::size_t ex_q = 16;
  std::string ex_small = "scenario4", ex_large = "scenario3", ex_kind = "users";
  ex->add_option("which", ex_which, "rate-iter | rate-snr | sparsity | quantized | csi | transfer")
      ->required();
  ex->add_option("--scenario", c.scenario, "scenario name");
  ex->add_option("--seed", c.seed, "seed override");
  ex->add_option("--iters", c.iters, "unfolded iteration count J");
  ex->add_option("--snr-db", ex_snr_list, "SNR list in dB (rate-snr)");
  ex->add_option("--q-levels", ex_q, "phase levels Q (quantized)");
  ex->add_option("--smax-frac", ex_smax_frac, "active budget fraction (sparsity)");
  ex->add_option("--sigma-e2", ex_sigma_list, "CSI error variances (csi)");
  ex->add_option("--scenario-small", ex_small, "transfer: source scenario");
  ex->add_option("--scenario-large", ex_large, "transfer: target scenario");
  ex->add_option("--transfer", ex_kind, "transfer: users | panels");
  ex->add_option("--theta", ex_theta, "pre-trained theta JSON (rate-iter: skips training)");
  ex->add_option("--config", c.config_path, "experiment-options JSON");
  ex->add_option("--out", c.out_path, "CSV output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (c.threads != 0) set_max_threads(c.threads);

  if (gen->parsed()) {
    ScenarioConfig sc = resolve_scenario(c);
    ChannelDataset d = generate_rayleigh(sc.m(), sc.k, sc.b, gen_n, sc.seed);
    save_dataset(d, gen_out);
    std::cout << "wrote " << d.size() << " samples (" << sc.m() << "x" << sc.k << ", B="
              << sc.b << ") to " << gen_out << "\n";
    return 0;
  }

  if (tr->parsed()) {
    ScenarioConfig sc = resolve_scenario(c);
    ExperimentOptions opt = load_options(c.config_path);
    detail::ScenarioContext ctx = detail::make_context(sc, opt);
    if (!tr_data.empty()) {
      ChannelDataset loaded = load_dataset(tr_data);
      if (loaded.size() == 0)
        throw ConfigError("train: dataset '" + tr_data + "' is empty");
      if (loaded.samples[0].antennas() != sc.m() || loaded.samples[0].users() != sc.k ||
          loaded.samples[0].bins() != sc.b)
        throw ConfigError("train: dataset '" + tr_data + "' does not match scenario '" +
                          sc.name + "' dimensions");
      const std::size_t keep = std::min(opt.train_subset, loaded.size());
      loaded.samples.resize(keep);
      ctx.train_set = std::move(loaded);
    }
    const BlockDiagonalStructure st = sc.structure();
    LossOptions lo;
    if (tr_kind == "unconstrained") {
      lo = LossOptions::unconstrained_for(st);
    } else if (tr_kind == "sparse") {
      const double nlp = static_cast<double>(st.panels * st.rows_per_block *
                                             st.cols_per_block);
      lo = LossOptions::sparse_for(st, opt.gamma, tr_smax_frac * nlp);
    } else if (tr_kind == "quantized") {
      lo = LossOptions::quantized_for(st, tr_q);
    } else if (tr_kind == "robust") {
      lo = LossOptions::unconstrained_for(st);
      lo.sigma_e2 = tr_sigma_e2;
      lo.noise_seed = Rng::derive(sc.seed, 0xA14);
    } else {
      throw ConfigError("train: unknown kind '" + tr_kind + "'");
    }
    lo.surrogate = opt.surrogate;
    TrainingConfig cfg = opt.train_cfg;
    cfg.seed = Rng::derive(sc.seed, 0xA11);
    TrainResult res = train(default_theta_init(sc.j_iters, st, lo.kind), ctx.a,
                            ctx.train_set, ctx.params, cfg, lo);
    if (res.diverged)
      std::cerr << "warning: training diverged; kept last finite theta\n";
    ThetaProvenance prov;
    prov.seed = sc.seed;
    prov.config = "scenario=" + sc.name + " kind=" + tr_kind +
                  " eta=" + fmt_double(cfg.eta) + " epochs=" + std::to_string(cfg.epochs) +
                  " batch=" + std::to_string(cfg.batch_size);
    prov.dataset_tag = ctx.train_set.model_tag;
    save_theta(res.theta, tr_out, prov);
    std::cout << "trained " << tr_kind << " theta (J=" << sc.j_iters << ") on "
              << ctx.train_set.size() << " samples; ";
    if (!res.epoch_loss.empty())
      std::cout << "loss " << fmt_double(res.epoch_loss.front()) << " -> "
                << fmt_double(res.epoch_loss.back());
    std::cout << "; wrote " << tr_out << "\n";
    return 0;
  }

  if (ev->parsed()) {
    ScenarioConfig sc = resolve_scenario(c);
    ExperimentOptions opt;
    detail::ScenarioContext ctx = detail::make_context(sc, opt);
    if (!ev_data.empty()) {
      ChannelDataset loaded = load_dataset(ev_data);
      if (loaded.size() == 0)
        throw ConfigError("eval: dataset '" + ev_data + "' is empty");
      if (loaded.samples[0].antennas() != sc.m() || loaded.samples[0].users() != sc.k ||
          loaded.samples[0].bins() != sc.b)
        throw ConfigError("eval: dataset '" + ev_data + "' does not match scenario '" +
                          sc.name + "' dimensions");
      ctx.split.test = std::move(loaded);
    }
    HyperparameterSet theta = load_theta(ev_theta);
    if (theta.structure.total_rows() != sc.m() ||
        theta.structure.total_cols() != sc.lp())
      throw ConfigError("eval: theta shape does not match scenario");
    ProjectionSpec proj = ProjectionSpec::unit(theta.structure);
    if (ev_proj == "sparse")
      proj = ProjectionSpec::sparse_at(theta.structure, ev_zeta);
    else if (ev_proj == "quantized")
      proj = ProjectionSpec::quantized_at(theta.structure, ev_q);
    else if (ev_proj != "unit")
      throw ConfigError("eval: unknown projection '" + ev_proj + "'");
    detail::MethodRun mr = detail::run_theta(ctx, theta, proj, ctx.split.test);
    CsvTable t;
    detail::common_header(t, ctx, opt, "eval");
    t.comments.push_back("theta: " + ev_theta + " projection: " + ev_proj);
    t.columns = {"method", "j", "mean_rate", "std_rate"};
    detail::append_curve(t, "U-PGA+M", mr);
    emit(t, c.out_path);
    return 0;
  }

  // experiment
  ScenarioConfig sc = resolve_scenario(c);
  ExperimentOptions opt = load_options(c.config_path);
  CsvTable table;
  if (ex_which == "rate-iter") {
    if (!ex_theta.empty()) {
      std::ifstream probe(ex_theta);
      if (!probe)
        throw ConfigError("experiment rate-iter: trained theta '" + ex_theta +
                          "' not found; run `modbeam train --scenario " + sc.name +
                          "` first");
      opt.pretrained_theta = load_theta(ex_theta);
    }
    table = experiment_rate_vs_iteration(sc, opt);
  } else if (ex_which == "rate-snr") {
    table = experiment_rate_vs_snr(sc, ex_snr_list, opt);
  } else if (ex_which == "sparsity") {
    if (c.config_path.empty()) {
      opt.train_cfg.eta = 0.3;
      opt.train_cfg.epochs = 300;
      opt.train_subset = 128;
    }
    table = experiment_sparsity(sc, ex_smax_frac, opt);
  } else if (ex_which == "quantized") {
    table = experiment_quantized(sc, ex_q, opt);
  } else if (ex_which == "csi") {
    table = experiment_csi_robustness(sc, ex_sigma_list, opt);
  } else if (ex_which == "transfer") {
    ScenarioConfig small = scenario_by_name(ex_small);
    ScenarioConfig large = scenario_by_name(ex_large);
    if (c.seed != 0) {
      small.seed = c.seed;
      large.seed = Rng::derive(c.seed, 0xB1);
    }
    if (c.iters != 0) {
      small.j_iters = c.iters;
      large.j_iters = c.iters;
    }
    TransferKind kind = TransferKind::users;
    if (ex_kind == "panels")
      kind = TransferKind::panels;
    else if (ex_kind != "users")
      throw ConfigError("experiment transfer: unknown kind '" + ex_kind + "'");
    table = experiment_transfer(small, large, kind, opt);
  } else {
    throw ConfigError("experiment: unknown driver '" + ex_which + "'");
  }
  emit(table, c.out_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const modbeam::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const modbeam::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
