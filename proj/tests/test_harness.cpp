#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "modbeam/experiments.hpp"
#include "modbeam/scenarios.hpp"

using namespace modbeam;

namespace {

/// Desk-scale configuration used by the driver tests below.
ScenarioConfig micro_scenario() {
  ScenarioConfig s;
  s.name = "micro";
  s.t = 2;
  s.p = 2;
  s.l = 1;
  s.n = 2;
  s.b = 1;
  s.k = 2;
  s.j_iters = 3;
  s.n_train = 24;
  s.n_val = 4;
  s.n_test = 8;
  s.seed = 5;
  return s;
}

ExperimentOptions micro_options() {
  ExperimentOptions opt;
  opt.j_long = 25;
  opt.tune_subset = 8;
  opt.train_subset = 16;
  opt.train_cfg = TrainingConfig{1.0, 4, 8, 2};
  opt.mu_grid = {0.01, 0.1};
  opt.beta_grid = {0.0, 0.5};
  return opt;
}

std::vector<std::vector<std::string>> rows_for(const CsvTable& t, const std::string& m) {
  std::vector<std::vector<std::string>> out;
  for (const auto& row : t.rows)
    if (row[0] == m) out.push_back(row);
  return out;
}

}  // namespace

TEST_CASE("scenario registry carries the experiment-section configurations") {
  const auto all = scenario_registry();
  REQUIRE(all.size() == 6);
  const ScenarioConfig s1 = scenario_by_name("scenario1");
  CHECK(s1.t == 5);
  CHECK(s1.p == 2);
  CHECK(s1.l == 4);
  CHECK(s1.n == 20);
  CHECK(s1.b == 2);
  CHECK(s1.k == 20);
  CHECK(s1.m() == 40);
  CHECK(scenario_by_name("scenario2").warning.find("Rayleigh") != std::string::npos);
  CHECK(scenario_by_name("scenario3").k == 50);
  CHECK(scenario_by_name("scenario4").k == 5);
  // L*P >= T holds everywhere, including the scaled-up scenario 6
  for (const auto& s : all) {
    CHECK(s.lp() >= s.t);
    s.validate();
    (void)s.make_connectivity();
  }
  CHECK(scenario_by_name("scenario6").t == 40);
  CHECK(scenario_by_name("scenario6").p == 16);
  CHECK_THROWS_AS(scenario_by_name("nope"), ConfigError);
}

TEST_CASE("connectivity patterns") {
  ConnectivityMatrix rr = ConnectivityMatrix::round_robin(5, 3);
  for (std::size_t q = 0; q < 5; ++q)
    for (std::size_t t = 0; t < 3; ++t)
      CHECK(rr.a(q, t) == (t == q % 3 ? cplx{1.0} : cplx{}));

  ScenarioConfig s = micro_scenario();
  s.a_pattern = "identity";
  CHECK(s.make_connectivity().a == ComplexMatrix::identity(2));
  s.t = 1;  // L*P == 2 != T
  CHECK_THROWS_AS(s.make_connectivity(), ConfigError);

  ScenarioConfig bad = micro_scenario();
  bad.a_pattern = "mystery";
  CHECK_THROWS_AS(bad.make_connectivity(), ConfigError);

  // explicit file pattern
  const std::string path =
      (std::filesystem::temp_directory_path() / "modbeam_conn.json").string();
  {
    std::ofstream out(path);
    out << R"({"rows":2,"cols":2,"entries":[1,0,0,1]})";
  }
  ScenarioConfig file_s = micro_scenario();
  file_s.a_pattern = "file:" + path;
  CHECK(file_s.make_connectivity().a == ComplexMatrix::identity(2));
  {
    std::ofstream out(path);
    out << R"({"rows":2,"cols":2,"entries":[1,0,0,2]})";
  }
  CHECK_THROWS_AS(file_s.make_connectivity(), ConfigError);
  std::remove(path.c_str());

  // a zero column leaves the equivalent channel rank deficient
  {
    std::ofstream out(path);
    out << R"({"rows":2,"cols":2,"entries":[1,0,1,0]})";
  }
  CHECK_THROWS_AS(file_s.make_connectivity(), ConfigError);
  std::remove(path.c_str());
}

TEST_CASE("rate-vs-iteration experiment: shared inits, methods, determinism") {
  const ScenarioConfig sc = micro_scenario();
  const ExperimentOptions opt = micro_options();
  CsvTable t1 = experiment_rate_vs_iteration(sc, opt);
  CsvTable t2 = experiment_rate_vs_iteration(sc, opt);
  CHECK(t1.to_string() == t2.to_string());

  REQUIRE(t1.columns == std::vector<std::string>{"method", "j", "mean_rate", "std_rate"});
  const auto upga = rows_for(t1, "U-PGA+M");
  const auto pga_short = rows_for(t1, "PGA+M@3");
  const auto pga_long = rows_for(t1, "PGA+M@25");
  const auto ls = rows_for(t1, "LineSearch@3");
  CHECK(upga.size() == sc.j_iters + 1);
  CHECK(pga_short.size() == sc.j_iters + 1);
  CHECK(pga_long.size() == opt.j_long + 1);
  CHECK(ls.size() == sc.j_iters + 1);

  // j = 0 rows agree across methods: all share the seeded initial beamformer
  CHECK(upga[0][2] == pga_short[0][2]);
  CHECK(upga[0][2] == pga_long[0][2]);
  CHECK(upga[0][2] == ls[0][2]);

  // header block documents scenario, seeds, grids, training config, version
  bool has_version = false, has_grids = false, has_training = false;
  for (const auto& line : t1.comments) {
    has_version |= line.find(kVersion) != std::string::npos;
    has_grids |= line.find("mu_grid") != std::string::npos;
    has_training |= line.find("training:") != std::string::npos;
  }
  CHECK(has_version);
  CHECK(has_grids);
  CHECK(has_training);
}

TEST_CASE("rate-vs-snr experiment is monotone in SNR for every method") {
  ScenarioConfig sc = micro_scenario();
  ExperimentOptions opt = micro_options();
  opt.include_line_search = false;  // keep the test quick
  CsvTable t = experiment_rate_vs_snr(sc, {-5.0, 5.0}, opt);
  for (const std::string method : {"U-PGA+M", "PGA+M@3", "PGA+M@25"}) {
    const auto rows = rows_for(t, method);
    REQUIRE(rows.size() == 2);
    CHECK(std::stod(rows[1][2]) > std::stod(rows[0][2]));
  }

  CsvTable single = experiment_rate_vs_snr(sc, {0.0}, opt);
  CHECK(rows_for(single, "U-PGA+M").size() == 1);
  CHECK_THROWS_AS(experiment_rate_vs_snr(sc, {}, opt), ConfigError);
}

TEST_CASE("sparsity experiment reports activity ratios") {
  ScenarioConfig sc = micro_scenario();
  ExperimentOptions opt = micro_options();
  opt.gamma = 0.05;
  CsvTable t = experiment_sparsity(sc, 0.75, opt);
  REQUIRE(t.columns ==
          std::vector<std::string>{"method", "mean_rate", "std_rate", "mean_activity"});
  const auto pa = rows_for(t, "U-PGA+M-PA");
  REQUIRE(pa.size() == 1);
  const double activity = std::stod(pa[0][3]);
  CHECK(activity <= 1.0);
  CHECK(activity >= 0.0);
  // unconstrained methods keep every phase shifter active
  CHECK(std::stod(rows_for(t, "U-PGA+M")[0][3]) == 1.0);
  CHECK(std::stod(rows_for(t, "PGA+M@3")[0][3]) == 1.0);
  CHECK_THROWS_AS(experiment_sparsity(sc, 0.0, opt), ConfigError);
}

TEST_CASE("quantized experiment keeps all methods on the quantized set") {
  ScenarioConfig sc = micro_scenario();
  ExperimentOptions opt = micro_options();
  opt.include_line_search = false;
  CsvTable t = experiment_quantized(sc, 4, opt);
  CHECK(!rows_for(t, "U-PGA+M").empty());
  CHECK(!rows_for(t, "PGA+M@25").empty());
  bool has_q = false;
  for (const auto& line : t.comments) has_q |= line.find("q_levels=4") != std::string::npos;
  CHECK(has_q);
  CHECK_THROWS_AS(experiment_quantized(sc, 1, opt), ConfigError);
}

TEST_CASE("csi experiment scores noisy-CSI beamformers against clean channels") {
  ScenarioConfig sc = micro_scenario();
  ExperimentOptions opt = micro_options();
  CsvTable t = experiment_csi_robustness(sc, {0.0, 0.4}, opt);
  for (const std::string method :
       {"U-PGA+M-robust", "U-PGA+M", "PGA+M@3", "PGA+M@25"}) {
    const auto rows = rows_for(t, method);
    REQUIRE(rows.size() == 2);
    // rates do not improve when the CSI noise grows
    CHECK(std::stod(rows[1][2]) <= std::stod(rows[0][2]) + 1e-9);
  }
  CHECK_THROWS_AS(experiment_csi_robustness(sc, {-0.1}, opt), ConfigError);
}

TEST_CASE("transfer experiment emits both panel-expansion modes") {
  ScenarioConfig small = micro_scenario();
  ScenarioConfig large = micro_scenario();
  large.name = "micro-large";
  large.p = 4;
  large.t = 4;
  large.seed = 11;
  ExperimentOptions opt = micro_options();
  CsvTable t = experiment_transfer(small, large, TransferKind::panels, opt);
  CHECK(rows_for(t, "U-PGA+M-kron").size() == 1);
  CHECK(rows_for(t, "U-PGA+M-avg").size() == 1);
  CHECK(rows_for(t, "PGA+M@25").size() == 1);

  // user transfer on matching panel geometry
  ScenarioConfig more_users = micro_scenario();
  more_users.name = "micro-k8";
  more_users.k = 8;
  more_users.seed = 12;
  CsvTable tu = experiment_transfer(small, more_users, TransferKind::users, opt);
  CHECK(rows_for(tu, "U-PGA+M-transfer").size() == 1);

  ScenarioConfig bad = large;
  bad.p = 3;  // not a multiple of 2
  CHECK_THROWS_AS(experiment_transfer(small, bad, TransferKind::panels, opt), ConfigError);
}

TEST_CASE("csv tables render a comment header and a stable body") {
  CsvTable t;
  t.comments = {"alpha", "beta"};
  t.columns = {"a", "b"};
  t.rows = {{"x", "1.5"}, {"y", "2"}};
  CHECK(t.to_string() == "# alpha\n# beta\na,b\nx,1.5\ny,2\n");
  CHECK(t.body() == "a,b\nx,1.5\ny,2\n");
}

TEST_CASE("tuned fixed PGA+M is monotone non-decreasing on most samples") {
  const ScenarioConfig sc = micro_scenario();
  const ExperimentOptions opt = micro_options();
  detail::ScenarioContext ctx = detail::make_context(sc, opt);
  const ProjectionSpec proj = ProjectionSpec::unit(sc.structure());
  const GridTuneResult tuned = grid_tune_fixed(ctx.a, ctx.tune_set, ctx.params, opt.j_long,
                                               opt.mu_grid, opt.beta_grid, proj);
  detail::MethodRun mr =
      detail::run_fixed_pga(ctx, tuned.mu, tuned.beta, opt.j_long, proj, ctx.split.test);
  std::size_t monotone = 0;
  for (const auto& rates : mr.rates) {
    bool ok = true;
    for (std::size_t j = 1; j < rates.size(); ++j)
      if (rates[j] < rates[j - 1] - 1e-9) ok = false;
    if (ok) ++monotone;
  }
  CHECK(monotone * 10 >= mr.rates.size() * 9);
}

TEST_CASE("rate-iter reuses a pretrained theta when provided") {
  const ScenarioConfig sc = micro_scenario();
  ExperimentOptions opt = micro_options();
  opt.include_line_search = false;
  opt.pretrained_theta = scalar_hyperparameters(sc.j_iters, 0.05, 0.5, sc.structure());
  CsvTable t = experiment_rate_vs_iteration(sc, opt);
  CHECK(!rows_for(t, "U-PGA+M").empty());
  opt.pretrained_theta = scalar_hyperparameters(sc.j_iters + 1, 0.05, 0.5, sc.structure());
  CHECK_THROWS_AS(experiment_rate_vs_iteration(sc, opt), ConfigError);
}
