#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "hashbeam/experiment.hpp"

using namespace hashbeam;
using Catch::Approx;

namespace {

SystemConfig small_config() {
  SystemConfig cfg;
  cfg.num_antennas = 4;
  cfg.hash_len = 2;
  cfg.num_decoded = 4;
  cfg.num_undecoded = 3;
  cfg.noise_var = 0.0;
  cfg.master_seed = 31337;
  return cfg;
}

// Operating point with a hand-set model, bypassing calibration.
OperatingPoint manual_op(const SystemConfig& cfg, double threshold) {
  OperatingPoint op;
  op.config = cfg;
  op.alpha = cfg.hash_mag;
  op.model = {Complex(0.0, 0.0), 1.0, Complex(1.0, 0.0), 1.0, threshold};
  return op;
}

std::filesystem::path temp_csv(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("wilson intervals match frozen reference values") {
  // Reference numbers computed independently at z = 1.959963984540054.
  WilsonInterval w = wilson_interval(0, 100);
  REQUIRE(w.lo == Approx(0.0).margin(1e-12));
  REQUIRE(w.hi == Approx(0.03699349820698568).margin(1e-12));
  w = wilson_interval(5, 100);
  REQUIRE(w.lo == Approx(0.02154367915436796).margin(1e-12));
  REQUIRE(w.hi == Approx(0.11175046923191913).margin(1e-12));
  w = wilson_interval(50, 1000);
  REQUIRE(w.lo == Approx(0.03813026239274882).margin(1e-12));
  REQUIRE(w.hi == Approx(0.06531382024425081).margin(1e-12));
  w = wilson_interval(100, 100);
  REQUIRE(w.lo == Approx(0.9630065017930143).margin(1e-12));
  REQUIRE(w.hi == 1.0);
  w = wilson_interval(1, 30);
  REQUIRE(w.lo == Approx(0.005908590381612455).margin(1e-12));
  REQUIRE(w.hi == Approx(0.16670390991409173).margin(1e-12));
}

TEST_CASE("wilson interval basics") {
  const WilsonInterval empty = wilson_interval(0, 0);
  REQUIRE(empty.lo == 0.0);
  REQUIRE(empty.hi == 1.0);
  // Interval covers the point estimate and tightens with more data.
  for (long n : {50L, 500L, 5000L}) {
    const WilsonInterval w = wilson_interval(n / 10, n);
    REQUIRE(w.lo < 0.1);
    REQUIRE(w.hi > 0.1);
  }
  REQUIRE(wilson_interval(50, 500).halfwidth() < wilson_interval(5, 50).halfwidth());
  REQUIRE(wilson_interval(500, 5000).halfwidth() < wilson_interval(50, 500).halfwidth());
}

TEST_CASE("noiseless trials acknowledge every decoded user") {
  const SystemConfig cfg = small_config();
  CalibrationCounts counts;
  counts.stat_trials = 60;
  const OperatingPoint op = build_operating_point(cfg, std::nullopt, counts);
  for (std::uint64_t t = 0; t < 20; ++t) {
    const auto recs = run_trial(op.config, op, t);
    REQUIRE(recs.size() == 7);
    for (const auto& r : recs) {
      if (r.decoded) {
        REQUIRE(std::abs(r.theta - Complex(1.0, 0.0)) < 1e-8);
        REQUIRE(r.decision == Decision::Ack);
      }
    }
  }
}

TEST_CASE("run_trial rejects an operating point from another system") {
  const SystemConfig cfg = small_config();
  SystemConfig other = cfg;
  other.hash_len = 5;
  const OperatingPoint op = manual_op(other, 0.0);
  REQUIRE_THROWS_AS(run_trial(cfg, op, 0), ConfigError);
}

TEST_CASE("threshold extremes pin the metrics to their limits") {
  SystemConfig cfg = small_config();
  cfg.noise_var = 1.0;

  const MetricsEstimate never = estimate_metrics(cfg, manual_op(cfg, 1e18), 150);
  REQUIRE(never.p_md == 1.0);
  REQUIRE(never.p_fa == 0.0);
  REQUIRE(never.misses == never.n_h1);
  REQUIRE(never.n_h1 == 150 * 4);
  REQUIRE(never.n_h0 == 150 * 3);

  const MetricsEstimate always = estimate_metrics(cfg, manual_op(cfg, -1e18), 150);
  REQUIRE(always.p_md == 0.0);
  REQUIRE(always.p_fa == 1.0);
  REQUIRE(always.false_alarms == always.n_h0);
}

TEST_CASE("metrics with no undecoded users report a zero false-alarm rate") {
  SystemConfig cfg = small_config();
  cfg.num_undecoded = 0;
  const MetricsEstimate m = estimate_metrics(cfg, manual_op(cfg, -1e18), 120);
  REQUIRE(m.n_h0 == 0);
  REQUIRE(m.p_fa == 0.0);
  REQUIRE(m.fa_ci.lo == 0.0);
  REQUIRE(m.fa_ci.hi == 1.0);
}

TEST_CASE("estimate_metrics needs enough trials and is thread-count invariant") {
  SystemConfig cfg = small_config();
  cfg.noise_var = 0.5;
  const OperatingPoint op = manual_op(cfg, 0.0);
  REQUIRE_THROWS_AS(estimate_metrics(cfg, op, 99), InsufficientSamplesError);

  const MetricsEstimate a = estimate_metrics(cfg, op, 250, 1);
  const MetricsEstimate b = estimate_metrics(cfg, op, 250, 4);
  REQUIRE(a.misses == b.misses);
  REQUIRE(a.false_alarms == b.false_alarms);
  REQUIRE(a.p_md == b.p_md);
  REQUIRE(a.p_fa == b.p_fa);
}

TEST_CASE("noiseless minimal hash length equals the antenna-count bound") {
  SearchOptions opt;
  opt.class_sample_target = 3000;

  SystemConfig base;
  base.num_antennas = 10;
  base.num_decoded = 10;
  base.num_undecoded = 10;
  base.master_seed = 2001;
  SweepPoint p = find_min_hash_length(base, std::nullopt, opt);
  REQUIRE(p.required_hash_len == 1);
  REQUIRE(p.at_required.p_md == 0.0);
  REQUIRE_FALSE(p.below_required.has_value());
  REQUIRE(p.num_decoded == 10);
  REQUIRE(p.num_antennas == 10);

  base.num_decoded = 25;
  base.num_undecoded = 25;
  p = find_min_hash_length(base, std::nullopt, opt);
  REQUIRE(p.required_hash_len == 3);  // ceil(25 / 10)
  REQUIRE(p.at_required.p_md == 0.0);

  base.num_decoded = 7;
  base.num_antennas = 3;
  base.num_undecoded = 7;
  p = find_min_hash_length(base, std::nullopt, opt);
  REQUIRE(p.required_hash_len == 3);  // ceil(7 / 3)
}

TEST_CASE("noisy minimal hash length exceeds the bound and brackets the target") {
  SystemConfig base;
  base.num_antennas = 5;
  base.num_decoded = 10;
  base.num_undecoded = 10;
  base.noise_var = 1.0;
  base.master_seed = 2002;
  SearchOptions opt;
  opt.class_sample_target = 3000;
  opt.snr_user_sample_target = 20000;

  const SweepPoint p = find_min_hash_length(base, 10.0, opt);
  REQUIRE(p.required_hash_len > 2);  // noise forces extra slots over ceil(K/M)
  REQUIRE(p.at_required.p_md <= opt.targets.p_md);
  REQUIRE(p.at_required.p_fa < 0.10);  // pinned near the 5% design point
  REQUIRE(p.alpha > 0.0);
  REQUIRE(p.snr_db == 10.0);
  if (p.below_required) {
    // One slot fewer missed a target.
    const bool md_fail = p.below_required->p_md > opt.targets.p_md;
    const bool fa_fail = p.below_required->p_fa > opt.targets.p_fa;
    REQUIRE((md_fail || fa_fail));
  }
}

TEST_CASE("search rejects bad inputs") {
  SystemConfig base;
  base.noise_var = 0.0;
  SearchOptions opt;
  REQUIRE_THROWS_AS(find_min_hash_length(base, 10.0, opt), ConfigError);
  REQUIRE_THROWS_AS(sweep({}, base, opt), ConfigError);
}

TEST_CASE("figure presets enumerate the published grids") {
  const auto fig3 = preset_grid("fig3");
  REQUIRE(fig3.size() == 18);
  for (const auto& gp : fig3) REQUIRE(gp.num_antennas == 10);
  REQUIRE(fig3[0] == GridPoint{10, 10, std::nullopt});
  REQUIRE(fig3[6] == GridPoint{10, 10, 5.0});
  REQUIRE(fig3[17] == GridPoint{200, 10, 10.0});

  const auto fig4 = preset_grid("fig4");
  REQUIRE(fig4.size() == 18);
  for (const auto& gp : fig4) REQUIRE(gp.snr_db == 10.0);
  REQUIRE(fig4[0] == GridPoint{10, 10, 10.0});
  REQUIRE(fig4[12] == GridPoint{10, 50, 10.0});

  REQUIRE_THROWS_AS(preset_grid("fig5"), ConfigError);
}

TEST_CASE("snr codes separate curves") {
  REQUIRE(snr_code(std::nullopt) == 0);
  REQUIRE(snr_code(5.0) == 5001);
  REQUIRE(snr_code(10.0) == 10001);
}

TEST_CASE("sweep orders points, assigns per-point seeds, and records errors") {
  SystemConfig base;
  base.master_seed = 77;
  SearchOptions opt;
  opt.class_sample_target = 2500;
  const std::vector<GridPoint> grid = {
      {20, 5, std::nullopt}, {10, 5, std::nullopt}, {10, 4, std::nullopt}};
  const SweepResult res = sweep(grid, base, opt);
  REQUIRE(res.errors.empty());
  REQUIRE(res.points.size() == 3);
  // Sorted by (M, SNR, K) regardless of grid order.
  REQUIRE(res.points[0].num_antennas == 4);
  REQUIRE(res.points[1].num_decoded == 10);
  REQUIRE(res.points[2].num_decoded == 20);
  REQUIRE(res.points[1].num_antennas == 5);
  REQUIRE(res.points[1].seed != res.points[2].seed);
  REQUIRE(res.points[0].required_hash_len == 3);  // ceil(10/4)
  REQUIRE(res.points[1].required_hash_len == 2);  // ceil(10/5)
  REQUIRE(res.points[2].required_hash_len == 4);  // ceil(20/5)

  // K_u mirrors K, so K = 1 gives a single undecoded user and far too few
  // H0 samples per trial for the threshold fit; the error is recorded.
  SearchOptions tiny = opt;
  tiny.cal.stat_trials = 10;
  tiny.class_sample_target = 0;
  const SweepResult bad = sweep({{1, 1, std::nullopt}}, base, tiny);
  REQUIRE(bad.points.empty());
  REQUIRE(bad.errors.size() == 1);
  REQUIRE(bad.errors[0].point == GridPoint{1, 1, std::nullopt});
  REQUIRE_FALSE(bad.errors[0].message.empty());
}

TEST_CASE("sweep CSV round-trips exactly") {
  std::vector<SweepRow> rows(2);
  rows[0] = {10, 10, std::nullopt, 1, 0.0,  0.0,  0.0019, 0.046, 0.04, 0.055, 400, 1.0, 123u};
  rows[1] = {25, 10, 10.0,         8, 0.031, 0.025, 0.04,  0.052, 0.044, 0.061, 160, 0.62, 456u};
  const auto path = temp_csv("hashbeam_rows_test.csv");
  persist_results(rows, path);
  const auto back = load_results(path);
  REQUIRE(back == rows);

  const std::string text = slurp(path);
  REQUIRE(text.find("K,M,snr_db,required_L,") == 0);
  REQUIRE(text.find("noiseless") != std::string::npos);
  std::filesystem::remove(path);
}

TEST_CASE("CSV loader reports schema and parse problems precisely") {
  const auto path = temp_csv("hashbeam_badcsv_test.csv");

  std::ofstream(path) << "K,M\n";
  REQUIRE_THROWS_WITH(load_results(path), Catch::Matchers::ContainsSubstring("snr_db"));

  std::ofstream(path) << "M,K,snr_db,required_L,p_md,p_md_lo,p_md_hi,p_fa,p_fa_lo,p_fa_hi,"
                         "trials,alpha,seed\n";
  REQUIRE_THROWS_WITH(load_results(path),
                      Catch::Matchers::ContainsSubstring("unexpected column layout"));

  std::ofstream(path) << "K,M,snr_db,required_L,p_md,p_md_lo,p_md_hi,p_fa,p_fa_lo,p_fa_hi,"
                         "trials,alpha,seed\n"
                         "10,10,noiseless,1,zzz,0,0,0,0,0,100,1,5\n";
  REQUIRE_THROWS_WITH(load_results(path), Catch::Matchers::ContainsSubstring("line 2") &&
                                              Catch::Matchers::ContainsSubstring("p_md"));

  std::ofstream(path) << "K,M,snr_db,required_L,p_md,p_md_lo,p_md_hi,p_fa,p_fa_lo,p_fa_hi,"
                         "trials,alpha,seed\n"
                         "10,10,noiseless,1\n";
  REQUIRE_THROWS_WITH(load_results(path),
                      Catch::Matchers::ContainsSubstring("expected 13 fields"));

  std::filesystem::remove(path);
  REQUIRE_THROWS_AS(load_results(path), IoError);
}

TEST_CASE("curve files hold K and required_L only") {
  std::vector<SweepRow> rows(2);
  rows[0].K = 10;
  rows[0].required_L = 1;
  rows[1].K = 25;
  rows[1].required_L = 3;
  const auto path = temp_csv("hashbeam_curve_test.csv");
  write_curve_csv(rows, path);
  REQUIRE(slurp(path) == "K,required_L\n10,1\n25,3\n");
  std::filesystem::remove(path);
}

TEST_CASE("sweep output is byte-identical across thread counts") {
  SystemConfig base;
  base.master_seed = 88;
  SearchOptions opt;
  opt.class_sample_target = 2500;
  const std::vector<GridPoint> grid = {{10, 10, std::nullopt}, {15, 10, std::nullopt}};

  const auto p1 = temp_csv("hashbeam_sweep_t1.csv");
  const auto p4 = temp_csv("hashbeam_sweep_t4.csv");
  opt.threads = 1;
  persist_results(sweep(grid, base, opt).points, p1);
  opt.threads = 4;
  persist_results(sweep(grid, base, opt).points, p4);
  REQUIRE(slurp(p1) == slurp(p4));
  std::filesystem::remove(p1);
  std::filesystem::remove(p4);
}

TEST_CASE("linear fits recover exact and noisy relationships") {
  const LinearFit exact = linear_fit({0, 1, 2, 3}, {1, 3, 5, 7});
  REQUIRE(exact.slope == Approx(2.0));
  REQUIRE(exact.intercept == Approx(1.0));
  REQUIRE(exact.r_squared == Approx(1.0));

  // Hand-worked: slope 1.3, intercept -0.2, R^2 = 1 - 0.3/8.75.
  const LinearFit noisy = linear_fit({0, 1, 2, 3}, {0, 1, 2, 4});
  REQUIRE(noisy.slope == Approx(1.3));
  REQUIRE(noisy.intercept == Approx(-0.2));
  REQUIRE(noisy.r_squared == Approx(1.0 - 0.3 / 8.75));

  REQUIRE_THROWS_AS(linear_fit({1.0}, {1.0}), ConfigError);
  REQUIRE_THROWS_AS(linear_fit({1, 2}, {1, 2, 3}), ConfigError);
}
