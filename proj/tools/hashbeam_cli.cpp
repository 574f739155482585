// Command-line front end: calibrate an operating point, inspect single
// trials, estimate miss/false-alarm rates, and sweep minimal hash lengths
// over (K, M, SNR) grids.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hashbeam/hashbeam.hpp"

namespace fs = std::filesystem;
using namespace hashbeam;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::uint64_t> seed;
  int threads = default_thread_count();
  std::string output_dir = ".";
  bool print_config = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "system config JSON file");
  cmd->add_option("--set", args.overrides,
                  "override a config key, e.g. --set hash_len=12 (repeatable; "
                  "trial/metrics also accept llr_threshold)");
  cmd->add_option("--seed", args.seed, "master seed (beats HASHBEAM_SEED and --set)");
  cmd->add_option("--threads", args.threads, "worker thread cap")
      ->check(CLI::PositiveNumber);
  cmd->add_option("-o,--output", args.output_dir, "output directory");
  cmd->add_flag("--print-config", args.print_config,
                "print the effective config JSON and exit");
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t parse_u64_arg(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw UsageError("bad " + what + " value '" + s + "'");
  return v;
}

double parse_double_arg(const std::string& s, const std::string& what) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw UsageError("bad " + what + " value '" + s + "'");
  return v;
}

// Builds the effective config: defaults or file, then HASHBEAM_SEED, then
// --set overrides, then --seed.  llr_threshold overrides are returned
// separately when the subcommand allows them.
SystemConfig effective_config(const CommonArgs& args, bool allow_threshold_override,
                              std::optional<double>* llr_override) {
  nlohmann::json j;
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in) throw IoError("cannot read config file '" + args.config_path + "'");
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("config file '" + args.config_path + "' is not valid JSON: " + e.what());
    }
  } else {
    j = config_to_json(SystemConfig{});
  }
  SystemConfig cfg = config_from_json(j);

  if (const char* env = std::getenv("HASHBEAM_SEED"); env && !args.seed)
    cfg.master_seed = parse_u64_arg(env, "HASHBEAM_SEED");

  for (const std::string& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    if (key == "num_antennas")
      cfg.num_antennas = static_cast<int>(parse_u64_arg(val, key));
    else if (key == "hash_len")
      cfg.hash_len = static_cast<int>(parse_u64_arg(val, key));
    else if (key == "num_decoded")
      cfg.num_decoded = static_cast<int>(parse_u64_arg(val, key));
    else if (key == "num_undecoded")
      cfg.num_undecoded = static_cast<int>(parse_u64_arg(val, key));
    else if (key == "message_bits")
      cfg.message_bits = static_cast<int>(parse_u64_arg(val, key));
    else if (key == "noise_var")
      cfg.noise_var = parse_double_arg(val, key);
    else if (key == "hash_mag")
      cfg.hash_mag = parse_double_arg(val, key);
    else if (key == "master_seed")
      cfg.master_seed = parse_u64_arg(val, key);
    else if (key == "llr_threshold" && allow_threshold_override)
      *llr_override = parse_double_arg(val, key);
    else
      throw UsageError("--set: unknown key '" + key + "'");
  }
  if (args.seed) cfg.master_seed = *args.seed;
  cfg.validate();
  return cfg;
}

std::optional<std::optional<double>> parse_snr_arg(const std::string& snr_arg) {
  if (snr_arg.empty()) return std::nullopt;  // not given: use config as-is
  if (snr_arg == "noiseless") {
    // Engaged outer holding an empty inner: "given, and it means noiseless".
    return std::optional<std::optional<double>>{std::in_place};
  }
  return std::optional<std::optional<double>>{parse_double_arg(snr_arg, "--snr-db")};
}

// Operating point per the CLI inputs: load from --op, or calibrate (to a
// target SNR, the noiseless marker, or the configured hash magnitude).
OperatingPoint resolve_operating_point(SystemConfig& cfg, const std::string& op_path,
                                       const std::string& snr_arg,
                                       const CalibrationCounts& counts, int threads) {
  if (!op_path.empty()) {
    std::ifstream in(op_path);
    if (!in) throw IoError("cannot read operating point '" + op_path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("operating point '" + op_path + "' is not valid JSON: " + e.what());
    }
    OperatingPoint op = operating_point_from_json(j);
    // Evaluation follows the operating point's system; keep the caller's seed.
    const std::uint64_t seed = cfg.master_seed;
    cfg = op.config;
    cfg.master_seed = seed;
    return op;
  }
  const auto snr = parse_snr_arg(snr_arg);
  OperatingPoint op;
  if (snr.has_value()) {
    op = build_operating_point(cfg, *snr, counts, threads);
  } else {
    op = calibrate_operating_point_at_config(cfg, counts, threads);
  }
  cfg = op.config;
  return op;
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string decision_name(Decision d) { return d == Decision::Ack ? "ACK" : "NO_ACK"; }

std::vector<GridPoint> load_grid_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grid file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("grid file '" + path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "K,M,snr_db")
    throw IoError("grid file must start with header 'K,M,snr_db'");
  std::vector<GridPoint> grid;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string k, m, snr;
    if (!std::getline(ss, k, ',') || !std::getline(ss, m, ',') || !std::getline(ss, snr))
      throw IoError("grid line " + std::to_string(line_no) + ": expected K,M,snr_db");
    GridPoint gp;
    gp.num_decoded = static_cast<int>(parse_u64_arg(k, "grid K"));
    gp.num_antennas = static_cast<int>(parse_u64_arg(m, "grid M"));
    if (snr == "noiseless")
      gp.snr_db.reset();
    else
      gp.snr_db = parse_double_arg(snr, "grid snr_db");
    grid.push_back(gp);
  }
  if (grid.empty()) throw IoError("grid file has no rows");
  return grid;
}

std::string metric_line(const char* name, double p, const WilsonInterval& ci, long count,
                        long n) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s = %.6f  [%.6f, %.6f]  (%ld / %ld)", name, p, ci.lo,
                ci.hi, count, n);
  return buf;
}

void write_metrics_csv(const SystemConfig& cfg, const OperatingPoint& op,
                       const MetricsEstimate& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "K,M,L,snr_db,p_md,p_md_lo,p_md_hi,p_fa,p_fa_lo,p_fa_hi,n_h1,n_h0,trials,alpha,"
         "llr_threshold,seed\n";
  out << cfg.num_decoded << ',' << cfg.num_antennas << ',' << cfg.hash_len << ','
      << (op.snr_db ? format_double(*op.snr_db)
                    : (cfg.noise_var == 0.0 ? std::string("noiseless") : std::string("")))
      << ',' << format_double(m.p_md) << ',' << format_double(m.md_ci.lo) << ','
      << format_double(m.md_ci.hi) << ',' << format_double(m.p_fa) << ','
      << format_double(m.fa_ci.lo) << ',' << format_double(m.fa_ci.hi) << ',' << m.n_h1
      << ',' << m.n_h0 << ',' << m.num_trials << ',' << format_double(op.alpha) << ','
      << format_double(op.model.llr_threshold) << ',' << cfg.master_seed << "\n";
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// One plot file per curve: fig3 groups by SNR, fig4 by antenna count, and
// plain grids by both.
void export_curves(const std::string& stem, const std::string& preset,
                   const std::vector<SweepPoint>& points, const fs::path& dir) {
  auto snr_label = [](const SweepPoint& p) {
    return p.snr_db ? "snr" + format_double(*p.snr_db) + "dB" : std::string("noiseless");
  };
  auto label = [&](const SweepPoint& p) -> std::string {
    if (preset == "fig3") return snr_label(p);
    if (preset == "fig4") return "m" + std::to_string(p.num_antennas);
    return "m" + std::to_string(p.num_antennas) + "_" + snr_label(p);
  };
  std::map<std::string, std::vector<SweepRow>> curves;
  for (const auto& p : points) curves[label(p)].push_back(to_row(p));
  for (auto& [name, rows] : curves) {
    std::sort(rows.begin(), rows.end(),
              [](const SweepRow& a, const SweepRow& b) { return a.K < b.K; });
    write_curve_csv(rows, dir / (stem + "_" + name + ".csv"));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hash-and-beamform downlink acknowledgment simulator"};
  app.require_subcommand(1);

  CommonArgs cal_args, trial_args, metrics_args, sweep_args;
  std::string cal_snr, trial_snr, metrics_snr;
  std::string trial_op, metrics_op;
  double target_pfa = 0.05;
  int snr_scenarios = 2000, stat_trials = 4000;
  std::uint64_t trial_index = 0;
  int metrics_trials = 4000;
  std::string sweep_preset, sweep_grid_path;
  int sweep_trials = 4000;
  int class_sample_target = 0, snr_sample_target = 0;

  CLI::App* cal = app.add_subcommand("calibrate", "calibrate and write an operating point");
  add_common(cal, cal_args);
  cal->add_option("--snr-db", cal_snr, "target SNR in dB, or 'noiseless'");
  cal->add_option("--target-pfa", target_pfa, "false-alarm budget (default 0.05)");
  cal->add_option("--snr-scenarios", snr_scenarios, "scenarios for SNR/alpha calibration");
  cal->add_option("--stat-trials", stat_trials, "trials for statistic sampling");

  CLI::App* trial = app.add_subcommand("trial", "run one scenario and print per-user results");
  add_common(trial, trial_args);
  trial->add_option("--op", trial_op, "operating-point JSON (skips calibration)");
  trial->add_option("--snr-db", trial_snr, "target SNR in dB, or 'noiseless'");
  trial->add_option("--trial-index", trial_index, "trial index (default 0)");
  trial->add_option("--target-pfa", target_pfa, "false-alarm budget (default 0.05)");
  trial->add_option("--snr-scenarios", snr_scenarios, "scenarios for SNR/alpha calibration");
  trial->add_option("--stat-trials", stat_trials, "trials for statistic sampling");

  CLI::App* metrics = app.add_subcommand("metrics", "estimate P_MD / P_FA at an operating point");
  add_common(metrics, metrics_args);
  metrics->add_option("--op", metrics_op, "operating-point JSON (skips calibration)");
  metrics->add_option("--snr-db", metrics_snr, "target SNR in dB, or 'noiseless'");
  metrics->add_option("--trials", metrics_trials, "evaluation trials (default 4000)");
  metrics->add_option("--target-pfa", target_pfa, "false-alarm budget (default 0.05)");
  metrics->add_option("--snr-scenarios", snr_scenarios, "scenarios for SNR/alpha calibration");
  metrics->add_option("--stat-trials", stat_trials, "trials for statistic sampling");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "minimal hash length over a (K,M,SNR) grid");
  add_common(sweep_cmd, sweep_args);
  sweep_cmd->add_option("--preset", sweep_preset, "figure preset: fig3 or fig4");
  sweep_cmd->add_option("--grid", sweep_grid_path, "grid CSV with header K,M,snr_db");
  sweep_cmd->add_option("--trials", sweep_trials, "evaluation trials per point (default 4000)");
  sweep_cmd->add_option("--target-pfa", target_pfa, "false-alarm budget (default 0.05)");
  sweep_cmd->add_option("--snr-scenarios", snr_scenarios, "scenarios for SNR/alpha calibration");
  sweep_cmd->add_option("--stat-trials", stat_trials, "trials for statistic sampling");
  sweep_cmd->add_option("--class-sample-target", class_sample_target,
                        "shrink trial counts towards this many per-class samples");
  sweep_cmd->add_option("--snr-sample-target", snr_sample_target,
                        "shrink SNR scenario counts towards this many per-user samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (cal->parsed()) {
      std::optional<double> no_override;
      SystemConfig cfg = effective_config(cal_args, false, &no_override);
      if (cal_args.print_config) {
        std::cout << config_to_json(cfg).dump(2) << "\n";
        return 0;
      }
      CalibrationCounts counts{snr_scenarios, std::max(1, snr_scenarios / 2), stat_trials,
                               target_pfa};
      OperatingPoint op = resolve_operating_point(cfg, "", cal_snr, counts, cal_args.threads);
      fs::create_directories(cal_args.output_dir);
      const fs::path out = fs::path(cal_args.output_dir) / "operating_point.json";
      write_json(operating_point_to_json(op), out);
      std::cout << "alpha = " << format_double(op.alpha)
                << "  llr_threshold = " << format_double(op.model.llr_threshold)
                << "\nwrote " << out.string() << "\n";
    } else if (trial->parsed()) {
      std::optional<double> llr_override;
      SystemConfig cfg = effective_config(trial_args, true, &llr_override);
      if (trial_args.print_config) {
        std::cout << config_to_json(cfg).dump(2) << "\n";
        return 0;
      }
      CalibrationCounts counts{snr_scenarios, std::max(1, snr_scenarios / 2), stat_trials,
                               target_pfa};
      OperatingPoint op =
          resolve_operating_point(cfg, trial_op, trial_snr, counts, trial_args.threads);
      if (llr_override) op.model.llr_threshold = *llr_override;
      const auto records = run_trial(cfg, op, trial_index);
      std::cout << "user,class,theta_re,theta_im,llr,decision\n";
      for (const auto& r : records)
        std::cout << r.user << ',' << (r.decoded ? "decoded" : "undecoded") << ','
                  << format_double(r.theta.real()) << ',' << format_double(r.theta.imag())
                  << ',' << format_double(r.llr) << ',' << decision_name(r.decision) << "\n";
    } else if (metrics->parsed()) {
      std::optional<double> llr_override;
      SystemConfig cfg = effective_config(metrics_args, true, &llr_override);
      if (metrics_args.print_config) {
        std::cout << config_to_json(cfg).dump(2) << "\n";
        return 0;
      }
      CalibrationCounts counts{snr_scenarios, std::max(1, snr_scenarios / 2), stat_trials,
                               target_pfa};
      OperatingPoint op =
          resolve_operating_point(cfg, metrics_op, metrics_snr, counts, metrics_args.threads);
      if (llr_override) op.model.llr_threshold = *llr_override;
      const MetricsEstimate m =
          estimate_metrics(cfg, op, metrics_trials, metrics_args.threads);
      std::cout << metric_line("P_MD", m.p_md, m.md_ci, m.misses, m.n_h1) << "\n"
                << metric_line("P_FA", m.p_fa, m.fa_ci, m.false_alarms, m.n_h0) << "\n";
      fs::create_directories(metrics_args.output_dir);
      const fs::path out = fs::path(metrics_args.output_dir) / "metrics.csv";
      write_metrics_csv(cfg, op, m, out);
      std::cout << "wrote " << out.string() << "\n";
    } else if (sweep_cmd->parsed()) {
      std::optional<double> no_override;
      SystemConfig cfg = effective_config(sweep_args, false, &no_override);
      if (sweep_args.print_config) {
        std::cout << config_to_json(cfg).dump(2) << "\n";
        return 0;
      }
      if (sweep_preset.empty() == sweep_grid_path.empty())
        throw UsageError("sweep needs exactly one of --preset or --grid");
      const std::vector<GridPoint> grid =
          sweep_preset.empty() ? load_grid_csv(sweep_grid_path) : preset_grid(sweep_preset);

      SearchOptions opt;
      opt.eval_trials = sweep_trials;
      opt.cal.snr_scenarios = snr_scenarios;
      opt.cal.snr_verify_scenarios = std::max(1, snr_scenarios / 2);
      opt.cal.stat_trials = stat_trials;
      opt.cal.target_pfa = target_pfa;
      opt.targets.p_fa = target_pfa;
      opt.class_sample_target = class_sample_target;
      opt.snr_user_sample_target = snr_sample_target;
      opt.threads = sweep_args.threads;

      const SweepResult result = sweep(grid, cfg, opt);
      for (const auto& p : result.points) {
        std::cout << "K=" << p.num_decoded << " M=" << p.num_antennas
                  << " snr=" << format_snr(p.snr_db) << " required_L=" << p.required_hash_len
                  << " p_md=" << format_double(p.at_required.p_md)
                  << " p_fa=" << format_double(p.at_required.p_fa) << "\n";
      }
      for (const auto& e : result.errors)
        std::cerr << "point K=" << e.point.num_decoded << " M=" << e.point.num_antennas
                  << " snr=" << format_snr(e.point.snr_db) << " failed: " << e.message << "\n";

      fs::create_directories(sweep_args.output_dir);
      const std::string stem = sweep_preset.empty() ? "sweep" : "sweep_" + sweep_preset;
      const fs::path out = fs::path(sweep_args.output_dir) / (stem + ".csv");
      persist_results(result.points, out);
      std::cout << "wrote " << out.string() << "\n";
      export_curves(stem, sweep_preset, result.points, fs::path(sweep_args.output_dir));
      if (!result.errors.empty()) return 2;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
