#pragma once

// Operating-point calibration: SNR estimation, hash-magnitude calibration,
// statistic sampling, Gaussian fits and the Neyman-Pearson threshold.
//
// The achieved downlink SNR is E[sum_j |<h, v_j>|^2] / (L sigma^2), averaged
// over decoded users of freshly drawn scenarios.  Because v scales exactly
// as 1/alpha when the regularizer alpha^2 sigma^2 is kept consistent,
// SNR(alpha) * alpha^2 is a constant C, estimated once at alpha = 1 and used
// to place alpha for any target SNR.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hashbeam/detect.hpp"
#include "hashbeam/errors.hpp"
#include "hashbeam/model.hpp"
#include "hashbeam/parallel.hpp"

namespace hashbeam {

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double lin) { return 10.0 * std::log10(lin); }

namespace detail {

// One scenario taken through beamforming: factors, unit weights and the
// transmit signal in M x L matrix form.
struct BuiltScenario {
  Scenario scen;
  Eigen::MatrixXcd A_dec;  // L x K
  Eigen::MatrixXcd H_dec;  // M x K
  Eigen::VectorXcd unit_weights;
  Eigen::MatrixXcd V;  // M x L
};

inline BuiltScenario build_and_beamform(const SystemConfig& config, std::uint64_t scen_key,
                                        std::optional<double> reg_override = {}) {
  BuiltScenario b;
  b.scen = build_scenario(config, scen_key);
  b.A_dec = hash_matrix(b.scen.decoded, config.hash_len, config.hash_mag);
  b.H_dec = channel_matrix(b.scen.decoded);
  const double reg = reg_override.value_or(config.lmmse_reg());
  b.unit_weights = solve_unit_weights(gram_from_factors(b.A_dec, b.H_dec), reg);
  b.V = transmit_matrix(b.A_dec, b.H_dec, b.unit_weights);
  return b;
}

struct ThetaRecord {
  int user = 0;
  bool decoded = false;
  Complex theta;
};

// Detection statistics for every user of one trial.  Noise streams are keyed
// per (trial, user), so output does not depend on evaluation order.
inline std::vector<ThetaRecord> trial_thetas(const SystemConfig& config,
                                             std::uint64_t class_tag,
                                             std::uint64_t trial_index) {
  const std::uint64_t tkey = trial_key(config.master_seed, class_tag, trial_index);
  const BuiltScenario b = build_and_beamform(config, tkey);
  const int total = config.total_users();
  const int L = config.hash_len;

  Eigen::MatrixXcd H_all(config.num_antennas, total);
  H_all.leftCols(config.num_decoded) = b.H_dec;
  for (int u = 0; u < config.num_undecoded; ++u)
    H_all.col(config.num_decoded + u) = b.scen.undecoded[u].channel;
  const Eigen::MatrixXcd P = H_all.adjoint() * b.V;  // P(i, j) = <h_i, v_j>

  std::vector<ThetaRecord> out(total);
  const double sd = std::sqrt(config.noise_var);
  Eigen::VectorXcd r(L);
  for (int i = 0; i < total; ++i) {
    const bool decoded = i < config.num_decoded;
    const UserSample& user =
        decoded ? b.scen.decoded[i] : b.scen.undecoded[i - config.num_decoded];
    r = P.row(i).transpose();
    if (config.noise_var > 0.0) {
      RngStream noise_rng = user_stream(tkey, tag::noise, i);
      for (int j = 0; j < L; ++j) r[j] += sd * noise_rng.next_cnormal();
    }
    const Eigen::VectorXcd a = hash_message(user.message, L, config.hash_mag);
    out[i] = {i, decoded, a.dot(r)};
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SNR estimation and alpha calibration

struct SnrEstimate {
  double snr = 0.0;
  double std_err = 0.0;  // over scenario means
  int num_scenarios = 0;
};

// Monte Carlo estimate of the downlink SNR of config.  reg_override decouples
// the beamformer regularizer from alpha^2 sigma^2 when a test needs that.
inline SnrEstimate estimate_snr(const SystemConfig& config, int num_scenarios,
                                std::uint64_t class_tag = tag::snr_cal, int threads = 1,
                                std::optional<double> reg_override = {}) {
  config.validate();
  if (!(config.noise_var > 0.0))
    throw ConfigError("estimate_snr requires noise_var > 0");
  if (num_scenarios < 2) throw InsufficientSamplesError("need at least 2 scenarios");

  std::vector<double> scenario_mean(num_scenarios);
  parallel_for(num_scenarios, threads, [&](std::size_t s) {
    const std::uint64_t key = trial_key(config.master_seed, class_tag, s);
    const detail::BuiltScenario b = detail::build_and_beamform(config, key, reg_override);
    // mean over decoded users of sum_j |<h_i, v_j>|^2
    scenario_mean[s] =
        (b.H_dec.adjoint() * b.V).rowwise().squaredNorm().mean();
  });

  double sum = 0.0;
  for (double x : scenario_mean) sum += x;
  const double mean = sum / num_scenarios;
  double ss = 0.0;
  for (double x : scenario_mean) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (num_scenarios - 1.0));
  const double denom = config.hash_len * config.noise_var;
  return {mean / denom, sd / std::sqrt(double(num_scenarios)) / denom, num_scenarios};
}

struct SnrTarget {
  double snr_db = 10.0;
  double sigma2 = 1.0;
};

struct AlphaCalibration {
  double alpha = 1.0;
  double c_const = 0.0;       // C = SNR * alpha^2, estimated at alpha = 1
  double c_std_err = 0.0;
  double target_linear = 0.0;
  SnrEstimate verification;   // fresh re-estimate at the returned alpha
};

// Places alpha so the achieved SNR meets target.snr_db, then re-estimates on
// fresh scenarios and errors out if the verified SNR deviates more than 5%.
inline AlphaCalibration calibrate_alpha(const SystemConfig& config, const SnrTarget& target,
                                        int num_scenarios, int verify_scenarios,
                                        int threads = 1) {
  if (!(target.sigma2 > 0.0)) throw ConfigError("SNR target requires sigma2 > 0");
  if (config.noise_var != target.sigma2)
    throw ConfigError("config.noise_var must match the SNR target's sigma2");
  const double target_linear = db_to_linear(target.snr_db);

  SystemConfig at_unit = config;
  at_unit.hash_mag = 1.0;
  const SnrEstimate c_est = estimate_snr(at_unit, num_scenarios, tag::snr_cal, threads);

  AlphaCalibration cal;
  cal.c_const = c_est.snr;  // SNR * alpha^2 at alpha = 1
  cal.c_std_err = c_est.std_err;
  cal.target_linear = target_linear;
  cal.alpha = std::sqrt(cal.c_const / target_linear);

  SystemConfig at_alpha = config;
  at_alpha.hash_mag = cal.alpha;
  cal.verification = estimate_snr(at_alpha, verify_scenarios, tag::snr_verify, threads);
  const double deviation = std::abs(cal.verification.snr - target_linear) / target_linear;
  if (deviation > 0.05)
    throw CalibrationError("calibrated SNR verification off by " +
                           std::to_string(deviation * 100.0) +
                           "% (> 5%); modeling assumption violated");
  return cal;
}

// ---------------------------------------------------------------------------
// Statistic sampling and discriminant fitting

struct StatisticSamples {
  std::vector<Complex> h1;  // decoded users
  std::vector<Complex> h0;  // undecoded users
  int num_trials = 0;
};

inline StatisticSamples sample_statistics(const SystemConfig& config, int num_trials,
                                          std::uint64_t class_tag = tag::stat_cal,
                                          int threads = 1) {
  config.validate();
  if (num_trials < 1) throw InsufficientSamplesError("need at least 1 trial");
  std::vector<std::vector<detail::ThetaRecord>> per_trial(num_trials);
  parallel_for(num_trials, threads, [&](std::size_t t) {
    per_trial[t] = detail::trial_thetas(config, class_tag, t);
  });
  StatisticSamples out;
  out.num_trials = num_trials;
  out.h1.reserve(std::size_t(num_trials) * config.num_decoded);
  out.h0.reserve(std::size_t(num_trials) * config.num_undecoded);
  for (const auto& trial : per_trial)
    for (const auto& rec : trial) (rec.decoded ? out.h1 : out.h0).push_back(rec.theta);
  return out;
}

// Mean and total variance of a circular complex Gaussian; the variance is
// floored at 1e-15 so degenerate (noiseless) sample sets stay usable.
inline std::pair<Complex, double> fit_gaussian(const std::vector<Complex>& samples) {
  if (samples.size() < 2)
    throw InsufficientSamplesError("fit_gaussian needs at least 2 samples");
  Complex mean = 0.0;
  for (const Complex& s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (const Complex& s : samples) var += std::norm(s - mean);
  var /= static_cast<double>(samples.size());
  return {mean, std::max(var, 1e-15)};
}

// Empirical (1 - target_pfa) quantile (higher interpolation) of the LLRs of
// the H0 samples, so at most a target_pfa fraction of them exceeds it.
inline double neyman_pearson_threshold(const std::vector<Complex>& h0_samples,
                                       const DiscriminantModel& model, double target_pfa) {
  if (!(target_pfa > 0.0) || !(target_pfa < 1.0))
    throw ConfigError("target_pfa must be in (0, 1)");
  model.validate();
  const std::size_t n = h0_samples.size();
  if (static_cast<double>(n) < 1.0 / target_pfa)
    throw InsufficientSamplesError("need at least 1/target_pfa H0 samples");
  std::vector<double> llrs(n);
  for (std::size_t i = 0; i < n; ++i) llrs[i] = log_likelihood_ratio(h0_samples[i], model);
  std::sort(llrs.begin(), llrs.end());
  const double t = (1.0 - target_pfa) * static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::ceil(t - 1e-9 * std::max(1.0, t)));
  k = std::clamp<std::size_t>(k, 1, n);
  return llrs[k - 1];
}

// ---------------------------------------------------------------------------
// Operating point

struct OperatingPoint {
  SystemConfig config;             // snapshot with the calibrated hash_mag
  std::optional<double> snr_db;    // empty = noiseless
  double alpha = 1.0;
  double c_const = 0.0;            // SNR * alpha^2 (0 when noiseless)
  double target_pfa = 0.05;
  DiscriminantModel model;
  int num_snr_scenarios = 0;
  int num_stat_trials = 0;
};

struct CalibrationCounts {
  int snr_scenarios = 2000;
  int snr_verify_scenarios = 1000;
  int stat_trials = 4000;
  double target_pfa = 0.05;
};

// Discriminant fit and threshold at the configured (alpha, sigma^2); no SNR
// targeting.  This is the common tail of every calibration flavor.
inline OperatingPoint calibrate_operating_point_at_config(const SystemConfig& config,
                                                          const CalibrationCounts& counts,
                                                          int threads = 1) {
  config.validate();
  OperatingPoint op;
  op.config = config;
  op.alpha = config.hash_mag;
  op.target_pfa = counts.target_pfa;
  op.num_snr_scenarios = 0;
  op.num_stat_trials = counts.stat_trials;

  const StatisticSamples stats =
      sample_statistics(config, counts.stat_trials, tag::stat_cal, threads);
  auto [mu1, var1] = fit_gaussian(stats.h1);
  auto [mu0, var0] = fit_gaussian(stats.h0);
  op.model = {mu0, var0, mu1, var1, 0.0};
  op.model.llr_threshold =
      neyman_pearson_threshold(stats.h0, op.model, counts.target_pfa);
  return op;
}

// Full calibration at one (K, M, L, SNR): alpha placement (noisy runs),
// discriminant fit, and the Neyman-Pearson threshold.  The noiseless marker
// (empty snr_db) forces noise_var = 0 and keeps alpha as configured, giving
// a zero regularizer.
inline OperatingPoint build_operating_point(const SystemConfig& base,
                                            std::optional<double> snr_db,
                                            const CalibrationCounts& counts,
                                            int threads = 1) {
  SystemConfig config = base;
  if (!snr_db) config.noise_var = 0.0;
  OperatingPoint op;
  if (snr_db) {
    const AlphaCalibration cal = calibrate_alpha(
        config, SnrTarget{*snr_db, config.noise_var}, counts.snr_scenarios,
        counts.snr_verify_scenarios, threads);
    config.hash_mag = cal.alpha;
    op = calibrate_operating_point_at_config(config, counts, threads);
    op.snr_db = snr_db;
    op.c_const = cal.c_const;
    op.num_snr_scenarios = counts.snr_scenarios;
  } else {
    op = calibrate_operating_point_at_config(config, counts, threads);
  }
  return op;
}

// snr_db in the document is a number (calibrated target), the string
// "noiseless" (zero-noise run), or null (operating point taken at the
// configured hash magnitude of a noisy system, no SNR target).
inline nlohmann::json operating_point_to_json(const OperatingPoint& op) {
  nlohmann::json j;
  j["config"] = config_to_json(op.config);
  if (op.snr_db)
    j["snr_db"] = *op.snr_db;
  else if (op.config.noise_var == 0.0)
    j["snr_db"] = "noiseless";
  else
    j["snr_db"] = nullptr;
  j["alpha"] = op.alpha;
  j["snr_alpha_sq"] = op.c_const;
  j["target_pfa"] = op.target_pfa;
  j["mu0"] = {op.model.mu0.real(), op.model.mu0.imag()};
  j["var0"] = op.model.var0;
  j["mu1"] = {op.model.mu1.real(), op.model.mu1.imag()};
  j["var1"] = op.model.var1;
  j["llr_threshold"] = op.model.llr_threshold;
  j["num_snr_scenarios"] = op.num_snr_scenarios;
  j["num_stat_trials"] = op.num_stat_trials;
  return j;
}

inline OperatingPoint operating_point_from_json(const nlohmann::json& j) {
  OperatingPoint op;
  try {
    op.config = config_from_json(j.at("config"));
    if (j.at("snr_db").is_string()) {
      if (j.at("snr_db").get<std::string>() != "noiseless")
        throw ConfigError("snr_db must be a number, \"noiseless\", or null");
      op.snr_db.reset();
    } else if (j.at("snr_db").is_null()) {
      op.snr_db.reset();
    } else {
      op.snr_db = j.at("snr_db").get<double>();
    }
    op.alpha = j.at("alpha").get<double>();
    op.c_const = j.at("snr_alpha_sq").get<double>();
    op.target_pfa = j.at("target_pfa").get<double>();
    const auto mu0 = j.at("mu0");
    const auto mu1 = j.at("mu1");
    op.model.mu0 = Complex(mu0.at(0).get<double>(), mu0.at(1).get<double>());
    op.model.mu1 = Complex(mu1.at(0).get<double>(), mu1.at(1).get<double>());
    op.model.var0 = j.at("var0").get<double>();
    op.model.var1 = j.at("var1").get<double>();
    op.model.llr_threshold = j.at("llr_threshold").get<double>();
    op.num_snr_scenarios = j.at("num_snr_scenarios").get<int>();
    op.num_stat_trials = j.at("num_stat_trials").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad operating-point document: ") + e.what());
  }
  op.model.validate();
  return op;
}

}  // namespace hashbeam
