#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <complex>

#include "hashbeam/beamform.hpp"
#include "hashbeam/detect.hpp"
#include "hashbeam/model.hpp"
#include "hashbeam/rng.hpp"

using namespace hashbeam;
using Catch::Approx;

namespace {

TransmitSignal make_tx(std::initializer_list<Complex> values, Eigen::Index block_len) {
  TransmitSignal tx;
  tx.v.resize(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (Complex c : values) tx.v[i++] = c;
  tx.block_len = block_len;
  return tx;
}

}  // namespace

TEST_CASE("noiseless reception takes per-block inner products") {
  // Two blocks of two antennas: v = [1, i | 2, 0].
  const Complex i(0.0, 1.0);
  const TransmitSignal tx = make_tx({1.0, i, 2.0, 0.0}, 2);
  Eigen::VectorXcd channel(2);
  channel << 1.0, -i;  // <h, .> conjugates h
  RngStream rng(1);
  const UserObservation obs = receive(tx, channel, 0.0, rng, 7, true);
  REQUIRE(obs.user == 7);
  REQUIRE(obs.decoded);
  REQUIRE(obs.r.size() == 2);
  // block 0: conj(1)*1 + conj(-i)*i = 1 + (i)(i) = 0.
  REQUIRE(obs.r[0] == Complex(0.0, 0.0));
  // block 1: conj(1)*2 + conj(-i)*0 = 2.
  REQUIRE(obs.r[1] == Complex(2.0, 0.0));
}

TEST_CASE("a channel orthogonal to every block observes zero") {
  const TransmitSignal tx = make_tx({1.0, 1.0, Complex(0.0, 2.0), Complex(0.0, 2.0)}, 2);
  Eigen::VectorXcd channel(2);
  channel << 1.0, -1.0;
  RngStream rng(2);
  const UserObservation obs = receive(tx, channel, 0.0, rng);
  REQUIRE(obs.r.norm() == 0.0);
}

TEST_CASE("receive checks dimensions") {
  const TransmitSignal tx = make_tx({1.0, 2.0}, 2);
  Eigen::VectorXcd channel(3);
  channel.setZero();
  RngStream rng(3);
  REQUIRE_THROWS_AS(receive(tx, channel, 0.0, rng), DimensionError);
}

TEST_CASE("with a silent transmitter the observation is pure noise of the set variance") {
  const int L = 10;
  TransmitSignal tx;
  tx.v = Eigen::VectorXcd::Zero(3 * L);
  tx.block_len = 3;
  Eigen::VectorXcd channel(3);
  channel << 1.0, 2.0, 3.0;
  const double noise_var = 0.8;
  RngStream rng(4);
  double power = 0.0;
  std::complex<double> mean = 0.0;
  const int reps = 10000;
  for (int t = 0; t < reps; ++t) {
    const UserObservation obs = receive(tx, channel, noise_var, rng);
    power += obs.r.squaredNorm();
    mean += obs.r.sum();
  }
  const int n = reps * L;
  mean /= double(n);
  // Var(Re z + Im z contributions): |z|^2 has mean noise_var, SE ~ noise_var/sqrt(n).
  REQUIRE(power / n == Approx(noise_var).epsilon(3.0 / std::sqrt(double(n)) * 2.0));
  REQUIRE(std::abs(mean) < 4.0 * std::sqrt(noise_var / n));
}

TEST_CASE("statistic is the conjugated hash applied to the observation") {
  const Complex i(0.0, 1.0);
  Eigen::VectorXcd hash(2), r(2);
  hash << 1.0 + i, 2.0;
  r << 3.0, i;
  UserObservation obs{r, 0, false};
  // conj(1+i)*3 + conj(2)*i = (1-i)*3 + 2i = 3 - 3i + 2i = 3 - i.
  REQUIRE(statistic(hash, obs) == Complex(3.0, -1.0));

  Eigen::VectorXcd short_hash(1);
  short_hash << 1.0;
  REQUIRE_THROWS_AS(statistic(short_hash, obs), DimensionError);
}

TEST_CASE("statistic of a constant-phase hash on its own echo is alpha^2 * L") {
  // r = alpha * exp(i phi) per slot equal to the hash itself: theta = sum |a_k|^2.
  const int L = 6;
  const double alpha = 1.3;
  Message m;
  m.bits = 8;
  m.words = {0xAB00000000000000ull};
  const Eigen::VectorXcd a = hash_message(m, L, alpha);
  UserObservation obs{a, 0, true};
  const Complex theta = statistic(a, obs);
  REQUIRE(theta.real() == Approx(alpha * alpha * L).epsilon(1e-12));
  REQUIRE(std::abs(theta.imag()) < 1e-12);
}

TEST_CASE("statistic is conjugate-linear in the hash") {
  RngStream rng(5);
  Eigen::VectorXcd hash(4), r(4);
  for (int k = 0; k < 4; ++k) {
    hash[k] = rng.next_cnormal();
    r[k] = rng.next_cnormal();
  }
  const UserObservation obs{r, 0, false};
  const Complex c(0.7, -1.2);
  const Complex lhs = statistic(c * hash, obs);
  const Complex rhs = std::conj(c) * statistic(hash, obs);
  REQUIRE(std::abs(lhs - rhs) < 1e-13);
}

TEST_CASE("log-likelihood ratio has the closed-form value at a spot point") {
  DiscriminantModel m;
  m.mu0 = Complex(0.0, 0.0);
  m.var0 = 2.0;
  m.mu1 = Complex(1.0, 0.0);
  m.var1 = 1.0;
  // theta = 1: |1|^2/2 - 0 + log 2 = 0.5 + log 2.
  REQUIRE(log_likelihood_ratio(Complex(1.0, 0.0), m) ==
          Approx(0.5 + std::log(2.0)).margin(1e-15));
  // theta = 0: 0 - 1 + log 2.
  REQUIRE(log_likelihood_ratio(Complex(0.0, 0.0), m) ==
          Approx(std::log(2.0) - 1.0).margin(1e-15));
}

TEST_CASE("equal-variance LLR grows along the line from mu0 to mu1") {
  DiscriminantModel m;
  m.mu0 = Complex(0.0, 0.0);
  m.var0 = 1.0;
  m.mu1 = Complex(1.0, 0.0);
  m.var1 = 1.0;
  double prev = -1e300;
  for (double t = -1.0; t <= 2.0; t += 0.125) {
    const double llr = log_likelihood_ratio(Complex(t, 0.0), m);
    REQUIRE(llr > prev);
    prev = llr;
  }
}

TEST_CASE("decide uses a strict threshold with ties resolved to NoAck") {
  DiscriminantModel m;
  m.mu0 = Complex(0.0, 0.0);
  m.var0 = 1.0;
  m.mu1 = Complex(1.0, 0.0);
  m.var1 = 1.0;
  const Complex theta(0.8, 0.1);
  m.llr_threshold = log_likelihood_ratio(theta, m);  // exact tie
  REQUIRE(decide(theta, m) == Decision::NoAck);
  m.llr_threshold = std::nextafter(m.llr_threshold, -1e300);
  REQUIRE(decide(theta, m) == Decision::Ack);
  m.llr_threshold = 1e18;
  REQUIRE(decide(theta, m) == Decision::NoAck);
  m.llr_threshold = -1e18;
  REQUIRE(decide(theta, m) == Decision::Ack);
}

TEST_CASE("discriminant model validation rejects non-positive variances") {
  DiscriminantModel m;
  m.var0 = 0.0;
  REQUIRE_THROWS_AS(m.validate(), ConfigError);
  m.var0 = 1.0;
  m.var1 = -1.0;
  REQUIRE_THROWS_AS(m.validate(), ConfigError);
}

TEST_CASE("end-to-end statistic splits into signal plus filtered noise") {
  // theta = <s_i, v> + <a_i, z_i> exactly, with z the per-slot noise draws.
  SystemConfig cfg;
  cfg.num_antennas = 4;
  cfg.hash_len = 5;
  cfg.num_decoded = 3;
  cfg.num_undecoded = 0;
  cfg.noise_var = 0.6;
  const Scenario s = build_scenario(cfg, 55);
  const Eigen::MatrixXcd A = hash_matrix(s.decoded, cfg.hash_len, cfg.hash_mag);
  const Eigen::MatrixXcd H = channel_matrix(s.decoded);
  const SignatureMatrix sig = khatri_rao(A, H);
  const TransmitSignal tx = transmit_signal(lmmse_beamformer(sig, cfg.lmmse_reg()));

  const int user = 1;
  RngStream noise_a(909), noise_b(909);
  const UserObservation obs = receive(tx, s.decoded[user].channel, cfg.noise_var, noise_a, user, true);
  const Complex theta = statistic(A.col(user), obs);

  Eigen::VectorXcd z(cfg.hash_len);
  const double sd = std::sqrt(cfg.noise_var);
  for (int j = 0; j < cfg.hash_len; ++j) z[j] = sd * noise_b.next_cnormal();
  const Complex expect = Complex(sig.S.col(user).dot(tx.v)) + Complex(A.col(user).dot(z));
  REQUIRE(std::abs(theta - expect) < 1e-12);
}

TEST_CASE("hash-filtered noise keeps variance L*alpha^2*sigma^2") {
  const int L = 8;
  const double alpha = 0.9, noise_var = 0.5;
  TransmitSignal tx;
  tx.v = Eigen::VectorXcd::Zero(2 * L);
  tx.block_len = 2;
  Eigen::VectorXcd channel(2);
  channel << 1.0, 0.0;
  RngStream msg_rng(66), noise_rng(67);
  const int n = 20000;
  double power = 0.0;
  for (int t = 0; t < n; ++t) {
    const Message m = random_message(msg_rng, 24);
    const Eigen::VectorXcd a = hash_message(m, L, alpha);
    const UserObservation obs = receive(tx, channel, noise_var, noise_rng);
    power += std::norm(statistic(a, obs));
  }
  const double expect = L * alpha * alpha * noise_var;
  // |theta|^2 is expect * Exp(1); the sample mean has SE = expect / sqrt(n).
  REQUIRE(power / n == Approx(expect).epsilon(3.0 / std::sqrt(double(n))));
}
