#pragma once

// Per-user reception and ACK detection.
//
// User i observes one complex sample per hash slot, r_i[j] = <h_i, v_j> + z,
// with <u, w> = sum_k conj(u_k) w_k.  The detection statistic is
// theta_i = <a_i, r_i> = <s_i, v> + <a_i, z_i>.  Decoded and undecoded users
// are modeled as two complex Gaussians and separated by a quadratic
// log-likelihood-ratio test.

#include <Eigen/Dense>
#include <cmath>
#include <complex>

#include "hashbeam/beamform.hpp"
#include "hashbeam/errors.hpp"
#include "hashbeam/rng.hpp"

namespace hashbeam {

struct UserObservation {
  Eigen::VectorXcd r;  // length L
  int user = -1;
  bool decoded = false;
};

// noise_var is the total variance of each complex sample; zero adds nothing.
inline UserObservation receive(const TransmitSignal& tx, const Eigen::VectorXcd& channel,
                               double noise_var, RngStream& noise_rng, int user = -1,
                               bool decoded = false) {
  if (tx.block_len != channel.size())
    throw DimensionError("receive: channel length does not match transmit block length");
  if (!(noise_var >= 0.0)) throw ConfigError("noise_var must be >= 0");
  const Eigen::Index L = tx.num_blocks();
  Eigen::VectorXcd r(L);
  const double sd = std::sqrt(noise_var);
  for (Eigen::Index j = 0; j < L; ++j) {
    Complex sample = channel.dot(tx.block(j));
    if (noise_var > 0.0) sample += sd * noise_rng.next_cnormal();
    r[j] = sample;
  }
  return {std::move(r), user, decoded};
}

// theta = <a, r>, conjugate-linear in the hash.
inline Complex statistic(const Eigen::VectorXcd& hash, const UserObservation& obs) {
  if (hash.size() != obs.r.size())
    throw DimensionError("statistic: hash and observation lengths differ");
  return hash.dot(obs.r);
}

// Two-class circular complex Gaussian model plus the decision threshold.
struct DiscriminantModel {
  Complex mu0;        // undecoded (no ACK intended)
  double var0 = 1.0;
  Complex mu1;        // decoded (ACK intended)
  double var1 = 1.0;
  double llr_threshold = 0.0;

  void validate() const {
    if (!(var0 > 0.0) || !(var1 > 0.0))
      throw ConfigError("discriminant variances must be > 0");
  }
};

inline double log_likelihood_ratio(Complex theta, const DiscriminantModel& m) {
  return std::norm(theta - m.mu0) / m.var0 - std::norm(theta - m.mu1) / m.var1 +
         std::log(m.var0 / m.var1);
}

enum class Decision { NoAck, Ack };

// ACK iff the LLR strictly exceeds the threshold; ties favor NO_ACK because
// false alarms are the costlier error.
inline Decision decide(Complex theta, const DiscriminantModel& m) {
  return log_likelihood_ratio(theta, m) > m.llr_threshold ? Decision::Ack
                                                          : Decision::NoAck;
}

}  // namespace hashbeam
