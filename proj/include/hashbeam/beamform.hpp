#pragma once

// Khatri-Rao signatures and the regularized LMMSE transmit beamformer.
//
// The signature of user k is s_k = a_k (x) h_k (column-wise Kronecker of the
// hash and channel matrices), so S is LM x K.  The beamformer solves the
// K x K Hermitian positive definite normal equations
//     (reg*I + S^H S) W^H = S^H
// and the broadcast signal is v = W * 1.  The Gram matrix is computed from
// the factors via S^H S = (A^H A) .* (H^H H), which is algebraically exact
// and much cheaper than forming S explicitly.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <string>

#include "hashbeam/errors.hpp"

namespace hashbeam {

inline constexpr double kMaxCondition = 1e12;

struct SignatureMatrix {
  Eigen::MatrixXcd S;  // LM x K
  Eigen::MatrixXcd A;  // L x K hash factor
  Eigen::MatrixXcd H;  // M x K channel factor

  Eigen::Index hash_len() const { return A.rows(); }
  Eigen::Index num_antennas() const { return H.rows(); }
  Eigen::Index num_users() const { return S.cols(); }
};

// Column-wise Kronecker product: S(:,k) = A(:,k) (x) H(:,k).
inline SignatureMatrix khatri_rao(const Eigen::MatrixXcd& A, const Eigen::MatrixXcd& H) {
  if (A.cols() != H.cols())
    throw DimensionError("khatri_rao: factor column counts differ (" +
                         std::to_string(A.cols()) + " vs " + std::to_string(H.cols()) + ")");
  const Eigen::Index L = A.rows(), M = H.rows(), K = A.cols();
  Eigen::MatrixXcd S(L * M, K);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index j = 0; j < L; ++j) S.block(j * M, k, M, 1) = A(j, k) * H.col(k);
  return {std::move(S), A, H};
}

// S^H S via the factor identity (A^H A) .* (H^H H); full Hermitian matrix.
inline Eigen::MatrixXcd gram_from_factors(const Eigen::MatrixXcd& A,
                                          const Eigen::MatrixXcd& H) {
  if (A.cols() != H.cols())
    throw DimensionError("gram_from_factors: factor column counts differ");
  const Eigen::Index K = A.cols();
  Eigen::MatrixXcd ga = Eigen::MatrixXcd::Zero(K, K);
  ga.selfadjointView<Eigen::Lower>().rankUpdate(A.adjoint());
  Eigen::MatrixXcd gh = Eigen::MatrixXcd::Zero(K, K);
  gh.selfadjointView<Eigen::Lower>().rankUpdate(H.adjoint());
  Eigen::MatrixXcd g = ga.cwiseProduct(gh);
  g = g.template selfadjointView<Eigen::Lower>();
  return g;
}

inline Eigen::MatrixXcd gram(const SignatureMatrix& sig) {
  return gram_from_factors(sig.A, sig.H);
}

namespace detail {

// Cholesky of reg*I + G with a conditioning guard for the unregularized case.
inline Eigen::LLT<Eigen::MatrixXcd> factor_regularized_gram(const Eigen::MatrixXcd& G,
                                                            double reg) {
  if (!(reg >= 0.0)) throw ConfigError("regularizer must be >= 0");
  Eigen::MatrixXcd Greg = G;
  Greg.diagonal().array() += reg;
  Eigen::LLT<Eigen::MatrixXcd> llt(Greg);
  if (llt.info() != Eigen::Success)
    throw SingularSystemError(
        "signature normal equations are not positive definite (need L*M >= K with "
        "independent columns when reg = 0)");
  if (reg == 0.0) {
    const double rc = llt.rcond();
    if (!(rc > 0.0) || 1.0 / rc > kMaxCondition)
      throw SingularSystemError("unregularized normal equations too ill-conditioned "
                                "(estimated condition > 1e12)");
  }
  return llt;
}

}  // namespace detail

// u = (reg*I + S^H S)^{-1} * 1, the per-user combining weights of v = S u.
inline Eigen::VectorXcd solve_unit_weights(const Eigen::MatrixXcd& G, double reg) {
  auto llt = detail::factor_regularized_gram(G, reg);
  return llt.solve(Eigen::VectorXcd::Ones(G.rows()));
}

struct Beamformer {
  Eigen::MatrixXcd W;  // LM x K
  double reg = 0.0;
  Eigen::Index block_len = 0;  // M; v splits into L blocks of this size
};

// W^H = (reg*I + S^H S)^{-1} S^H, solved column-block wise (never an explicit
// LM x LM inverse).
inline Beamformer lmmse_beamformer(const SignatureMatrix& sig, double reg) {
  auto llt = detail::factor_regularized_gram(gram(sig), reg);
  Eigen::MatrixXcd Wh = llt.solve(sig.S.adjoint());
  return {Wh.adjoint(), reg, sig.num_antennas()};
}

struct TransmitSignal {
  Eigen::VectorXcd v;  // length LM
  Eigen::Index block_len = 0;

  Eigen::Index num_blocks() const { return block_len > 0 ? v.size() / block_len : 0; }
  auto block(Eigen::Index j) const { return v.segment(j * block_len, block_len); }
};

// v = W * 1_K.
inline TransmitSignal transmit_signal(const Beamformer& bf) {
  return {bf.W.rowwise().sum(), bf.block_len};
}

// The same transmit signal arranged as an M x L matrix (column j = block j):
// V = H diag(u) A^T.  Used on hot paths to avoid materializing S and W.
inline Eigen::MatrixXcd transmit_matrix(const Eigen::MatrixXcd& A, const Eigen::MatrixXcd& H,
                                        const Eigen::VectorXcd& unit_weights) {
  if (A.cols() != H.cols() || unit_weights.size() != A.cols())
    throw DimensionError("transmit_matrix: inconsistent factor shapes");
  return H * unit_weights.asDiagonal() * A.transpose();
}

inline TransmitSignal transmit_from_matrix(const Eigen::MatrixXcd& V) {
  return {Eigen::Map<const Eigen::VectorXcd>(V.data(), V.size()), V.rows()};
}

inline double total_transmit_power(const TransmitSignal& tx) { return tx.v.squaredNorm(); }

}  // namespace hashbeam
