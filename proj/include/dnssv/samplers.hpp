#ifndef DNSSV_SAMPLERS_HPP
#define DNSSV_SAMPLERS_HPP

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnssv/rng.hpp"
#include "dnssv/specfun.hpp"

namespace dnssv {

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Symmetric positive-definite precision matrix with block-tridiagonal
// structure (m x m blocks), stored as packed diagonal and sub-diagonal
// blocks together with the linear term c of the Gaussian exponent
// -x'Px/2 + x'c.  The scalar bandwidth is at most 2m-1.
struct BandedPrecision {
  std::vector<Eigen::MatrixXd> diag;  // D_0..D_{K-1}
  std::vector<Eigen::MatrixXd> sub;   // B_1..B_{K-1}, block (k, k-1)
  Eigen::VectorXd c;                  // linear term, length K*m

  int blocks() const { return static_cast<int>(diag.size()); }
  int block_dim() const { return diag.empty() ? 0 : static_cast<int>(diag[0].rows()); }
  int dim() const { return blocks() * block_dim(); }
};

// Block Cholesky factorization P = L L' with lower block-bidiagonal L.
// Provides the mean solve, log-determinant and N(mean, P^{-1}) sampling used
// by the precision sampler.
class BandedCholesky {
 public:
  explicit BandedCholesky(const BandedPrecision& prec) : m_(prec.block_dim()) {
    const int K = prec.blocks();
    L_.resize(K);
    C_.resize(K);
    logdet_ = 0.0;
    Eigen::MatrixXd S(m_, m_);
    for (int k = 0; k < K; ++k) {
      S = prec.diag[k];
      if (k > 0) {
        // C_k = B_k L_{k-1}^{-T}
        C_[k] = L_[k - 1].triangularView<Eigen::Lower>()
                    .solve(prec.sub[k].transpose())
                    .transpose();
        S.noalias() -= C_[k] * C_[k].transpose();
      }
      Eigen::LLT<Eigen::MatrixXd> llt(S);
      if (llt.info() != Eigen::Success)
        throw NumericalError("banded Cholesky failed at block " + std::to_string(k));
      L_[k] = llt.matrixL();
      for (int i = 0; i < m_; ++i) logdet_ += 2.0 * std::log(L_[k](i, i));
    }
    // Forward substitution for the mean: L z = c, then L' mean = z.
    const int K2 = K * m_;
    z_.resize(K2);
    for (int k = 0; k < K; ++k) {
      Eigen::VectorXd rhs = prec.c.segment(k * m_, m_);
      if (k > 0) rhs.noalias() -= C_[k] * z_.segment((k - 1) * m_, m_);
      z_.segment(k * m_, m_) = L_[k].triangularView<Eigen::Lower>().solve(rhs);
    }
    mean_.resize(K2);
    for (int k = K - 1; k >= 0; --k) {
      Eigen::VectorXd rhs = z_.segment(k * m_, m_);
      if (k + 1 < K) rhs.noalias() -= C_[k + 1].transpose() * mean_.segment((k + 1) * m_, m_);
      mean_.segment(k * m_, m_) =
          L_[k].transpose().triangularView<Eigen::Upper>().solve(rhs);
    }
  }

  const Eigen::VectorXd& mean() const { return mean_; }
  double logdet() const { return logdet_; }
  // mean' P mean, available as z'z from the half-solve.
  double mean_quadratic() const { return z_.squaredNorm(); }

  Eigen::VectorXd sample(RngStream& rng) const {
    const int K = static_cast<int>(L_.size());
    Eigen::VectorXd x(K * m_);
    Eigen::VectorXd xi(K * m_);
    for (int i = 0; i < K * m_; ++i) xi[i] = rng.normal();
    for (int k = K - 1; k >= 0; --k) {
      Eigen::VectorXd rhs = xi.segment(k * m_, m_);
      if (k + 1 < K) rhs.noalias() -= C_[k + 1].transpose() * x.segment((k + 1) * m_, m_);
      x.segment(k * m_, m_) = L_[k].transpose().triangularView<Eigen::Upper>().solve(rhs);
    }
    return x + mean_;
  }

 private:
  int m_;
  std::vector<Eigen::MatrixXd> L_;
  std::vector<Eigen::MatrixXd> C_;
  Eigen::VectorXd z_;
  Eigen::VectorXd mean_;
  double logdet_;
};

inline Eigen::VectorXd sample_gaussian_banded(const BandedPrecision& prec, RngStream& rng) {
  return BandedCholesky(prec).sample(rng);
}

namespace detail {
inline Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& S,
                                               const char* who) {
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success)
    throw NumericalError(std::string(who) + ": matrix not positive definite");
  return llt;
}
}  // namespace detail

// Wishart draw with E(W) = df * scale; Bartlett construction, so df may be
// any real number > m-1.
inline Eigen::MatrixXd sample_wishart(double df, const Eigen::MatrixXd& scale,
                                      RngStream& rng) {
  const int m = static_cast<int>(scale.rows());
  if (!(df > m - 1)) throw std::domain_error("sample_wishart: requires df > m-1");
  auto llt = detail::checked_llt(scale, "sample_wishart");
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    A(i, i) = std::sqrt(rng.chi_squared(df - i));
    for (int j = 0; j < i; ++j) A(i, j) = rng.normal();
  }
  const Eigen::MatrixXd F = llt.matrixL() * A;
  return F * F.transpose();
}

// Rank-1 singular Wishart W_m(1, scale): z z' with z ~ N(0, scale).
inline Eigen::MatrixXd sample_rank1_wishart(const Eigen::MatrixXd& scale, RngStream& rng) {
  const int m = static_cast<int>(scale.rows());
  auto llt = detail::checked_llt(scale, "sample_rank1_wishart");
  Eigen::VectorXd u(m);
  for (int i = 0; i < m; ++i) u[i] = rng.normal();
  const Eigen::VectorXd z = llt.matrixL() * u;
  return z * z.transpose();
}

// Singular matrix Beta draw, B_m(nu/2, 1/2):
//   Psi = ((A+B)^{-1/2})' A (A+B)^{-1/2},  A ~ W_m(nu, I), B ~ W_m(1, I),
// with M^{1/2} the upper Cholesky factor of M (M = (M^{1/2})' M^{1/2}).
// I - Psi has rank one and all eigenvalues lie in [0, 1].
inline Eigen::MatrixXd sample_singular_beta(double nu, int m, RngStream& rng) {
  if (!(nu > m - 1)) throw std::domain_error("sample_singular_beta: requires nu > m-1");
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);
  const Eigen::MatrixXd A = sample_wishart(nu, I, rng);
  const Eigen::MatrixXd B = sample_rank1_wishart(I, rng);
  auto llt = detail::checked_llt(A + B, "sample_singular_beta");
  const Eigen::MatrixXd U = llt.matrixU();
  // X = U^{-T} A, Psi = X U^{-1} = (U^{-T} X')'
  const Eigen::MatrixXd X =
      U.transpose().triangularView<Eigen::Lower>().solve(A);
  Eigen::MatrixXd Psi =
      U.transpose().triangularView<Eigen::Lower>().solve(X.transpose()).transpose();
  Psi = 0.5 * (Psi + Psi.transpose()).eval();
  return Psi;
}

// One transition of the precision process
//   H_t = (1/gamma) (H_{t-1}^{1/2})' Psi_t H_{t-1}^{1/2},  Psi_t ~ B_m(nu/2, 1/2).
inline Eigen::MatrixXd wishart_sv_step(const Eigen::MatrixXd& H_prev, double nu,
                                       double gamma, RngStream& rng) {
  const int m = static_cast<int>(H_prev.rows());
  auto llt = detail::checked_llt(H_prev, "wishart_sv_step");
  const Eigen::MatrixXd U = llt.matrixU();
  const Eigen::MatrixXd Psi = sample_singular_beta(nu, m, rng);
  Eigen::MatrixXd H = (U.transpose() * Psi * U) / gamma;
  H = 0.5 * (H + H.transpose()).eval();
  return H;
}

// Multivariate Student-t log density in the form produced by integrating a
// Wishart precision against a Gaussian:
//   f(x) = Gamma((df+m)/2) / [pi^{m/2} Gamma(df/2) |M|^{1/2}]
//          * [1 + (x-loc)' M^{-1} (x-loc)]^{-(df+m)/2},
// i.e. the scale matrix M multiplies the quadratic form with no df factor.
// The implied covariance is M/(df-2) for df > 2.
inline double mvt_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& loc,
                         const Eigen::MatrixXd& scale, double df) {
  if (!(df > 0.0)) throw std::domain_error("mvt_logpdf: df must be > 0");
  const int m = static_cast<int>(x.size());
  auto llt = detail::checked_llt(scale, "mvt_logpdf");
  double half_logdet = 0.0;
  for (int i = 0; i < m; ++i) half_logdet += std::log(llt.matrixL()(i, i));
  const Eigen::VectorXd d = x - loc;
  const double q = llt.matrixL().solve(d).squaredNorm();
  return std::lgamma(0.5 * (df + m)) - std::lgamma(0.5 * df) -
         0.5 * m * std::log(kPi) - half_logdet - 0.5 * (df + m) * std::log1p(q);
}

// Draw from the same density.
inline Eigen::VectorXd sample_mvt(const Eigen::VectorXd& loc, const Eigen::MatrixXd& scale,
                                  double df, RngStream& rng) {
  const int m = static_cast<int>(loc.size());
  auto llt = detail::checked_llt(scale, "sample_mvt");
  Eigen::VectorXd z(m);
  for (int i = 0; i < m; ++i) z[i] = rng.normal();
  const double w = rng.chi_squared(df);
  // x = loc + L z / sqrt(w): then (x-loc)' M^{-1} (x-loc) = |z|^2 / w, the
  // ratio defining this t convention.
  return loc + (llt.matrixL() * z) / std::sqrt(w);
}

// Gamma(shape, rate) and its inverse.
inline double sample_gamma(double shape, double rate, RngStream& rng) {
  if (!(rate > 0.0)) throw std::domain_error("sample_gamma: rate must be > 0");
  return rng.gamma(shape) / rate;
}

inline double sample_inverse_gamma(double shape, double rate, RngStream& rng) {
  return 1.0 / sample_gamma(shape, rate, rng);
}

// Inverse-Wishart with E(X) = scale / (df - m - 1) for df > m+1.
inline Eigen::MatrixXd sample_inverse_wishart(double df, const Eigen::MatrixXd& scale,
                                              RngStream& rng) {
  const int m = static_cast<int>(scale.rows());
  if (!(df > m - 1)) throw std::domain_error("sample_inverse_wishart: requires df > m-1");
  auto llt = detail::checked_llt(scale, "sample_inverse_wishart");
  const Eigen::MatrixXd scale_inv = llt.solve(Eigen::MatrixXd::Identity(m, m));
  const Eigen::MatrixXd W = sample_wishart(df, 0.5 * (scale_inv + scale_inv.transpose()), rng);
  Eigen::LLT<Eigen::MatrixXd> lltW(W);
  if (lltW.info() != Eigen::Success)
    throw NumericalError("sample_inverse_wishart: singular Wishart draw");
  Eigen::MatrixXd X = lltW.solve(Eigen::MatrixXd::Identity(m, m));
  return 0.5 * (X + X.transpose());
}

}  // namespace dnssv

#endif
