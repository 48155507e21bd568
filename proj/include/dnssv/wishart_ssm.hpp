#ifndef DNSSV_WISHART_SSM_HPP
#define DNSSV_WISHART_SSM_HPP

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dnssv/model.hpp"
#include "dnssv/samplers.hpp"

namespace dnssv {

// Conditionally on the factor path the precisions H_{1:T} form their own
// conjugate state-space model.  With eta_t = beta_t - alpha - beta_{t-1} and
// gamma = (nu-m-1)/(nu-m):
//
//   predictive:  H_t | eta_{1:t-1} ~ W_m(nu,   (gamma Sigma_{t-1})^{-1})
//   filtered:    H_t | eta_{1:t}   ~ W_m(nu+1, Sigma_t^{-1})
//   forward:     Sigma_t = eta_t eta_t' + gamma Sigma_{t-1},  Sigma_init = Sigma0
//   backward:    H_t | (H_{t+1}, eta_{1:t}) = gamma H_{t+1} + Z_{t+1},
//                Z_{t+1} ~ W_m(1, Sigma_t^{-1}).
//
// Integrating H_t out of the Gaussian transition gives the Student-t
//   f(beta_t | beta_{0:t-1}) = t(alpha + beta_{t-1}, gamma Sigma_{t-1}, nu-m+1)
// in the convention of mvt_logpdf.

inline Eigen::MatrixXd eta_from_beta(const Eigen::MatrixXd& beta,
                                     const Eigen::VectorXd& alpha) {
  const int T = static_cast<int>(beta.rows()) - 1;
  Eigen::MatrixXd eta(T, alpha.size());
  for (int t = 0; t < T; ++t)
    eta.row(t) = beta.row(t + 1) - beta.row(t) - alpha.transpose();
  return eta;
}

// Sigma_0..Sigma_T (length T+1, Sigma_filter[0] = Sigma0).
inline std::vector<Eigen::MatrixXd> forward_filter_Sigma(const Eigen::MatrixXd& eta,
                                                         const Eigen::MatrixXd& Sigma0,
                                                         double gamma) {
  const int T = static_cast<int>(eta.rows());
  std::vector<Eigen::MatrixXd> Sigma(T + 1);
  Sigma[0] = Sigma0;
  for (int t = 1; t <= T; ++t) {
    const Eigen::VectorXd e = eta.row(t - 1).transpose();
    Sigma[t] = e * e.transpose() + gamma * Sigma[t - 1];
  }
  return Sigma;
}

// Joint draw of H_{1:T} from its full conditional: terminal draw from the
// filtered Wishart W_m(nu+1, Sigma_T^{-1}), then the shifted rank-1 backward
// recursion.
inline std::vector<Eigen::MatrixXd> backward_sample_H(
    const std::vector<Eigen::MatrixXd>& Sigma_filter, double nu, int m, RngStream& rng) {
  const int T = static_cast<int>(Sigma_filter.size()) - 1;
  if (T < 1) throw std::invalid_argument("backward_sample_H: empty filter sequence");
  const double gamma = gamma_from_nu(nu, m);
  std::vector<Eigen::MatrixXd> H(T);

  auto inverse_of = [m](const Eigen::MatrixXd& S, const char* who) {
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success)
      throw NumericalError(std::string(who) + ": Sigma_t not SPD");
    Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(m, m));
    return Eigen::MatrixXd(0.5 * (inv + inv.transpose()));
  };

  H[T - 1] = sample_wishart(nu + 1.0, inverse_of(Sigma_filter[T], "backward_sample_H"), rng);
  for (int t = T - 1; t >= 1; --t) {
    const Eigen::MatrixXd Zt =
        sample_rank1_wishart(inverse_of(Sigma_filter[t], "backward_sample_H"), rng);
    H[t - 1] = gamma * H[t] + Zt;
  }
  return H;
}

// ln f(beta_{1:T}) = sum_t ln t(beta_t; alpha+beta_{t-1}, gamma Sigma_{t-1}, nu-m+1).
inline double integrated_loglik_beta(const Eigen::MatrixXd& beta, const Eigen::VectorXd& alpha,
                                     const Eigen::MatrixXd& Sigma0, double nu) {
  const int m = static_cast<int>(alpha.size());
  if (!(nu > m + 1)) throw std::domain_error("integrated_loglik_beta: requires nu > m+1");
  const double gamma = gamma_from_nu(nu, m);
  const Eigen::MatrixXd eta = eta_from_beta(beta, alpha);
  const int T = static_cast<int>(eta.rows());
  const double df = nu - m + 1.0;

  // Constant factors of the t-density, reused across t.
  const double norm_const = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * df) -
                            0.5 * m * std::log(kPi);
  double ll = 0.0;
  Eigen::MatrixXd Sigma = Sigma0;
  for (int t = 0; t < T; ++t) {
    const Eigen::MatrixXd M = gamma * Sigma;
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() != Eigen::Success)
      throw NumericalError("integrated_loglik_beta: scale not SPD at t=" + std::to_string(t + 1));
    double half_logdet = 0.0;
    for (int i = 0; i < m; ++i) half_logdet += std::log(llt.matrixL()(i, i));
    const Eigen::VectorXd e = eta.row(t).transpose();
    const double q = llt.matrixL().solve(e).squaredNorm();
    ll += norm_const - half_logdet - 0.5 * (nu + 1.0) * std::log1p(q);
    Sigma = e * e.transpose() + gamma * Sigma;
  }
  return ll;
}

}  // namespace dnssv

#endif
