#ifndef DNSSV_DIAGNOSTICS_HPP
#define DNSSV_DIAGNOSTICS_HPP

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dnssv/specfun.hpp"

namespace dnssv {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  int df = 1;
  int n = 0;
};

// Ljung-Box Q = n(n+2) sum_k rho_k^2/(n-k), chi-square with n_lags df.
inline TestResult ljung_box(const Eigen::VectorXd& series, int n_lags = 10) {
  const int n = static_cast<int>(series.size());
  if (n <= n_lags + 1)
    throw std::invalid_argument("ljung_box: series too short for requested lags");
  const double mean = series.mean();
  const Eigen::VectorXd d = series.array() - mean;
  const double denom = d.squaredNorm();
  if (!(denom > 0.0)) throw std::invalid_argument("ljung_box: zero-variance series");
  double q = 0.0;
  for (int k = 1; k <= n_lags; ++k) {
    double num = 0.0;
    for (int t = 0; t + k < n; ++t) num += d[t] * d[t + k];
    const double rho = num / denom;
    q += rho * rho / (n - k);
  }
  q *= n * (n + 2.0);
  TestResult r;
  r.statistic = q;
  r.df = n_lags;
  r.n = n;
  r.p_value = chi2_sf(q, n_lags);
  return r;
}

// Kupiec unconditional coverage LR test of the hit rate against alpha_star;
// terms with zero counts drop (0 ln 0 = 0).
inline TestResult kupiec_uc(const std::vector<char>& hits, double alpha_star) {
  const int n = static_cast<int>(hits.size());
  if (n < 1) throw std::invalid_argument("kupiec_uc: empty hit sequence");
  if (!(alpha_star > 0.0 && alpha_star < 1.0))
    throw std::invalid_argument("kupiec_uc: level outside (0,1)");
  int x = 0;
  for (char h : hits) x += h ? 1 : 0;
  const double pi_hat = static_cast<double>(x) / n;
  auto xlogy = [](double a, double b) { return a > 0.0 ? a * std::log(b) : 0.0; };
  const double ll0 = xlogy(n - x, 1.0 - alpha_star) + xlogy(x, alpha_star);
  const double ll1 = xlogy(n - x, 1.0 - pi_hat) + xlogy(x, pi_hat);
  TestResult r;
  r.statistic = std::max(0.0, -2.0 * (ll0 - ll1));
  r.df = 1;
  r.n = n;
  r.p_value = chi2_sf(r.statistic, 1);
  return r;
}

// Christoffersen independence LR test: iid binomial against first-order
// Markov dependence in the hit indicators.
inline TestResult christoffersen_ind(const std::vector<char>& hits) {
  const int n = static_cast<int>(hits.size());
  if (n < 2) throw std::invalid_argument("christoffersen_ind: need >= 2 observations");
  double n00 = 0, n01 = 0, n10 = 0, n11 = 0;
  for (int t = 1; t < n; ++t) {
    const bool a = hits[t - 1], b = hits[t];
    if (!a && !b) ++n00;
    else if (!a && b) ++n01;
    else if (a && !b) ++n10;
    else ++n11;
  }
  auto xlogy = [](double a, double b) { return a > 0.0 ? a * std::log(b) : 0.0; };
  const double pairs = n00 + n01 + n10 + n11;
  const double pi = (n01 + n11) / pairs;
  const double pi01 = (n00 + n01) > 0 ? n01 / (n00 + n01) : 0.0;
  const double pi11 = (n10 + n11) > 0 ? n11 / (n10 + n11) : 0.0;
  const double ll0 = xlogy(n00 + n10, 1.0 - pi) + xlogy(n01 + n11, pi);
  const double ll1 = xlogy(n00, 1.0 - pi01) + xlogy(n01, pi01) +
                     xlogy(n10, 1.0 - pi11) + xlogy(n11, pi11);
  TestResult r;
  r.statistic = std::max(0.0, -2.0 * (ll0 - ll1));
  r.df = 1;
  r.n = n;
  r.p_value = chi2_sf(r.statistic, 1);
  return r;
}

// Conditional coverage: LR_cc = LR_uc + LR_ind against chi-square(2).
inline TestResult christoffersen_cc(const std::vector<char>& hits, double alpha_star) {
  const TestResult uc = kupiec_uc(hits, alpha_star);
  const TestResult ind = christoffersen_ind(hits);
  TestResult r;
  r.statistic = uc.statistic + ind.statistic;
  r.df = 2;
  r.n = static_cast<int>(hits.size());
  r.p_value = chi2_sf(r.statistic, 2);
  return r;
}

// Root-mean-squared forecast error per contract, then the arithmetic mean
// over the contracts of each bucket.
inline Eigen::VectorXd rmsfe_per_contract(const Eigen::MatrixXd& errors) {
  if (errors.rows() == 0) throw std::invalid_argument("rmsfe: no forecast errors");
  return (errors.array().square().colwise().mean()).sqrt().transpose();
}

inline double rmsfe_bucket(const Eigen::VectorXd& per_contract, int first, int last) {
  if (first < 0 || last >= per_contract.size() || first > last)
    throw std::invalid_argument("rmsfe_bucket: bad bucket bounds");
  return per_contract.segment(first, last - first + 1).mean();
}

// Two-sided rolling realized covariance of factor first differences,
//   RC_t = sum_{l=t-L}^{t+L} (db_l)(db_l)' / (2L+1),
// returned for the dates where the full window exists.
struct RealizedCovariance {
  std::vector<int> t_index;  // index into the factor series
  std::vector<Eigen::MatrixXd> rc;
};

inline RealizedCovariance realized_covariance(const Eigen::MatrixXd& factors, int L) {
  const int T = static_cast<int>(factors.rows());
  const int m = static_cast<int>(factors.cols());
  if (L < 0) throw std::invalid_argument("realized_covariance: negative window");
  if (2 * L + 1 > T - 1)
    throw std::invalid_argument("realized_covariance: window exceeds series length");
  Eigen::MatrixXd diffs(T - 1, m);
  for (int t = 1; t < T; ++t) diffs.row(t - 1) = factors.row(t) - factors.row(t - 1);
  RealizedCovariance out;
  for (int c = L; c < T - 1 - L; ++c) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(m, m);
    for (int l = c - L; l <= c + L; ++l) {
      const Eigen::VectorXd d = diffs.row(l).transpose();
      acc.noalias() += d * d.transpose();
    }
    out.t_index.push_back(c + 1);  // diff l corresponds to dates (l, l+1)
    out.rc.push_back(acc / (2.0 * L + 1.0));
  }
  return out;
}

}  // namespace dnssv

#endif
