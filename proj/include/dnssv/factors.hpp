#ifndef DNSSV_FACTORS_HPP
#define DNSSV_FACTORS_HPP

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

#include "dnssv/panel.hpp"

namespace dnssv {

// Period-by-period cross-sectional least squares: regress each date's price
// vector on the loading matrix at that date.  Returns a T x m matrix of
// extracted factors.
inline Eigen::MatrixXd extract_factors_ls(const Eigen::MatrixXd& y, LoadingCache& zc,
                                          const Eigen::VectorXd& lambda, int m) {
  const int T = static_cast<int>(y.rows());
  const int N = static_cast<int>(y.cols());
  if (N < m)
    throw std::invalid_argument("extract_factors_ls: fewer contracts than factors");
  zc.set_lambda(lambda, m);
  Eigen::MatrixXd beta(T, m);
  Eigen::MatrixXd Z(N, m);
  for (int t = 0; t < T; ++t) {
    zc.fill_Z(t, Z);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
    if (qr.rank() < m)
      throw std::runtime_error("extract_factors_ls: rank-deficient loadings at date index " +
                               std::to_string(t));
    beta.row(t) = qr.solve(y.row(t).transpose()).transpose();
  }
  return beta;
}

inline Eigen::MatrixXd extract_factors_ls(const PanelData& panel,
                                          const Eigen::VectorXd& lambda, int m) {
  LoadingCache zc(panel);
  return extract_factors_ls(panel.log_prices, zc, lambda, m);
}

}  // namespace dnssv

#endif
