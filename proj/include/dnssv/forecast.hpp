#ifndef DNSSV_FORECAST_HPP
#define DNSSV_FORECAST_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnssv/diagnostics.hpp"
#include "dnssv/factors.hpp"
#include "dnssv/gibbs.hpp"
#include "dnssv/likelihood.hpp"
#include "dnssv/model.hpp"
#include "dnssv/panel.hpp"
#include "dnssv/samplers.hpp"

namespace dnssv {

struct Portfolio {
  Eigen::VectorXd weights;
  std::string name;

  void validate() const {
    if (weights.size() == 0 || !weights.allFinite())
      throw std::invalid_argument("Portfolio: weights must be finite and non-empty");
    if (weights.cwiseAbs().maxCoeff() == 0.0)
      throw std::invalid_argument("Portfolio: all weights are zero");
  }

  static Portfolio equal(int n) {
    Portfolio p;
    p.weights = Eigen::VectorXd::Constant(n, 1.0 / n);
    p.name = "equal";
    return p;
  }
  // Long the first contract, short the eighth.
  static Portfolio bull_spread(int n, int long_leg = 0, int short_leg = 7) {
    if (short_leg >= n) throw std::invalid_argument("bull_spread: too few contracts");
    Portfolio p;
    p.weights = Eigen::VectorXd::Zero(n);
    p.weights[long_leg] = 1.0;
    p.weights[short_leg] = -1.0;
    p.name = "bullspread";
    return p;
  }
};

// One simulated configuration of everything the one-step-ahead predictive
// distribution depends on: parameters, terminal factors and the innovation
// covariance of beta_{t+1} (H_{t+1}^{-1} draw under SV, Sigma0 otherwise).
struct PredictiveDraw {
  Eigen::VectorXd lambda;
  double sigma_y = 0.0;
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta_t;
  Eigen::MatrixXd Sigma_next;
};

// Draws assembled from a posterior chain (theta varies across draws); the
// precision is propagated one step through the singular-Beta transition.
inline std::vector<PredictiveDraw> predictive_draws_from_posterior(
    const PosteriorSample& post, int max_draws, RngStream& rng) {
  const int S = post.size();
  if (S == 0) throw std::invalid_argument("predictive_draws_from_posterior: empty posterior");
  const int step = std::max(1, S / std::max(1, max_draws));
  std::vector<PredictiveDraw> out;
  const int m = post.spec.m;
  for (int j = S % step; j < S; j += step) {
    const Params p = post.params_from_row(j);
    PredictiveDraw d;
    d.lambda = p.lambda;
    d.sigma_y = p.sigma_y;
    d.alpha = p.alpha;
    d.beta_t = post.terminals[j].beta_T;
    if (post.spec.sv) {
      const double g = gamma_from_nu(p.nu, m);
      const Eigen::MatrixXd Hn = wishart_sv_step(post.terminals[j].H_T, p.nu, g, rng);
      Eigen::LLT<Eigen::MatrixXd> llt(Hn);
      if (llt.info() != Eigen::Success)
        throw NumericalError("predictive draw: propagated precision not SPD");
      Eigen::MatrixXd Sn = llt.solve(Eigen::MatrixXd::Identity(m, m));
      d.Sigma_next = 0.5 * (Sn + Sn.transpose());
    } else {
      d.Sigma_next = p.Sigma0;
    }
    out.push_back(std::move(d));
  }
  return out;
}

// Draws from a theta-fixed reduced run (point/variance forecasts and VaR).
inline std::vector<PredictiveDraw> predictive_draws_from_reduced(
    const std::vector<TerminalState>& terminals, const Params& params, const ModelSpec& spec,
    RngStream& rng) {
  std::vector<PredictiveDraw> out;
  out.reserve(terminals.size());
  const int m = spec.m;
  for (const TerminalState& ts : terminals) {
    PredictiveDraw d;
    d.lambda = params.lambda;
    d.sigma_y = params.sigma_y;
    d.alpha = params.alpha;
    d.beta_t = ts.beta_T;
    if (spec.sv) {
      const double g = gamma_from_nu(params.nu, m);
      const Eigen::MatrixXd Hn = wishart_sv_step(ts.H_T, params.nu, g, rng);
      Eigen::LLT<Eigen::MatrixXd> llt(Hn);
      if (llt.info() != Eigen::Success)
        throw NumericalError("predictive draw: propagated precision not SPD");
      Eigen::MatrixXd Sn = llt.solve(Eigen::MatrixXd::Identity(m, m));
      d.Sigma_next = 0.5 * (Sn + Sn.transpose());
    } else {
      d.Sigma_next = params.Sigma0;
    }
    out.push_back(std::move(d));
  }
  return out;
}

inline Eigen::MatrixXd loading_matrix(const Eigen::VectorXd& taus,
                                      const Eigen::VectorXd& lambda, int m) {
  Eigen::MatrixXd Z(taus.size(), m);
  for (int i = 0; i < taus.size(); ++i)
    Z.row(i) = loading_row(taus[i], lambda, m).transpose();
  return Z;
}

// Rao-Blackwellised predictive log density: beta_{t+1} integrated out, so
// each draw contributes N(y; Z(alpha+beta_t), Z Sigma_next Z' + sigma_y^2 I);
// the log is taken after averaging.
inline double predictive_logdensity(const Eigen::VectorXd& tau_next,
                                    const Eigen::VectorXd& y_next,
                                    const std::vector<PredictiveDraw>& draws, int m) {
  if (draws.empty()) throw std::invalid_argument("predictive_logdensity: no draws");
  const int N = static_cast<int>(y_next.size());
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> logs;
  logs.reserve(draws.size());
  for (const PredictiveDraw& d : draws) {
    const Eigen::MatrixXd Z = loading_matrix(tau_next, d.lambda, m);
    const Eigen::VectorXd mean = Z * (d.alpha + d.beta_t);
    Eigen::MatrixXd cov = Z * d.Sigma_next * Z.transpose();
    cov.diagonal().array() += d.sigma_y * d.sigma_y;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
      throw NumericalError("predictive_logdensity: covariance not SPD");
    double half_logdet = 0.0;
    for (int i = 0; i < N; ++i) half_logdet += std::log(llt.matrixL()(i, i));
    const double q = llt.matrixL().solve(y_next - mean).squaredNorm();
    const double lp = -0.5 * N * kLnTwoPi - half_logdet - 0.5 * q;
    logs.push_back(lp);
    mx = std::max(mx, lp);
  }
  double s = 0.0;
  for (double lp : logs) s += std::exp(lp - mx);
  return mx + std::log(s / logs.size());
}

// Brute-force counterpart: beta_{t+1} is simulated and the measurement
// density evaluated at it.  Same limit, strictly larger MC variance.
inline double predictive_logdensity_bruteforce(const Eigen::VectorXd& tau_next,
                                               const Eigen::VectorXd& y_next,
                                               const std::vector<PredictiveDraw>& draws,
                                               int m, RngStream& rng) {
  if (draws.empty()) throw std::invalid_argument("predictive_logdensity: no draws");
  const int N = static_cast<int>(y_next.size());
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> logs;
  logs.reserve(draws.size());
  Eigen::VectorXd z(m);
  for (const PredictiveDraw& d : draws) {
    const Eigen::MatrixXd Z = loading_matrix(tau_next, d.lambda, m);
    Eigen::LLT<Eigen::MatrixXd> llt(d.Sigma_next);
    if (llt.info() != Eigen::Success)
      throw NumericalError("predictive_logdensity_bruteforce: Sigma_next not SPD");
    for (int i = 0; i < m; ++i) z[i] = rng.normal();
    const Eigen::VectorXd beta_next =
        d.alpha + d.beta_t + Eigen::MatrixXd(llt.matrixL()) * z;
    const double s2 = d.sigma_y * d.sigma_y;
    const double lp = -0.5 * N * (kLnTwoPi + std::log(s2)) -
                      0.5 * (y_next - Z * beta_next).squaredNorm() / s2;
    logs.push_back(lp);
    mx = std::max(mx, lp);
  }
  double s = 0.0;
  for (double lp : logs) s += std::exp(lp - mx);
  return mx + std::log(s / logs.size());
}

struct PointVarianceForecast {
  Eigen::VectorXd mean;  // N
  Eigen::MatrixXd cov;   // N x N, diagonal >= sigma_y^2
};

// MC moments of beta_{t+1} mapped through the loadings; samples_per_draw
// fresh innovation draws are attached to every state draw.
inline PointVarianceForecast point_variance_forecast(const Eigen::VectorXd& tau_next,
                                                     const std::vector<PredictiveDraw>& draws,
                                                     int m, RngStream& rng,
                                                     int samples_per_draw = 10) {
  if (draws.empty()) throw std::invalid_argument("point_variance_forecast: no draws");
  if (samples_per_draw < 1) throw std::invalid_argument("point_variance_forecast: bad K");
  Eigen::VectorXd mean_b = Eigen::VectorXd::Zero(m);
  Eigen::MatrixXd sq_b = Eigen::MatrixXd::Zero(m, m);
  long n = 0;
  Eigen::VectorXd z(m);
  for (const PredictiveDraw& d : draws) {
    Eigen::LLT<Eigen::MatrixXd> llt(d.Sigma_next);
    if (llt.info() != Eigen::Success)
      throw NumericalError("point_variance_forecast: Sigma_next not SPD");
    const Eigen::MatrixXd L = llt.matrixL();
    for (int k = 0; k < samples_per_draw; ++k) {
      for (int i = 0; i < m; ++i) z[i] = rng.normal();
      const Eigen::VectorXd b = d.alpha + d.beta_t + L * z;
      mean_b += b;
      sq_b.noalias() += b * b.transpose();
      ++n;
    }
  }
  mean_b /= n;
  Eigen::MatrixXd cov_b = sq_b / n - mean_b * mean_b.transpose();
  cov_b = 0.5 * (cov_b + cov_b.transpose()).eval();

  // sigma_y and lambda are common across draws in the theta-fixed use; with
  // posterior draws the averages are used.
  Eigen::VectorXd lambda_bar = Eigen::VectorXd::Zero(draws[0].lambda.size());
  double s2_bar = 0.0;
  for (const PredictiveDraw& d : draws) {
    lambda_bar += d.lambda;
    s2_bar += d.sigma_y * d.sigma_y;
  }
  lambda_bar /= static_cast<double>(draws.size());
  s2_bar /= static_cast<double>(draws.size());

  const Eigen::MatrixXd Z = loading_matrix(tau_next, lambda_bar, m);
  PointVarianceForecast out;
  out.mean = Z * mean_b;
  out.cov = Z * cov_b * Z.transpose();
  out.cov.diagonal().array() += s2_bar;
  return out;
}

inline Eigen::VectorXd pearson_residuals(const PointVarianceForecast& fc,
                                         const Eigen::VectorXd& realized) {
  if (realized.size() != fc.mean.size())
    throw std::invalid_argument("pearson_residuals: size mismatch");
  Eigen::VectorXd out(realized.size());
  for (int i = 0; i < realized.size(); ++i) {
    const double v = fc.cov(i, i);
    if (!(v > 0.0)) throw std::domain_error("pearson_residuals: non-positive variance");
    out[i] = (realized[i] - fc.mean[i]) / std::sqrt(v);
  }
  return out;
}

// Empirical quantile with linear interpolation between order statistics
// (type 7).
inline double empirical_quantile(std::vector<double> x, double p) {
  if (x.empty()) throw std::invalid_argument("empirical_quantile: empty sample");
  std::sort(x.begin(), x.end());
  const double h = (x.size() - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - lo) * (x[hi] - x[lo]);
}

// Simulated portfolio-return quantiles: r = w'(Z beta_{t+1} - y_t) + meas,
// meas ~ N(0, sigma_y^2 w'w), with beta_{t+1} drawn per state draw.
inline std::vector<double> var_forecast_mc(const Eigen::VectorXd& tau_next,
                                           const Eigen::VectorXd& y_t,
                                           const std::vector<PredictiveDraw>& draws, int m,
                                           const Portfolio& portfolio,
                                           const std::vector<double>& levels, int n_draws,
                                           RngStream& rng) {
  portfolio.validate();
  if (levels.empty()) throw std::invalid_argument("var_forecast_mc: no levels");
  double min_level = 1.0;
  for (double l : levels) {
    if (!(l > 0.0 && l < 1.0)) throw std::invalid_argument("var_forecast_mc: level outside (0,1)");
    min_level = std::min(min_level, l);
  }
  if (n_draws < 100.0 / min_level)
    throw std::invalid_argument(
        "var_forecast_mc: insufficient tail resolution; need n_draws >= 100/min(level)");
  if (draws.empty()) throw std::invalid_argument("var_forecast_mc: no state draws");

  std::vector<double> returns;
  returns.reserve(n_draws);
  const Eigen::VectorXd& w = portfolio.weights;
  Eigen::VectorXd z(m);
  int j = 0;
  while (static_cast<int>(returns.size()) < n_draws) {
    const PredictiveDraw& d = draws[j % draws.size()];
    ++j;
    const Eigen::MatrixXd Z = loading_matrix(tau_next, d.lambda, m);
    Eigen::LLT<Eigen::MatrixXd> llt(d.Sigma_next);
    if (llt.info() != Eigen::Success)
      throw NumericalError("var_forecast_mc: Sigma_next not SPD");
    for (int i = 0; i < m; ++i) z[i] = rng.normal();
    const Eigen::VectorXd beta_next =
        d.alpha + d.beta_t + Eigen::MatrixXd(llt.matrixL()) * z;
    const double meas_sd = d.sigma_y * std::sqrt(w.squaredNorm());
    returns.push_back(w.dot(Z * beta_next - y_t) + meas_sd * rng.normal());
  }
  std::vector<double> out;
  out.reserve(levels.size());
  for (double l : levels) out.push_back(empirical_quantile(returns, l));
  return out;
}

// Homoscedastic Gaussian VAR(1) on least-squares-extracted factors, the
// benchmark forecaster: beta^e_t = mu + Omega beta^e_{t-1} + xi_t.
struct FactorVarFit {
  Eigen::VectorXd mu;
  Eigen::MatrixXd Omega;
  Eigen::MatrixXd Sigma_xi;
  double sigma_y2 = 0.0;
};

inline FactorVarFit fit_factor_var(const Eigen::MatrixXd& factors,
                                   const PanelData& panel, const Eigen::VectorXd& lambda) {
  const int T = static_cast<int>(factors.rows());
  const int m = static_cast<int>(factors.cols());
  if (T < 2 * m + 1)
    throw std::invalid_argument("fit_factor_var: need at least 2m+1 dates");
  Eigen::MatrixXd X(T - 1, m + 1);
  Eigen::MatrixXd Y(T - 1, m);
  for (int t = 1; t < T; ++t) {
    X(t - 1, 0) = 1.0;
    X.block(t - 1, 1, 1, m) = factors.row(t - 1);
    Y.row(t - 1) = factors.row(t);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < m + 1)
    throw std::runtime_error("fit_factor_var: singular regression design");
  const Eigen::MatrixXd coef = qr.solve(Y);  // (m+1) x m
  FactorVarFit fit;
  fit.mu = coef.row(0).transpose();
  fit.Omega = coef.bottomRows(m).transpose();
  const Eigen::MatrixXd resid = Y - X * coef;
  const int dof = std::max(1, T - 1 - (m + 1));
  fit.Sigma_xi = resid.transpose() * resid / dof;

  // Measurement variance from cross-section residuals y - Z beta^e.
  LoadingCache zc(panel);
  zc.set_lambda(lambda, m);
  double ss = 0.0;
  Eigen::MatrixXd Z(panel.N(), m);
  for (int t = 0; t < T; ++t) {
    zc.fill_Z(t, Z);
    ss += (panel.log_prices.row(t).transpose() - Z * factors.row(t).transpose()).squaredNorm();
  }
  fit.sigma_y2 = ss / (static_cast<double>(T) * std::max(1, panel.N() - m));
  return fit;
}

// Gaussian VaR from the VAR benchmark:
//   mu = w'[Z(mu + Omega b_t) - y_t],  s2 = w'[Z Sigma_xi Z' + sigma_y^2 I]w.
inline std::vector<double> benchmark_var_forecast(const FactorVarFit& fit,
                                                  const Eigen::VectorXd& tau_next,
                                                  const Eigen::VectorXd& beta_e_t,
                                                  const Eigen::VectorXd& y_t,
                                                  const Eigen::VectorXd& lambda,
                                                  const Portfolio& portfolio,
                                                  const std::vector<double>& levels) {
  portfolio.validate();
  const int m = static_cast<int>(beta_e_t.size());
  const Eigen::MatrixXd Z = loading_matrix(tau_next, lambda, m);
  const Eigen::VectorXd& w = portfolio.weights;
  const double mu = w.dot(Z * (fit.mu + fit.Omega * beta_e_t) - y_t);
  Eigen::MatrixXd cov = Z * fit.Sigma_xi * Z.transpose();
  cov.diagonal().array() += fit.sigma_y2;
  const double s2 = w.dot(cov * w);
  if (!(s2 > 0.0)) throw NumericalError("benchmark_var_forecast: non-positive variance");
  std::vector<double> out;
  out.reserve(levels.size());
  for (double l : levels) out.push_back(mu + std::sqrt(s2) * norm_ppf(l));
  return out;
}

// Independent random walks: the forecast is the last observed price vector.
inline Eigen::VectorXd random_walk_forecast(const PanelData& panel_prefix) {
  if (panel_prefix.T() < 1)
    throw std::invalid_argument("random_walk_forecast: empty panel");
  return panel_prefix.log_prices.row(panel_prefix.T() - 1).transpose();
}

}  // namespace dnssv

#endif
