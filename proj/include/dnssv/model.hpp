#ifndef DNSSV_MODEL_HPP
#define DNSSV_MODEL_HPP

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "dnssv/io.hpp"
#include "dnssv/specfun.hpp"

namespace dnssv {

// Factor structure for the term-structure curve:
//
//   y_it = beta_1t
//        + beta_2t * (1-e^{-l1 tau})/(l1 tau)
//        + beta_3t * [(1-e^{-l1 tau})/(l1 tau) - e^{-l1 tau}]
//        + beta_4t * [(1-e^{-l2 tau})/(l2 tau) - e^{-l2 tau}]   (4-factor only)
//        + eps_it
//
// with maturities tau in days and decay rates lambda per day.  Factors follow
// a random walk with drift alpha whose innovation precision H_t evolves as a
// scaled singular-Beta (Wishart SV) process, or stays fixed at Sigma0^{-1}
// when stochastic volatility is switched off.

struct ModelSpec {
  int m = 4;        // 3 or 4 factors
  bool sv = true;   // Wishart stochastic volatility on/off

  int n_lambda() const { return m == 4 ? 2 : 1; }
  void validate() const {
    if (m != 3 && m != 4) throw std::invalid_argument("ModelSpec: m must be 3 or 4");
  }
};

struct Params {
  Eigen::VectorXd lambda;   // decay rates per day; size 1 (m=3) or 2 (m=4)
  double sigma_y = 0.0;     // measurement-error sd, log-price units
  Eigen::VectorXd alpha;    // drift per day, size m
  double nu = 0.0;          // Wishart degrees of freedom (SV only)
  Eigen::VectorXd beta0;    // initial factors, size m
  Eigen::MatrixXd Sigma0;   // initial scale, m x m SPD

  void validate(const ModelSpec& spec) const {
    spec.validate();
    const int m = spec.m;
    if (lambda.size() != spec.n_lambda())
      throw std::invalid_argument("Params: lambda has wrong size");
    for (int i = 0; i < lambda.size(); ++i)
      if (!(lambda[i] > 0.0)) throw std::domain_error("Params: lambda must be > 0");
    if (m == 4 && lambda[0] == lambda[1])
      throw std::domain_error("Params: lambda1 == lambda2 makes loadings collinear");
    if (!(sigma_y > 0.0)) throw std::domain_error("Params: sigma_y must be > 0");
    if (alpha.size() != m || beta0.size() != m)
      throw std::invalid_argument("Params: alpha/beta0 have wrong size");
    if (spec.sv && !(nu > m + 1))
      throw std::domain_error("Params: SV requires nu > m+1");
    if (Sigma0.rows() != m || Sigma0.cols() != m)
      throw std::invalid_argument("Params: Sigma0 has wrong shape");
    Eigen::LLT<Eigen::MatrixXd> llt(Sigma0);
    if (llt.info() != Eigen::Success)
      throw std::domain_error("Params: Sigma0 is not positive definite");
  }
};

// Slope loading (1-e^{-x})/x with a series expansion near zero so tau -> 0+
// is exact instead of 0/0; the exact branch uses expm1 to dodge cancellation.
inline double slope_loading_x(double x) {
  if (std::fabs(x) < 1e-6) return 1.0 - 0.5 * x + x * x / 6.0;
  return -std::expm1(-x) / x;
}

inline double curvature_loading_x(double x) {
  if (std::fabs(x) < 1e-6) return 0.5 * x - x * x / 3.0;  // slope(x) - e^{-x}
  return -std::expm1(-x) / x - std::exp(-x);
}

// One row of the loading matrix for maturity tau (days).
inline Eigen::VectorXd loading_row(double tau, const Eigen::VectorXd& lambda, int m) {
  if (!(tau > 0.0)) throw std::domain_error("loading_row: tau must be > 0");
  if (m != 3 && m != 4) throw std::invalid_argument("loading_row: m must be 3 or 4");
  if (lambda.size() != (m == 4 ? 2 : 1))
    throw std::invalid_argument("loading_row: lambda size mismatch");
  Eigen::VectorXd z(m);
  const double x1 = lambda[0] * tau;
  z[0] = 1.0;
  z[1] = slope_loading_x(x1);
  z[2] = curvature_loading_x(x1);
  if (m == 4) z[3] = curvature_loading_x(lambda[1] * tau);
  return z;
}

// EWMA smoothing parameter implied by the degrees-of-freedom restriction:
// 1/gamma = 1 + 1/(nu - m - 1).
inline double gamma_from_nu(double nu, int m) {
  if (!(nu > m + 1)) throw std::domain_error("gamma_from_nu: requires nu > m+1");
  return (nu - m - 1.0) / (nu - m);
}

// Model-implied price mean/variance per maturity:
//   E(y) = z' mu_beta,  Var(y) = z' V_beta z + sigma_y^2.
inline void price_moments(const Params& params, const ModelSpec& spec,
                          const Eigen::VectorXd& factor_mean,
                          const Eigen::MatrixXd& factor_cov,
                          const Eigen::VectorXd& tau_grid,
                          Eigen::VectorXd& mean_out, Eigen::VectorXd& var_out) {
  const int m = spec.m;
  if (factor_mean.size() != m || factor_cov.rows() != m || factor_cov.cols() != m)
    throw std::invalid_argument("price_moments: moment shapes mismatch");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(factor_cov);
  if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, es.eigenvalues().maxCoeff()))
    throw std::domain_error("price_moments: factor_cov not positive semidefinite");
  mean_out.resize(tau_grid.size());
  var_out.resize(tau_grid.size());
  for (int i = 0; i < tau_grid.size(); ++i) {
    const Eigen::VectorXd z = loading_row(tau_grid[i], params.lambda, m);
    mean_out[i] = z.dot(factor_mean);
    var_out[i] = z.dot(factor_cov * z) + params.sigma_y * params.sigma_y;
  }
}

// Prior rate on the measurement precision 1/sigma_y^2: unit Gamma(1,1) on
// the precision of 100-scaled log prices, i.e. Gamma(1, 1e-4) in natural
// units.  A unit rate in natural units would swamp the data sum of squares
// (TN sigma_y^2 ~ 0.1-1 at these noise levels) and push sigma_y far from any
// attainable estimate.
inline constexpr double kSigmaYPrecisionPriorRate = 1e-4;

// Scale matrix of the Wishart prior on Sigma0^{-1} in the no-SV model,
// anchored at an innovation standard deviation of 0.15:
// E(Sigma0^{-1}) = (m+10) S* = 0.15^{-2} I.  Anchoring the precision at
// 0.15^2 instead would amount to ~5*10^4 pseudo-observations of variance 44
// and make the conjugate Sigma0 update ignore the data.
inline Eigen::MatrixXd no_sv_prior_scale(int m) {
  return Eigen::MatrixXd::Identity(m, m) / (0.15 * 0.15 * (m + 10.0));
}

inline double no_sv_prior_df(int m) { return m + 10.0; }

// Log prior density up to additive constants.  Returns -inf for parameters
// outside the support (distinct from throwing, which signals evaluation
// failure on malformed inputs).
inline double log_prior(const Params& params, const ModelSpec& spec) {
  spec.validate();
  const int m = spec.m;
  if (params.lambda.size() != spec.n_lambda() || params.alpha.size() != m ||
      params.beta0.size() != m)
    throw std::invalid_argument("log_prior: parameter shapes mismatch");
  const double neg_inf = -std::numeric_limits<double>::infinity();

  for (int i = 0; i < params.lambda.size(); ++i)
    if (!(params.lambda[i] > 0.0)) return neg_inf;
  if (!(params.sigma_y > 0.0)) return neg_inf;

  double lp = 0.0;
  // Flat on (ln lambda1, ln lambda2): density 1/lambda in lambda space.
  for (int i = 0; i < params.lambda.size(); ++i) lp -= std::log(params.lambda[i]);
  // 1/sigma_y^2 ~ Gamma(1, rate): exponential kernel in the precision.
  lp -= kSigmaYPrecisionPriorRate / (params.sigma_y * params.sigma_y);
  // alpha ~ N(0, 100^2 I).
  lp -= 0.5 * params.alpha.squaredNorm() / (100.0 * 100.0);
  // beta0 ~ N(0, 1000 I).
  lp -= 0.5 * params.beta0.squaredNorm() / 1000.0;

  if (spec.sv) {
    // Flat on nu over (m+1, inf); Sigma0 has a point-mass prior at 0.1^2 I.
    if (!(params.nu > m + 1)) return neg_inf;
  } else {
    // Sigma0^{-1} ~ W_m(m+10, S*) with E(Sigma0^{-1}) = 0.15^2 I.
    Eigen::LLT<Eigen::MatrixXd> llt(params.Sigma0);
    if (llt.info() != Eigen::Success) return neg_inf;
    const double df = no_sv_prior_df(m);
    const Eigen::MatrixXd Sstar = no_sv_prior_scale(m);
    const Eigen::MatrixXd P = llt.solve(Eigen::MatrixXd::Identity(m, m));
    double logdet_P = 0.0;
    for (int i = 0; i < m; ++i) logdet_P -= 2.0 * std::log(llt.matrixL()(i, i));
    lp += 0.5 * (df - m - 1.0) * logdet_P;
    lp -= 0.5 * (Sstar.llt().solve(P)).trace();
  }
  return lp;
}

// Flat key=value serialization; sigma0 is the lower triangle in row-major
// order on a single line.
inline std::string params_to_text(const Params& p, const ModelSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  os << "m = " << spec.m << "\n";
  os << "sv = " << (spec.sv ? 1 : 0) << "\n";
  os << "lambda1 = " << p.lambda[0] << "\n";
  if (spec.m == 4) os << "lambda2 = " << p.lambda[1] << "\n";
  os << "sigma_y = " << p.sigma_y << "\n";
  for (int i = 0; i < spec.m; ++i) os << "alpha" << (i + 1) << " = " << p.alpha[i] << "\n";
  if (spec.sv) os << "nu = " << p.nu << "\n";
  for (int i = 0; i < spec.m; ++i) os << "beta0_" << (i + 1) << " = " << p.beta0[i] << "\n";
  os << "sigma0 =";
  for (int i = 0; i < spec.m; ++i)
    for (int j = 0; j <= i; ++j) os << " " << p.Sigma0(i, j);
  os << "\n";
  return os.str();
}

inline Params params_from_key_values(const std::map<std::string, std::string>& kv,
                                     ModelSpec& spec_out) {
  auto need = [&kv](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw std::runtime_error("params file: missing key '" + k + "'");
    return it->second;
  };
  spec_out.m = std::stoi(need("m"));
  spec_out.sv = std::stoi(need("sv")) != 0;
  spec_out.validate();
  const int m = spec_out.m;
  Params p;
  p.lambda.resize(spec_out.n_lambda());
  p.lambda[0] = std::stod(need("lambda1"));
  if (m == 4) p.lambda[1] = std::stod(need("lambda2"));
  p.sigma_y = std::stod(need("sigma_y"));
  p.alpha.resize(m);
  for (int i = 0; i < m; ++i) p.alpha[i] = std::stod(need("alpha" + std::to_string(i + 1)));
  p.nu = spec_out.sv ? std::stod(need("nu")) : 0.0;
  p.beta0.resize(m);
  for (int i = 0; i < m; ++i) p.beta0[i] = std::stod(need("beta0_" + std::to_string(i + 1)));
  std::istringstream tri(need("sigma0"));
  p.Sigma0.setZero(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j <= i; ++j) {
      double v;
      if (!(tri >> v)) throw std::runtime_error("params file: sigma0 triangle too short");
      p.Sigma0(i, j) = v;
      p.Sigma0(j, i) = v;
    }
  p.validate(spec_out);
  return p;
}

inline Params params_from_file(const std::string& path, ModelSpec& spec_out) {
  return params_from_key_values(read_key_values(path), spec_out);
}

}  // namespace dnssv

#endif
