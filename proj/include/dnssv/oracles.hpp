#ifndef DNSSV_ORACLES_HPP
#define DNSSV_ORACLES_HPP

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnssv/rng.hpp"
#include "dnssv/samplers.hpp"
#include "dnssv/specfun.hpp"

namespace dnssv {

// Reference implementations used only for validation.  They deliberately
// share no code with the production paths they check: the Kalman recursions
// below work on dense covariance matrices, whereas the library integrates
// and simulates through the banded precision of the joint state path.

struct KalmanResult {
  double loglik = 0.0;
  Eigen::MatrixXd filtered_mean;                // (T+1) x m, row 0 = beta_0
  std::vector<Eigen::MatrixXd> filtered_cov;    // T+1
  Eigen::MatrixXd smoothed_mean;                // (T+1) x m
  std::vector<Eigen::MatrixXd> smoothed_cov;    // T+1
  Eigen::MatrixXd predicted_mean;               // T x m (one-step, before update)
  std::vector<Eigen::MatrixXd> predicted_cov;   // T
};

// Prediction-error-decomposition likelihood and RTS smoother for
//   y_t = Z_t beta_t + eps,  beta_t = alpha + beta_{t-1} + eta_t, eta_t ~ N(0, Q_t),
// with beta_0 ~ N(beta0_mean, beta0_var * I); beta0_var = 0 pins beta_0.
// The recursions run in long double: the covariance-form filter loses ~1e-6
// through the diffuse first update at data-scale noise levels, which would
// mask errors in the banded-precision path this oracle exists to catch.
inline KalmanResult kalman_filter_smoother(const Eigen::MatrixXd& y,
                                           const std::vector<Eigen::MatrixXd>& Z,
                                           const std::vector<Eigen::MatrixXd>& Q,
                                           double sigma_y,
                                           const Eigen::VectorXd& alpha,
                                           const Eigen::VectorXd& beta0_mean,
                                           double beta0_var) {
  using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using VecL = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  const int T = static_cast<int>(y.rows());
  const int N = static_cast<int>(y.cols());
  const int m = static_cast<int>(alpha.size());
  if (static_cast<int>(Z.size()) != T || static_cast<int>(Q.size()) != T)
    throw std::invalid_argument("kalman: Z/Q length mismatch");

  KalmanResult r;
  r.filtered_mean.resize(T + 1, m);
  r.filtered_cov.resize(T + 1);
  r.predicted_mean.resize(T, m);
  r.predicted_cov.resize(T);

  std::vector<MatL> filt_cov(T + 1), pred_cov(T);
  std::vector<VecL> filt_mean(T + 1), pred_mean(T);

  VecL a = beta0_mean.cast<long double>();
  MatL P = static_cast<long double>(beta0_var) * MatL::Identity(m, m);
  filt_mean[0] = a;
  filt_cov[0] = P;

  const long double s2 = static_cast<long double>(sigma_y) * sigma_y;
  const MatL R = s2 * MatL::Identity(N, N);
  long double loglik = 0.0L;
  for (int t = 0; t < T; ++t) {
    const MatL Zl = Z[t].cast<long double>();
    const VecL a_pred = alpha.cast<long double>() + a;
    const MatL P_pred = P + Q[t].cast<long double>();
    pred_mean[t] = a_pred;
    pred_cov[t] = P_pred;

    const VecL v = y.row(t).transpose().cast<long double>() - Zl * a_pred;
    const MatL F = Zl * P_pred * Zl.transpose() + R;
    Eigen::LLT<MatL> lltF(F);
    if (lltF.info() != Eigen::Success)
      throw NumericalError("kalman: innovation covariance not SPD at t=" +
                           std::to_string(t + 1));
    long double logdetF = 0.0L;
    for (int i = 0; i < N; ++i) logdetF += 2.0L * std::log(lltF.matrixL()(i, i));
    loglik += -0.5L * (N * static_cast<long double>(kLnTwoPi) + logdetF + v.dot(lltF.solve(v)));

    const MatL K = P_pred * Zl.transpose() * lltF.solve(MatL::Identity(N, N));
    a = a_pred + K * v;
    const MatL IKZ = MatL::Identity(m, m) - K * Zl;
    P = IKZ * P_pred * IKZ.transpose() + K * R * K.transpose();
    filt_mean[t + 1] = a;
    filt_cov[t + 1] = P;
  }
  r.loglik = static_cast<double>(loglik);

  std::vector<VecL> smo_mean = filt_mean;
  std::vector<MatL> smo_cov = filt_cov;
  for (int t = T - 1; t >= 0; --t) {
    // Index t in filtered arrays is the state at time t (0 = beta_0).
    Eigen::LLT<MatL> lltP(pred_cov[t]);
    if (lltP.info() != Eigen::Success)
      throw NumericalError("kalman smoother: predicted covariance not SPD");
    const MatL J = filt_cov[t] * lltP.solve(MatL::Identity(m, m));
    smo_mean[t] = filt_mean[t] + J * (smo_mean[t + 1] - pred_mean[t]);
    smo_cov[t] = filt_cov[t] + J * (smo_cov[t + 1] - pred_cov[t]) * J.transpose();
  }

  r.smoothed_mean.resize(T + 1, m);
  for (int t = 0; t <= T; ++t) {
    r.filtered_mean.row(t) = filt_mean[t].cast<double>().transpose();
    r.filtered_cov[t] = filt_cov[t].cast<double>();
    r.smoothed_mean.row(t) = smo_mean[t].cast<double>().transpose();
    r.smoothed_cov.push_back(smo_cov[t].cast<double>());
  }
  for (int t = 0; t < T; ++t) {
    r.predicted_mean.row(t) = pred_mean[t].cast<double>().transpose();
    r.predicted_cov[t] = pred_cov[t].cast<double>();
  }
  return r;
}

// Dense-matrix Gaussian posterior for the joint state path, assembled
// directly from the structural equations; validates the banded machinery.
struct DensePosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline DensePosterior dense_state_posterior(const Eigen::MatrixXd& y,
                                            const std::vector<Eigen::MatrixXd>& Z,
                                            const std::vector<Eigen::MatrixXd>& H,
                                            double sigma_y, const Eigen::VectorXd& alpha,
                                            double beta0_var) {
  const int T = static_cast<int>(y.rows());
  const int m = static_cast<int>(alpha.size());
  const int dim = (T + 1) * m;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(dim);
  P.topLeftCorner(m, m) = Eigen::MatrixXd::Identity(m, m) / beta0_var;
  const double inv_s2 = 1.0 / (sigma_y * sigma_y);
  for (int t = 1; t <= T; ++t) {
    P.block(t * m, t * m, m, m) += H[t - 1];
    P.block((t - 1) * m, (t - 1) * m, m, m) += H[t - 1];
    P.block(t * m, (t - 1) * m, m, m) -= H[t - 1];
    P.block((t - 1) * m, t * m, m, m) -= H[t - 1];
    c.segment(t * m, m) += H[t - 1] * alpha;
    c.segment((t - 1) * m, m) -= H[t - 1] * alpha;
    P.block(t * m, t * m, m, m) += Z[t - 1].transpose() * Z[t - 1] * inv_s2;
    c.segment(t * m, m) += Z[t - 1].transpose() * y.row(t - 1).transpose() * inv_s2;
  }
  DensePosterior out;
  Eigen::LLT<Eigen::MatrixXd> llt(P);
  if (llt.info() != Eigen::Success)
    throw NumericalError("dense_state_posterior: precision not SPD");
  out.cov = llt.solve(Eigen::MatrixXd::Identity(dim, dim));
  out.mean = out.cov * c;
  return out;
}

// Brute-force Monte Carlo estimate of the integrated transition density
//   f(eta) = E_H[ N(eta; 0, H^{-1}) ],  H ~ W_m(nu, M^{-1}),
// with M the Student-t scale (gamma * Sigma_{t-1}).
struct McDensityEstimate {
  double value = 0.0;
  double se = 0.0;
};

inline McDensityEstimate mc_integrate_t_density(const Eigen::VectorXd& eta,
                                                const Eigen::MatrixXd& M, double nu,
                                                int n_draws, RngStream& rng) {
  const int m = static_cast<int>(eta.size());
  Eigen::LLT<Eigen::MatrixXd> lltM(M);
  if (lltM.info() != Eigen::Success)
    throw NumericalError("mc_integrate_t_density: scale not SPD");
  const Eigen::MatrixXd M_inv = lltM.solve(Eigen::MatrixXd::Identity(m, m));
  double sum = 0.0, sum2 = 0.0;
  for (int k = 0; k < n_draws; ++k) {
    const Eigen::MatrixXd H = sample_wishart(nu, M_inv, rng);
    Eigen::LLT<Eigen::MatrixXd> lltH(H);
    double half_logdet = 0.0;
    for (int i = 0; i < m; ++i) half_logdet += std::log(lltH.matrixL()(i, i));
    const double q = eta.dot(H * eta);
    const double dens = std::exp(-0.5 * m * kLnTwoPi + half_logdet - 0.5 * q);
    sum += dens;
    sum2 += dens * dens;
  }
  McDensityEstimate est;
  est.value = sum / n_draws;
  const double var = (sum2 / n_draws - est.value * est.value) / n_draws;
  est.se = std::sqrt(std::max(var, 0.0));
  return est;
}

// Adaptive Simpson quadrature.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol, int depth = 28) {
  struct Impl {
    const std::function<double(double)>& f;
    double run(double a, double b, double fa, double fm, double fb, double whole,
               double tol, int depth) {
      const double lm = 0.5 * (a + 0.5 * (a + b));
      const double rm = 0.5 * (0.5 * (a + b) + b);
      const double m = 0.5 * (a + b);
      const double flm = f(lm), frm = f(rm);
      const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
      const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
      if (depth <= 0 || std::fabs(left + right - whole) < 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
      return run(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
             run(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    }
  } impl{f};
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return impl.run(a, b, fa, fm, fb, whole, tol, depth);
}

// Scalar (m=1) integrated transition density by quadrature over the
// precision: h ~ Gamma(nu/2, rate M/2), integrand N(eta; 0, 1/h).
inline double quadrature_t_density_1d(double eta, double M, double nu, double tol = 1e-12) {
  const double shape = 0.5 * nu;
  const double rate = 0.5 * M;
  const double log_norm = shape * std::log(rate) - std::lgamma(shape);
  auto integrand_logh = [&](double u) {
    const double h = std::exp(u);
    const double log_gamma_pdf = log_norm + shape * u - rate * h;  // includes du jacobian
    const double log_normal = -0.5 * (kLnTwoPi - u + h * eta * eta);
    return std::exp(log_gamma_pdf + log_normal);
  };
  const double u_mode = std::log(shape / rate);
  const double width = 12.0 / std::sqrt(std::max(shape, 1.0)) + 12.0;
  return adaptive_simpson(integrand_logh, u_mode - width, u_mode + width, tol);
}

// Normalized grid posterior over a scalar parameter given a log-density
// evaluator; trapezoid rule on the supplied grid.
struct GridPosterior {
  Eigen::VectorXd grid;
  Eigen::VectorXd density;  // normalized to integrate to 1
  double mean = 0.0;
};

inline GridPosterior grid_posterior(const Eigen::VectorXd& grid,
                                    const std::function<double(double)>& log_target) {
  const int n = static_cast<int>(grid.size());
  if (n < 3) throw std::invalid_argument("grid_posterior: need at least 3 points");
  GridPosterior out;
  out.grid = grid;
  Eigen::VectorXd logp(n);
  for (int i = 0; i < n; ++i) logp[i] = log_target(grid[i]);
  const double mx = logp.maxCoeff();
  out.density = (logp.array() - mx).exp();
  double z = 0.0, mean_num = 0.0;
  for (int i = 1; i < n; ++i) {
    const double dx = grid[i] - grid[i - 1];
    z += 0.5 * dx * (out.density[i] + out.density[i - 1]);
    mean_num += 0.5 * dx * (grid[i] * out.density[i] + grid[i - 1] * out.density[i - 1]);
  }
  out.density /= z;
  out.mean = mean_num / z;
  return out;
}

struct OracleReport {
  std::string quantity;
  double oracle_value = 0.0;
  double artifact_value = 0.0;
  double tolerance = 0.0;
  bool relative = false;
  bool pass = false;

  static OracleReport make(const std::string& q, double oracle, double artifact,
                           double tol, bool relative) {
    OracleReport r{q, oracle, artifact, tol, relative, false};
    const double diff = std::fabs(oracle - artifact);
    r.pass = relative ? diff <= tol * std::fabs(oracle) : diff <= tol;
    return r;
  }
};

}  // namespace dnssv

#endif
