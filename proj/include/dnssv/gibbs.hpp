#ifndef DNSSV_GIBBS_HPP
#define DNSSV_GIBBS_HPP

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnssv/factors.hpp"
#include "dnssv/model.hpp"
#include "dnssv/panel.hpp"
#include "dnssv/samplers.hpp"
#include "dnssv/simulate.hpp"
#include "dnssv/statespace.hpp"
#include "dnssv/wishart_ssm.hpp"

namespace dnssv {

// Collapsed Gibbs sampler.  One cycle:
//   1) lambda by Gaussian RW-MH on ln(lambda) against the integrated
//      likelihood f(y_{1:T} | H_{1:T}) with beta_{0:T} marginalized out,
//      then an exact draw of beta_{0:T} through the precision sampler;
//   2) nu by RW-MH on ln(nu-(m+1)) against the Student-t product
//      f(beta_{1:T}) with H_{1:T} marginalized out, then a joint draw of
//      H_{1:T} by forward filtering / backward sampling
//      (no-SV variant: a conjugate inverse-Wishart draw of Sigma0 instead);
//   3) conjugate draws of alpha and sigma_y^2.

struct GibbsConfig {
  int n_iterations = 11000;
  int n_burnin = 1000;
  double rw_scale_lambda = 0.05;
  double rw_scale_nu = 0.3;
  bool adapt_during_burnin = true;
  std::uint64_t seed = 1;
  int state_thin = 0;  // keep every k-th full state path; 0 keeps none

  void validate() const {
    if (n_burnin < 0 || n_burnin >= n_iterations)
      throw std::invalid_argument("GibbsConfig: need 0 <= n_burnin < n_iterations");
    if (!(rw_scale_lambda > 0.0) || !(rw_scale_nu > 0.0))
      throw std::invalid_argument("GibbsConfig: step sizes must be > 0");
  }
};

// Which blocks a run updates; switching blocks off yields reduced Gibbs runs
// with the corresponding components held fixed.
struct UpdateFlags {
  bool lambda = true;
  bool beta = true;
  bool nu = true;       // SV only
  bool H = true;        // SV only
  bool alpha = true;
  bool sigma_y = true;
  bool Sigma0 = true;   // no-SV only
};

struct TerminalState {
  Eigen::VectorXd beta_T;
  Eigen::MatrixXd H_T;  // empty in no-SV runs
};

struct PosteriorSample {
  ModelSpec spec;
  std::vector<std::string> names;
  Eigen::MatrixXd draws;  // S x P, post burn-in
  Eigen::MatrixXd beta_mean;
  std::vector<TerminalState> terminals;
  std::vector<StatePath> thinned_paths;
  std::map<std::string, double> acceptance_rates;
  double seconds_per_cycle = 0.0;
  int n_iterations = 0;
  int n_burnin = 0;

  int size() const { return static_cast<int>(draws.rows()); }

  int col(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("PosteriorSample: unknown parameter '" + name + "'");
  }

  Eigen::VectorXd column(const std::string& name) const { return draws.col(col(name)); }

  Params params_from_row(int j) const {
    Params p;
    const int m = spec.m;
    p.lambda.resize(spec.n_lambda());
    p.lambda[0] = draws(j, col("lambda1"));
    if (m == 4) p.lambda[1] = draws(j, col("lambda2"));
    p.sigma_y = draws(j, col("sigma_y"));
    p.alpha.resize(m);
    for (int i = 0; i < m; ++i) p.alpha[i] = draws(j, col("alpha" + std::to_string(i + 1)));
    p.nu = spec.sv ? draws(j, col("nu")) : 0.0;
    p.beta0.resize(m);
    for (int i = 0; i < m; ++i) p.beta0[i] = draws(j, col("beta0_" + std::to_string(i + 1)));
    p.Sigma0.resize(m, m);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c <= r; ++c) {
        const double v = draws(j, col("sigma0_" + std::to_string(r + 1) + std::to_string(c + 1)));
        p.Sigma0(r, c) = v;
        p.Sigma0(c, r) = v;
      }
    return p;
  }

  Params posterior_mean_params() const {
    if (size() == 0) throw std::runtime_error("PosteriorSample: empty");
    Params p = params_from_row(0);
    const Eigen::VectorXd mean = draws.colwise().mean();
    PosteriorSample tmp;  // reuse the row decoder on the mean vector
    tmp.spec = spec;
    tmp.names = names;
    tmp.draws = mean.transpose();
    return tmp.params_from_row(0);
  }

  // Scalars reported in the estimation summary (the Table-1 style rows).
  std::vector<std::string> summary_names() const {
    std::vector<std::string> out;
    for (int i = 0; i < spec.m; ++i) out.push_back("alpha" + std::to_string(i + 1));
    out.push_back("lambda1");
    if (spec.m == 4) out.push_back("lambda2");
    out.push_back("sigma_y");
    if (spec.sv) out.push_back("nu");
    else out.push_back("logdet_sigma0");
    return out;
  }
};

// Geyer initial-monotone-sequence effective sample size.
inline double effective_sample_size(const Eigen::VectorXd& x) {
  const int S = static_cast<int>(x.size());
  if (S < 100) throw std::invalid_argument("effective_sample_size: need >= 100 draws");
  const double mean = x.mean();
  const Eigen::VectorXd d = x.array() - mean;
  const double var = d.squaredNorm() / S;
  if (!(var > 0.0))
    throw std::invalid_argument("effective_sample_size: constant series");

  auto rho = [&](int lag) {
    double s = 0.0;
    for (int t = 0; t + lag < S; ++t) s += d[t] * d[t + lag];
    return s / (S * var);
  };

  double sum_pairs = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (int k = 0; 2 * k + 1 < S - 1; ++k) {
    double pair = rho(2 * k) + rho(2 * k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);  // enforce monotone decrease
    sum_pairs += pair;
    prev_pair = pair;
  }
  const double denom = std::max(2.0 * sum_pairs - 1.0, 1e-12);
  return std::min(static_cast<double>(S), S / denom);
}

class GibbsSampler {
 public:
  GibbsSampler(const PanelData& panel, const ModelSpec& spec)
      : spec_(spec),
        y_(panel.log_prices),
        zc_(panel),
        T_(panel.T()),
        N_(panel.N()),
        rng_(1, 0) {
    spec_.validate();
    panel.validate();
  }

  void set_flags(const UpdateFlags& f) { flags_ = f; }
  void set_beta0_mode(Beta0Mode mode) { beta0_mode_ = mode; }

  const Params& params() const { return params_; }
  const StatePath& state() const { return state_; }
  Params& mutable_params() { return params_; }
  StatePath& mutable_state() { return state_; }

  static constexpr double kBeta0PriorVar = 1000.0;
  static constexpr double kAlphaPriorVar = 100.0 * 100.0;

  // Data-driven initialization: lambda from a coarse grid on the integrated
  // likelihood under Sigma0 = 0.1^2 I, factors by cross-section least
  // squares, sigma_y from the cross-section residuals, nu = m+10, alpha = 0.
  void init(std::optional<Params> start = std::nullopt, std::uint64_t seed = 1) {
    rng_ = RngStream(seed, 0);
    const int m = spec_.m;
    if (start) {
      params_ = *start;
      params_.validate(spec_);
    } else {
      params_.alpha = Eigen::VectorXd::Zero(m);
      params_.Sigma0 = 0.01 * Eigen::MatrixXd::Identity(m, m);
      params_.nu = spec_.sv ? m + 10.0 : 0.0;
      init_lambda_sigma_from_data();
    }
    zc_.set_lambda(params_.lambda, m);

    // State init: factors by least squares, then a first draw of the
    // volatility state consistent with them.  Panels too narrow for the
    // cross-section regression fall back to the prior-mean path.
    state_.beta.resize(T_ + 1, m);
    if (N_ >= m) {
      Eigen::MatrixXd beta_ls = extract_factors_ls(y_, zc_, params_.lambda, m);
      if (beta0_mode_ == Beta0Mode::Fixed)
        state_.beta.row(0) = params_.beta0.transpose();
      else
        state_.beta.row(0) = beta_ls.row(0);
      state_.beta.bottomRows(T_) = beta_ls;
    } else {
      if (!start)
        throw std::invalid_argument(
            "GibbsSampler::init: data-driven initialization needs N >= m");
      for (int t = 0; t <= T_; ++t)
        state_.beta.row(t) = (params_.beta0 + t * params_.alpha).transpose();
    }
    if (!start) params_.beta0 = state_.beta.row(0).transpose();

    if (!spec_.sv && !start) {
      // Innovation covariance from factor first differences.
      Eigen::MatrixXd diffs(T_ - 1, m);
      for (int t = 1; t < T_; ++t)
        diffs.row(t - 1) = state_.beta.row(t + 1) - state_.beta.row(t);
      const Eigen::MatrixXd centered = diffs.rowwise() - diffs.colwise().mean();
      params_.Sigma0 = centered.transpose() * centered / std::max(1, T_ - 2) +
                       1e-8 * Eigen::MatrixXd::Identity(m, m);
    }
    params_.validate(spec_);

    if (spec_.sv) {
      refresh_sigma_filter();
      state_.H = backward_sample_H(state_.Sigma_filter, params_.nu, m, rng_);
    } else {
      state_.H.clear();
      state_.Sigma_filter.clear();
    }
  }

  // Warm start from a previous run on a one-period-shorter panel.
  void init_warm(const Params& params, const StatePath& prev, std::uint64_t seed) {
    rng_ = RngStream(seed, 0);
    params_ = params;
    params_.validate(spec_);
    zc_.set_lambda(params_.lambda, spec_.m);
    const int prev_T = static_cast<int>(prev.beta.rows()) - 1;
    if (prev_T > T_) throw std::invalid_argument("init_warm: previous path longer than panel");
    state_.beta.resize(T_ + 1, spec_.m);
    state_.beta.topRows(prev_T + 1) = prev.beta;
    for (int t = prev_T + 1; t <= T_; ++t)
      state_.beta.row(t) = state_.beta.row(t - 1) + params_.alpha.transpose();
    if (spec_.sv) {
      const double g = gamma_from_nu(params_.nu, spec_.m);
      state_.H = prev.H;
      state_.H.resize(T_);
      for (int t = prev_T; t < T_; ++t)
        state_.H[t] = t == 0 ? sample_wishart(params_.nu,
                                              params_.Sigma0.llt().solve(
                                                  Eigen::MatrixXd::Identity(spec_.m, spec_.m)) / g,
                                              rng_)
                             : wishart_sv_step(state_.H[t - 1], params_.nu, g, rng_);
      refresh_sigma_filter();
    }
  }

  // ln f(y_{1:T} | H_{1:T}) at an arbitrary lambda, leaving the cached
  // loadings on the sampler's current lambda.
  double integrated_loglik_y_given_H(const Eigen::VectorXd& lambda) {
    GaussSsmSystem sys;
    std::unique_ptr<BandedCholesky> chol;
    const double ll = eval_system(lambda, sys, chol);
    zc_.set_lambda(params_.lambda, spec_.m);
    return ll;
  }

  // Step 1: collapsed (lambda, beta_{0:T}) update.  Returns true when the
  // MH move was accepted.
  bool step_beta_lambda() {
    const int d = spec_.n_lambda();
    bool accepted = false;

    GaussSsmSystem sys_cur;
    std::unique_ptr<BandedCholesky> chol_cur;
    const double ll_cur = eval_system(params_.lambda, sys_cur, chol_cur);

    if (flags_.lambda) {
      Eigen::VectorXd u(d);
      for (int i = 0; i < d; ++i) u[i] = std::log(params_.lambda[i]) + scale_lambda_ * rng_.normal();
      const Eigen::VectorXd lambda_prop = u.array().exp();
      // Identification: the ordering lambda2 > lambda1 is part of the prior
      // support, so proposals that cross it are rejected outright.
      const bool in_support = d == 1 || lambda_prop[1] > lambda_prop[0];
      double log_ratio = -std::numeric_limits<double>::infinity();
      GaussSsmSystem sys_prop;
      std::unique_ptr<BandedCholesky> chol_prop;
      if (in_support) {
        const double ll_prop = eval_system(lambda_prop, sys_prop, chol_prop);
        log_ratio = ll_prop - ll_cur;
      }
      if (std::log(rng_.uniform()) < log_ratio) {
        params_.lambda = lambda_prop;
        sys_cur = std::move(sys_prop);
        chol_cur = std::move(chol_prop);
        accepted = true;
      }
      zc_.set_lambda(params_.lambda, spec_.m);
      ++n_prop_lambda_;
      n_acc_lambda_ += accepted ? 1 : 0;
      adapt(scale_lambda_, accepted, n_prop_lambda_);
    }

    if (flags_.beta) state_.beta = sample_beta_path(sys_cur, *chol_cur, rng_);
    return accepted;
  }

  // Step 2 (SV): collapsed (nu, H_{1:T}) update.
  bool step_H_nu() {
    if (!spec_.sv) throw std::logic_error("step_H_nu: SV disabled");
    const int m = spec_.m;
    bool accepted = false;
    if (flags_.nu) {
      const double ll_cur = integrated_loglik_beta(state_.beta, params_.alpha,
                                                   params_.Sigma0, params_.nu);
      const double u_cur = std::log(params_.nu - (m + 1));
      const double u_prop = u_cur + scale_nu_ * rng_.normal();
      const double nu_prop = (m + 1) + std::exp(u_prop);
      const double ll_prop = integrated_loglik_beta(state_.beta, params_.alpha,
                                                    params_.Sigma0, nu_prop);
      // Flat prior on nu plus the log-transform Jacobian.
      const double log_ratio = (ll_prop + u_prop) - (ll_cur + u_cur);
      if (std::log(rng_.uniform()) < log_ratio) {
        params_.nu = nu_prop;
        accepted = true;
      }
      ++n_prop_nu_;
      n_acc_nu_ += accepted ? 1 : 0;
      adapt(scale_nu_, accepted, n_prop_nu_);
    }
    if (flags_.H) {
      refresh_sigma_filter();
      state_.H = backward_sample_H(state_.Sigma_filter, params_.nu, m, rng_);
    }
    return accepted;
  }

  // Step 2 (no-SV): conjugate Sigma0 update.
  void step_Sigma0_no_sv() {
    if (spec_.sv) throw std::logic_error("step_Sigma0_no_sv: SV enabled");
    const int m = spec_.m;
    const Eigen::MatrixXd eta = eta_from_beta(state_.beta, params_.alpha);
    Eigen::MatrixXd scatter = no_sv_prior_scale(m).llt().solve(Eigen::MatrixXd::Identity(m, m));
    scatter.noalias() += eta.transpose() * eta;
    params_.Sigma0 =
        sample_inverse_wishart(no_sv_prior_df(m) + eta.rows(), scatter, rng_);
  }

  // Step 3a: conjugate alpha draw (GLS on the factor first differences).
  void step_alpha() {
    const int m = spec_.m;
    Eigen::MatrixXd Vinv = Eigen::MatrixXd::Identity(m, m) / kAlphaPriorVar;
    Eigen::VectorXd r = Eigen::VectorXd::Zero(m);
    if (spec_.sv) {
      for (int t = 1; t <= T_; ++t) {
        const Eigen::VectorXd diff =
            (state_.beta.row(t) - state_.beta.row(t - 1)).transpose();
        Vinv += state_.H[t - 1];
        r.noalias() += state_.H[t - 1] * diff;
      }
    } else {
      const Eigen::MatrixXd S0inv =
          params_.Sigma0.llt().solve(Eigen::MatrixXd::Identity(m, m));
      Eigen::VectorXd sum_diff =
          (state_.beta.row(T_) - state_.beta.row(0)).transpose();
      Vinv += T_ * S0inv;
      r.noalias() += S0inv * sum_diff;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(Vinv);
    if (llt.info() != Eigen::Success) throw NumericalError("step_alpha: Vinv not SPD");
    Eigen::VectorXd z(m);
    for (int i = 0; i < m; ++i) z[i] = rng_.normal();
    params_.alpha = llt.solve(r) +
                    Eigen::MatrixXd(llt.matrixU()).triangularView<Eigen::Upper>().solve(z);
  }

  // Step 3b: conjugate sigma_y^2 draw,
  // 1/sigma_y^2 ~ Gamma(1 + TN/2, rate0 + ss/2).
  void step_sigma_y() {
    zc_.set_lambda(params_.lambda, spec_.m);
    double ss = 0.0;
    Eigen::MatrixXd Z(N_, spec_.m);
    for (int t = 1; t <= T_; ++t) {
      zc_.fill_Z(t - 1, Z);
      ss += (y_.row(t - 1).transpose() - Z * state_.beta.row(t).transpose()).squaredNorm();
    }
    const double prec =
        sample_gamma(1.0 + 0.5 * T_ * N_, kSigmaYPrecisionPriorRate + 0.5 * ss, rng_);
    params_.sigma_y = 1.0 / std::sqrt(prec);
  }

  void cycle() {
    const char* block = "beta_lambda";
    try {
      step_beta_lambda();
      if (spec_.sv) {
        block = "H_nu";
        if (flags_.nu || flags_.H) step_H_nu();
      } else if (flags_.Sigma0) {
        block = "Sigma0";
        step_Sigma0_no_sv();
      }
      block = "alpha";
      if (flags_.alpha) step_alpha();
      block = "sigma_y";
      if (flags_.sigma_y) step_sigma_y();
      if (spec_.sv) refresh_sigma_filter();
      if (beta0_mode_ == Beta0Mode::Gaussian) params_.beta0 = state_.beta.row(0).transpose();
    } catch (const std::exception& e) {
      throw std::runtime_error("gibbs cycle " + std::to_string(cycle_index_) + ", block " +
                               block + ": " + e.what());
    }
    ++cycle_index_;
  }

  PosteriorSample run(const GibbsConfig& config, std::optional<Params> start = std::nullopt,
                      bool skip_init = false) {
    config.validate();
    if (!skip_init) init(start, config.seed);
    rng_ = RngStream(config.seed, 1);
    scale_lambda_ = config.rw_scale_lambda;
    scale_nu_ = config.rw_scale_nu;
    adapt_ = config.adapt_during_burnin;
    n_prop_lambda_ = n_acc_lambda_ = n_prop_nu_ = n_acc_nu_ = 0;
    cycle_index_ = 0;

    PosteriorSample out;
    out.spec = spec_;
    out.n_iterations = config.n_iterations;
    out.n_burnin = config.n_burnin;
    out.names = scalar_names();
    const int S = config.n_iterations - config.n_burnin;
    out.draws.resize(S, static_cast<int>(out.names.size()));
    out.beta_mean = Eigen::MatrixXd::Zero(T_ + 1, spec_.m);
    out.terminals.reserve(S);

    const auto t0 = std::chrono::steady_clock::now();
    int kept = 0;
    for (int it = 0; it < config.n_iterations; ++it) {
      if (it == config.n_burnin) {
        // Freeze step sizes and restart acceptance accounting.
        adapt_ = false;
        n_prop_lambda_ = n_acc_lambda_ = n_prop_nu_ = n_acc_nu_ = 0;
      }
      cycle();
      if (it >= config.n_burnin) {
        record_row(out, kept);
        out.beta_mean += state_.beta;
        TerminalState ts;
        ts.beta_T = state_.beta.row(T_).transpose();
        if (spec_.sv) ts.H_T = state_.H[T_ - 1];
        out.terminals.push_back(std::move(ts));
        if (config.state_thin > 0 && kept % config.state_thin == 0)
          out.thinned_paths.push_back(state_);
        ++kept;
      }
    }
    const auto t1 = std::chrono::steady_clock::now();
    out.seconds_per_cycle =
        std::chrono::duration<double>(t1 - t0).count() / config.n_iterations;
    out.beta_mean /= kept;
    if (flags_.lambda && n_prop_lambda_ > 0)
      out.acceptance_rates["lambda"] = static_cast<double>(n_acc_lambda_) / n_prop_lambda_;
    if (spec_.sv && flags_.nu && n_prop_nu_ > 0)
      out.acceptance_rates["nu"] = static_cast<double>(n_acc_nu_) / n_prop_nu_;
    return out;
  }

  double current_scale_lambda() const { return scale_lambda_; }
  double current_scale_nu() const { return scale_nu_; }

  void refresh_sigma_filter() {
    const Eigen::MatrixXd eta = eta_from_beta(state_.beta, params_.alpha);
    state_.Sigma_filter =
        forward_filter_Sigma(eta, params_.Sigma0, gamma_from_nu(params_.nu, spec_.m));
  }

 private:
  std::vector<std::string> scalar_names() const {
    std::vector<std::string> n;
    n.push_back("lambda1");
    if (spec_.m == 4) n.push_back("lambda2");
    n.push_back("sigma_y");
    for (int i = 0; i < spec_.m; ++i) n.push_back("alpha" + std::to_string(i + 1));
    if (spec_.sv) n.push_back("nu");
    for (int i = 0; i < spec_.m; ++i) n.push_back("beta0_" + std::to_string(i + 1));
    for (int r = 0; r < spec_.m; ++r)
      for (int c = 0; c <= r; ++c)
        n.push_back("sigma0_" + std::to_string(r + 1) + std::to_string(c + 1));
    if (!spec_.sv) n.push_back("logdet_sigma0");
    return n;
  }

  void record_row(PosteriorSample& out, int row) const {
    int k = 0;
    out.draws(row, k++) = params_.lambda[0];
    if (spec_.m == 4) out.draws(row, k++) = params_.lambda[1];
    out.draws(row, k++) = params_.sigma_y;
    for (int i = 0; i < spec_.m; ++i) out.draws(row, k++) = params_.alpha[i];
    if (spec_.sv) out.draws(row, k++) = params_.nu;
    for (int i = 0; i < spec_.m; ++i) out.draws(row, k++) = state_.beta(0, i);
    for (int r = 0; r < spec_.m; ++r)
      for (int c = 0; c <= r; ++c) out.draws(row, k++) = params_.Sigma0(r, c);
    if (!spec_.sv)
      out.draws(row, k++) = std::log(params_.Sigma0.determinant());
  }

  PrecisionPath current_precision() const {
    PrecisionPath H;
    if (spec_.sv)
      H.path = &state_.H;
    else
      H.constant = params_.Sigma0.llt().solve(Eigen::MatrixXd::Identity(spec_.m, spec_.m));
    return H;
  }

  // Builds, factors and evaluates the collapsed likelihood at the given
  // lambda; the loading cache is left on that lambda.
  double eval_system(const Eigen::VectorXd& lambda, GaussSsmSystem& sys,
                     std::unique_ptr<BandedCholesky>& chol) {
    zc_.set_lambda(lambda, spec_.m);
    const PrecisionPath H = current_precision();
    sys = build_gauss_ssm(y_, zc_, H, params_.sigma_y, params_.alpha, beta0_mode_,
                          kBeta0PriorVar, params_.beta0);
    chol = std::make_unique<BandedCholesky>(sys.prec);
    return gauss_ssm_loglik(sys, *chol, y_, zc_, H, params_.sigma_y, params_.alpha);
  }

  void adapt(double& scale, bool accepted, long n) {
    if (!adapt_) return;
    // Robbins-Monro drift toward 30% acceptance.
    const double step = 1.0 / std::pow(static_cast<double>(n), 0.6);
    scale *= std::exp(step * ((accepted ? 1.0 : 0.0) - 0.30));
    scale = std::clamp(scale, 1e-6, 10.0);
  }

  ModelSpec spec_;
  Eigen::MatrixXd y_;
  LoadingCache zc_;
  int T_, N_;
  RngStream rng_;
  UpdateFlags flags_;
  Beta0Mode beta0_mode_ = Beta0Mode::Gaussian;
  Params params_;
  StatePath state_;
  double scale_lambda_ = 0.05;
  double scale_nu_ = 0.3;
  bool adapt_ = true;
  long n_prop_lambda_ = 0, n_acc_lambda_ = 0;
  long n_prop_nu_ = 0, n_acc_nu_ = 0;
  long cycle_index_ = 0;

  void init_lambda_sigma_from_data() {
    const int m = spec_.m;
    // Residual scale at a mid-grid lambda.
    Eigen::VectorXd lam_mid(spec_.n_lambda());
    lam_mid[0] = 0.005;
    if (m == 4) {
      lam_mid[0] = 0.004;
      lam_mid[1] = 0.016;
    }
    params_.sigma_y = std::max(ls_residual_sd(lam_mid), 1e-6);
    params_.beta0 = Eigen::VectorXd::Zero(m);

    const int n_grid = m == 4 ? 10 : 24;
    Eigen::VectorXd grid(n_grid);
    for (int i = 0; i < n_grid; ++i)
      grid[i] = std::exp(std::log(2e-4) +
                         (std::log(5e-2) - std::log(2e-4)) * i / (n_grid - 1.0));
    double best = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_lambda = lam_mid;
    if (m == 3) {
      for (int i = 0; i < n_grid; ++i) {
        Eigen::VectorXd lam(1);
        lam[0] = grid[i];
        const double ll = grid_score(lam);
        if (ll > best) {
          best = ll;
          best_lambda = lam;
        }
      }
    } else {
      for (int i = 0; i < n_grid; ++i)
        for (int j = i + 1; j < n_grid; ++j) {
          Eigen::VectorXd lam(2);
          lam[0] = grid[i];
          lam[1] = grid[j];
          const double ll = grid_score(lam);
          if (ll > best) {
            best = ll;
            best_lambda = lam;
          }
        }
    }
    params_.lambda = best_lambda;
  }

  double ls_residual_sd(const Eigen::VectorXd& lambda) {
    zc_.set_lambda(lambda, spec_.m);
    const Eigen::MatrixXd beta_ls = extract_factors_ls(y_, zc_, lambda, spec_.m);
    double ss = 0.0;
    Eigen::MatrixXd Z(N_, spec_.m);
    for (int t = 0; t < T_; ++t) {
      zc_.fill_Z(t, Z);
      ss += (y_.row(t).transpose() - Z * beta_ls.row(t).transpose()).squaredNorm();
    }
    return std::sqrt(ss / (static_cast<double>(T_) * N_));
  }

  double grid_score(const Eigen::VectorXd& lambda) {
    PrecisionPath H;
    H.constant = 100.0 * Eigen::MatrixXd::Identity(spec_.m, spec_.m);  // Sigma0=0.1^2 I
    zc_.set_lambda(lambda, spec_.m);
    const Eigen::VectorXd alpha0 = Eigen::VectorXd::Zero(spec_.m);
    try {
      return dnssv::integrated_loglik_y_given_H(y_, zc_, H, params_.sigma_y, alpha0,
                                                Beta0Mode::Gaussian, kBeta0PriorVar,
                                                params_.beta0);
    } catch (const NumericalError&) {
      return -std::numeric_limits<double>::infinity();
    }
  }
};

// Convenience wrapper matching the one-call estimation entry point.
inline PosteriorSample run_chain(const PanelData& panel, const ModelSpec& spec,
                                 const GibbsConfig& config,
                                 std::optional<Params> start = std::nullopt) {
  GibbsSampler sampler(panel, spec);
  return sampler.run(config, start);
}

}  // namespace dnssv

#endif
