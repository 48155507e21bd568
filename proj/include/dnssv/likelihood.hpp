#ifndef DNSSV_LIKELIHOOD_HPP
#define DNSSV_LIKELIHOOD_HPP

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnssv/gibbs.hpp"
#include "dnssv/model.hpp"
#include "dnssv/panel.hpp"
#include "dnssv/samplers.hpp"
#include "dnssv/statespace.hpp"
#include "dnssv/wishart_ssm.hpp"

namespace dnssv {

// Exact log marginal data likelihood of the no-SV model at theta (beta_0
// fixed at its theta value, H_t^{-1} = Sigma0 throughout).
inline double loglik_no_sv(const PanelData& panel, const Params& params,
                           const ModelSpec& spec) {
  if (spec.sv) throw std::logic_error("loglik_no_sv: called with SV enabled");
  params.validate(spec);
  LoadingCache zc(panel);
  zc.set_lambda(params.lambda, spec.m);
  PrecisionPath H;
  H.constant = params.Sigma0.llt().solve(Eigen::MatrixXd::Identity(spec.m, spec.m));
  return integrated_loglik_y_given_H(panel.log_prices, zc, H, params.sigma_y, params.alpha,
                                     Beta0Mode::Fixed, GibbsSampler::kBeta0PriorVar,
                                     params.beta0);
}

// Student-t importance densities for the SMC, one per period.  scale holds
// the estimated posterior covariance of beta_t; the proposal itself is the
// standard t with that covariance inflated by df/(df-2).
struct ProposalSequence {
  std::vector<Eigen::VectorXd> loc;    // t = 1..T
  std::vector<Eigen::MatrixXd> scale;  // SPD
  double df = 4.0;
};

struct ReducedRunResult {
  ProposalSequence proposals;
  std::vector<TerminalState> draws;  // terminal state per kept cycle
};

// theta-fixed Gibbs: alternates the exact beta-path draw and the H-path draw
// with all parameters held at theta.  Returns per-t sample moments of beta_t
// (the SMC proposal inputs) and the terminal states used by forecasting.
inline ReducedRunResult reduced_gibbs_run(const PanelData& panel, const Params& params,
                                          const ModelSpec& spec, int cycles,
                                          std::uint64_t seed) {
  if (cycles < 1) throw std::invalid_argument("reduced_gibbs_run: need cycles >= 1");
  params.validate(spec);
  const int T = panel.T();
  const int m = spec.m;

  GibbsSampler sampler(panel, spec);
  UpdateFlags flags;
  flags.lambda = flags.nu = flags.alpha = flags.sigma_y = flags.Sigma0 = false;
  sampler.set_flags(flags);
  sampler.set_beta0_mode(Beta0Mode::Fixed);
  sampler.init(params, seed);

  ReducedRunResult out;
  out.draws.reserve(cycles);
  std::vector<Eigen::VectorXd> mean(T, Eigen::VectorXd::Zero(m));
  std::vector<Eigen::MatrixXd> sq(T, Eigen::MatrixXd::Zero(m, m));
  for (int c = 0; c < cycles; ++c) {
    sampler.cycle();
    const Eigen::MatrixXd& beta = sampler.state().beta;
    for (int t = 1; t <= T; ++t) {
      const Eigen::VectorXd b = beta.row(t).transpose();
      mean[t - 1] += b;
      sq[t - 1].noalias() += b * b.transpose();
    }
    TerminalState ts;
    ts.beta_T = beta.row(T).transpose();
    if (spec.sv) ts.H_T = sampler.state().H[T - 1];
    out.draws.push_back(std::move(ts));
  }

  out.proposals.df = 4.0;
  out.proposals.loc.resize(T);
  out.proposals.scale.resize(T);
  for (int t = 0; t < T; ++t) {
    mean[t] /= cycles;
    Eigen::MatrixXd cov = sq[t] / cycles - mean[t] * mean[t].transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();
    // Floor eigenvalues so a short run still yields an SPD scale.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const double floor_val = std::max(1e-10 * std::max(cov.trace(), 1e-8) / m, 1e-14);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor_val);
    out.proposals.scale[t] =
        es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    out.proposals.loc[t] = mean[t];
  }
  return out;
}

inline ProposalSequence reduced_gibbs_moments(const PanelData& panel, const Params& params,
                                              const ModelSpec& spec, int cycles,
                                              std::uint64_t seed) {
  return reduced_gibbs_run(panel, params, spec, cycles, seed).proposals;
}

struct SmcConfig {
  int n_particles = 10000;
  double proposal_df = 4.0;
  int reduced_gibbs_cycles = 50;
  std::uint64_t seed = 0;
  bool adaptive_resample = false;  // resample only when ESS < L/2
  int n_replicates = 0;            // additional reruns for the MC-sd estimate

  void validate() const {
    if (n_particles < 100) throw std::invalid_argument("SmcConfig: n_particles >= 100");
    if (!(proposal_df > 2.0)) throw std::invalid_argument("SmcConfig: proposal_df > 2");
  }
};

struct SmcResult {
  double loglik = 0.0;
  Eigen::VectorXd per_t;
  double replicate_sd = std::numeric_limits<double>::quiet_NaN();
  int n_particles = 0;
  std::uint64_t seed = 0;
};

// The state-transition density with the precision integrated out: a
// Student-t in eta_t = beta_t - alpha - beta_{t-1} with scale
// gamma * Sigma_{t-1} and nu-m+1 degrees of freedom.  Shared between the
// SMC weights and its validation against the sequential integrated
// likelihood.
class TransitionDensity {
 public:
  TransitionDensity(double nu, int m)
      : nu_(nu),
        m_(m),
        gamma_(gamma_from_nu(nu, m)),
        log_const_(std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * (nu - m + 1.0)) -
                   0.5 * m * std::log(kPi)) {}

  double gamma() const { return gamma_; }

  double logpdf(const Eigen::VectorXd& eta, const Eigen::MatrixXd& Sigma_prev) const {
    const Eigen::MatrixXd M = gamma_ * Sigma_prev;
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() != Eigen::Success)
      throw NumericalError("TransitionDensity: filter scale not SPD");
    double half_logdet = 0.0;
    for (int i = 0; i < m_; ++i) half_logdet += std::log(llt.matrixL()(i, i));
    const double q = llt.matrixL().solve(eta).squaredNorm();
    return log_const_ - half_logdet - 0.5 * (nu_ + 1.0) * std::log1p(q);
  }

 private:
  double nu_;
  int m_;
  double gamma_;
  double log_const_;
};

namespace detail {

// One SMC pass over the panel; weights carry the Eq.-style decomposition
// measurement x t-transition / proposal, with each particle's forward filter
// scale Sigma_{t-1} as sufficient statistic of its past.
inline std::pair<double, Eigen::VectorXd> smc_single_run(
    const Eigen::MatrixXd& y, LoadingCache& zc, const Params& params, const ModelSpec& spec,
    const ProposalSequence& prop, const SmcConfig& config, RngStream rng) {
  const int T = static_cast<int>(y.rows());
  const int N = static_cast<int>(y.cols());
  const int m = spec.m;
  const int L = config.n_particles;
  const TransitionDensity trans(params.nu, m);
  const double gamma = trans.gamma();
  const double q_df = prop.df;

  std::vector<Eigen::VectorXd> beta_prev(L, params.beta0);
  std::vector<Eigen::MatrixXd> Sigma_prev(L, params.Sigma0);
  std::vector<Eigen::VectorXd> beta_new(L);
  std::vector<Eigen::MatrixXd> Sigma_new(L);
  // ln W_{t-1}, the carried normalized weights (uniform after a resample).
  Eigen::VectorXd log_W = Eigen::VectorXd::Constant(L, -std::log(double(L)));
  Eigen::VectorXd logc(L), w(L);
  Eigen::VectorXd per_t(T);
  std::vector<int> ancestors(L);
  Eigen::MatrixXd Z(N, m);
  const double meas_const = -0.5 * N * (kLnTwoPi + 2.0 * std::log(params.sigma_y));
  const double inv_2s2 = 0.5 / (params.sigma_y * params.sigma_y);

  double total = 0.0;
  for (int t = 1; t <= T; ++t) {
    zc.fill_Z(t - 1, Z);
    const Eigen::VectorXd& q_loc = prop.loc[t - 1];
    const Eigen::MatrixXd q_scale = q_df * prop.scale[t - 1];  // standard-t spread
    Eigen::LLT<Eigen::MatrixXd> llt_q(q_scale);
    if (llt_q.info() != Eigen::Success)
      throw NumericalError("smc: proposal scale not SPD at t=" + std::to_string(t));
    const Eigen::MatrixXd Lq = llt_q.matrixL();
    double q_half_logdet = 0.0;
    for (int i = 0; i < m; ++i) q_half_logdet += std::log(Lq(i, i));
    const double q_const = std::lgamma(0.5 * (q_df + m)) - std::lgamma(0.5 * q_df) -
                           0.5 * m * std::log(kPi) - q_half_logdet;

    const Eigen::VectorXd y_t = y.row(t - 1).transpose();
    Eigen::VectorXd z(m), bdraw(m), e(m), resid(N);
    for (int l = 0; l < L; ++l) {
      for (int i = 0; i < m; ++i) z[i] = rng.normal();
      const double chi = rng.chi_squared(q_df);
      bdraw = q_loc + (Lq * z) / std::sqrt(chi);

      // q density at the draw.
      const double q_quad = z.squaredNorm() / chi;
      const double log_q = q_const - 0.5 * (q_df + m) * std::log1p(q_quad);

      e = bdraw - params.alpha - beta_prev[l];
      const double log_trans = trans.logpdf(e, Sigma_prev[l]);

      resid = y_t - Z * bdraw;
      const double log_meas = meas_const - resid.squaredNorm() * inv_2s2;

      logc[l] = log_W[l] + log_meas + log_trans - log_q;
      beta_new[l] = bdraw;
      Sigma_new[l] = e * e.transpose() + gamma * Sigma_prev[l];
    }

    // p(y_t | y_{1:t-1}) ~= sum_l W_{t-1}^l w_t^l.
    const double mx = logc.maxCoeff();
    if (!std::isfinite(mx))
      throw NumericalError("smc: particle collapse (all weights zero) at t=" +
                           std::to_string(t));
    w = (logc.array() - mx).exp();
    const double wsum = w.sum();
    per_t[t - 1] = mx + std::log(wsum);
    total += per_t[t - 1];

    const double ess = wsum * wsum / w.squaredNorm();
    if (!config.adaptive_resample || ess < 0.5 * L) {
      // Multinomial resampling by inverse-cdf lookup; weights reset uniform.
      Eigen::VectorXd cum(L);
      double acc = 0.0;
      for (int l = 0; l < L; ++l) {
        acc += w[l];
        cum[l] = acc;
      }
      for (int l = 0; l < L; ++l) {
        const double u = rng.uniform() * acc;
        const int idx = static_cast<int>(
            std::lower_bound(cum.data(), cum.data() + L, u) - cum.data());
        ancestors[l] = std::min(idx, L - 1);
      }
      for (int l = 0; l < L; ++l) {
        beta_prev[l] = beta_new[ancestors[l]];
        Sigma_prev[l] = Sigma_new[ancestors[l]];
      }
      log_W.setConstant(-std::log(double(L)));
    } else {
      beta_prev.swap(beta_new);
      Sigma_prev.swap(Sigma_new);
      for (int l = 0; l < L; ++l) log_W[l] = std::log(w[l] / wsum);
    }
  }
  return {total, per_t};
}

}  // namespace detail

// Rao-Blackwellised SMC estimate of ln f_theta(y_{1:T}) for the SV model:
// H_{1:T} is integrated out analytically, so particles live on beta_t with a
// Student-t transition, and resampling happens every period.
inline SmcResult smc_loglik(const PanelData& panel, const Params& params,
                            const ModelSpec& spec, const ProposalSequence& proposals,
                            const SmcConfig& config, RngStream rng) {
  if (!spec.sv) throw std::logic_error("smc_loglik: use loglik_no_sv for the no-SV model");
  config.validate();
  params.validate(spec);
  if (static_cast<int>(proposals.loc.size()) != panel.T())
    throw std::invalid_argument("smc_loglik: proposals must cover 1..T");

  LoadingCache zc(panel);
  zc.set_lambda(params.lambda, spec.m);
  SmcResult out;
  out.n_particles = config.n_particles;
  out.seed = rng.seed();
  auto [total, per_t] =
      detail::smc_single_run(panel.log_prices, zc, params, spec, proposals, config, rng);
  out.loglik = total;
  out.per_t = per_t;

  if (config.n_replicates > 0) {
    std::vector<double> vals{total};
    for (int r = 0; r < config.n_replicates; ++r) {
      auto [v, pt] = detail::smc_single_run(panel.log_prices, zc, params, spec, proposals,
                                            config, rng.spawn(1000 + r));
      vals.push_back(v);
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    out.replicate_sd = std::sqrt(ss / (vals.size() - 1));
  }
  return out;
}

// Convenience: fresh reduced-Gibbs proposals at theta, then the SMC estimate.
inline SmcResult smc_loglik_at(const PanelData& panel, const Params& params,
                               const ModelSpec& spec, const SmcConfig& config) {
  const ProposalSequence prop = reduced_gibbs_moments(
      panel, params, spec, config.reduced_gibbs_cycles, config.seed ^ 0x5eedULL);
  return smc_loglik(panel, params, spec, prop, config, RngStream(config.seed, 7));
}

struct DicResult {
  double dic = 0.0;
  double p_d = 0.0;
  double loglik_at_mean = 0.0;
  double mean_loglik = 0.0;
  int n_evals = 0;
};

// DIC = -2 ln f_theta_hat(y) + 2 p_D with p_D from the posterior mean of the
// log likelihood, approximated over a thinned subsample of the draws.
inline DicResult dic(const PosteriorSample& posterior,
                     const std::function<double(const Params&)>& evaluator, int thin = 20) {
  if (posterior.size() == 0) throw std::invalid_argument("dic: empty posterior");
  if (thin < 1) throw std::invalid_argument("dic: thin >= 1");
  DicResult out;
  const Params theta_hat = posterior.posterior_mean_params();
  out.loglik_at_mean = evaluator(theta_hat);
  double sum = 0.0;
  int n = 0;
  for (int j = 0; j < posterior.size(); j += thin) {
    try {
      sum += evaluator(posterior.params_from_row(j));
    } catch (const std::exception& e) {
      throw std::runtime_error("dic: evaluator failed at draw " + std::to_string(j) + ": " +
                               e.what());
    }
    ++n;
  }
  out.mean_loglik = sum / n;
  out.n_evals = n;
  out.p_d = 2.0 * (out.loglik_at_mean - out.mean_loglik);
  out.dic = -2.0 * out.loglik_at_mean + 2.0 * out.p_d;
  return out;
}

}  // namespace dnssv

#endif
