#ifndef DNSSV_BACKTEST_HPP
#define DNSSV_BACKTEST_HPP

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnssv/forecast.hpp"

namespace dnssv {

struct PortfolioVarRecord {
  std::string portfolio;
  double level = 0.0;
  double var = 0.0;
  double realized = 0.0;
  bool hit = false;
  bool benchmark = false;
};

struct ForecastRecord {
  Date origin_date;
  int origin_index = -1;
  Eigen::VectorXd predictive_mean;
  Eigen::MatrixXd predictive_cov;
  double log_pred_density = 0.0;
  Eigen::VectorXd pearson;
  Eigen::VectorXd rw_forecast;
  std::vector<PortfolioVarRecord> var_records;
  bool ok = true;
  std::string error;
};

struct BacktestConfig {
  GibbsConfig initial_chain;       // full run at the first origin
  int warm_cycles = 500;           // warm-started cycles per later origin
  int warm_burnin = 100;
  bool full_reestimate = false;    // rerun initial_chain at every origin
  int reduced_cycles = 200;        // theta-fixed draws per origin
  int predictive_draws = 400;      // posterior draws entering the density
  int var_draws = 10000;
  int forecast_samples_per_draw = 25;
  std::vector<double> levels{0.01, 0.05, 0.10};
  std::vector<Portfolio> portfolios;
  bool run_var_benchmark = true;
  std::uint64_t seed = 1;
};

struct CoverageRow {
  std::string portfolio;
  bool benchmark = false;
  double level = 0.0;
  double hit_rate = 0.0;
  TestResult uc, ind, cc;
};

struct BacktestSummary {
  Eigen::VectorXd pearson_mean, pearson_sd;     // per contract
  Eigen::VectorXd lb_p_resid, lb_p_resid_sq;    // per contract
  double log_pl_total = 0.0;
  Eigen::VectorXd rmsfe_per_contract;
  Eigen::VectorXd rmsfe_rw_per_contract;
  std::vector<CoverageRow> coverage;
  int n_origins_ok = 0;
};

struct BacktestResult {
  std::vector<ForecastRecord> records;
  BacktestSummary summary;
};

namespace detail {

inline void summarize_backtest(const PanelData& panel, const BacktestConfig& config,
                               BacktestResult& out) {
  const int N = panel.N();
  std::vector<const ForecastRecord*> ok;
  for (const auto& r : out.records)
    if (r.ok) ok.push_back(&r);
  const int M = static_cast<int>(ok.size());
  out.summary.n_origins_ok = M;
  if (M == 0) return;

  Eigen::MatrixXd pearson(M, N), err(M, N), err_rw(M, N);
  double lpl = 0.0;
  for (int k = 0; k < M; ++k) {
    const ForecastRecord& r = *ok[k];
    const Eigen::VectorXd realized =
        panel.log_prices.row(r.origin_index + 1).transpose();
    pearson.row(k) = r.pearson.transpose();
    err.row(k) = (realized - r.predictive_mean).transpose();
    err_rw.row(k) = (realized - r.rw_forecast).transpose();
    lpl += r.log_pred_density;
  }
  out.summary.log_pl_total = lpl;
  out.summary.pearson_mean = pearson.colwise().mean().transpose();
  out.summary.pearson_sd.resize(N);
  out.summary.lb_p_resid.resize(N);
  out.summary.lb_p_resid_sq.resize(N);
  for (int i = 0; i < N; ++i) {
    const Eigen::VectorXd xi = pearson.col(i);
    const double mu = xi.mean();
    out.summary.pearson_sd[i] =
        std::sqrt((xi.array() - mu).square().sum() / std::max(1, M - 1));
    if (M > 12) {
      out.summary.lb_p_resid[i] = ljung_box(xi, 10).p_value;
      out.summary.lb_p_resid_sq[i] = ljung_box(xi.array().square(), 10).p_value;
    } else {
      out.summary.lb_p_resid[i] = std::numeric_limits<double>::quiet_NaN();
      out.summary.lb_p_resid_sq[i] = out.summary.lb_p_resid[i];
    }
  }
  out.summary.rmsfe_per_contract = rmsfe_per_contract(err);
  out.summary.rmsfe_rw_per_contract = rmsfe_per_contract(err_rw);

  for (const Portfolio& p : config.portfolios)
    for (bool bench : {false, true}) {
      if (bench && !config.run_var_benchmark) continue;
      for (double level : config.levels) {
        std::vector<char> hits;
        for (const auto* r : ok)
          for (const auto& v : r->var_records)
            if (v.portfolio == p.name && v.benchmark == bench &&
                std::fabs(v.level - level) < 1e-12)
              hits.push_back(v.hit ? 1 : 0);
        if (hits.size() < 2) continue;  // coverage tests need a sequence
        CoverageRow row;
        row.portfolio = p.name;
        row.benchmark = bench;
        row.level = level;
        int x = 0;
        for (char h : hits) x += h;
        row.hit_rate = static_cast<double>(x) / hits.size();
        row.uc = kupiec_uc(hits, level);
        row.ind = christoffersen_ind(hits);
        row.cc = christoffersen_cc(hits, level);
        out.summary.coverage.push_back(row);
      }
    }
}

}  // namespace detail

// Rolling one-step-ahead backtest over origins [first_origin,
// first_origin + n_origins): per origin the posterior is updated on the
// expanding panel (full Gibbs at the first origin, warm-started short chains
// afterwards unless full_reestimate), the predictive density is averaged
// over posterior draws, point/variance forecasts and VaR come from a
// theta-fixed reduced run at the posterior mean, and the extracted-factor
// VAR benchmark is refitted on the expanding window.
inline BacktestResult rolling_backtest(const PanelData& panel, const ModelSpec& spec,
                                       int first_origin, int n_origins,
                                       const BacktestConfig& config) {
  panel.validate();
  if (first_origin < 2 || first_origin + n_origins >= panel.T())
    throw std::invalid_argument("rolling_backtest: window outside panel");
  if (n_origins < 1) throw std::invalid_argument("rolling_backtest: empty window");

  BacktestResult out;
  out.records.reserve(n_origins);

  Params warm_params;
  StatePath warm_state;
  bool have_warm = false;

  for (int k = 0; k < n_origins; ++k) {
    const int o = first_origin + k;
    ForecastRecord rec;
    rec.origin_index = o;
    rec.origin_date = panel.dates[o];
    try {
      const PanelData prefix = panel.prefix(o + 1);
      GibbsSampler sampler(prefix, spec);
      PosteriorSample post;
      if (!have_warm || config.full_reestimate) {
        GibbsConfig gc = config.initial_chain;
        gc.seed = config.seed + 1000003ULL * k;
        post = sampler.run(gc);
      } else {
        GibbsConfig gc = config.initial_chain;
        gc.n_iterations = config.warm_cycles;
        gc.n_burnin = config.warm_burnin;
        gc.adapt_during_burnin = false;
        gc.seed = config.seed + 1000003ULL * k;
        sampler.init_warm(warm_params, warm_state, gc.seed);
        post = sampler.run(gc, std::nullopt, /*skip_init=*/true);
      }
      warm_params = sampler.params();
      warm_state = sampler.state();
      have_warm = true;

      const Params theta_hat = post.posterior_mean_params();
      const Eigen::VectorXd tau_next = panel.maturities.row(o + 1).transpose();
      const Eigen::VectorXd y_t = panel.log_prices.row(o).transpose();
      const Eigen::VectorXd y_next = panel.log_prices.row(o + 1).transpose();

      RngStream rng(config.seed ^ 0xBAC4'7E57ULL, 17 + k);

      // Predictive density over posterior draws (theta uncertainty kept).
      auto dens_draws = predictive_draws_from_posterior(post, config.predictive_draws, rng);
      rec.log_pred_density = predictive_logdensity(tau_next, y_next, dens_draws, spec.m);

      // theta-fixed reduced run for moments and VaR.
      const ReducedRunResult red = reduced_gibbs_run(prefix, theta_hat, spec,
                                                     config.reduced_cycles, rng.next_u64());
      auto fixed_draws = predictive_draws_from_reduced(red.draws, theta_hat, spec, rng);
      const PointVarianceForecast fc = point_variance_forecast(
          tau_next, fixed_draws, spec.m, rng, config.forecast_samples_per_draw);
      rec.predictive_mean = fc.mean;
      rec.predictive_cov = fc.cov;
      rec.pearson = pearson_residuals(fc, y_next);
      rec.rw_forecast = random_walk_forecast(prefix);

      std::optional<FactorVarFit> bench_fit;
      Eigen::MatrixXd factors_e;
      if (config.run_var_benchmark) {
        factors_e = extract_factors_ls(prefix, theta_hat.lambda, spec.m);
        bench_fit = fit_factor_var(factors_e, prefix, theta_hat.lambda);
      }

      for (const Portfolio& p : config.portfolios) {
        const double realized = p.weights.dot(y_next - y_t);
        const std::vector<double> var_model = var_forecast_mc(
            tau_next, y_t, fixed_draws, spec.m, p, config.levels, config.var_draws, rng);
        for (std::size_t li = 0; li < config.levels.size(); ++li) {
          PortfolioVarRecord v;
          v.portfolio = p.name;
          v.level = config.levels[li];
          v.var = var_model[li];
          v.realized = realized;
          v.hit = realized <= v.var;
          rec.var_records.push_back(v);
        }
        if (bench_fit) {
          const std::vector<double> var_bench = benchmark_var_forecast(
              *bench_fit, tau_next, factors_e.row(factors_e.rows() - 1).transpose(), y_t,
              theta_hat.lambda, p, config.levels);
          for (std::size_t li = 0; li < config.levels.size(); ++li) {
            PortfolioVarRecord v;
            v.portfolio = p.name;
            v.level = config.levels[li];
            v.var = var_bench[li];
            v.realized = realized;
            v.hit = realized <= v.var;
            v.benchmark = true;
            rec.var_records.push_back(v);
          }
        }
      }
    } catch (const std::exception& e) {
      rec.ok = false;
      rec.error = e.what();
    }
    out.records.push_back(std::move(rec));
  }

  detail::summarize_backtest(panel, config, out);
  return out;
}

// Accumulated log-predictive-likelihood difference against a reference
// series, re-based to zero at the first origin.
inline Eigen::VectorXd accumulated_logpl_difference(const Eigen::VectorXd& model_lpl,
                                                    const Eigen::VectorXd& reference_lpl) {
  if (model_lpl.size() != reference_lpl.size())
    throw std::invalid_argument("accumulated_logpl_difference: length mismatch");
  Eigen::VectorXd out(model_lpl.size());
  double acc = 0.0;
  for (int i = 0; i < model_lpl.size(); ++i) {
    if (i > 0) acc += model_lpl[i] - reference_lpl[i];
    out[i] = acc;
  }
  return out;
}

}  // namespace dnssv

#endif
