// Command-line front end: simulate synthetic futures panels, estimate the
// factor state-space models by collapsed Gibbs, evaluate marginal
// likelihoods and DIC, run rolling forecast backtests with VaR coverage
// tests, and emit term-structure diagnostics as plot-ready CSV tables.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "dnssv/backtest.hpp"
#include "dnssv/gibbs.hpp"
#include "dnssv/io.hpp"
#include "dnssv/likelihood.hpp"
#include "dnssv/oracles.hpp"
#include "dnssv/simulate.hpp"

namespace fs = std::filesystem;
using namespace dnssv;

namespace {

constexpr const char* kVersion = "dnssv 0.1.0";

struct RunContext {
  std::string out_dir;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string command_line;
  std::vector<std::string> inputs;
  std::vector<std::string> produced;

  std::string provenance() const {
    std::ostringstream os;
    os << "# command: " << command_line << "\n";
    os << "# version: " << kVersion << "\n";
    os << "# seed: " << seed << "\n";
    for (const auto& in : inputs)
      os << "# input " << in << ": fnv64=" << std::hex << fnv1a_hash_file(in) << std::dec
         << "\n";
    return os.str();
  }

  std::ofstream open_output(const std::string& name) {
    fs::create_directories(out_dir);
    const std::string path = (fs::path(out_dir) / name).string();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write output file: " + path);
    out << provenance();
    out.precision(12);
    produced.push_back(path);
    return out;
  }
};

ModelSpec spec_from_flags(const std::string& model, const std::string& sv) {
  ModelSpec spec;
  if (model == "3f") spec.m = 3;
  else if (model == "4f") spec.m = 4;
  else throw CLI::ValidationError("--model must be 3f or 4f");
  if (sv == "on") spec.sv = true;
  else if (sv == "off") spec.sv = false;
  else throw CLI::ValidationError("--sv must be on or off");
  return spec;
}

Params default_generator_params(const ModelSpec& spec) {
  Params p;
  if (spec.m == 4) {
    p.lambda.resize(2);
    p.lambda << 0.0036, 0.0158;
  } else {
    p.lambda.resize(1);
    p.lambda << 0.0054;
  }
  p.sigma_y = 0.0032;
  p.alpha = Eigen::VectorXd::Zero(spec.m);
  p.nu = spec.sv ? 24.0 : 0.0;
  p.beta0 = Eigen::VectorXd::Zero(spec.m);
  p.beta0[0] = 4.0;
  p.beta0[1] = -0.4;
  p.beta0[2] = 0.2;
  p.Sigma0 = 0.01 * Eigen::MatrixXd::Identity(spec.m, spec.m);
  return p;
}

void write_state_dump(const std::string& path, int T, int m,
                      const std::vector<const StatePath*>& paths, bool sv) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write state dump: " + path);
  const char magic[8] = {'D', 'N', 'S', 'S', 'V', 'B', 'I', 'N'};
  out.write(magic, 8);
  auto put_u32 = [&out](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(1u);  // format version
  put_u32(static_cast<std::uint32_t>(T));
  put_u32(static_cast<std::uint32_t>(m));
  put_u32(static_cast<std::uint32_t>(paths.size()));
  put_u32(sv ? 1u : 0u);
  for (const StatePath* sp : paths) {
    out.write(reinterpret_cast<const char*>(sp->beta.data()),
              sp->beta.size() * sizeof(double));
    if (sv)
      for (const auto& H : sp->H)
        out.write(reinterpret_cast<const char*>(H.data()), H.size() * sizeof(double));
  }
}

std::vector<double> parse_levels(const std::string& text) {
  std::vector<double> levels;
  for (const auto& tok : split_line(text, ',')) levels.push_back(std::stod(trim(tok)));
  return levels;
}

std::vector<Portfolio> parse_portfolios(const std::string& text, int N) {
  std::vector<Portfolio> out;
  for (const auto& tok : split_line(text, ',')) {
    const std::string t = trim(tok);
    if (t == "equal") {
      out.push_back(Portfolio::equal(N));
    } else if (t == "bullspread") {
      out.push_back(Portfolio::bull_spread(N, 0, std::min(7, N - 1)));
    } else if (t.rfind("file:", 0) == 0) {
      const CsvTable tab = read_csv(t.substr(5));
      const int c_w = tab.column("weight");
      const int c_c = tab.column("contract");
      if (c_w < 0 || c_c < 0)
        throw std::runtime_error("portfolio file needs columns contract, weight");
      Portfolio p;
      p.weights = Eigen::VectorXd::Zero(N);
      for (const auto& row : tab.rows)
        p.weights[std::stoi(row[c_c]) - 1] = std::stod(row[c_w]);
      p.name = fs::path(t.substr(5)).stem().string();
      p.validate();
      out.push_back(p);
    } else {
      throw std::runtime_error("unknown portfolio '" + t + "'");
    }
  }
  return out;
}

// posterior_draws.csv carries the model shape in a comment line.
PosteriorSample read_posterior_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open posterior file: " + path);
  PosteriorSample post;
  bool have_spec = false;
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      int m = 0, sv = 0;
      if (std::sscanf(line.c_str(), "# model: m=%d sv=%d", &m, &sv) == 2) {
        post.spec.m = m;
        post.spec.sv = sv != 0;
        have_spec = true;
      }
      continue;
    }
    if (post.names.empty()) {
      for (auto& f : split_line(line)) post.names.push_back(trim(f));
    } else {
      std::vector<double> row;
      for (auto& f : split_line(line)) row.push_back(std::stod(f));
      rows.push_back(std::move(row));
    }
  }
  if (!have_spec) throw std::runtime_error("posterior file lacks the '# model:' line");
  post.draws.resize(static_cast<int>(rows.size()), static_cast<int>(post.names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      post.draws(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
  return post;
}

void write_posterior_csv(RunContext& ctx, const PosteriorSample& post,
                         const std::string& name) {
  std::ofstream out = ctx.open_output(name);
  out << "# model: m=" << post.spec.m << " sv=" << (post.spec.sv ? 1 : 0) << "\n";
  for (std::size_t j = 0; j < post.names.size(); ++j)
    out << post.names[j] << (j + 1 < post.names.size() ? ',' : '\n');
  for (int i = 0; i < post.size(); ++i)
    for (int j = 0; j < post.draws.cols(); ++j)
      out << post.draws(i, j) << (j + 1 < post.draws.cols() ? ',' : '\n');
}

int cmd_simulate(RunContext& ctx, const ModelSpec& spec, const std::string& params_file,
                 int T, int N, const MaturitySchedule& sched) {
  Params p;
  if (!params_file.empty()) {
    ModelSpec file_spec;
    p = params_from_file(params_file, file_spec);
    if (file_spec.m != spec.m || file_spec.sv != spec.sv)
      throw std::runtime_error("params file model shape disagrees with flags");
    ctx.inputs.push_back(params_file);
  } else {
    p = default_generator_params(spec);
  }
  const SimulationResult sim = simulate_panel(p, spec, sched, T, N, ctx.seed);

  {
    std::ofstream out = ctx.open_output("panel.csv");
    out << "date,contract,log_price,maturity_days\n";
    out.precision(17);
    for (int t = 0; t < sim.panel.T(); ++t)
      for (int i = 0; i < sim.panel.N(); ++i)
        out << sim.panel.dates[t].str() << ',' << (i + 1) << ','
            << sim.panel.log_prices(t, i) << ',' << sim.panel.maturities(t, i) << "\n";
  }
  {
    std::ofstream out = ctx.open_output("true_params.txt");
    out << params_to_text(p, spec);
  }
  fs::create_directories(ctx.out_dir);
  const std::string dump = (fs::path(ctx.out_dir) / "true_state.bin").string();
  write_state_dump(dump, T, spec.m, {&sim.truth}, spec.sv);
  ctx.produced.push_back(dump);
  return 0;
}

int cmd_estimate(RunContext& ctx, const std::string& panel_file, const ModelSpec& spec,
                 GibbsConfig config, const std::string& config_file, bool dump_states) {
  if (!config_file.empty()) {
    const auto kv = read_key_values(config_file);
    ctx.inputs.push_back(config_file);
    auto maybe = [&kv](const char* k, auto& slot) {
      auto it = kv.find(k);
      if (it != kv.end()) slot = static_cast<std::decay_t<decltype(slot)>>(std::stod(it->second));
    };
    maybe("n_iterations", config.n_iterations);
    maybe("n_burnin", config.n_burnin);
    maybe("rw_scale_lambda", config.rw_scale_lambda);
    maybe("rw_scale_nu", config.rw_scale_nu);
    double adapt = config.adapt_during_burnin ? 1 : 0;
    maybe("adapt_during_burnin", adapt);
    config.adapt_during_burnin = adapt != 0;
    double seed = static_cast<double>(config.seed);
    maybe("seed", seed);
    config.seed = static_cast<std::uint64_t>(seed);
  }
  config.seed = ctx.seed;
  if (dump_states && config.state_thin == 0) config.state_thin = 100;

  const PanelData panel = load_panel(panel_file);
  ctx.inputs.push_back(panel_file);
  GibbsSampler sampler(panel, spec);
  const PosteriorSample post = sampler.run(config);

  write_posterior_csv(ctx, post, "posterior_draws.csv");
  {
    std::ofstream out = ctx.open_output("beta_mean.csv");
    out << "t";
    for (int j = 0; j < spec.m; ++j) out << ",beta" << (j + 1);
    out << "\n";
    for (int t = 0; t < post.beta_mean.rows(); ++t) {
      out << t;
      for (int j = 0; j < spec.m; ++j) out << ',' << post.beta_mean(t, j);
      out << "\n";
    }
  }
  {
    std::ofstream out = ctx.open_output("summary.csv");
    out << "parameter,scale,mean_scaled,sd_scaled,ess\n";
    for (const std::string& name : post.summary_names()) {
      const Eigen::VectorXd x = post.column(name);
      const double mu = x.mean();
      const double sd = std::sqrt((x.array() - mu).square().sum() / (x.size() - 1));
      const double scale =
          (name.rfind("alpha", 0) == 0 || name.rfind("lambda", 0) == 0 ||
           name == "sigma_y")
              ? 100.0
              : 1.0;
      double ess = std::numeric_limits<double>::quiet_NaN();
      try {
        ess = effective_sample_size(x);
      } catch (const std::invalid_argument&) {
      }
      out << name << ',' << scale << ',' << mu * scale << ',' << sd * scale << ',' << ess
          << "\n";
    }
    out << "seconds_per_cycle,," << post.seconds_per_cycle << ",,\n";
    for (const auto& [block, rate] : post.acceptance_rates)
      out << "acceptance_" << block << ",," << rate << ",,\n";
  }
  if (dump_states) {
    std::vector<const StatePath*> paths;
    for (const auto& sp : post.thinned_paths) paths.push_back(&sp);
    const std::string dump = (fs::path(ctx.out_dir) / "state_paths.bin").string();
    write_state_dump(dump, panel.T(), spec.m, paths, spec.sv);
    ctx.produced.push_back(dump);
  }
  return 0;
}

int cmd_loglik(RunContext& ctx, const std::string& panel_file,
               const std::string& params_file, SmcConfig smc) {
  const PanelData panel = load_panel(panel_file);
  ctx.inputs.push_back(panel_file);
  ModelSpec spec;
  const Params p = params_from_file(params_file, spec);
  ctx.inputs.push_back(params_file);
  std::ofstream out = ctx.open_output("loglik.txt");
  if (!spec.sv) {
    const double ll = loglik_no_sv(panel, p, spec);
    out << "model = " << spec.m << "F\n";
    out << "method = closed_form\n";
    out << "loglik = " << format_double(ll, 15) << "\n";
  } else {
    smc.seed = ctx.seed;
    const SmcResult res = smc_loglik_at(panel, p, spec, smc);
    out << "model = " << spec.m << "F-SV\n";
    out << "method = rao_blackwellised_smc\n";
    out << "loglik = " << format_double(res.loglik, 15) << "\n";
    out << "particles = " << res.n_particles << "\n";
    out << "reduced_gibbs_cycles = " << smc.reduced_gibbs_cycles << "\n";
    out << "seed = " << ctx.seed << "\n";
    if (smc.n_replicates > 0)
      out << "replicate_sd = " << format_double(res.replicate_sd, 6) << "\n";
    out << "per_t =";
    for (int t = 0; t < res.per_t.size(); ++t) out << ' ' << res.per_t[t];
    out << "\n";
  }
  return 0;
}

int cmd_dic(RunContext& ctx, const std::string& panel_file, const std::string& draws_file,
            const std::string& draws_file_b, SmcConfig smc, int thin) {
  const PanelData panel = load_panel(panel_file);
  ctx.inputs.push_back(panel_file);

  auto run_one = [&](const std::string& file) {
    const PosteriorSample post = read_posterior_csv(file);
    ctx.inputs.push_back(file);
    std::function<double(const Params&)> evaluator;
    if (post.spec.sv) {
      evaluator = [&, spec = post.spec](const Params& theta) {
        SmcConfig cfg = smc;
        cfg.seed = ctx.seed;
        return smc_loglik_at(panel, theta, spec, cfg).loglik;
      };
    } else {
      evaluator = [&, spec = post.spec](const Params& theta) {
        return loglik_no_sv(panel, theta, spec);
      };
    }
    return std::pair<PosteriorSample, DicResult>(post, dic(post, evaluator, thin));
  };

  std::ofstream out = ctx.open_output("dic.csv");
  out << "model,sv,loglik_at_mean,mean_loglik,p_d,dic,n_evals,particles,thin\n";
  const auto [post_a, dic_a] = run_one(draws_file);
  out << post_a.spec.m << "F," << (post_a.spec.sv ? 1 : 0) << ','
      << format_double(dic_a.loglik_at_mean, 15) << ',' << format_double(dic_a.mean_loglik, 15)
      << ',' << dic_a.p_d << ',' << format_double(dic_a.dic, 15) << ',' << dic_a.n_evals
      << ',' << (post_a.spec.sv ? smc.n_particles : 0) << ',' << thin << "\n";
  if (!draws_file_b.empty()) {
    const auto [post_b, dic_b] = run_one(draws_file_b);
    out << post_b.spec.m << "F," << (post_b.spec.sv ? 1 : 0) << ','
        << format_double(dic_b.loglik_at_mean, 15) << ','
        << format_double(dic_b.mean_loglik, 15) << ',' << dic_b.p_d << ','
        << format_double(dic_b.dic, 15) << ',' << dic_b.n_evals << ','
        << (post_b.spec.sv ? smc.n_particles : 0) << ',' << thin << "\n";
    out << "difference,," << "" << ",," << "" << ','
        << format_double(dic_a.dic - dic_b.dic, 15) << ",,,\n";
  }
  return 0;
}

int cmd_backtest(RunContext& ctx, const std::string& panel_file, const ModelSpec& spec,
                 const BacktestConfig& base_config, int first_origin, int n_origins,
                 const std::string& levels_text, const std::string& portfolios_text,
                 const std::string& reference_csv) {
  const PanelData panel = load_panel(panel_file);
  ctx.inputs.push_back(panel_file);
  BacktestConfig config = base_config;
  config.seed = ctx.seed;
  config.levels = parse_levels(levels_text);
  config.portfolios = parse_portfolios(portfolios_text, panel.N());

  const BacktestResult res = rolling_backtest(panel, spec, first_origin, n_origins, config);

  Eigen::VectorXd ref_lpl;
  if (!reference_csv.empty()) {
    const CsvTable ref = read_csv(reference_csv);
    ctx.inputs.push_back(reference_csv);
    const int c = ref.column("log_pred_density");
    if (c < 0) throw std::runtime_error("reference CSV lacks log_pred_density");
    ref_lpl.resize(static_cast<int>(ref.rows.size()));
    for (std::size_t i = 0; i < ref.rows.size(); ++i) ref_lpl[i] = std::stod(ref.rows[i][c]);
    if (ref_lpl.size() != static_cast<int>(res.records.size()))
      throw std::runtime_error("reference CSV has a different number of origins");
  }

  {
    std::ofstream out = ctx.open_output("backtest_records.csv");
    out << "origin_index,origin_date,ok,log_pred_density,cum_log_pl";
    if (ref_lpl.size() > 0) out << ",cum_log_pl_diff";
    const int N = panel.N();
    for (int i = 1; i <= N; ++i) out << ",pred_mean_" << i;
    for (int i = 1; i <= N; ++i) out << ",pearson_" << i;
    out << "\n";
    double cum = 0.0;
    Eigen::VectorXd model_lpl(static_cast<int>(res.records.size()));
    for (std::size_t k = 0; k < res.records.size(); ++k)
      model_lpl[k] = res.records[k].ok ? res.records[k].log_pred_density : 0.0;
    Eigen::VectorXd diff;
    if (ref_lpl.size() > 0) diff = accumulated_logpl_difference(model_lpl, ref_lpl);
    for (std::size_t k = 0; k < res.records.size(); ++k) {
      const ForecastRecord& r = res.records[k];
      cum += r.ok ? r.log_pred_density : 0.0;
      out << r.origin_index << ',' << r.origin_date.str() << ',' << (r.ok ? 1 : 0) << ','
          << (r.ok ? r.log_pred_density : std::numeric_limits<double>::quiet_NaN()) << ','
          << cum;
      if (ref_lpl.size() > 0) out << ',' << diff[k];
      for (int i = 0; i < N; ++i)
        out << ',' << (r.ok ? r.predictive_mean[i] : std::numeric_limits<double>::quiet_NaN());
      for (int i = 0; i < N; ++i)
        out << ',' << (r.ok ? r.pearson[i] : std::numeric_limits<double>::quiet_NaN());
      out << "\n";
    }
  }
  {
    std::ofstream out = ctx.open_output("backtest_var.csv");
    out << "origin_index,portfolio,benchmark,level,var,realized,hit\n";
    for (const auto& r : res.records) {
      if (!r.ok) continue;
      for (const auto& v : r.var_records)
        out << r.origin_index << ',' << v.portfolio << ',' << (v.benchmark ? 1 : 0) << ','
            << v.level << ',' << v.var << ',' << v.realized << ',' << (v.hit ? 1 : 0)
            << "\n";
    }
  }
  {
    std::ofstream out = ctx.open_output("backtest_summary.csv");
    out << "section,key,contract_or_level,value\n";
    out << "scalars,log_pl_total,," << res.summary.log_pl_total << "\n";
    out << "scalars,n_origins_ok,," << res.summary.n_origins_ok << "\n";
    const int N = panel.N();
    for (int i = 0; i < N; ++i) {
      out << "residuals,pearson_mean," << (i + 1) << ',' << res.summary.pearson_mean[i]
          << "\n";
      out << "residuals,pearson_sd," << (i + 1) << ',' << res.summary.pearson_sd[i] << "\n";
      out << "residuals,ljung_box_p," << (i + 1) << ',' << res.summary.lb_p_resid[i] << "\n";
      out << "residuals,ljung_box_p_sq," << (i + 1) << ',' << res.summary.lb_p_resid_sq[i]
          << "\n";
      out << "rmsfe,model," << (i + 1) << ',' << res.summary.rmsfe_per_contract[i] << "\n";
      out << "rmsfe,random_walk," << (i + 1) << ',' << res.summary.rmsfe_rw_per_contract[i]
          << "\n";
    }
    // Table-4 style maturity buckets.
    auto bucket = [&](const Eigen::VectorXd& per, int a, int b) {
      return rmsfe_bucket(per, a, std::min(b, N - 1));
    };
    if (N >= 8) {
      out << "rmsfe_bucket,model,1-8," << bucket(res.summary.rmsfe_per_contract, 0, 7)
          << "\n";
      out << "rmsfe_bucket,random_walk,1-8,"
          << bucket(res.summary.rmsfe_rw_per_contract, 0, 7) << "\n";
    }
    if (N >= 16) {
      out << "rmsfe_bucket,model,9-16," << bucket(res.summary.rmsfe_per_contract, 8, 15)
          << "\n";
      out << "rmsfe_bucket,random_walk,9-16,"
          << bucket(res.summary.rmsfe_rw_per_contract, 8, 15) << "\n";
    }
    if (N >= 24) {
      out << "rmsfe_bucket,model,17-24," << bucket(res.summary.rmsfe_per_contract, 16, 23)
          << "\n";
      out << "rmsfe_bucket,random_walk,17-24,"
          << bucket(res.summary.rmsfe_rw_per_contract, 16, 23) << "\n";
    }
    out << "rmsfe_bucket,model,all," << res.summary.rmsfe_per_contract.mean() << "\n";
    out << "rmsfe_bucket,random_walk,all," << res.summary.rmsfe_rw_per_contract.mean()
        << "\n";
  }
  {
    std::ofstream out = ctx.open_output("backtest_coverage.csv");
    out << "portfolio,benchmark,level,hit_rate,uc_stat,uc_p,ind_stat,ind_p,cc_stat,cc_p\n";
    for (const auto& row : res.summary.coverage)
      out << row.portfolio << ',' << (row.benchmark ? 1 : 0) << ',' << row.level << ','
          << row.hit_rate << ',' << row.uc.statistic << ',' << row.uc.p_value << ','
          << row.ind.statistic << ',' << row.ind.p_value << ',' << row.cc.statistic << ','
          << row.cc.p_value << "\n";
  }
  return 0;
}

int cmd_diagnose(RunContext& ctx, const std::string& panel_file,
                 const std::string& params_file) {
  const PanelData panel = load_panel(panel_file);
  ctx.inputs.push_back(panel_file);
  {
    const TermStructureStats st = term_structure_stats(panel);
    std::ofstream out = ctx.open_output("term_structure_stats.csv");
    out << "contract,mean_all,var_all,mean_rollover,var_rollover,mean_after,var_after\n";
    for (int i = 0; i < panel.N(); ++i)
      out << (i + 1) << ',' << st.mean_all[i] << ',' << st.var_all[i] << ','
          << st.mean_rollover[i] << ',' << st.var_rollover[i] << ',' << st.mean_after[i]
          << ',' << st.var_after[i] << "\n";
  }
  if (!params_file.empty()) {
    ModelSpec spec;
    const Params p = params_from_file(params_file, spec);
    ctx.inputs.push_back(params_file);
    // Model-implied price moments from the sample moments of the
    // least-squares factor path, over the first 43 trading days.
    const Eigen::MatrixXd factors = extract_factors_ls(panel, p.lambda, spec.m);
    const Eigen::VectorXd fmean = factors.colwise().mean();
    const Eigen::MatrixXd centered = factors.rowwise() - fmean.transpose();
    const Eigen::MatrixXd fcov =
        centered.transpose() * centered / std::max(1, panel.T() - 1);

    std::ofstream out = ctx.open_output("price_moment_curves.csv");
    out << "contract,day,maturity_days,mean,variance\n";
    const int days = std::min(43, panel.T());
    for (int contract : {1, 4, 16, 24}) {
      if (contract > panel.N()) continue;
      for (int t = 0; t < days; ++t) {
        const double tau = panel.maturities(t, contract - 1);
        Eigen::VectorXd mean, var, grid(1);
        grid << tau;
        price_moments(p, spec, fmean, fcov, grid, mean, var);
        out << contract << ',' << (t + 1) << ',' << tau << ',' << mean[0] << ',' << var[0]
            << "\n";
      }
    }
  }
  return 0;
}

// Oracle cross-checks runnable from the shipped binary: each row compares an
// artifact value with an independent reference implementation.
int cmd_self_check(RunContext& ctx) {
  std::vector<OracleReport> reports;
  RngStream rng(ctx.seed, 0);

  {  // integrated likelihood vs Kalman oracle on random instances
    const ModelSpec spec{3, true};
    Params p = default_generator_params(spec);
    p.nu = 20.0;
    const auto sim = simulate_panel(p, spec, MaturitySchedule{}, 30, 5, ctx.seed + 1);
    LoadingCache zc(sim.panel);
    zc.set_lambda(p.lambda, 3);
    PrecisionPath H;
    H.path = &sim.truth.H;
    const double artifact = integrated_loglik_y_given_H(
        sim.panel.log_prices, zc, H, p.sigma_y, p.alpha, Beta0Mode::Gaussian, 1000.0,
        p.beta0);
    std::vector<Eigen::MatrixXd> Z(30), Q(30);
    for (int t = 0; t < 30; ++t) {
      Z[t] = zc.Z_at(t);
      Q[t] = sim.truth.H[t].llt().solve(Eigen::MatrixXd::Identity(3, 3));
    }
    const KalmanResult kf =
        kalman_filter_smoother(sim.panel.log_prices, Z, Q, p.sigma_y, p.alpha,
                               Eigen::VectorXd::Zero(3), 1000.0);
    reports.push_back(OracleReport::make("integrated_loglik_vs_kalman", kf.loglik,
                                         artifact, 1e-8, false));
  }
  {  // curvature loading peak anchors
    auto argmax = [](double lambda) {
      Eigen::VectorXd l(1);
      l << lambda;
      double lo = 1.0, hi = 5000.0;
      for (int i = 0; i < 200; ++i) {
        const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
        if (loading_row(m1, l, 3)[2] < loading_row(m2, l, 3)[2]) lo = m1;
        else hi = m2;
      }
      return 0.5 * (lo + hi);
    };
    reports.push_back(OracleReport::make("curvature_peak_lambda_0036", 498.0,
                                         argmax(0.0036), 3.0, false));
    reports.push_back(OracleReport::make("curvature_peak_lambda_0158", 113.5,
                                         argmax(0.0158), 1.0, false));
  }
  {  // restriction anchors
    reports.push_back(
        OracleReport::make("gamma_nu_2772_m4", 0.958, gamma_from_nu(27.72, 4), 5e-4, false));
    reports.push_back(
        OracleReport::make("gamma_nu_2175_m3", 0.947, gamma_from_nu(21.75, 3), 5e-4, false));
  }
  {  // transition density vs quadrature
    const double nu = 9.0, M = 0.8, eta = 0.6;
    Eigen::VectorXd x(1), loc(1);
    x << eta;
    loc << 0.0;
    const double direct =
        std::exp(mvt_logpdf(x, loc, M * Eigen::MatrixXd::Identity(1, 1), nu));
    reports.push_back(OracleReport::make("t_density_vs_quadrature",
                                         quadrature_t_density_1d(eta, M, nu), direct, 1e-6,
                                         true));
  }
  {  // Kupiec anchor
    std::vector<char> hits(250, 0);
    reports.push_back(OracleReport::make("kupiec_zero_hits_250_1pc", 5.0252,
                                         kupiec_uc(hits, 0.01).statistic, 0.01, false));
  }

  std::ofstream out = ctx.open_output("self_check.csv");
  out << "quantity,oracle_value,artifact_value,tolerance,relative,pass\n";
  bool all_pass = true;
  for (const auto& r : reports) {
    out << r.quantity << ',' << r.oracle_value << ',' << r.artifact_value << ','
        << r.tolerance << ',' << (r.relative ? 1 : 0) << ',' << (r.pass ? 1 : 0) << "\n";
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.quantity << " oracle="
              << r.oracle_value << " artifact=" << r.artifact_value << "\n";
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic Nelson-Siegel / Svensson factor models with Wishart stochastic "
               "volatility for futures term structures"};
  app.require_subcommand(0, 1);
  app.fallthrough(true);

  std::string model = "4f", sv = "on", out_dir = "out";
  std::uint64_t seed = 1;
  int threads = 1;
  bool self_check = false;
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "random seed recorded in every artifact");
  app.add_option("--threads", threads, "worker cap for parallel sections");
  app.add_flag("--self-check", self_check, "run oracle cross-checks and exit");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "forward-simulate a synthetic panel");
  int sim_T = 500, sim_N = 24;
  std::string sim_params;
  MaturitySchedule sched;
  sim_cmd->add_option("--model", model, "3f or 4f");
  sim_cmd->add_option("--sv", sv, "on or off");
  sim_cmd->add_option("--T", sim_T, "number of trading days");
  sim_cmd->add_option("--contracts", sim_N, "number of contracts");
  sim_cmd->add_option("--params", sim_params, "generator params file (key=value)");
  sim_cmd->add_option("--base-maturity", sched.base_maturity_days, "front maturity (days)");
  sim_cmd->add_option("--spacing", sched.contract_spacing_days, "contract spacing (days)");
  sim_cmd->add_option("--roll-period", sched.rollover_period_days,
                      "trading days between roll-overs");

  // estimate
  auto* est_cmd = app.add_subcommand("estimate", "collapsed Gibbs posterior analysis");
  std::string est_panel, est_config;
  GibbsConfig gibbs;
  bool est_dump = false;
  est_cmd->add_option("--panel", est_panel, "panel CSV")->required();
  est_cmd->add_option("--model", model, "3f or 4f");
  est_cmd->add_option("--sv", sv, "on or off");
  est_cmd->add_option("--iters", gibbs.n_iterations, "Gibbs cycles");
  est_cmd->add_option("--burnin", gibbs.n_burnin, "discarded cycles");
  est_cmd->add_option("--config", est_config, "GibbsConfig key=value file");
  est_cmd->add_flag("--dump-states", est_dump, "write thinned state paths");

  // loglik
  auto* ll_cmd = app.add_subcommand("loglik", "marginal data likelihood at fixed params");
  std::string ll_panel, ll_params;
  SmcConfig smc;
  ll_cmd->add_option("--panel", ll_panel, "panel CSV")->required();
  ll_cmd->add_option("--params", ll_params, "params file")->required();
  ll_cmd->add_option("--particles", smc.n_particles, "SMC particle count");
  ll_cmd->add_option("--reduced-cycles", smc.reduced_gibbs_cycles,
                     "cycles of the theta-fixed proposal run");
  ll_cmd->add_option("--replicates", smc.n_replicates, "extra runs for the MC sd");

  // dic
  auto* dic_cmd = app.add_subcommand("dic", "deviance information criterion");
  std::string dic_panel, dic_draws, dic_draws_b;
  int dic_thin = 20;
  dic_cmd->add_option("--panel", dic_panel, "panel CSV")->required();
  dic_cmd->add_option("--draws", dic_draws, "posterior_draws.csv from estimate")->required();
  dic_cmd->add_option("--draws-b", dic_draws_b, "second model's draws for a comparison");
  dic_cmd->add_option("--particles", smc.n_particles, "SMC particle count (SV models)");
  dic_cmd->add_option("--reduced-cycles", smc.reduced_gibbs_cycles, "proposal-run cycles");
  dic_cmd->add_option("--thin", dic_thin, "evaluate every k-th draw");

  // backtest
  auto* bt_cmd = app.add_subcommand("backtest", "rolling one-step-ahead forecast study");
  std::string bt_panel, bt_window = "", bt_levels = "0.01,0.05,0.10";
  std::string bt_portfolios = "equal,bullspread", bt_reference;
  BacktestConfig bt;
  bt_cmd->add_option("--panel", bt_panel, "panel CSV")->required();
  bt_cmd->add_option("--model", model, "3f or 4f");
  bt_cmd->add_option("--sv", sv, "on or off");
  bt_cmd->add_option("--window", bt_window, "origin window START:END (0-based, half-open)")
      ->required();
  bt_cmd->add_option("--iters", bt.initial_chain.n_iterations, "first-origin Gibbs cycles");
  bt_cmd->add_option("--burnin", bt.initial_chain.n_burnin, "first-origin burn-in");
  bt_cmd->add_option("--warm-cycles", bt.warm_cycles, "warm-started cycles per origin");
  bt_cmd->add_option("--warm-burnin", bt.warm_burnin, "warm-start discarded cycles");
  bt_cmd->add_flag("--full-reestimate", bt.full_reestimate,
                   "run the full chain at every origin");
  bt_cmd->add_option("--reduced-cycles", bt.reduced_cycles, "theta-fixed forecast draws");
  bt_cmd->add_option("--var-draws", bt.var_draws, "MC draws per VaR quantile");
  bt_cmd->add_option("--var-levels", bt_levels, "comma-separated VaR levels");
  bt_cmd->add_option("--portfolio", bt_portfolios,
                     "comma list of equal, bullspread, file:PATH");
  bt_cmd->add_option("--reference", bt_reference,
                     "records CSV of a reference model for the log-PL difference");

  // diagnose
  auto* diag_cmd = app.add_subcommand("diagnose", "term-structure statistics and "
                                                  "model-implied price moments");
  std::string diag_panel, diag_params;
  diag_cmd->add_option("--panel", diag_panel, "panel CSV")->required();
  diag_cmd->add_option("--params", diag_params, "params file for Eq-implied curves");

  CLI11_PARSE(app, argc, argv);

  RunContext ctx;
  if (const char* env = std::getenv("DNSSV_OUT")) out_dir = env;
  ctx.out_dir = out_dir;
  ctx.seed = seed;
  ctx.threads = threads;
  {
    std::ostringstream os;
    for (int i = 0; i < argc; ++i) os << (i ? " " : "") << argv[i];
    ctx.command_line = os.str();
  }

  try {
    if (self_check) return cmd_self_check(ctx);
    if (sim_cmd->parsed())
      return cmd_simulate(ctx, spec_from_flags(model, sv), sim_params, sim_T, sim_N, sched);
    if (est_cmd->parsed())
      return cmd_estimate(ctx, est_panel, spec_from_flags(model, sv), gibbs, est_config,
                          est_dump);
    if (ll_cmd->parsed()) return cmd_loglik(ctx, ll_panel, ll_params, smc);
    if (dic_cmd->parsed())
      return cmd_dic(ctx, dic_panel, dic_draws, dic_draws_b, smc, dic_thin);
    if (bt_cmd->parsed()) {
      const auto sep = bt_window.find(':');
      if (sep == std::string::npos)
        throw std::runtime_error("--window must be START:END");
      const int start = std::stoi(bt_window.substr(0, sep));
      const int end = std::stoi(bt_window.substr(sep + 1));
      return cmd_backtest(ctx, bt_panel, spec_from_flags(model, sv), bt, start, end - start,
                          bt_levels, bt_portfolios, bt_reference);
    }
    if (diag_cmd->parsed()) return cmd_diagnose(ctx, diag_panel, diag_params);
    std::cout << app.help();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
