#ifndef DNSSV_PANEL_HPP
#define DNSSV_PANEL_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnssv/dates.hpp"
#include "dnssv/io.hpp"
#include "dnssv/model.hpp"

namespace dnssv {

// Complete T x N grid of log prices for 'perpetual' contracts: maturities
// decrease day by day within a roll-over period and jump up by one contract
// spacing at roll-over days.
struct PanelData {
  std::vector<Date> dates;          // length T, strictly increasing
  Eigen::MatrixXd log_prices;       // T x N
  Eigen::MatrixXd maturities;       // T x N, days, all > 0
  std::vector<char> rollover_flags; // length T

  int T() const { return static_cast<int>(log_prices.rows()); }
  int N() const { return static_cast<int>(log_prices.cols()); }

  void validate() const {
    const int t = T(), n = N();
    if (t == 0 || n == 0) throw std::invalid_argument("PanelData: empty panel");
    if (static_cast<int>(dates.size()) != t ||
        maturities.rows() != t || maturities.cols() != n ||
        static_cast<int>(rollover_flags.size()) != t)
      throw std::invalid_argument("PanelData: inconsistent shapes");
    for (int i = 1; i < t; ++i)
      if (!(dates[i - 1] < dates[i]))
        throw std::invalid_argument("PanelData: dates not strictly increasing");
    if (!(maturities.minCoeff() > 0.0))
      throw std::invalid_argument("PanelData: non-positive maturity");
  }

  PanelData prefix(int t) const {
    PanelData p;
    p.dates.assign(dates.begin(), dates.begin() + t);
    p.log_prices = log_prices.topRows(t);
    p.maturities = maturities.topRows(t);
    p.rollover_flags.assign(rollover_flags.begin(), rollover_flags.begin() + t);
    return p;
  }
};

struct MaturitySchedule {
  int base_maturity_days = 22;
  int contract_spacing_days = 21;
  int rollover_period_days = 21;

  void validate() const {
    if (base_maturity_days <= 0 || contract_spacing_days <= 0 || rollover_period_days <= 0)
      throw std::invalid_argument("MaturitySchedule: fields must be positive");
    if (base_maturity_days < 20 || base_maturity_days > 34)
      throw std::invalid_argument(
          "MaturitySchedule: base maturity outside the 20-24 trading-day range "
          "(up to ~34 calendar days)");
  }
};

// Fixed-period roll rule: contract i starts at base + (i-1)*spacing, declines
// by the day gap between consecutive dates and gains one spacing at every
// rollover_period_days'th date.
inline void build_maturity_schedule(const MaturitySchedule& sched,
                                    const std::vector<Date>& dates, int n_contracts,
                                    Eigen::MatrixXd& maturities,
                                    std::vector<char>& flags) {
  sched.validate();
  const int T = static_cast<int>(dates.size());
  if (T == 0) throw std::invalid_argument("build_maturity_schedule: no dates");
  for (int t = 1; t < T; ++t)
    if (!(dates[t - 1] < dates[t]))
      throw std::invalid_argument("build_maturity_schedule: dates not strictly increasing");
  maturities.resize(T, n_contracts);
  flags.assign(T, 0);
  for (int i = 0; i < n_contracts; ++i)
    maturities(0, i) = sched.base_maturity_days + i * sched.contract_spacing_days;
  for (int t = 1; t < T; ++t) {
    const double gap = static_cast<double>(dates[t].serial - dates[t - 1].serial);
    const bool roll = (t % sched.rollover_period_days) == 0;
    flags[t] = roll ? 1 : 0;
    for (int i = 0; i < n_contracts; ++i)
      maturities(t, i) = maturities(t - 1, i) - gap + (roll ? sched.contract_spacing_days : 0);
  }
  if (!(maturities.minCoeff() > 0.0))
    throw std::invalid_argument("build_maturity_schedule: schedule yields non-positive maturity");
}

// Calendar roll rule: contracts roll on the first trading date of each new
// month, mirroring end-of-month roll-overs in daily exchange data.
inline void build_monthly_maturity_schedule(const MaturitySchedule& sched,
                                            const std::vector<Date>& dates, int n_contracts,
                                            Eigen::MatrixXd& maturities,
                                            std::vector<char>& flags) {
  sched.validate();
  const int T = static_cast<int>(dates.size());
  if (T == 0) throw std::invalid_argument("build_monthly_maturity_schedule: no dates");
  maturities.resize(T, n_contracts);
  flags.assign(T, 0);
  for (int i = 0; i < n_contracts; ++i)
    maturities(0, i) = sched.base_maturity_days + i * sched.contract_spacing_days;
  for (int t = 1; t < T; ++t) {
    const double gap = static_cast<double>(dates[t].serial - dates[t - 1].serial);
    const bool roll = dates[t].month() != dates[t - 1].month() ||
                      dates[t].year() != dates[t - 1].year();
    flags[t] = roll ? 1 : 0;
    for (int i = 0; i < n_contracts; ++i)
      maturities(t, i) = maturities(t - 1, i) - gap + (roll ? sched.contract_spacing_days : 0);
  }
  if (!(maturities.minCoeff() > 0.0))
    throw std::invalid_argument("build_monthly_maturity_schedule: non-positive maturity");
}

inline MaturitySchedule schedule_from_file(const std::string& path) {
  auto kv = read_key_values(path);
  MaturitySchedule s;
  auto need = [&kv, &path](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end())
      throw std::runtime_error("schedule sidecar " + path + ": missing key '" + k + "'");
    return std::stoi(it->second);
  };
  s.base_maturity_days = need("base_maturity_days");
  s.contract_spacing_days = need("contract_spacing_days");
  s.rollover_period_days = need("rollover_period_days");
  s.validate();
  return s;
}

// Loads a panel from delimiter-separated text with columns
// (date, contract, price | log_price, maturity_days), one row per
// (date, contract).  Raw prices are log-transformed.  When the file has no
// maturity column a sidecar "<stem>.schedule" must supply the roll rule.
inline PanelData load_panel(const std::string& path) {
  const CsvTable tab = read_csv(path);
  const int c_date = tab.column("date");
  const int c_contract = tab.column("contract");
  int c_price = tab.column("log_price");
  const bool already_log = c_price >= 0;
  if (!already_log) c_price = tab.column("price");
  const int c_mat = tab.column("maturity_days");
  if (c_date < 0 || c_contract < 0 || c_price < 0)
    throw std::runtime_error("load_panel: need columns date, contract, price|log_price");

  std::map<std::int64_t, Date> date_set;
  int max_contract = 0;
  for (const auto& row : tab.rows) {
    const Date d = Date::parse(row[c_date]);
    date_set.emplace(d.serial, d);
    max_contract = std::max(max_contract, std::stoi(row[c_contract]));
  }
  if (max_contract <= 0) throw std::runtime_error("load_panel: no contracts found");
  const int T = static_cast<int>(date_set.size());
  const int N = max_contract;

  PanelData panel;
  panel.dates.reserve(T);
  std::map<std::int64_t, int> date_index;
  for (const auto& [serial, d] : date_set) {
    date_index[serial] = static_cast<int>(panel.dates.size());
    panel.dates.push_back(d);
  }
  panel.log_prices.setConstant(T, N, std::numeric_limits<double>::quiet_NaN());
  panel.maturities.setConstant(T, N, std::numeric_limits<double>::quiet_NaN());

  for (const auto& row : tab.rows) {
    const int t = date_index[Date::parse(row[c_date]).serial];
    const int i = std::stoi(row[c_contract]) - 1;
    if (i < 0 || i >= N) throw std::runtime_error("load_panel: contract index out of range");
    double price = std::stod(row[c_price]);
    if (!already_log) {
      if (!(price > 0.0))
        throw std::runtime_error("load_panel: non-positive price at (" +
                                 panel.dates[t].str() + ", contract " +
                                 std::to_string(i + 1) + ")");
      price = std::log(price);
    }
    panel.log_prices(t, i) = price;
    if (c_mat >= 0) {
      const double mat = std::stod(row[c_mat]);
      if (!(mat > 0.0))
        throw std::runtime_error("load_panel: non-positive maturity at (" +
                                 panel.dates[t].str() + ", contract " +
                                 std::to_string(i + 1) + ")");
      panel.maturities(t, i) = mat;
    }
  }
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < N; ++i)
      if (std::isnan(panel.log_prices(t, i)))
        throw std::runtime_error("load_panel: missing cell at (date " + panel.dates[t].str() +
                                 ", contract " + std::to_string(i + 1) + ")");

  if (c_mat < 0) {
    std::string stem = path;
    const std::size_t dot = stem.find_last_of('.');
    if (dot != std::string::npos) stem = stem.substr(0, dot);
    const MaturitySchedule sched = schedule_from_file(stem + ".schedule");
    build_maturity_schedule(sched, panel.dates, N, panel.maturities, panel.rollover_flags);
  } else {
    // Roll-over days are the maturity up-jumps of the first contract.
    panel.rollover_flags.assign(T, 0);
    for (int t = 1; t < T; ++t)
      panel.rollover_flags[t] = panel.maturities(t, 0) > panel.maturities(t - 1, 0) ? 1 : 0;
  }
  panel.validate();
  return panel;
}

inline void save_panel(const PanelData& panel, const std::string& path,
                       const std::string& provenance = "") {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.precision(17);
  if (!provenance.empty()) out << provenance;
  out << "date,contract,log_price,maturity_days\n";
  for (int t = 0; t < panel.T(); ++t)
    for (int i = 0; i < panel.N(); ++i)
      out << panel.dates[t].str() << "," << (i + 1) << "," << panel.log_prices(t, i)
          << "," << panel.maturities(t, i) << "\n";
}

// Per-contract mean and variance over three partitions of dates: all t,
// roll-over days t*, and the days immediately following a roll-over.
struct TermStructureStats {
  Eigen::VectorXd mean_all, var_all;
  Eigen::VectorXd mean_rollover, var_rollover;
  Eigen::VectorXd mean_after, var_after;
};

namespace detail {
inline void mean_var(const std::vector<double>& x, const std::string& label,
                     double& mean, double& var) {
  const int n = static_cast<int>(x.size());
  if (n < 2)
    throw std::runtime_error("term_structure_stats: variance undefined for partition '" +
                             label + "' with " + std::to_string(n) + " observation(s)");
  double s = 0.0;
  for (double v : x) s += v;
  mean = s / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  var = ss / (n - 1);
}
}  // namespace detail

inline TermStructureStats term_structure_stats(const PanelData& panel) {
  panel.validate();
  const int T = panel.T(), N = panel.N();
  TermStructureStats s;
  s.mean_all.resize(N); s.var_all.resize(N);
  s.mean_rollover.resize(N); s.var_rollover.resize(N);
  s.mean_after.resize(N); s.var_after.resize(N);
  for (int i = 0; i < N; ++i) {
    std::vector<double> all, roll, after;
    for (int t = 0; t < T; ++t) {
      all.push_back(panel.log_prices(t, i));
      if (panel.rollover_flags[t]) roll.push_back(panel.log_prices(t, i));
      if (t > 0 && panel.rollover_flags[t - 1]) after.push_back(panel.log_prices(t, i));
    }
    detail::mean_var(all, "all", s.mean_all[i], s.var_all[i]);
    detail::mean_var(roll, "rollover", s.mean_rollover[i], s.var_rollover[i]);
    detail::mean_var(after, "after-rollover", s.mean_after[i], s.var_after[i]);
  }
  return s;
}

// Caches loadings over the distinct maturity values of a panel so that a
// lambda update costs one small table rebuild instead of T*N transcendental
// evaluations.
class LoadingCache {
 public:
  explicit LoadingCache(const PanelData& panel)
      : T_(static_cast<int>(panel.maturities.rows())),
        N_(static_cast<int>(panel.maturities.cols())) {
    idx_.resize(T_, N_);
    std::map<double, int> seen;
    for (int t = 0; t < T_; ++t)
      for (int i = 0; i < N_; ++i) {
        const double tau = panel.maturities(t, i);
        auto it = seen.find(tau);
        if (it == seen.end()) {
          it = seen.emplace(tau, static_cast<int>(taus_.size())).first;
          taus_.push_back(tau);
        }
        idx_(t, i) = it->second;
      }
  }

  // N x m loading matrix for date t under the given lambda, writing into a
  // caller-held table keyed by the lambda used last.
  void set_lambda(const Eigen::VectorXd& lambda, int m) {
    if (table_.rows() == static_cast<int>(taus_.size()) && table_.cols() == m &&
        lambda_.size() == lambda.size() && lambda_ == lambda)
      return;
    lambda_ = lambda;
    table_.resize(static_cast<int>(taus_.size()), m);
    for (std::size_t u = 0; u < taus_.size(); ++u)
      table_.row(u) = loading_row(taus_[u], lambda, m).transpose();
  }

  void fill_Z(int t, Eigen::MatrixXd& Z) const {
    Z.resize(N_, table_.cols());
    for (int i = 0; i < N_; ++i) Z.row(i) = table_.row(idx_(t, i));
  }

  Eigen::MatrixXd Z_at(int t) const {
    Eigen::MatrixXd Z;
    fill_Z(t, Z);
    return Z;
  }

  int T() const { return T_; }
  int N() const { return N_; }

 private:
  int T_, N_;
  std::vector<double> taus_;
  Eigen::MatrixXi idx_;
  Eigen::VectorXd lambda_;
  Eigen::MatrixXd table_;
};

}  // namespace dnssv

#endif
