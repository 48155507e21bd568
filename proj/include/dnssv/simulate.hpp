#ifndef DNSSV_SIMULATE_HPP
#define DNSSV_SIMULATE_HPP

#include <Eigen/Dense>
#include <vector>

#include "dnssv/panel.hpp"
#include "dnssv/rng.hpp"
#include "dnssv/samplers.hpp"
#include "dnssv/wishart_ssm.hpp"

namespace dnssv {

// A joint draw of the latent state: factor path beta_{0:T} (first row is
// beta_0), precision path H_{1:T} (empty when SV is off) and the forward
// filter scales Sigma_0..Sigma_T consistent with beta and the parameters.
struct StatePath {
  Eigen::MatrixXd beta;
  std::vector<Eigen::MatrixXd> H;
  std::vector<Eigen::MatrixXd> Sigma_filter;
};

struct SimulationResult {
  PanelData panel;
  StatePath truth;
};

// Forward-simulates the full model: H_1 from the Wishart initial condition,
// H_t through singular-Beta innovations, the factor random walk with drift,
// and Gaussian measurement errors.  Bit-reproducible for a fixed seed.
inline SimulationResult simulate_panel(const Params& params, const ModelSpec& spec,
                                       const MaturitySchedule& schedule, int T, int N,
                                       std::uint64_t seed) {
  params.validate(spec);
  if (T < 1 || N < 1) throw std::invalid_argument("simulate_panel: need T,N >= 1");
  const int m = spec.m;
  RngStream rng(seed, /*stream_id=*/0);

  SimulationResult out;
  out.panel.dates.reserve(T);
  for (int t = 0; t < T; ++t) out.panel.dates.emplace_back(t + 1, /*iso=*/false);
  build_maturity_schedule(schedule, out.panel.dates, N, out.panel.maturities,
                          out.panel.rollover_flags);

  out.truth.beta.resize(T + 1, m);
  out.truth.beta.row(0) = params.beta0.transpose();
  out.panel.log_prices.resize(T, N);

  Eigen::LLT<Eigen::MatrixXd> llt_S0(params.Sigma0);
  if (llt_S0.info() != Eigen::Success)
    throw NumericalError("simulate_panel: Sigma0 not SPD");

  double gamma = 0.0;
  if (spec.sv) {
    gamma = gamma_from_nu(params.nu, m);
    out.truth.H.resize(T);
    const Eigen::MatrixXd S0_inv =
        llt_S0.solve(Eigen::MatrixXd::Identity(m, m));
    out.truth.H[0] = sample_wishart(params.nu, S0_inv / gamma, rng);
    for (int t = 1; t < T; ++t)
      out.truth.H[t] = wishart_sv_step(out.truth.H[t - 1], params.nu, gamma, rng);
  }

  LoadingCache zc(out.panel);
  zc.set_lambda(params.lambda, m);
  Eigen::MatrixXd Z(N, m);
  Eigen::VectorXd z(m), eta(m);
  for (int t = 1; t <= T; ++t) {
    for (int i = 0; i < m; ++i) z[i] = rng.normal();
    if (spec.sv) {
      // eta ~ N(0, H_t^{-1}): with H = U'U, U^{-1} z has covariance H^{-1}.
      Eigen::LLT<Eigen::MatrixXd> lltH(out.truth.H[t - 1]);
      if (lltH.info() != Eigen::Success)
        throw NumericalError("simulate_panel: H_t not SPD at t=" + std::to_string(t));
      eta = Eigen::MatrixXd(lltH.matrixU()).triangularView<Eigen::Upper>().solve(z);
    } else {
      eta = llt_S0.matrixL() * z;
    }
    out.truth.beta.row(t) =
        out.truth.beta.row(t - 1) + params.alpha.transpose() + eta.transpose();

    zc.fill_Z(t - 1, Z);
    Eigen::VectorXd noise(N);
    for (int i = 0; i < N; ++i) noise[i] = params.sigma_y * rng.normal();
    out.panel.log_prices.row(t - 1) =
        (Z * out.truth.beta.row(t).transpose() + noise).transpose();
  }

  if (spec.sv) {
    const Eigen::MatrixXd eta_all = eta_from_beta(out.truth.beta, params.alpha);
    out.truth.Sigma_filter = forward_filter_Sigma(eta_all, params.Sigma0, gamma);
  }
  out.panel.validate();
  return out;
}

}  // namespace dnssv

#endif
