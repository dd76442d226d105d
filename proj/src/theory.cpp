#include "tselab/theory.hpp"

#include <cmath>

namespace tselab {

namespace {

void check_common(double alpha, double d_sigma_sq, double mu1, double mu2) {
  if (alpha < 0.0 || !std::isfinite(alpha)) {
    throw ValidationError("theory: alpha must be finite and >= 0");
  }
  if (!(d_sigma_sq > 0.0)) {
    throw ValidationError("theory: d_sigma_sq must be > 0");
  }
  if (mu1 < 0.0 || mu2 < 0.0) {
    throw ValidationError("theory: mu values must be >= 0");
  }
}

}  // namespace

std::pair<double, double> expected_xi(double alpha, double d_sigma_sq,
                                      double mu1, double mu2) {
  check_common(alpha, d_sigma_sq, mu1, mu2);
  const double a = alpha * alpha * d_sigma_sq;
  return {1.0 + a * mu1 * mu1, 1.0 + a * mu2 * mu2};
}

double expected_rate_formula(double alpha, double d_sigma_sq, double mu1,
                             double mu2, double eta_mean, double t_sim_x) {
  check_common(alpha, d_sigma_sq, mu1, mu2);
  if (!(t_sim_x > 0.0 && t_sim_x < 1.0)) {
    throw ValidationError("expected_rate_formula: t_sim_x must be in (0,1)");
  }
  const double a = alpha * alpha * d_sigma_sq;
  const double gain = a / (1.0 + a * mu2 * mu2) * (mu1 * mu1 - mu2 * mu2);
  return 1.0 + (gain - eta_mean) * t_sim_x;
}

TheoremBound theorem_lower_bound(double alpha, double omega, double delta,
                                 double t_sim_x) {
  if (!(alpha > 0.0)) {
    throw ValidationError("theorem_lower_bound: alpha must be > 0");
  }
  if (omega < 0.0 || delta < 0.0) {
    throw ValidationError("theorem_lower_bound: omega, delta must be >= 0");
  }
  if (!(t_sim_x > 0.0 && t_sim_x < 1.0)) {
    throw ValidationError("theorem_lower_bound: t_sim_x must be in (0,1)");
  }
  const double a2 = alpha * alpha;
  TheoremBound b;
  b.value = 1.0 + a2 / (1.0 + a2 * delta * delta) *
                      ((1.0 - omega) * (1.0 - omega) - delta * delta) *
                      t_sim_x;
  b.hypothesis_holds = omega + delta < 1.0;
  return b;
}

std::pair<double, double> corollary_estimates(double omega, double delta,
                                              double lambda2_mod) {
  if (omega < 0.0 || delta < 0.0 || lambda2_mod < 0.0) {
    throw ValidationError("corollary_estimates: inputs must be >= 0");
  }
  const double est1 =
      ((1.0 - omega) * (1.0 - omega) - delta * delta) /
      (1.0 + delta * delta);
  const double l2 = lambda2_mod * lambda2_mod;
  const double est2 = (1.0 - l2) / (1.0 + l2);
  return {est1, est2};
}

MuPair multihead_mu_bar(const RealMatrix& x,
                        const std::vector<AttentionMatrix>& ps) {
  if (ps.empty()) {
    throw ValidationError("multihead_mu_bar: no attention matrices");
  }
  double sum1 = 0.0, sum2 = 0.0;
  for (const auto& p : ps) {
    const MuPair mu = mu_pair(x, p);
    sum1 += mu.mu1 * mu.mu1;
    sum2 += mu.mu2 * mu.mu2;
  }
  const double inv_h = 1.0 / static_cast<double>(ps.size());
  return MuPair{std::sqrt(sum1 * inv_h), std::sqrt(sum2 * inv_h)};
}

double gamma_constant(double alpha, double d_sigma_sq, double mu1,
                      double mu2) {
  check_common(alpha, d_sigma_sq, mu1, mu2);
  const double a = alpha * alpha * d_sigma_sq;
  const double exi2 = 1.0 + a * mu2 * mu2;
  return exi2 * exi2 / (3.0 + a * (mu1 * mu1 + 2.0 * mu2 * mu2));
}

EscalationEstimate escalation_estimate(double alpha, double d_sigma_sq,
                                       double mu1, double mu2, double omega,
                                       double delta, double lambda2_mod,
                                       double t_sim_x) {
  EscalationEstimate est;
  const auto xi = expected_xi(alpha, d_sigma_sq, mu1, mu2);
  est.expected_xi1 = xi.first;
  est.expected_xi2 = xi.second;
  const auto pair = corollary_estimates(omega, delta, lambda2_mod);
  est.estimate1 = pair.first;
  est.estimate2 = pair.second;
  est.expected_rate_lower =
      theorem_lower_bound(alpha, omega, delta, t_sim_x).value;
  est.gamma = gamma_constant(alpha, d_sigma_sq, mu1, mu2);
  return est;
}

}  // namespace tselab
