#pragma once

#include <utility>
#include <vector>

#include "tselab/attention_matrix.hpp"
#include "tselab/matrix.hpp"
#include "tselab/metrics.hpp"

namespace tselab {

// Everything the closed-form side predicts for one (X, P, alpha) instance.
struct EscalationEstimate {
  double expected_xi1 = 1.0;
  double expected_xi2 = 1.0;
  double estimate1 = 0.0;  // instance-dependent bound term
  double estimate2 = 0.0;  // symmetric-case spectral-gap term
  double expected_rate_lower = 1.0;
  double gamma = 0.25;
};

// Outcome of the escalation-rate lower bound: the bound value plus whether
// the omega + delta < 1 hypothesis held (the bound is only asserted when
// it does).
struct TheoremBound {
  double value = 1.0;
  bool hypothesis_holds = false;
};

// E[xi_i] = 1 + alpha^2 d sigma^2 mu_i^2 for i = 1, 2. alpha = 0 is
// accepted and gives (1, 1).
std::pair<double, double> expected_xi(double alpha, double d_sigma_sq,
                                      double mu1, double mu2);

// E[r] = 1 + (alpha^2 d sigma^2 / (1 + alpha^2 d sigma^2 mu2^2)
//             * (mu1^2 - mu2^2) - eta_mean) * t_sim_x.
double expected_rate_formula(double alpha, double d_sigma_sq, double mu1,
                             double mu2, double eta_mean, double t_sim_x);

// Lower bound 1 + alpha^2/(1+alpha^2 delta^2) * ((1-omega)^2 - delta^2)
// * t_sim_x, with the hypothesis flag omega + delta < 1.
TheoremBound theorem_lower_bound(double alpha, double omega, double delta,
                                 double t_sim_x);

// (estimate1, estimate2) = (((1-omega)^2 - delta^2)/(1 + delta^2),
//                           (1 - lambda2^2)/(1 + lambda2^2)).
std::pair<double, double> corollary_estimates(double omega, double delta,
                                              double lambda2_mod);

// Head-averaged mu for the multi-head expectation: mu_bar_i^2 =
// (1/h) sum_k ||Pi_i P_k X||^2 / ||Pi_i X||^2. h = 1 reduces to mu_pair.
MuPair multihead_mu_bar(const RealMatrix& x,
                        const std::vector<AttentionMatrix>& ps);

// gamma = E[xi2]^2 / (E[xi1] + 2 E[xi2])
//       = (1 + a mu2^2)^2 / (3 + a (mu1^2 + 2 mu2^2)) with a = alpha^2 d
// sigma^2; minimum 1/4 at mu2 = 0, a mu1^2 = 1.
double gamma_constant(double alpha, double d_sigma_sq, double mu1, double mu2);

// Convenience: all closed-form quantities for one instance.
EscalationEstimate escalation_estimate(double alpha, double d_sigma_sq,
                                       double mu1, double mu2, double omega,
                                       double delta, double lambda2_mod,
                                       double t_sim_x);

}  // namespace tselab
