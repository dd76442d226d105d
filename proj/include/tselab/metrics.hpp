#pragma once

#include <limits>

#include "tselab/attention_matrix.hpp"
#include "tselab/matrix.hpp"

namespace tselab {

// Everything measured about one block step, as aggregated by experiments.
// Fields that do not apply at a given step (the per-block spectral
// quantities, say) stay NaN.
struct DiagnosticsRecord {
  int block_index = 0;
  int step_index = 0;  // 1..4
  double t_sim = std::numeric_limits<double>::quiet_NaN();
  double t_div = std::numeric_limits<double>::quiet_NaN();
  double t_cos = std::numeric_limits<double>::quiet_NaN();
  double xi1 = std::numeric_limits<double>::quiet_NaN();
  double xi2 = std::numeric_limits<double>::quiet_NaN();
  double xi_ratio = std::numeric_limits<double>::quiet_NaN();
  double omega = std::numeric_limits<double>::quiet_NaN();
  double delta = std::numeric_limits<double>::quiet_NaN();
  double lambda2_modulus = std::numeric_limits<double>::quiet_NaN();
  double r_rate = std::numeric_limits<double>::quiet_NaN();
};

struct XiPair {
  double xi1 = 1.0;
  double xi2 = 1.0;
  double ratio() const { return xi1 / xi2; }
};

struct MuPair {
  double mu1 = 0.0;
  double mu2 = 0.0;
};

// Fraction of squared Frobenius norm in the all-rows-equal direction;
// in [0,1], 1 iff all rows are identical. Zero matrix is undefined.
double token_similarity(const RealMatrix& x);

// Complement fraction, computed directly from the mean-complement part so
// values near 0 keep their precision instead of cancelling in 1 - t_sim.
double token_diversity(const RealMatrix& x);

// Average pairwise cosine similarity between rows: 2/(n^2-n) * sum over
// i<j. Requires n >= 2 and no zero rows.
double cosine_similarity(const RealMatrix& x);

// t_div(X)/t_div(Y). Both similarities must lie strictly inside (0,1);
// either boundary raises BoundaryError since the rate is undefined there.
double escalation_rate(const RealMatrix& x, const RealMatrix& y);

// (||P1 Y||^2/||P1 X||^2, ||C Y||^2/||C X||^2) for the mean projector P1
// and its complement C. A vanishing denominator raises BoundaryError
// naming the projector.
XiPair xi_pair(const RealMatrix& x, const RealMatrix& y);

// (||P1 P X||/||P1 X||, ||C P X||/||C X||).
MuPair mu_pair(const RealMatrix& x, const AttentionMatrix& p);

// ||e^T P C X|| / ||e^T X|| with e the normalized ones vector. Zero when P
// is doubly stochastic (column sums 1) or X has equal rows.
double omega(const RealMatrix& x, const AttentionMatrix& p);

// Realized concentration gap for one sampled Y: expected_xi1/expected_xi2
// minus the sample ratio xi1/xi2.
double eta_sample(const RealMatrix& x, const RealMatrix& y,
                  double expected_xi1, double expected_xi2);

}  // namespace tselab
