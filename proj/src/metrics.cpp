#include "tselab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tselab {

namespace {

// Squared norm of the mean-projected part, n * ||column means||^2, without
// materializing the projection.
double mean_part_sq(const RealMatrix& x) {
  std::vector<double> m = col_means(x);
  double s = 0.0, comp = 0.0;
  for (double v : m) {
    const double y = v * v - comp;
    const double t = s + y;
    comp = (t - s) - y;
    s = t;
  }
  return static_cast<double>(x.rows()) * s;
}

double total_sq_or_throw(const RealMatrix& x, const char* who) {
  if (x.size() == 0) {
    throw UndefinedMeasureError(std::string(who) + ": empty matrix");
  }
  const double total = frobenius_sq(x);
  if (total == 0.0) {
    throw UndefinedMeasureError(std::string(who) +
                                ": zero matrix has no similarity");
  }
  return total;
}

}  // namespace

double token_similarity(const RealMatrix& x) {
  const double total = total_sq_or_throw(x, "token_similarity");
  const double sim = mean_part_sq(x) / total;
  return std::clamp(sim, 0.0, 1.0);
}

double token_diversity(const RealMatrix& x) {
  const double total = total_sq_or_throw(x, "token_diversity");
  const double div = frobenius_sq(project_complement(x)) / total;
  return std::clamp(div, 0.0, 1.0);
}

double cosine_similarity(const RealMatrix& x) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n < 2) {
    throw ValidationError("cosine_similarity: needs at least 2 rows");
  }
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* row = x.row(i);
    for (std::size_t j = 0; j < d; ++j) s += row[j] * row[j];
    if (s == 0.0) {
      throw UndefinedMeasureError(
          "cosine_similarity: row " + std::to_string(i) +
          " is zero; cosine undefined");
    }
    norms[i] = std::sqrt(s);
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* ri = x.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double* rj = x.row(j);
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += ri[t] * rj[t];
      acc += dot / (norms[i] * norms[j]);
    }
  }
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  return std::clamp(acc / pairs, -1.0, 1.0);
}

double escalation_rate(const RealMatrix& x, const RealMatrix& y) {
  const double div_x = token_diversity(x);
  const double sim_x = token_similarity(x);
  if (div_x == 0.0 || sim_x == 0.0) {
    throw BoundaryError(
        "escalation_rate: t_sim(x) is at a boundary of (0,1); rate undefined");
  }
  const double div_y = token_diversity(y);
  const double sim_y = token_similarity(y);
  if (div_y == 0.0 || sim_y == 0.0) {
    throw BoundaryError(
        "escalation_rate: t_sim(y) is at a boundary of (0,1); rate undefined");
  }
  return div_x / div_y;
}

XiPair xi_pair(const RealMatrix& x, const RealMatrix& y) {
  if (!x.same_shape(y)) {
    throw ShapeError("xi_pair: x and y must have equal shape");
  }
  const double mean_x = mean_part_sq(x);
  if (mean_x == 0.0) {
    throw BoundaryError("xi_pair: mean-projector energy of x vanishes");
  }
  const double comp_x = frobenius_sq(project_complement(x));
  if (comp_x == 0.0) {
    throw BoundaryError("xi_pair: complement-projector energy of x vanishes");
  }
  XiPair xi;
  xi.xi1 = mean_part_sq(y) / mean_x;
  xi.xi2 = frobenius_sq(project_complement(y)) / comp_x;
  return xi;
}

MuPair mu_pair(const RealMatrix& x, const AttentionMatrix& p) {
  if (p.n() != x.rows()) {
    throw ShapeError("mu_pair: attention size does not match rows of x");
  }
  const double mean_x = mean_part_sq(x);
  if (mean_x == 0.0) {
    throw BoundaryError("mu_pair: mean-projector energy of x vanishes");
  }
  const double comp_x = frobenius_sq(project_complement(x));
  if (comp_x == 0.0) {
    throw BoundaryError("mu_pair: complement-projector energy of x vanishes");
  }
  RealMatrix px = matmul(p.matrix(), x);
  MuPair mu;
  mu.mu1 = std::sqrt(mean_part_sq(px) / mean_x);
  mu.mu2 = std::sqrt(frobenius_sq(project_complement(px)) / comp_x);
  return mu;
}

double omega(const RealMatrix& x, const AttentionMatrix& p) {
  if (p.n() != x.rows()) {
    throw ShapeError("omega: attention size does not match rows of x");
  }
  const std::size_t n = x.rows();
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));

  // Denominator ||e^T X|| = ||column sums of X|| / sqrt(n).
  std::vector<double> colsum(x.cols(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) colsum[j] += row[j];
  }
  double den = 0.0;
  for (double v : colsum) den += v * v;
  den = std::sqrt(den) * inv_sqrt_n;
  if (den == 0.0) {
    throw BoundaryError("omega: e^T X = 0 (x has zero column sums)");
  }

  // Numerator: e^T P C X = (C P^T e)^T X since the complement projector C
  // is symmetric; C P^T e is the centered vector of column sums of P.
  std::vector<double> v(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) v[j] += p.matrix()(i, j);
  }
  double vmean = 0.0;
  for (double e : v) vmean += e;
  vmean /= static_cast<double>(n);
  for (double& e : v) e = (e - vmean) * inv_sqrt_n;

  std::vector<double> num_vec = vec_mat(v, x);
  double num = 0.0;
  for (double e : num_vec) num += e * e;
  return std::sqrt(num) / den;
}

double eta_sample(const RealMatrix& x, const RealMatrix& y,
                  double expected_xi1, double expected_xi2) {
  if (!(expected_xi2 > 0.0)) {
    throw ValidationError("eta_sample: expected_xi2 must be > 0");
  }
  const XiPair xi = xi_pair(x, y);
  if (xi.xi2 == 0.0) {
    throw BoundaryError("eta_sample: realized xi2 is zero; ratio undefined");
  }
  return expected_xi1 / expected_xi2 - xi.ratio();
}

}  // namespace tselab
