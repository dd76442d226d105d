#include "tselab/spectral.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <string>

namespace tselab {

namespace {

// Householder similarity reduction to upper Hessenberg form, in place.
void hessenberg_inplace(RealMatrix& h) {
  const std::size_t n = h.rows();
  if (n < 3) return;
  std::vector<double> v(n, 0.0);

  for (std::size_t k = 0; k + 2 < n; ++k) {
    double sigma_sq = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) sigma_sq += h(i, k) * h(i, k);
    if (sigma_sq == 0.0) continue;
    const double sigma = std::sqrt(sigma_sq);
    const double alpha = h(k + 1, k) >= 0.0 ? -sigma : sigma;

    v[k + 1] = h(k + 1, k) - alpha;
    for (std::size_t i = k + 2; i < n; ++i) v[i] = h(i, k);
    double vnorm_sq = v[k + 1] * v[k + 1];
    for (std::size_t i = k + 2; i < n; ++i) vnorm_sq += v[i] * v[i];
    if (vnorm_sq == 0.0) continue;
    const double beta = 2.0 / vnorm_sq;

    // Left reflection on columns k+1..n-1 (column k is set explicitly).
    for (std::size_t j = k + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = k + 1; i < n; ++i) s += v[i] * h(i, j);
      s *= beta;
      for (std::size_t i = k + 1; i < n; ++i) h(i, j) -= s * v[i];
    }
    // Right reflection on every row.
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = k + 1; j < n; ++j) s += h(i, j) * v[j];
      s *= beta;
      for (std::size_t j = k + 1; j < n; ++j) h(i, j) -= s * v[j];
    }

    h(k + 1, k) = alpha;
    for (std::size_t i = k + 2; i < n; ++i) h(i, k) = 0.0;
  }
}

}  // namespace

std::vector<std::complex<double>> real_schur_eigenvalues(const RealMatrix& a) {
  if (a.rows() != a.cols()) {
    throw ShapeError("real_schur_eigenvalues: matrix is not square");
  }
  if (a.rows() > 1024) {
    throw ValidationError("real_schur_eigenvalues: n > 1024 not supported");
  }
  const int n = static_cast<int>(a.rows());
  std::vector<std::complex<double>> eig;
  if (n == 0) return eig;
  eig.reserve(n);

  RealMatrix h = a;
  hessenberg_inplace(h);

  const double eps = DBL_EPSILON;
  double anorm = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = (i > 1 ? i - 1 : 0); j < n; ++j) anorm += std::abs(h(i, j));
  }

  // Francis double-shift QR with the usual exceptional shifts after 10 and
  // 20 stalled sweeps per eigenvalue; total budget 30n sweeps.
  int nn = n - 1;
  int itn = 30 * n;
  double t = 0.0;
  double p = 0.0, q = 0.0, r = 0.0, x = 0.0, y = 0.0, z = 0.0, w = 0.0, s = 0.0;

  while (nn >= 0) {
    int its = 0;
    bool split = false;
    while (!split) {
      int l;
      for (l = nn; l > 0; --l) {
        s = std::abs(h(l - 1, l - 1)) + std::abs(h(l, l));
        if (s == 0.0) s = anorm;
        if (std::abs(h(l, l - 1)) <= eps * s) {
          h(l, l - 1) = 0.0;
          break;
        }
      }
      x = h(nn, nn);
      if (l == nn) {
        eig.emplace_back(x + t, 0.0);
        --nn;
        split = true;
        break;
      }
      y = h(nn - 1, nn - 1);
      w = h(nn, nn - 1) * h(nn - 1, nn);
      if (l == nn - 1) {
        p = 0.5 * (y - x);
        q = p * p + w;
        z = std::sqrt(std::abs(q));
        x += t;
        if (q >= 0.0) {
          z = p + (p >= 0.0 ? z : -z);
          eig.emplace_back(x + z, 0.0);
          eig.emplace_back(z != 0.0 ? x - w / z : x + z, 0.0);
        } else {
          eig.emplace_back(x + p, z);
          eig.emplace_back(x + p, -z);
        }
        nn -= 2;
        split = true;
        break;
      }

      if (itn == 0) {
        throw ConvergenceError(
            "real_schur_eigenvalues: QR sweep budget (30n) exhausted at block "
            "size " + std::to_string(nn - l + 1),
            x + t);
      }
      if (its == 10 || its == 20) {
        t += x;
        for (int i = 0; i <= nn; ++i) h(i, i) -= x;
        s = std::abs(h(nn, nn - 1)) + std::abs(h(nn - 1, nn - 2));
        y = x = 0.75 * s;
        w = -0.4375 * s * s;
      }
      ++its;
      --itn;

      int m;
      for (m = nn - 2; m >= l; --m) {
        z = h(m, m);
        r = x - z;
        s = y - z;
        p = (r * s - w) / h(m + 1, m) + h(m, m + 1);
        q = h(m + 1, m + 1) - z - r - s;
        r = h(m + 2, m + 1);
        s = std::abs(p) + std::abs(q) + std::abs(r);
        if (s == 0.0) {
          if (m == l) break;
          continue;
        }
        p /= s;
        q /= s;
        r /= s;
        if (m == l) break;
        const double u = std::abs(h(m, m - 1)) * (std::abs(q) + std::abs(r));
        const double v = std::abs(p) * (std::abs(h(m - 1, m - 1)) +
                                        std::abs(z) + std::abs(h(m + 1, m + 1)));
        if (u <= eps * v) break;
      }
      for (int i = m + 2; i <= nn; ++i) {
        h(i, i - 2) = 0.0;
        if (i != m + 2) h(i, i - 3) = 0.0;
      }

      for (int k = m; k <= nn - 1; ++k) {
        const bool notlast = k != nn - 1;
        if (k != m) {
          p = h(k, k - 1);
          q = h(k + 1, k - 1);
          r = notlast ? h(k + 2, k - 1) : 0.0;
          x = std::abs(p) + std::abs(q) + std::abs(r);
          if (x == 0.0) continue;
          p /= x;
          q /= x;
          r /= x;
        }
        s = std::sqrt(p * p + q * q + r * r);
        if (p < 0.0) s = -s;
        if (s == 0.0) continue;
        if (k == m) {
          if (l != m) h(k, k - 1) = -h(k, k - 1);
        } else {
          h(k, k - 1) = -s * x;
        }
        p += s;
        x = p / s;
        y = q / s;
        z = r / s;
        q /= p;
        r /= p;
        for (int j = k; j <= nn; ++j) {
          double pp = h(k, j) + q * h(k + 1, j);
          if (notlast) {
            pp += r * h(k + 2, j);
            h(k + 2, j) -= pp * z;
          }
          h(k + 1, j) -= pp * y;
          h(k, j) -= pp * x;
        }
        const int mmin = nn < k + 3 ? nn : k + 3;
        for (int i = l; i <= mmin; ++i) {
          double pp = x * h(i, k) + y * h(i, k + 1);
          if (notlast) {
            pp += z * h(i, k + 2);
            h(i, k + 2) -= pp * r;
          }
          h(i, k + 1) -= pp * q;
          h(i, k) -= pp;
        }
      }
    }
  }
  return eig;
}

double spectral_norm(const RealMatrix& a, double tol, int max_iter) {
  if (tol <= 0.0) throw ValidationError("spectral_norm: tol must be > 0");
  if (max_iter <= 0) throw ValidationError("spectral_norm: max_iter must be > 0");
  if (a.size() == 0 || frobenius_sq(a) == 0.0) {
    throw ValidationError("spectral_norm: zero matrix has no direction");
  }

  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> v(d), u(n), w(d);

  // Deterministic start: normalized all-ones plus a tiny index-dependent
  // tilt that breaks exact orthogonality to the leading singular vector.
  {
    double nrm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      v[j] = 1.0 + 1e-6 * static_cast<double>(j + 1) /
                       static_cast<double>(d);
      nrm += v[j] * v[j];
    }
    nrm = std::sqrt(nrm);
    for (std::size_t j = 0; j < d; ++j) v[j] /= nrm;
  }

  double theta = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = a.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += row[j] * v[j];
      u[i] = s;
    }
    theta = 0.0;
    for (std::size_t i = 0; i < n; ++i) theta += u[i] * u[i];
    if (theta == 0.0) {
      // v landed exactly in the null space; restart from the heaviest column.
      std::size_t best = 0;
      double best_norm = -1.0;
      for (std::size_t j = 0; j < d; ++j) {
        double cn = 0.0;
        for (std::size_t i = 0; i < n; ++i) cn += a(i, j) * a(i, j);
        if (cn > best_norm) {
          best_norm = cn;
          best = j;
        }
      }
      std::fill(v.begin(), v.end(), 0.0);
      v[best] = 1.0;
      continue;
    }
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += a(i, j) * u[i];
      w[j] = s;
    }
    // theta is the Rayleigh quotient of a^T a at the unit vector v; the
    // residual ||a^T a v - theta v|| bounds the distance from theta to the
    // nearest true eigenvalue, which certifies the relative accuracy.
    double res_sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double rj = w[j] - theta * v[j];
      res_sq += rj * rj;
    }
    if (std::sqrt(res_sq) <= tol * theta) {
      return std::sqrt(theta);
    }
    double wn = 0.0;
    for (std::size_t j = 0; j < d; ++j) wn += w[j] * w[j];
    wn = std::sqrt(wn);
    for (std::size_t j = 0; j < d; ++j) v[j] = w[j] / wn;
  }
  // Power iteration converges at the eigen-gap rate of a^T a, so a leading
  // pair that is near-tied without being numerically equal (gap ratio around
  // 1e-5 or tighter) can exhaust max_iter while the iterate is still mixing
  // inside the top subspace. The matrices here are small, so finish with the
  // dense solver on the smaller Gram matrix, whose cost and accuracy do not
  // depend on the gap.
  const std::size_t m = std::min(n, d);
  if (m <= 1024) {
    RealMatrix g(m, m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i; j < m; ++j) {
        double s = 0.0;
        if (n <= d) {
          const double *ri = a.row(i), *rj = a.row(j);
          for (std::size_t k = 0; k < d; ++k) s += ri[k] * rj[k];
        } else {
          for (std::size_t k = 0; k < n; ++k) s += a(k, i) * a(k, j);
        }
        g(i, j) = s;
        g(j, i) = s;
      }
    }
    double lam = 0.0;
    for (const std::complex<double>& e : real_schur_eigenvalues(g)) {
      lam = std::max(lam, e.real());
    }
    return std::sqrt(lam);
  }
  throw ConvergenceError("spectral_norm: power iteration did not reach tol " +
                             std::to_string(tol) + " in " +
                             std::to_string(max_iter) + " iterations",
                         std::sqrt(theta));
}

double second_eigenvalue_modulus(const AttentionMatrix& p) {
  const RealMatrix& a = p.matrix();
  const std::size_t n = a.rows();

  // Both-sided mean deflation M = C P C with C = I - ones*ones^T/n, done
  // entrywise: M_ij = P_ij - colmean_j - rowmean_i + grandmean.
  std::vector<double> rowmean(n, 0.0), colmean(n, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      rowmean[i] += a(i, j);
      colmean[j] += a(i, j);
      grand += a(i, j);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (auto& v : rowmean) v *= inv_n;
  for (auto& v : colmean) v *= inv_n;
  grand *= inv_n * inv_n;

  RealMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      m(i, j) = a(i, j) - colmean[j] - rowmean[i] + grand;
    }
  }

  double best = 0.0;
  for (const auto& ev : real_schur_eigenvalues(m)) {
    best = std::max(best, std::abs(ev));
  }
  // A stochastic matrix has spectral radius exactly 1, so anything above
  // is QR rounding (the identity comes out a couple of ulp high).
  return std::min(best, 1.0);
}

SpectralReport spectral_report(const AttentionMatrix& p) {
  SpectralReport rep;
  RealMatrix comp = project_complement(p.matrix());
  // The uniform attention matrix has an exactly zero complement, where the
  // operator norm is 0 by definition rather than by iteration.
  rep.delta = frobenius_sq(comp) == 0.0 ? 0.0 : spectral_norm(comp);
  rep.lambda2_modulus = second_eigenvalue_modulus(p);
  rep.spectral_gap_sym = 1.0 - rep.lambda2_modulus * rep.lambda2_modulus;
  return rep;
}

}  // namespace tselab
