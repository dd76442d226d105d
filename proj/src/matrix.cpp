#include "tselab/matrix.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace tselab {

RealMatrix::RealMatrix(
    std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  e_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) {
      throw ShapeError("RealMatrix: ragged initializer list");
    }
    e_.insert(e_.end(), r.begin(), r.end());
  }
}

bool RealMatrix::all_finite() const noexcept {
  for (double v : e_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

RealMatrix RealMatrix::identity(std::size_t n) {
  RealMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

namespace detail {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

namespace {

std::uint64_t mix_seed_stream(std::uint64_t seed, std::uint64_t stream) {
  // Two splitmix64 rounds decorrelate nearby (seed, stream) pairs.
  std::uint64_t a = detail::splitmix64(seed);
  std::uint64_t b = detail::splitmix64(stream ^ 0xA5A5A5A55A5A5A5AULL);
  return detail::splitmix64(a ^ (b + 0x9E3779B97F4A7C15ULL));
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_(stream_id), engine_(mix_seed_stream(seed, stream_id)) {}

RngStream RngStream::substream(std::uint64_t id) const {
  return RngStream(seed_, detail::splitmix64(stream_ ^ detail::splitmix64(id)));
}

double RngStream::next_uniform01() {
  // 53 bits -> [0, 1), flipped to (0, 1] so log() below is always safe.
  return 1.0 - static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::next_gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = next_uniform01();
  double u2 = next_uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

namespace {

void check_same_shape(const RealMatrix& a, const RealMatrix& b,
                      const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch (" +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

}  // namespace

RealMatrix transpose(const RealMatrix& a) {
  RealMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      t(j, i) = a(i, j);
    }
  }
  return t;
}

RealMatrix add(const RealMatrix& a, const RealMatrix& b) {
  check_same_shape(a, b, "add");
  RealMatrix out(a.rows(), a.cols());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t k = 0; k < a.size(); ++k) po[k] = pa[k] + pb[k];
  return out;
}

RealMatrix sub(const RealMatrix& a, const RealMatrix& b) {
  check_same_shape(a, b, "sub");
  RealMatrix out(a.rows(), a.cols());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t k = 0; k < a.size(); ++k) po[k] = pa[k] - pb[k];
  return out;
}

RealMatrix scale(const RealMatrix& a, double c) {
  RealMatrix out(a.rows(), a.cols());
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t k = 0; k < a.size(); ++k) po[k] = c * pa[k];
  return out;
}

RealMatrix add_scaled(const RealMatrix& a, double c, const RealMatrix& b) {
  check_same_shape(a, b, "add_scaled");
  RealMatrix out(a.rows(), a.cols());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t k = 0; k < a.size(); ++k) po[k] = pa[k] + c * pb[k];
  return out;
}

void matmul_into(const RealMatrix& a, const RealMatrix& b, RealMatrix& out) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" +
                     std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  if (out.rows() != a.rows() || out.cols() != b.cols()) {
    throw ShapeError("matmul: output has wrong shape");
  }
  if (out.data() == a.data() || out.data() == b.data()) {
    throw ShapeError("matmul: output must not alias an input");
  }
  const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
  std::memset(out.data(), 0, n * p * sizeof(double));
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (std::size_t k = 0; k < m; ++k) {
      const double aik = arow[k];
      const double* brow = b.row(k);
      for (std::size_t j = 0; j < p; ++j) {
        orow[j] += aik * brow[j];
      }
    }
  }
}

RealMatrix matmul(const RealMatrix& a, const RealMatrix& b) {
  RealMatrix out(a.rows(), b.cols());
  matmul_into(a, b, out);
  return out;
}

std::vector<double> vec_mat(const std::vector<double>& v,
                            const RealMatrix& m) {
  if (v.size() != m.rows()) {
    throw ShapeError("vec_mat: vector length " + std::to_string(v.size()) +
                     " does not match rows " + std::to_string(m.rows()));
  }
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double vi = v[i];
    const double* row = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += vi * row[j];
  }
  return out;
}

std::vector<double> col_means(const RealMatrix& x) {
  if (x.rows() == 0) {
    throw ShapeError("col_means: empty matrix");
  }
  std::vector<double> m(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* row = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) m[j] += row[j];
  }
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (double& v : m) v *= inv;
  return m;
}

RealMatrix project_mean(const RealMatrix& x) {
  std::vector<double> m = col_means(x);
  RealMatrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double* row = out.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) row[j] = m[j];
  }
  return out;
}

RealMatrix project_complement(const RealMatrix& x) {
  std::vector<double> m = col_means(x);
  RealMatrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* src = x.row(i);
    double* row = out.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) row[j] = src[j] - m[j];
  }
  return out;
}

namespace {

// Kahan-compensated sum of f(k) over [0, count).
template <typename F>
double compensated_sum(std::size_t count, F f) {
  double sum = 0.0, comp = 0.0;
  for (std::size_t k = 0; k < count; ++k) {
    double y = f(k) - comp;
    double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum;
}

}  // namespace

double frobenius_sq(const RealMatrix& x) {
  const double* p = x.data();
  return compensated_sum(x.size(), [p](std::size_t k) { return p[k] * p[k]; });
}

double frobenius_norm(const RealMatrix& x) { return std::sqrt(frobenius_sq(x)); }

double frobenius_dot(const RealMatrix& a, const RealMatrix& b) {
  check_same_shape(a, b, "frobenius_dot");
  const double* pa = a.data();
  const double* pb = b.data();
  return compensated_sum(a.size(),
                         [pa, pb](std::size_t k) { return pa[k] * pb[k]; });
}

RealMatrix sample_gaussian(RngStream& rng, std::size_t rows, std::size_t cols,
                           double stddev) {
  RealMatrix out(rows, cols);
  sample_gaussian_into(rng, out, stddev);
  return out;
}

void sample_gaussian_into(RngStream& rng, RealMatrix& out, double stddev) {
  double* p = out.data();
  for (std::size_t k = 0; k < out.size(); ++k) {
    p[k] = stddev * rng.next_gaussian();
  }
}

RealMatrix sample_uniform_scaled(RngStream& rng, std::size_t rows,
                                 std::size_t cols, double scale) {
  RealMatrix out(rows, cols);
  sample_uniform_scaled_into(rng, out, scale);
  return out;
}

void sample_uniform_scaled_into(RngStream& rng, RealMatrix& out, double scale) {
  double* p = out.data();
  for (std::size_t k = 0; k < out.size(); ++k) {
    p[k] = scale * (2.0 * rng.next_uniform01() - 1.0);
  }
}

RealMatrix sample_xavier_uniform(RngStream& rng, std::size_t rows,
                                 std::size_t cols) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(rows + cols));
  return sample_uniform_scaled(rng, rows, cols, limit);
}

}  // namespace tselab
