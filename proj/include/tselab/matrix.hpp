#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "tselab/errors.hpp"

namespace tselab {

// Dense row-major matrix of doubles. All numerics in this project run in
// 64-bit floating point; there are no single-precision code paths.
class RealMatrix {
 public:
  RealMatrix() : rows_(0), cols_(0) {}

  RealMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), e_(rows * cols, 0.0) {}

  // Brace construction for small literals in tests and examples:
  //   RealMatrix m{{1.0, 2.0}, {3.0, 4.0}};
  RealMatrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return e_.size(); }

  double& operator()(std::size_t i, std::size_t j) {
    return e_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return e_[i * cols_ + j];
  }

  double* data() noexcept { return e_.data(); }
  const double* data() const noexcept { return e_.data(); }

  double* row(std::size_t i) noexcept { return e_.data() + i * cols_; }
  const double* row(std::size_t i) const noexcept {
    return e_.data() + i * cols_;
  }

  bool same_shape(const RealMatrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  // True when every entry is finite (no NaN or infinity).
  bool all_finite() const noexcept;

  static RealMatrix identity(std::size_t n);

 private:
  std::size_t rows_, cols_;
  std::vector<double> e_;
};

// Deterministic random stream addressed by (seed, stream id). Equal
// addresses produce bit-identical output on every platform: the engine is
// mt19937_64 (fully specified by the standard) and the uniform and gaussian
// transforms below are hand-rolled, because the std::*_distribution classes
// are allowed to differ between standard library implementations.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

  // Child stream with its own state. Substreams of distinct ids, and the
  // parent itself, never share engine seeds in practice (ids are mixed
  // through splitmix64, so overlap needs a 64-bit collision).
  RngStream substream(std::uint64_t id) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on (0, 1], from the top 53 bits of the engine output.
  double next_uniform01();

  // Standard normal via Box-Muller; the paired variate is cached.
  double next_gaussian();

 private:
  std::uint64_t seed_, stream_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// --- elementwise and structural ops ---

RealMatrix transpose(const RealMatrix& a);

RealMatrix add(const RealMatrix& a, const RealMatrix& b);
RealMatrix sub(const RealMatrix& a, const RealMatrix& b);
RealMatrix scale(const RealMatrix& a, double c);

// a + c * b, shapes must match.
RealMatrix add_scaled(const RealMatrix& a, double c, const RealMatrix& b);

// --- products ---

// out = a * b. out must be preallocated to (a.rows, b.cols); aliasing out
// with an input is not allowed. Loop order is i-k-j so the inner loop
// streams rows of b and vectorizes.
void matmul_into(const RealMatrix& a, const RealMatrix& b, RealMatrix& out);

RealMatrix matmul(const RealMatrix& a, const RealMatrix& b);

// v^T * m for a length-rows vector; returns a length-cols vector.
std::vector<double> vec_mat(const std::vector<double>& v, const RealMatrix& m);

// --- mean projector ---
//
// The projector onto the all-ones direction acts on an n x d matrix by
// replacing every column with its mean. Both projections work directly on
// the input; the n x n projector matrix is never materialized.

std::vector<double> col_means(const RealMatrix& x);

RealMatrix project_mean(const RealMatrix& x);

RealMatrix project_complement(const RealMatrix& x);

// --- reductions ---

// Squared Frobenius norm with compensated (Kahan) summation, so the
// mean/complement energy split stays exact to near machine precision even
// for large matrices.
double frobenius_sq(const RealMatrix& x);

double frobenius_norm(const RealMatrix& x);

// Frobenius inner product <a, b>, compensated.
double frobenius_dot(const RealMatrix& a, const RealMatrix& b);

// --- sampling ---

// Entries i.i.d. N(0, stddev^2).
RealMatrix sample_gaussian(RngStream& rng, std::size_t rows, std::size_t cols,
                           double stddev = 1.0);
void sample_gaussian_into(RngStream& rng, RealMatrix& out,
                          double stddev = 1.0);

// Entries i.i.d. uniform on [-scale, scale].
RealMatrix sample_uniform_scaled(RngStream& rng, std::size_t rows,
                                 std::size_t cols, double scale);
void sample_uniform_scaled_into(RngStream& rng, RealMatrix& out, double scale);

// Xavier/Glorot uniform: limit sqrt(6 / (fan_in + fan_out)) with fan_in =
// rows and fan_out = cols (weights multiply on the right).
RealMatrix sample_xavier_uniform(RngStream& rng, std::size_t rows,
                                 std::size_t cols);

namespace detail {
std::uint64_t splitmix64(std::uint64_t x);
}

}  // namespace tselab
