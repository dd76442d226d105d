#pragma once

#include "tselab/matrix.hpp"

namespace tselab {

// Row-stochastic n x n matrix. Construction validates nonnegativity and
// row sums (each within 1e-12 of 1); downstream code relies on both.
class AttentionMatrix {
 public:
  explicit AttentionMatrix(RealMatrix p);

  const RealMatrix& matrix() const noexcept { return p_; }
  std::size_t n() const noexcept { return p_.rows(); }

  // The averaging matrix with every entry 1/n.
  static AttentionMatrix uniform(std::size_t n);
  static AttentionMatrix identity(std::size_t n);

  static constexpr double kRowSumTolerance = 1e-12;

 private:
  RealMatrix p_;
};

}  // namespace tselab
