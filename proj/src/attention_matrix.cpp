#include "tselab/attention_matrix.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace tselab {

AttentionMatrix::AttentionMatrix(RealMatrix p) : p_(std::move(p)) {
  if (p_.rows() == 0 || p_.rows() != p_.cols()) {
    throw ShapeError("AttentionMatrix: expected nonempty square matrix, got " +
                     std::to_string(p_.rows()) + "x" + std::to_string(p_.cols()));
  }
  for (std::size_t i = 0; i < p_.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < p_.cols(); ++j) {
      const double v = p_(i, j);
      if (!(v >= 0.0)) {  // catches negatives and NaN
        throw ValidationError("AttentionMatrix: entry (" + std::to_string(i) +
                              "," + std::to_string(j) + ") = " +
                              std::to_string(v) + " is not nonnegative");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      throw ValidationError("AttentionMatrix: row " + std::to_string(i) +
                            " sums to " + std::to_string(sum) +
                            ", not 1 within 1e-12");
    }
  }
}

AttentionMatrix AttentionMatrix::uniform(std::size_t n) {
  RealMatrix p(n, n);
  const double v = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < p.size(); ++k) p.data()[k] = v;
  return AttentionMatrix(std::move(p));
}

AttentionMatrix AttentionMatrix::identity(std::size_t n) {
  return AttentionMatrix(RealMatrix::identity(n));
}

}  // namespace tselab
