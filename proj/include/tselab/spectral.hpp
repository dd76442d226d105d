#pragma once

#include <complex>
#include <vector>

#include "tselab/attention_matrix.hpp"
#include "tselab/matrix.hpp"

namespace tselab {

// Spectral quantities of one attention matrix: delta is the operator norm
// of the mean-complement part, lambda2_modulus the second largest
// eigenvalue modulus, spectral_gap_sym the gap measure 1 - |lambda2|^2.
struct SpectralReport {
  double delta = 0.0;
  double lambda2_modulus = 0.0;
  double spectral_gap_sym = 1.0;
};

// Largest singular value of a, by power iteration on a^T a. The start
// vector is deterministic (normalized all-ones with a tiny index-dependent
// perturbation) so results are reproducible. Iterations stop when the
// symmetric-eigenproblem residual certifies relative accuracy tol; running
// past max_iter raises ConvergenceError carrying the last estimate.
double spectral_norm(const RealMatrix& a, double tol = 1e-10,
                     int max_iter = 10000);

// All eigenvalues of a real square matrix (n <= 1024): Householder
// reduction to upper Hessenberg form followed by Francis double-shift QR
// sweeps. Complex conjugate pairs come from the 2x2 diagonal blocks of the
// final quasi-triangular form. The iteration budget is 30n sweeps overall;
// exhausting it raises ConvergenceError.
std::vector<std::complex<double>> real_schur_eigenvalues(const RealMatrix& a);

// |lambda_2(P)|, the second largest eigenvalue modulus of a row-stochastic
// matrix.
//
// Computed as the spectral radius of the deflated matrix M = C P C, where
// C = I - ones*ones^T/n. Why that works: P has the known eigenpair
// P e = e for e = ones/sqrt(n), so in any orthonormal basis whose first
// vector is e, P is block upper-triangular with diagonal blocks
// (1, Q^T P Q), where Q spans the complement. Hence
// spec(P) = {1} u spec(Q^T P Q). In that same basis M is block-diagonal
// with blocks (0, Q^T P Q), so spec(M) = {0} u spec(Q^T P Q) and the
// max-modulus eigenvalue of M is exactly |lambda_2(P)|. Deflating first
// avoids having to separate the eigenvalue 1 from near-1 strays
// numerically.
double second_eigenvalue_modulus(const AttentionMatrix& p);

// Bundles delta = spectral_norm of the mean-complement of P with the
// second-eigenvalue modulus and the gap.
SpectralReport spectral_report(const AttentionMatrix& p);

}  // namespace tselab
