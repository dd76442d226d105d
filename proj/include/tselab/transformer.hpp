#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tselab/attention_matrix.hpp"
#include "tselab/matrix.hpp"

namespace tselab {

enum class BlockVariant { post_norm, pre_norm, post_norm_deescalated };
enum class DeescPlacement { block_output, ffn_input };

// Scalar layer-norm parameters. 'gain' and 'bias' are the usual learnable
// scalars (named to avoid clashing with the gamma constant in the theory
// module); epsilon floors the per-row variance.
struct LayerNormParams {
  double gain = 1.0;
  double bias = 0.0;
  double epsilon = 1e-5;
};

// Full configuration of one transformer block at initialization.
// q_ffn == 0 and sigma_sq == 0 mean "derive the default": q_ffn = 2d and
// sigma_sq = 1/d (so that d*sigma^2 = 1, the regime every closed-form
// comparison in the theory module is calibrated to).
struct BlockConfig {
  std::size_t n = 64;
  std::size_t d = 512;
  std::size_t h = 8;
  double alpha = 1.0;
  std::size_t q_ffn = 0;
  double tau = 0.0;
  BlockVariant variant = BlockVariant::post_norm;
  DeescPlacement deesc_placement = DeescPlacement::block_output;
  double sigma_sq = 0.0;
  std::uint64_t seed = 0;
  LayerNormParams ln;

  std::size_t head_dim() const { return d / h; }
  std::size_t ffn_width() const { return q_ffn == 0 ? 2 * d : q_ffn; }
  double weight_variance() const {
    return sigma_sq == 0.0 ? 1.0 / static_cast<double>(d) : sigma_sq;
  }

  // Throws ValidationError when any invariant fails (h must divide d,
  // q_ffn >= d, alpha > 0, tau in [0,1], sigma_sq >= 0, epsilon > 0).
  void validate() const;
};

// Observer for what happens inside a block. Experiments install one to
// measure diagnostics per step; the default callbacks discard everything.
class DiagnosticsSink {
 public:
  virtual ~DiagnosticsSink() = default;

  // Per-head attention matrices, reported before Step 1 executes.
  virtual void on_attention(const std::vector<AttentionMatrix>& heads) {
    (void)heads;
  }

  // Output of one numbered block step (1 = SA+residual, 2 = LN,
  // 3 = FFN+residual, 4 = LN) for the post-norm block.
  virtual void on_step(int step_index, const RealMatrix& value) {
    (void)step_index;
    (void)value;
  }

  // Named scalar diagnostics (the pre-norm block's Frobenius norms).
  virtual void on_scalar(const std::string& name, double value) {
    (void)name;
    (void)value;
  }
};

// One attention head: its attention matrix and the d x (d/h) value weight.
struct AttentionHead {
  AttentionMatrix p;
  RealMatrix w;
};

// Row-wise softmax of X Wq (X Wk)^T / sqrt(scale_dim). Each row's max is
// subtracted before exponentiation, which leaves the result unchanged
// (softmax is shift-invariant per row) but prevents spurious overflow.
// Non-finite logits raise OverflowError.
AttentionMatrix softmax_attention(const RealMatrix& x, const RealMatrix& wq,
                                  const RealMatrix& wk, std::size_t scale_dim);

// X + alpha * P X W for a d x d weight.
RealMatrix sa_residual_single(const RealMatrix& x, const AttentionMatrix& p,
                              const RealMatrix& w, double alpha);

// X + alpha * [P_1 X W_1 | ... | P_h X W_h], column-wise concatenation of
// per-head products with d x (d/h) weights.
RealMatrix sa_residual_multihead(const RealMatrix& x,
                                 const std::vector<AttentionHead>& heads,
                                 double alpha);

// Row-wise layer normalization with scalar gain/bias and population
// variance floored by epsilon.
RealMatrix layer_norm(const RealMatrix& x, const LayerNormParams& params);

// relu(X W1) W2 + X.
RealMatrix ffn_residual(const RealMatrix& x, const RealMatrix& w1,
                        const RealMatrix& w2);

// (I - tau * mean projector) X. tau = 1 is exact column centering.
RealMatrix deescalate(const RealMatrix& x, double tau);

// The post-norm block: softmax attention per head, SA+residual, LN,
// FFN+residual, LN, with optional de-escalation per cfg. All weights are
// sampled fresh from rng in a fixed order, so equal (x, cfg, rng state)
// gives bit-identical output.
RealMatrix post_norm_block(const RealMatrix& x, const BlockConfig& cfg,
                           RngStream& rng, DiagnosticsSink* tap = nullptr);

// The pre-norm block: Xhat = LN(X); Y = X + alpha * SA(Xhat);
// Z = Y + relu(LN(Y) W1) W2. Reports the five Frobenius norms
// (norm_x, norm_xhat, norm_sa_term, norm_y, norm_z) to the tap.
RealMatrix pre_norm_block(const RealMatrix& x, const BlockConfig& cfg,
                          RngStream& rng, DiagnosticsSink* tap = nullptr);

}  // namespace tselab
