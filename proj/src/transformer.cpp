#include "tselab/transformer.hpp"

#include <cmath>
#include <string>

namespace tselab {

void BlockConfig::validate() const {
  if (n == 0 || d == 0 || h == 0) {
    throw ValidationError("BlockConfig: n, d, h must be positive");
  }
  if (d % h != 0) {
    throw ValidationError("BlockConfig: h = " + std::to_string(h) +
                          " does not divide d = " + std::to_string(d));
  }
  if (ffn_width() < d) {
    throw ValidationError("BlockConfig: q_ffn = " + std::to_string(ffn_width()) +
                          " must be >= d = " + std::to_string(d));
  }
  if (!(alpha > 0.0)) {
    throw ValidationError("BlockConfig: alpha must be > 0");
  }
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw ValidationError("BlockConfig: tau must lie in [0,1]");
  }
  if (sigma_sq < 0.0 || !std::isfinite(sigma_sq)) {
    throw ValidationError("BlockConfig: sigma_sq must be finite and >= 0");
  }
  if (!(ln.epsilon > 0.0)) {
    throw ValidationError("BlockConfig: layer-norm epsilon must be > 0");
  }
}

AttentionMatrix softmax_attention(const RealMatrix& x, const RealMatrix& wq,
                                  const RealMatrix& wk,
                                  std::size_t scale_dim) {
  if (scale_dim == 0) {
    throw ValidationError("softmax_attention: scale_dim must be positive");
  }
  if (wq.rows() != x.cols() || wk.rows() != x.cols() ||
      wq.cols() != wk.cols()) {
    throw ShapeError("softmax_attention: weight shapes incompatible with x");
  }
  const RealMatrix q = matmul(x, wq);
  const RealMatrix k = matmul(x, wk);
  RealMatrix logits = matmul(q, transpose(k));
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(scale_dim));
  for (std::size_t t = 0; t < logits.size(); ++t) {
    logits.data()[t] *= inv_scale;
  }
  if (!logits.all_finite()) {
    throw OverflowError("softmax_attention: non-finite attention logits");
  }

  const std::size_t n = x.rows();
  RealMatrix p(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* lrow = logits.row(i);
    double rowmax = lrow[0];
    for (std::size_t j = 1; j < n; ++j) rowmax = std::max(rowmax, lrow[j]);
    double sum = 0.0;
    double* prow = p.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      prow[j] = std::exp(lrow[j] - rowmax);
      sum += prow[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) prow[j] *= inv;
  }
  return AttentionMatrix(std::move(p));
}

RealMatrix sa_residual_single(const RealMatrix& x, const AttentionMatrix& p,
                              const RealMatrix& w, double alpha) {
  if (p.n() != x.rows()) {
    throw ShapeError("sa_residual_single: attention size does not match rows");
  }
  if (w.rows() != x.cols() || w.cols() != x.cols()) {
    throw ShapeError("sa_residual_single: w must be d x d");
  }
  RealMatrix px = matmul(p.matrix(), x);
  RealMatrix pxw = matmul(px, w);
  return add_scaled(x, alpha, pxw);
}

namespace {

// alpha * [P_1 X W_1 | ... | P_h X W_h]. When base is non-null the result
// is base + that term, accumulated per entry with the same expression
// add_scaled uses, so the h = 1 case stays bit-identical to the
// single-head path under fused multiply-add contraction.
RealMatrix multihead_sa_term(const RealMatrix& x,
                             const std::vector<AttentionHead>& heads,
                             double alpha, const RealMatrix* base = nullptr) {
  const std::size_t h = heads.size();
  if (h == 0) {
    throw ShapeError("sa_residual_multihead: no heads");
  }
  const std::size_t d = x.cols();
  if (d % h != 0) {
    throw ShapeError("sa_residual_multihead: head count does not divide d");
  }
  const std::size_t dh = d / h;

  RealMatrix term(x.rows(), d);
  RealMatrix px(x.rows(), d);
  RealMatrix s(x.rows(), dh);
  for (std::size_t k = 0; k < h; ++k) {
    const AttentionHead& head = heads[k];
    if (head.p.n() != x.rows()) {
      throw ShapeError("sa_residual_multihead: head " + std::to_string(k) +
                       " attention size mismatch");
    }
    if (head.w.rows() != d || head.w.cols() != dh) {
      throw ShapeError("sa_residual_multihead: head " + std::to_string(k) +
                       " weight must be d x d/h");
    }
    matmul_into(head.p.matrix(), x, px);
    matmul_into(px, head.w, s);
    const std::size_t col0 = k * dh;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double* trow = term.row(i) + col0;
      const double* srow = s.row(i);
      if (base != nullptr) {
        const double* brow = base->row(i) + col0;
        for (std::size_t j = 0; j < dh; ++j)
          trow[j] = brow[j] + alpha * srow[j];
      } else {
        for (std::size_t j = 0; j < dh; ++j) trow[j] = alpha * srow[j];
      }
    }
  }
  return term;
}

}  // namespace

RealMatrix sa_residual_multihead(const RealMatrix& x,
                                 const std::vector<AttentionHead>& heads,
                                 double alpha) {
  return multihead_sa_term(x, heads, alpha, &x);
}

RealMatrix layer_norm(const RealMatrix& x, const LayerNormParams& params) {
  if (x.cols() < 2) {
    throw ValidationError("layer_norm: needs at least 2 columns");
  }
  if (!(params.epsilon > 0.0)) {
    throw ValidationError("layer_norm: epsilon must be > 0");
  }
  const std::size_t n = x.rows(), d = x.cols();
  RealMatrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = x.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += src[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      var += (src[j] - mean) * (src[j] - mean);
    }
    var /= static_cast<double>(d);
    const double scale = params.gain / std::sqrt(var + params.epsilon);
    double* dst = out.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      dst[j] = scale * (src[j] - mean) + params.bias;
    }
  }
  return out;
}

RealMatrix ffn_residual(const RealMatrix& x, const RealMatrix& w1,
                        const RealMatrix& w2) {
  if (w1.rows() != x.cols() || w2.cols() != x.cols() ||
      w1.cols() != w2.rows()) {
    throw ShapeError("ffn_residual: weight shapes incompatible");
  }
  RealMatrix hidden = matmul(x, w1);
  for (std::size_t t = 0; t < hidden.size(); ++t) {
    if (hidden.data()[t] < 0.0) hidden.data()[t] = 0.0;
  }
  RealMatrix proj = matmul(hidden, w2);
  return add(proj, x);
}

RealMatrix deescalate(const RealMatrix& x, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw ValidationError("deescalate: tau must lie in [0,1]");
  }
  if (tau == 1.0) {
    // Exact column centering: computing the complement directly keeps
    // t_sim of the result at hard zero.
    return project_complement(x);
  }
  return add_scaled(x, -tau, project_mean(x));
}

namespace {

struct SampledBlockWeights {
  std::vector<RealMatrix> wq, wk, wv;
  RealMatrix ffn1, ffn2;
};

// Weight sampling order is fixed (per head: query, key, value; then the
// two FFN weights) and is part of the reproducibility contract.
SampledBlockWeights sample_block_weights(const BlockConfig& cfg,
                                         RngStream& rng) {
  SampledBlockWeights w;
  const std::size_t dh = cfg.head_dim();
  const double qk_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  const double value_std = std::sqrt(cfg.weight_variance());
  for (std::size_t k = 0; k < cfg.h; ++k) {
    w.wq.push_back(sample_uniform_scaled(rng, cfg.d, dh, qk_scale));
    w.wk.push_back(sample_uniform_scaled(rng, cfg.d, dh, qk_scale));
    w.wv.push_back(sample_gaussian(rng, cfg.d, dh, value_std));
  }
  // The FFN residual branch is kept small at init. relu rectifies its input,
  // so on token-diverse inputs about 1/pi of the update energy lands on the
  // token-mean direction; at full Xavier scale the update carries ~2/3 of the
  // signal norm and that injection dominates the mean-energy ratio of the FFN
  // step at early blocks. A quarter-scale branch (update energy ~0.2% of the
  // signal) keeps the step near-neutral, which is the regime the block-level
  // analysis assumes.
  constexpr double kFfnInitScale = 0.25;
  w.ffn1 = scale(sample_xavier_uniform(rng, cfg.d, cfg.ffn_width()),
                 kFfnInitScale);
  w.ffn2 = scale(sample_xavier_uniform(rng, cfg.ffn_width(), cfg.d),
                 kFfnInitScale);
  return w;
}

void check_block_input(const RealMatrix& x, const BlockConfig& cfg) {
  cfg.validate();
  if (x.rows() != cfg.n || x.cols() != cfg.d) {
    throw ShapeError("block: input is " + std::to_string(x.rows()) + "x" +
                     std::to_string(x.cols()) + ", config expects " +
                     std::to_string(cfg.n) + "x" + std::to_string(cfg.d));
  }
}

std::vector<AttentionHead> make_heads(const RealMatrix& attention_input,
                                      const SampledBlockWeights& w,
                                      const BlockConfig& cfg) {
  std::vector<AttentionHead> heads;
  heads.reserve(cfg.h);
  for (std::size_t k = 0; k < cfg.h; ++k) {
    heads.push_back(AttentionHead{
        softmax_attention(attention_input, w.wq[k], w.wk[k], cfg.head_dim()),
        w.wv[k]});
  }
  return heads;
}

}  // namespace

RealMatrix post_norm_block(const RealMatrix& x, const BlockConfig& cfg,
                           RngStream& rng, DiagnosticsSink* tap) {
  check_block_input(x, cfg);
  const SampledBlockWeights w = sample_block_weights(cfg, rng);
  std::vector<AttentionHead> heads = make_heads(x, w, cfg);
  if (tap) {
    std::vector<AttentionMatrix> ps;
    ps.reserve(heads.size());
    for (const auto& head : heads) ps.push_back(head.p);
    tap->on_attention(ps);
  }

  const bool deesc = cfg.variant == BlockVariant::post_norm_deescalated;

  RealMatrix y1 = sa_residual_multihead(x, heads, cfg.alpha);
  if (tap) tap->on_step(1, y1);

  RealMatrix y2 = layer_norm(y1, cfg.ln);
  if (tap) tap->on_step(2, y2);

  if (deesc && cfg.deesc_placement == DeescPlacement::ffn_input) {
    y2 = deescalate(y2, cfg.tau);
  }
  RealMatrix y3 = ffn_residual(y2, w.ffn1, w.ffn2);
  if (tap) tap->on_step(3, y3);

  RealMatrix y4 = layer_norm(y3, cfg.ln);
  if (tap) tap->on_step(4, y4);

  if (deesc && cfg.deesc_placement == DeescPlacement::block_output) {
    return deescalate(y4, cfg.tau);
  }
  return y4;
}

RealMatrix pre_norm_block(const RealMatrix& x, const BlockConfig& cfg,
                          RngStream& rng, DiagnosticsSink* tap) {
  check_block_input(x, cfg);
  const SampledBlockWeights w = sample_block_weights(cfg, rng);

  RealMatrix xhat = layer_norm(x, cfg.ln);
  std::vector<AttentionHead> heads = make_heads(xhat, w, cfg);
  if (tap) {
    std::vector<AttentionMatrix> ps;
    ps.reserve(heads.size());
    for (const auto& head : heads) ps.push_back(head.p);
    tap->on_attention(ps);
  }

  RealMatrix sa_term = multihead_sa_term(xhat, heads, cfg.alpha);
  RealMatrix y = add(x, sa_term);

  // Z = Y + relu(LN(Y) W1) W2: the FFN reads the normalized Y but the
  // residual adds the unnormalized Y back.
  RealMatrix hidden = matmul(layer_norm(y, cfg.ln), w.ffn1);
  for (std::size_t t = 0; t < hidden.size(); ++t) {
    if (hidden.data()[t] < 0.0) hidden.data()[t] = 0.0;
  }
  RealMatrix z = add(matmul(hidden, w.ffn2), y);

  if (tap) {
    tap->on_scalar("norm_x", frobenius_norm(x));
    tap->on_scalar("norm_xhat", frobenius_norm(xhat));
    tap->on_scalar("norm_sa_term", frobenius_norm(sa_term));
    tap->on_scalar("norm_y", frobenius_norm(y));
    tap->on_scalar("norm_z", frobenius_norm(z));
  }
  return z;
}

}  // namespace tselab
