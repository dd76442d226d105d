#include "tselab/experiments.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>
#include <utility>

#include "tselab/errors.hpp"
#include "tselab/metrics.hpp"
#include "tselab/report.hpp"
#include "tselab/spectral.hpp"
#include "tselab/theory.hpp"

namespace tselab {

void TrialAggregate::add(double value) {
  ++count;
  const double delta = value - mean;
  mean += delta / static_cast<double>(count);
  m2 += delta * (value - mean);
}

void TrialAggregate::merge(const TrialAggregate& other) {
  if (other.count == 0) return;
  if (count == 0) {
    *this = other;
    return;
  }
  const long long total = count + other.count;
  const double delta = other.mean - mean;
  m2 += other.m2 + delta * delta *
                       (static_cast<double>(count) *
                        static_cast<double>(other.count) /
                        static_cast<double>(total));
  mean += delta * (static_cast<double>(other.count) /
                   static_cast<double>(total));
  count = total;
}

double TrialAggregate::variance() const {
  return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0;
}

double TrialAggregate::stddev() const { return std::sqrt(variance()); }

double TrialAggregate::std_error() const {
  return count > 0 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0;
}

void ExperimentSpec::validate() const {
  cfg.validate();
  if (trials < 1) throw ValidationError("experiment: trials must be >= 1");
  if (depth < 1) throw ValidationError("experiment: depth must be >= 1");
  if (tau_list.empty()) {
    throw ValidationError("experiment: tau list must not be empty");
  }
  for (double tau : tau_list) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
      throw ValidationError("experiment: tau values must lie in [0,1]");
    }
  }
  if (d_list.empty()) {
    throw ValidationError("experiment: d list must not be empty");
  }
  for (std::size_t dv : d_list) {
    if (dv < 2) throw ValidationError("experiment: d values must be >= 2");
  }
  if (t_grid.empty()) {
    throw ValidationError("experiment: t grid must not be empty");
  }
  for (double t : t_grid) {
    if (!(t > 0.0 && t <= 1.0)) {
      throw ValidationError("experiment: t grid values must lie in (0,1]");
    }
  }
  if (oracle_heads.empty()) {
    throw ValidationError("experiment: oracle head list must not be empty");
  }
  for (std::size_t h : oracle_heads) {
    if (h < 1) throw ValidationError("experiment: head counts must be >= 1");
  }
}

std::string experiment_name_string(ExperimentName name) {
  switch (name) {
    case ExperimentName::escalation_fig2:
      return "escalation_fig2";
    case ExperimentName::fixed_input_fig3:
      return "fixed_input_fig3";
    case ExperimentName::prenorm_fig4:
      return "prenorm_fig4";
    case ExperimentName::deescalate_fig5:
      return "deescalate_fig5";
    case ExperimentName::eta_concentration_fig6:
      return "eta_concentration_fig6";
    case ExperimentName::oracle_expected_xi:
      return "oracle_expected_xi";
  }
  throw ValidationError("experiment: unknown name");
}

namespace {

// Below this diversity the complement part of a matrix is rounding noise
// relative to its mean part; xi2 and r computed from it would be noise
// ratios, so the harness reports sentinel counters instead.
constexpr double kSaturationGap = 1e-14;

// Slack for the recorded inequality flags: the bounds are exact in real
// arithmetic, so only rounding-level violations are forgiven.
constexpr double kFlagSlack = 1e-12;

double quiet_nan() { return std::numeric_limits<double>::quiet_NaN(); }

struct BlockCapture : DiagnosticsSink {
  std::vector<AttentionMatrix> heads;
  std::array<RealMatrix, 5> steps;  // indices 1..4 used
  std::map<std::string, double> scalars;

  void on_attention(const std::vector<AttentionMatrix>& hs) override {
    heads = hs;
  }
  void on_step(int step_index, const RealMatrix& value) override {
    if (step_index >= 1 && step_index <= 4) {
      steps[static_cast<std::size_t>(step_index)] = value;
    }
  }
  void on_scalar(const std::string& name, double value) override {
    scalars[name] = value;
  }
};

struct Cell {
  TrialAggregate agg;
  long long saturated = 0;
  long long undefined = 0;
  std::string label;
  std::string verdict;
};

// Accumulates quantities into (block, step, quantity) cells and renders
// them in a deterministic order, which keeps output byte-identical across
// runs of the same spec.
class CellTable {
 public:
  explicit CellTable(std::string experiment)
      : experiment_(std::move(experiment)) {}

  void add(int block, int step, const std::string& quantity, double value,
           const std::string& label = "") {
    cell(block, step, quantity, label).agg.add(value);
  }

  void mark_saturated(int block, int step, const std::string& quantity,
                      long long times = 1, const std::string& label = "") {
    cell(block, step, quantity, label).saturated += times;
  }

  void mark_undefined(int block, int step, const std::string& quantity,
                      long long times = 1, const std::string& label = "") {
    cell(block, step, quantity, label).undefined += times;
  }

  void set_verdict(int block, int step, const std::string& quantity,
                   const std::string& verdict) {
    cell(block, step, quantity, "").verdict = verdict;
  }

  // Install an externally accumulated aggregate (used when draws are
  // collected outside the table, as the oracle runner does).
  void set_aggregate(int block, int step, const std::string& quantity,
                     const TrialAggregate& agg, const std::string& label) {
    cell(block, step, quantity, label).agg = agg;
  }

  const TrialAggregate* find(int block, int step,
                             const std::string& quantity) const {
    auto it = cells_.find(std::make_tuple(block, step, quantity));
    return it == cells_.end() ? nullptr : &it->second.agg;
  }

  ResultTable finish() const {
    ResultTable table;
    table.rows.reserve(cells_.size());
    for (const auto& [key, c] : cells_) {
      ResultRow row;
      row.experiment = experiment_;
      row.block = std::get<0>(key);
      row.step = std::get<1>(key);
      row.quantity = std::get<2>(key);
      row.trials = c.agg.count;
      row.mean = c.agg.count > 0 ? c.agg.mean : quiet_nan();
      row.std = c.agg.count > 0 ? c.agg.stddev() : quiet_nan();
      std::string flags = c.label;
      auto append = [&flags](const std::string& part) {
        if (part.empty()) return;
        if (!flags.empty()) flags += ';';
        flags += part;
      };
      append(c.verdict);
      if (c.saturated > 0) append("saturated=" + std::to_string(c.saturated));
      if (c.undefined > 0) append("undefined=" + std::to_string(c.undefined));
      row.flags = flags;
      table.rows.push_back(std::move(row));
    }
    return table;
  }

 private:
  Cell& cell(int block, int step, const std::string& quantity,
             const std::string& label) {
    Cell& c = cells_[std::make_tuple(block, step, quantity)];
    if (c.label.empty() && !label.empty()) c.label = label;
    return c;
  }

  std::string experiment_;
  std::map<std::tuple<int, int, std::string>, Cell> cells_;
};

// Head-averaged diagnostics of one (input, attention heads) pair: delta
// and |lambda2| averaged linearly, mu as the root-mean-square the
// multi-head expectation uses, and the theorem flags evaluated per head
// (every head must satisfy its own inequality).
struct HeadDiagnostics {
  double delta = 0.0;
  double omega = 0.0;
  double lambda2 = 0.0;
  MuPair mu_bar{0.0, 0.0};
  bool omega_defined = true;
  bool mu1_defined = true;
  bool mu2_defined = true;
  bool hyp_all = true;
  bool tech_all = true;
};

HeadDiagnostics head_diagnostics(const RealMatrix& x,
                                 const std::vector<AttentionMatrix>& heads) {
  HeadDiagnostics d;
  // A side of the energy split that sits at rounding level (a de-escalated
  // output's mean part, a rank-one input's complement) makes the ratios
  // that divide by it noise, even though it is rarely exactly zero. Treat
  // those quantities as undefined, same rule as the xi saturation gate.
  const double ts = token_similarity(x);
  const double td = token_diversity(x);
  if (ts < kSaturationGap) {
    d.omega_defined = false;
    d.mu1_defined = false;
  }
  if (td < kSaturationGap) {
    d.mu2_defined = false;
  }
  double mu1_sq = 0.0, mu2_sq = 0.0;
  for (const AttentionMatrix& p : heads) {
    const SpectralReport rep = spectral_report(p);
    d.delta += rep.delta;
    d.lambda2 += rep.lambda2_modulus;
    double om = 0.0;
    try {
      om = omega(x, p);
      d.omega += om;
    } catch (const BoundaryError&) {
      d.omega_defined = false;
    }
    MuPair mu{0.0, 0.0};
    try {
      mu = mu_pair(x, p);
      mu1_sq += mu.mu1 * mu.mu1;
      mu2_sq += mu.mu2 * mu.mu2;
    } catch (const BoundaryError&) {
      d.mu1_defined = false;
      d.mu2_defined = false;
    }
    if (d.omega_defined) {
      d.hyp_all = d.hyp_all && (om + rep.delta < 1.0);
    }
    if (d.omega_defined && d.mu1_defined && d.mu2_defined) {
      const bool mean_ok =
          mu.mu1 * mu.mu1 >= (1.0 - om) * (1.0 - om) - kFlagSlack;
      const bool comp_ok = mu.mu2 * mu.mu2 <= rep.delta * rep.delta + kFlagSlack;
      d.tech_all = d.tech_all && mean_ok && comp_ok;
    }
  }
  const double inv_h = 1.0 / static_cast<double>(heads.size());
  d.delta *= inv_h;
  d.omega *= inv_h;
  d.lambda2 *= inv_h;
  d.mu_bar = MuPair{std::sqrt(mu1_sq * inv_h), std::sqrt(mu2_sq * inv_h)};
  return d;
}

// Records the per-block diagnostics rows shared by every experiment:
// delta/omega/lambda2/mu plus the hypothesis flags. 'suffix' carries sweep
// keys like "@tau=0.5" so swept experiments stay one row per cell.
void record_block_diagnostics(CellTable& table, int block,
                              const HeadDiagnostics& d,
                              const std::string& suffix = "") {
  table.add(block, 0, "delta" + suffix, d.delta);
  table.add(block, 0, "lambda2" + suffix, d.lambda2);
  if (d.omega_defined) {
    table.add(block, 0, "omega" + suffix, d.omega);
    table.add(block, 0, "hyp_holds" + suffix, d.hyp_all ? 1.0 : 0.0);
  } else {
    table.mark_undefined(block, 0, "omega" + suffix);
    table.mark_undefined(block, 0, "hyp_holds" + suffix);
  }
  if (d.mu1_defined) {
    table.add(block, 0, "mu1_bar" + suffix, d.mu_bar.mu1);
  } else {
    table.mark_undefined(block, 0, "mu1_bar" + suffix);
  }
  if (d.mu2_defined) {
    table.add(block, 0, "mu2_bar" + suffix, d.mu_bar.mu2);
  } else {
    table.mark_undefined(block, 0, "mu2_bar" + suffix);
  }
  if (d.omega_defined && d.mu1_defined && d.mu2_defined) {
    table.add(block, 0, "tech_holds" + suffix, d.tech_all ? 1.0 : 0.0);
  } else {
    table.mark_undefined(block, 0, "tech_holds" + suffix);
  }
}

void require_name(const ExperimentSpec& spec, ExperimentName expected) {
  spec.validate();
  if (spec.name != expected) {
    throw ValidationError("experiment: spec.name does not match the runner");
  }
}

}  // namespace

ResultTable run_escalation(const ExperimentSpec& spec) {
  require_name(spec, ExperimentName::escalation_fig2);
  const BlockConfig& cfg = spec.cfg;
  CellTable table(experiment_name_string(spec.name));
  RngStream base(cfg.seed, 2001);

  for (int trial = 0; trial < spec.trials; ++trial) {
    RngStream rng = base.substream(static_cast<std::uint64_t>(trial));
    RealMatrix x = sample_gaussian(rng, cfg.n, cfg.d, 1.0);

    for (int b = 1; b <= spec.depth; ++b) {
      BlockCapture capture;
      RealMatrix y = post_norm_block(x, cfg, rng, &capture);

      record_block_diagnostics(table, b, head_diagnostics(x, capture.heads));
      table.add(b, 0, "t_sim_input", token_similarity(x));

      const RealMatrix* prev = &x;
      for (int s = 1; s <= 4; ++s) {
        const RealMatrix& cur = capture.steps[static_cast<std::size_t>(s)];
        table.add(b, s, "t_sim", token_similarity(cur));
        if (token_diversity(*prev) < kSaturationGap) {
          table.mark_saturated(b, s, "xi1");
          table.mark_saturated(b, s, "xi2");
          table.mark_saturated(b, s, "xi_ratio");
          table.mark_saturated(b, s, "r_rate");
        } else {
          try {
            const XiPair xi = xi_pair(*prev, cur);
            table.add(b, s, "xi1", xi.xi1);
            table.add(b, s, "xi2", xi.xi2);
            table.add(b, s, "xi_ratio", xi.ratio());
          } catch (const BoundaryError&) {
            table.mark_undefined(b, s, "xi1");
            table.mark_undefined(b, s, "xi2");
            table.mark_undefined(b, s, "xi_ratio");
          }
          try {
            table.add(b, s, "r_rate", escalation_rate(*prev, cur));
          } catch (const BoundaryError&) {
            table.mark_undefined(b, s, "r_rate");
          }
        }
        prev = &cur;
      }

      if (token_diversity(x) < kSaturationGap) {
        table.mark_saturated(b, 0, "r_block");
      } else {
        try {
          table.add(b, 0, "r_block", escalation_rate(x, y));
        } catch (const BoundaryError&) {
          table.mark_undefined(b, 0, "r_block");
        }
      }
      x = std::move(y);
    }
  }
  return table.finish();
}

ResultTable run_fixed_input(const ExperimentSpec& spec) {
  require_name(spec, ExperimentName::fixed_input_fig3);
  const BlockConfig& cfg = spec.cfg;
  CellTable table(experiment_name_string(spec.name));
  RngStream reference(cfg.seed, 2002);
  RngStream probe_base(cfg.seed, 2003);

  const std::size_t dh = cfg.head_dim();
  const double w_std = std::sqrt(cfg.weight_variance());
  RealMatrix x = sample_gaussian(reference, cfg.n, cfg.d, 1.0);

  for (int b = 1; b <= spec.depth; ++b) {
    BlockCapture capture;
    RealMatrix next = post_norm_block(x, cfg, reference, &capture);

    const HeadDiagnostics diag = head_diagnostics(x, capture.heads);
    record_block_diagnostics(table, b, diag);
    const double ts = token_similarity(x);
    table.add(b, 0, "t_sim", ts);

    if (diag.omega_defined) {
      const auto [est1, est2] =
          corollary_estimates(diag.omega, diag.delta, diag.lambda2);
      table.add(b, 0, "estimate1", est1);
      table.add(b, 0, "estimate2", est2);
      table.add(b, 0, "rate_estimate1", 1.0 + est1 * ts);
      table.add(b, 0, "rate_estimate2", 1.0 + est2 * ts);
    } else {
      table.mark_undefined(b, 0, "estimate1");
      table.mark_undefined(b, 0, "estimate2");
      table.mark_undefined(b, 0, "rate_estimate1");
      table.mark_undefined(b, 0, "rate_estimate2");
    }

    if (token_diversity(x) < kSaturationGap) {
      table.mark_saturated(b, 0, "xi_ratio_minus_one", spec.trials);
      table.mark_saturated(b, 0, "r_sample", spec.trials);
    } else {
      std::vector<RealMatrix> px;
      px.reserve(capture.heads.size());
      for (const AttentionMatrix& p : capture.heads) {
        px.push_back(matmul(p.matrix(), x));
      }
      RealMatrix w(cfg.d, dh), y(cfg.n, cfg.d);
      for (int j = 0; j < spec.trials; ++j) {
        RngStream draw = probe_base.substream(
            static_cast<std::uint64_t>(b) * 1000003ULL +
            static_cast<std::uint64_t>(j));
        y = x;
        for (std::size_t k = 0; k < px.size(); ++k) {
          sample_gaussian_into(draw, w, w_std);
          RealMatrix s = matmul(px[k], w);
          for (std::size_t i = 0; i < cfg.n; ++i) {
            double* yrow = y.row(i) + k * dh;
            const double* srow = s.row(i);
            for (std::size_t c = 0; c < dh; ++c) {
              yrow[c] += cfg.alpha * srow[c];
            }
          }
        }
        try {
          const XiPair xi = xi_pair(x, y);
          table.add(b, 0, "xi_ratio_minus_one", xi.ratio() - 1.0);
          table.add(b, 0, "r_sample", escalation_rate(x, y));
        } catch (const BoundaryError&) {
          table.mark_undefined(b, 0, "xi_ratio_minus_one");
          table.mark_undefined(b, 0, "r_sample");
        }
      }
    }
    x = std::move(next);
  }
  return table.finish();
}

ResultTable run_prenorm(const ExperimentSpec& spec) {
  require_name(spec, ExperimentName::prenorm_fig4);
  BlockConfig pre_cfg = spec.cfg;
  pre_cfg.variant = BlockVariant::pre_norm;
  BlockConfig post_cfg = spec.cfg;
  post_cfg.variant = BlockVariant::post_norm;
  CellTable table(experiment_name_string(spec.name));
  RngStream base(spec.cfg.seed, 2004);

  for (int trial = 0; trial < spec.trials; ++trial) {
    // Identical substreams: both models see the same input and the same
    // weight draws, so the comparison isolates the architecture.
    RngStream rng_pre = base.substream(static_cast<std::uint64_t>(trial));
    RngStream rng_post = base.substream(static_cast<std::uint64_t>(trial));
    RealMatrix x_pre = sample_gaussian(rng_pre, pre_cfg.n, pre_cfg.d, 1.0);
    RealMatrix x_post = sample_gaussian(rng_post, post_cfg.n, post_cfg.d, 1.0);

    for (int b = 1; b <= spec.depth; ++b) {
      BlockCapture capture;
      RealMatrix z = pre_norm_block(x_pre, pre_cfg, rng_pre, &capture);
      for (const char* name :
           {"norm_x", "norm_xhat", "norm_sa_term", "norm_y", "norm_z"}) {
        auto it = capture.scalars.find(name);
        if (it != capture.scalars.end()) table.add(b, 0, name, it->second);
      }
      table.add(b, 0, "t_sim", token_similarity(z));
      // The attention operates on the normalized input, so the hypothesis
      // quantities are measured against it.
      RealMatrix xhat = layer_norm(x_pre, pre_cfg.ln);
      record_block_diagnostics(table, b, head_diagnostics(xhat, capture.heads));
      x_pre = std::move(z);

      RealMatrix y = post_norm_block(x_post, post_cfg, rng_post);
      table.add(b, 0, "t_sim_post", token_similarity(y));
      x_post = std::move(y);
    }
  }
  return table.finish();
}

ResultTable run_deescalate(const ExperimentSpec& spec) {
  require_name(spec, ExperimentName::deescalate_fig5);
  CellTable table(experiment_name_string(spec.name));
  RngStream base(spec.cfg.seed, 2005);

  for (double tau : spec.tau_list) {
    BlockConfig cfg = spec.cfg;
    cfg.variant = BlockVariant::post_norm_deescalated;
    cfg.tau = tau;
    const std::string suffix = "@tau=" + format_double(tau);

    for (int trial = 0; trial < spec.trials; ++trial) {
      // The same substream across tau values pairs the sweeps: identical
      // inputs and weights, only the de-escalation strength differs.
      RngStream rng = base.substream(static_cast<std::uint64_t>(trial));
      RealMatrix x = sample_gaussian(rng, cfg.n, cfg.d, 1.0);
      for (int b = 1; b <= spec.depth; ++b) {
        BlockCapture capture;
        RealMatrix y = post_norm_block(x, cfg, rng, &capture);
        record_block_diagnostics(table, b,
                                 head_diagnostics(x, capture.heads), suffix);
        try {
          table.add(b, 0, "t_div" + suffix, token_diversity(y));
        } catch (const UndefinedMeasureError&) {
          table.mark_undefined(b, 0, "t_div" + suffix);
        }
        x = std::move(y);
      }
    }
  }
  return table.finish();
}

ResultTable run_eta_concentration(const ExperimentSpec& spec) {
  require_name(spec, ExperimentName::eta_concentration_fig6);
  CellTable table(experiment_name_string(spec.name));
  RngStream base(spec.cfg.seed, 2006);  // fig6 stream
  const std::size_t n = spec.cfg.n;

  for (std::size_t d : spec.d_list) {
    RngStream geo = base.substream(1000 + d);
    // Fixed per (seed, d): the rank-one direction, the perturbation, and
    // the attention projections.
    std::vector<double> v(d);
    for (auto& e : v) e = geo.next_gaussian();
    RealMatrix q = sample_gaussian(geo, n, d, 1.0);
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(d));
    RealMatrix wq = sample_uniform_scaled(geo, d, d, attn_scale);
    RealMatrix wk = sample_uniform_scaled(geo, d, d, attn_scale);
    const double w_std = std::sqrt(1.0 / static_cast<double>(d));
    const int block = static_cast<int>(d);

    for (std::size_t ti = 0; ti < spec.t_grid.size(); ++ti) {
      const double t = spec.t_grid[ti];
      const std::string suffix = "@t=" + format_double(t);
      RealMatrix x(n, d);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          x(i, j) = v[j] + t * q(i, j);
        }
      }
      AttentionMatrix p = softmax_attention(x, wq, wk, d);
      record_block_diagnostics(table, block, head_diagnostics(x, {p}), suffix);
      table.add(block, 0, "t_sim" + suffix, token_similarity(x));

      RealMatrix px = matmul(p.matrix(), x);
      RealMatrix w(d, d);

      // eta needs E[xi1] and E[xi2]. Estimate them from the same batch of
      // draws rather than from the closed form: the two passes share every
      // W, so the draw-level fluctuation of xi1/xi2 cancels out of the mean
      // of eta and what remains is the ratio-of-means vs mean-of-ratios gap
      // itself. Plugging the closed form in instead buries that gap
      // (~1/d) under Monte-Carlo noise (~sqrt(Var(xi)/trials), five times
      // larger at this trial count). The closed form is validated against
      // sampled xi directly by the oracle runner.
      double sum1 = 0.0, sum2 = 0.0;
      long long cnt = 0;
      {
        RngStream draws = geo.substream(40000 + ti);
        for (int s = 0; s < spec.trials; ++s) {
          sample_gaussian_into(draws, w, w_std);
          RealMatrix y = add(x, matmul(px, w));
          try {
            const XiPair xi = xi_pair(x, y);
            sum1 += xi.xi1;
            sum2 += xi.xi2;
            ++cnt;
          } catch (const BoundaryError&) {
            // counted when the replay pass hits the same draw
          }
        }
      }
      const double mean_xi1 = cnt > 0 ? sum1 / static_cast<double>(cnt) : 1.0;
      const double mean_xi2 = cnt > 0 ? sum2 / static_cast<double>(cnt) : 1.0;

      RngStream draws = geo.substream(40000 + ti);
      for (int s = 0; s < spec.trials; ++s) {
        sample_gaussian_into(draws, w, w_std);
        RealMatrix y = add(x, matmul(px, w));
        try {
          table.add(block, 0, "eta" + suffix,
                    eta_sample(x, y, mean_xi1, mean_xi2));
        } catch (const BoundaryError&) {
          table.mark_undefined(block, 0, "eta" + suffix);
        }
      }
    }
  }
  return table.finish();
}

ResultTable run_oracle_expected_xi(const ExperimentSpec& spec) {
  require_name(spec, ExperimentName::oracle_expected_xi);
  CellTable table(experiment_name_string(spec.name));
  RngStream base(spec.cfg.seed, 2007);

  struct CellDef {
    std::size_t n, d, h;
    double alpha;
  };
  // Single-head cells cover the (n, d) x alpha grid; multi-head cells and
  // the alpha = 0 identity check run at n = 16.
  std::vector<CellDef> defs;
  for (std::size_t n : {std::size_t{16}, std::size_t{64}}) {
    for (std::size_t d : {std::size_t{64}, std::size_t{256}}) {
      for (double alpha : {0.5, 1.0}) defs.push_back({n, d, 1, alpha});
    }
  }
  defs.push_back({16, 64, 1, 0.0});
  for (std::size_t d : {std::size_t{64}, std::size_t{256}}) {
    for (std::size_t h : spec.oracle_heads) {
      if (d % h == 0) defs.push_back({16, d, h, 1.0});
    }
  }

  // Geometry per (n, d): input, per-head attention, and the projected
  // inputs the per-draw matmul consumes.
  struct Geometry {
    RealMatrix x;
    std::map<std::size_t, std::vector<AttentionMatrix>> multi;  // by h
    std::map<std::size_t, std::vector<RealMatrix>> px;          // by h
  };
  std::map<std::pair<std::size_t, std::size_t>, Geometry> geoms;
  for (const CellDef& def : defs) {
    auto key = std::make_pair(def.n, def.d);
    Geometry& g = geoms[key];
    if (g.x.size() == 0) {
      RngStream rng = base.substream(100 + def.n * 31 + def.d);
      g.x = sample_gaussian(rng, def.n, def.d, 1.0);
    }
    if (g.px.count(def.h)) continue;
    RngStream rng = base.substream(500 + def.n * 31 + def.d + def.h * 7);
    const std::size_t dh = def.d / def.h;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(def.d));
    std::vector<AttentionMatrix> heads;
    std::vector<RealMatrix> px;
    for (std::size_t k = 0; k < def.h; ++k) {
      RealMatrix hq = sample_uniform_scaled(rng, def.d, dh, attn_scale);
      RealMatrix hk = sample_uniform_scaled(rng, def.d, dh, attn_scale);
      heads.push_back(softmax_attention(g.x, hq, hk, dh));
      px.push_back(matmul(heads.back().matrix(), g.x));
    }
    g.multi[def.h] = std::move(heads);
    g.px[def.h] = std::move(px);
  }

  // One weight draw per d is shared by every cell with that width: head k
  // reads columns [k*dh, (k+1)*dh), which are independent slices.
  std::map<std::size_t, std::vector<std::size_t>> cells_by_d;
  for (std::size_t c = 0; c < defs.size(); ++c) {
    cells_by_d[defs[c].d].push_back(c);
  }

  std::vector<TrialAggregate> agg1(defs.size()), agg2(defs.size());
  for (const auto& [d, cell_ids] : cells_by_d) {
    RngStream wrng = base.substream(10 + d);
    RealMatrix w(d, d);
    const double w_std = std::sqrt(1.0 / static_cast<double>(d));
    for (int j = 0; j < spec.trials; ++j) {
      sample_gaussian_into(wrng, w, w_std);
      for (std::size_t c : cell_ids) {
        const CellDef& def = defs[c];
        const Geometry& g = geoms.at(std::make_pair(def.n, def.d));
        const std::size_t dh = def.d / def.h;
        RealMatrix y = g.x;
        for (std::size_t k = 0; k < def.h; ++k) {
          RealMatrix wk(def.d, dh);
          for (std::size_t r = 0; r < def.d; ++r) {
            const double* src = w.row(r) + k * dh;
            double* dst = wk.row(r);
            for (std::size_t cc = 0; cc < dh; ++cc) dst[cc] = src[cc];
          }
          RealMatrix s = matmul(g.px.at(def.h)[k], wk);
          for (std::size_t i = 0; i < def.n; ++i) {
            double* yrow = y.row(i) + k * dh;
            const double* srow = s.row(i);
            for (std::size_t cc = 0; cc < dh; ++cc) {
              yrow[cc] += def.alpha * srow[cc];
            }
          }
        }
        const XiPair xi = xi_pair(g.x, y);
        agg1[c].add(xi.xi1);
        agg2[c].add(xi.xi2);
      }
    }
  }

  for (std::size_t c = 0; c < defs.size(); ++c) {
    const CellDef& def = defs[c];
    const Geometry& g = geoms.at(std::make_pair(def.n, def.d));
    const int block = static_cast<int>(c) + 1;
    const std::string label = "n=" + std::to_string(def.n) +
                              ";d=" + std::to_string(def.d) +
                              ";h=" + std::to_string(def.h) +
                              ";alpha=" + format_double(def.alpha);

    const MuPair mu = multihead_mu_bar(g.x, g.multi.at(def.h));
    // sigma^2 = 1/d exactly, so d sigma^2 = 1.
    const auto [exi1, exi2] = expected_xi(def.alpha, 1.0, mu.mu1, mu.mu2);
    auto verdict = [&](const TrialAggregate& agg, double closed) {
      return std::abs(agg.mean - closed) <= 3.0 * agg.std_error();
    };
    const bool pass1 = verdict(agg1[c], exi1);
    const bool pass2 = verdict(agg2[c], exi2);

    table.set_aggregate(block, 0, "xi1_sample", agg1[c], label);
    table.set_aggregate(block, 0, "xi2_sample", agg2[c], label);
    table.add(block, 0, "xi1_closed", exi1, label);
    table.add(block, 0, "xi2_closed", exi2, label);
    table.set_verdict(block, 0, "xi1_sample",
                      pass1 ? "pass=yes" : "pass=no");
    table.set_verdict(block, 0, "xi2_sample",
                      pass2 ? "pass=yes" : "pass=no");
    record_block_diagnostics(table, block,
                             head_diagnostics(g.x, g.multi.at(def.h)));
  }
  return table.finish();
}

ResultTable run_experiment(const ExperimentSpec& spec) {
  switch (spec.name) {
    case ExperimentName::escalation_fig2:
      return run_escalation(spec);
    case ExperimentName::fixed_input_fig3:
      return run_fixed_input(spec);
    case ExperimentName::prenorm_fig4:
      return run_prenorm(spec);
    case ExperimentName::deescalate_fig5:
      return run_deescalate(spec);
    case ExperimentName::eta_concentration_fig6:
      return run_eta_concentration(spec);
    case ExperimentName::oracle_expected_xi:
      return run_oracle_expected_xi(spec);
  }
  throw ValidationError("experiment: unknown name");
}

}  // namespace tselab
