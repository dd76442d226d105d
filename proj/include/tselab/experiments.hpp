#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tselab/transformer.hpp"

namespace tselab {

// Streaming mean/variance accumulator (Welford update, Chan merge). Merging
// is associative and order-independent up to rounding, which unit tests pin
// at 1e-12.
struct TrialAggregate {
  long long count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double value);
  void merge(const TrialAggregate& other);
  double variance() const;  // sample variance, 0 until count >= 2
  double stddev() const;
  double std_error() const;
};

enum class ExperimentName {
  escalation_fig2,
  fixed_input_fig3,
  prenorm_fig4,
  deescalate_fig5,
  eta_concentration_fig6,
  oracle_expected_xi,
};

// Full description of one experiment run. 'cfg' carries the block
// dimensions, alpha, seed, and variant; the remaining fields are
// experiment-specific knobs with the defaults the studies use.
struct ExperimentSpec {
  ExperimentName name = ExperimentName::escalation_fig2;
  BlockConfig cfg;
  int depth = 20;
  int trials = 50;
  // deescalate_fig5: the de-escalation strengths to sweep.
  std::vector<double> tau_list = {0.1, 0.5, 1.0};
  // eta_concentration_fig6: widths and perturbation sizes.
  std::vector<std::size_t> d_list = {10, 20, 40};
  std::vector<double> t_grid = {0.1, 0.2, 0.3, 0.4, 0.5,
                                0.6, 0.7, 0.8, 0.9, 1.0};
  // oracle_expected_xi: head counts for the multi-head cells.
  std::vector<std::size_t> oracle_heads = {2, 8};

  void validate() const;
};

// One aggregated output cell. block/step are 0 when the quantity is not
// tied to that axis. 'flags' is a semicolon-joined list of key=value
// annotations: cell descriptors (tau=0.5, n=16), pass/fail verdicts, and
// skip counters (saturated=K, undefined=K) when trials could not
// contribute.
struct ResultRow {
  std::string experiment;
  int block = 0;
  int step = 0;
  std::string quantity;
  double mean = 0.0;
  double std = 0.0;
  long long trials = 0;
  std::string flags;
};

struct ResultTable {
  std::vector<ResultRow> rows;
};

// Depth-L post-norm composition on fresh gaussian inputs, averaged over
// trials: per (block, step) t_sim / xi / rate, per block head-averaged
// delta and omega plus the bound-hypothesis flags.
ResultTable run_escalation(const ExperimentSpec& spec);

// One fixed reference trajectory; per block, 'trials' fresh draws of the
// step-1 value weights probe the xi ratio and realized rate against the
// two closed-form rate estimates.
ResultTable run_fixed_input(const ExperimentSpec& spec);

// Pre-norm depth composition with the paired post-norm model on identical
// inputs and weight draws: per-block Frobenius norms and both t_sim curves.
ResultTable run_prenorm(const ExperimentSpec& spec);

// De-escalated post-norm composition for each tau in tau_list: per-block
// mean t_div of the block output.
ResultTable run_deescalate(const ExperimentSpec& spec);

// Concentration of the replacement error eta at 0: X = e v^T + t Q for a
// grid of perturbation sizes t and widths d, 'trials' weight samples each.
ResultTable run_eta_concentration(const ExperimentSpec& spec);

// Monte-Carlo validation of the expected-xi closed forms on a fixed
// (n, d, alpha) grid plus multi-head cells; each cell is marked pass when
// the sample mean lands within 3 standard errors of the formula.
ResultTable run_oracle_expected_xi(const ExperimentSpec& spec);

// Dispatch on spec.name.
ResultTable run_experiment(const ExperimentSpec& spec);

// Canonical name used in output rows and file names.
std::string experiment_name_string(ExperimentName name);

}  // namespace tselab
