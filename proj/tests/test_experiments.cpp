#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "tselab/errors.hpp"
#include "tselab/experiments.hpp"
#include "tselab/matrix.hpp"
#include "tselab/report.hpp"

using namespace tselab;

namespace {

const ResultRow* find_row(const ResultTable& table, int block, int step,
                          const std::string& quantity) {
  for (const ResultRow& row : table.rows) {
    if (row.block == block && row.step == step && row.quantity == quantity) {
      return &row;
    }
  }
  return nullptr;
}

int count_rows(const ResultTable& table, const std::string& quantity) {
  int n = 0;
  for (const ResultRow& row : table.rows) {
    if (row.quantity == quantity) ++n;
  }
  return n;
}

ExperimentSpec small_spec(ExperimentName name) {
  ExperimentSpec spec;
  spec.name = name;
  spec.cfg.n = 8;
  spec.cfg.d = 32;
  spec.cfg.h = 2;
  spec.cfg.seed = 99;
  spec.depth = 3;
  spec.trials = 4;
  return spec;
}

}  // namespace

TEST_CASE("aggregate matches two-pass mean and variance") {
  RngStream rng(7, 1);
  std::vector<double> xs(257);
  for (auto& x : xs) x = 3.0 + 2.0 * rng.next_gaussian();

  TrialAggregate agg;
  for (double x : xs) agg.add(x);

  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double var = ss / static_cast<double>(xs.size() - 1);

  CHECK(agg.count == 257);
  CHECK(agg.mean == doctest::Approx(mean).epsilon(1e-13));
  CHECK(agg.variance() == doctest::Approx(var).epsilon(1e-12));
  CHECK(agg.stddev() == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
  CHECK(agg.std_error() ==
        doctest::Approx(std::sqrt(var / 257.0)).epsilon(1e-12));
}

TEST_CASE("aggregate edge counts") {
  TrialAggregate empty;
  CHECK(empty.count == 0);
  CHECK(empty.variance() == 0.0);
  CHECK(empty.std_error() == 0.0);

  TrialAggregate one;
  one.add(5.0);
  CHECK(one.count == 1);
  CHECK(one.mean == 5.0);
  CHECK(one.variance() == 0.0);
  CHECK(one.stddev() == 0.0);
}

TEST_CASE("merging shuffled chunks reproduces the sequential aggregate") {
  RngStream rng(11, 2);
  std::vector<double> xs(1000);
  for (auto& x : xs) x = rng.next_gaussian() * 1e3 + 40.0;

  TrialAggregate sequential;
  for (double x : xs) sequential.add(x);

  // Split into uneven chunks, merge in a scrambled order.
  const std::vector<std::size_t> cuts = {0, 13, 100, 101, 350, 600, 999, 1000};
  std::vector<TrialAggregate> chunks;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    TrialAggregate part;
    for (std::size_t i = cuts[c]; i < cuts[c + 1]; ++i) part.add(xs[i]);
    chunks.push_back(part);
  }
  const std::vector<std::size_t> order = {4, 0, 6, 2, 5, 1, 3};
  TrialAggregate merged;
  for (std::size_t idx : order) merged.merge(chunks[idx]);

  CHECK(merged.count == sequential.count);
  CHECK(merged.mean == doctest::Approx(sequential.mean).epsilon(1e-12));
  CHECK(merged.variance() ==
        doctest::Approx(sequential.variance()).epsilon(1e-12));

  TrialAggregate into_empty;
  into_empty.merge(sequential);
  CHECK(into_empty.count == sequential.count);
  CHECK(into_empty.mean == sequential.mean);

  TrialAggregate from_empty = sequential;
  from_empty.merge(TrialAggregate{});
  CHECK(from_empty.count == sequential.count);
  CHECK(from_empty.mean == sequential.mean);
}

TEST_CASE("spec validation rejects bad sweeps") {
  ExperimentSpec spec;
  spec.name = ExperimentName::escalation_fig2;

  auto bad = spec;
  bad.trials = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = spec;
  bad.depth = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = spec;
  bad.tau_list = {0.5, 1.5};
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = spec;
  bad.tau_list.clear();
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = spec;
  bad.d_list = {1};
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = spec;
  bad.t_grid = {0.0};
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = spec;
  bad.oracle_heads = {0};
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = spec;
  bad.cfg.h = 5;  // does not divide d = 512
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  spec.validate();  // defaults are fine
}

TEST_CASE("runner rejects a spec built for a different experiment") {
  ExperimentSpec spec = small_spec(ExperimentName::prenorm_fig4);
  CHECK_THROWS_AS(run_escalation(spec), ValidationError);
}

TEST_CASE("experiment names are distinct and stable") {
  const std::vector<ExperimentName> names = {
      ExperimentName::escalation_fig2,      ExperimentName::fixed_input_fig3,
      ExperimentName::prenorm_fig4,         ExperimentName::deescalate_fig5,
      ExperimentName::eta_concentration_fig6,
      ExperimentName::oracle_expected_xi};
  std::vector<std::string> strings;
  for (auto n : names) strings.push_back(experiment_name_string(n));
  std::sort(strings.begin(), strings.end());
  CHECK(std::unique(strings.begin(), strings.end()) == strings.end());
  CHECK(experiment_name_string(ExperimentName::escalation_fig2) ==
        "escalation_fig2");
}

TEST_CASE("escalation run produces the full row grid and rising similarity") {
  ExperimentSpec spec = small_spec(ExperimentName::escalation_fig2);
  const ResultTable table = run_escalation(spec);

  for (int b = 1; b <= spec.depth; ++b) {
    for (int s = 1; s <= 4; ++s) {
      const ResultRow* ts = find_row(table, b, s, "t_sim");
      REQUIRE(ts != nullptr);
      CHECK(ts->trials == spec.trials);
      CHECK(ts->mean >= 0.0);
      CHECK(ts->mean <= 1.0);
      const ResultRow* ratio = find_row(table, b, s, "xi_ratio");
      REQUIRE(ratio != nullptr);
      CHECK(ratio->trials == spec.trials);
    }
    for (const char* q : {"t_sim_input", "r_block", "delta", "omega",
                          "lambda2", "mu1_bar", "mu2_bar", "hyp_holds",
                          "tech_holds"}) {
      const ResultRow* row = find_row(table, b, 0, q);
      REQUIRE_MESSAGE(row != nullptr, q);
      CHECK(row->trials == spec.trials);
    }
  }

  // Fresh random input becomes more aligned block over block.
  const double first = find_row(table, 1, 0, "t_sim_input")->mean;
  const double last = find_row(table, spec.depth, 0, "t_sim_input")->mean;
  CHECK(last > first);
  CHECK(find_row(table, 1, 0, "r_block")->mean > 1.0);

  // Flags are shares of trials, so they live in [0,1].
  const ResultRow* hyp = find_row(table, 1, 0, "hyp_holds");
  CHECK(hyp->mean >= 0.0);
  CHECK(hyp->mean <= 1.0);
}

TEST_CASE("escalation run is reproducible byte for byte") {
  ExperimentSpec spec = small_spec(ExperimentName::escalation_fig2);
  spec.depth = 2;
  spec.trials = 2;
  const std::string a = to_csv(run_escalation(spec));
  const std::string b = to_csv(run_escalation(spec));
  CHECK(a == b);
  CHECK(!a.empty());

  ExperimentSpec other = spec;
  other.cfg.seed = spec.cfg.seed + 1;
  CHECK(to_csv(run_escalation(other)) != a);
}

TEST_CASE("fixed-input run separates sampled and deterministic rows") {
  ExperimentSpec spec = small_spec(ExperimentName::fixed_input_fig3);
  spec.trials = 5;
  const ResultTable table = run_fixed_input(spec);

  for (int b = 1; b <= spec.depth; ++b) {
    const ResultRow* sample = find_row(table, b, 0, "r_sample");
    REQUIRE(sample != nullptr);
    CHECK(sample->trials == spec.trials);
    CHECK(sample->mean > 0.0);

    const ResultRow* ratio = find_row(table, b, 0, "xi_ratio_minus_one");
    REQUIRE(ratio != nullptr);
    CHECK(ratio->trials == spec.trials);

    for (const char* q : {"t_sim", "estimate1", "estimate2", "rate_estimate1",
                          "rate_estimate2"}) {
      const ResultRow* row = find_row(table, b, 0, q);
      REQUIRE_MESSAGE(row != nullptr, q);
      CHECK(row->trials == 1);
      CHECK(row->std == 0.0);
    }

    // The estimates are rates of the form 1 + estimate * t_sim.
    const double ts = find_row(table, b, 0, "t_sim")->mean;
    const double e1 = find_row(table, b, 0, "estimate1")->mean;
    CHECK(find_row(table, b, 0, "rate_estimate1")->mean ==
          doctest::Approx(1.0 + e1 * ts).epsilon(1e-15));
  }
}

TEST_CASE("pre-norm run reports norms and both similarity trajectories") {
  ExperimentSpec spec = small_spec(ExperimentName::prenorm_fig4);
  spec.cfg.n = 16;
  spec.cfg.d = 64;
  spec.trials = 3;
  const ResultTable table = run_prenorm(spec);

  std::vector<double> norm_x;
  for (int b = 1; b <= spec.depth; ++b) {
    for (const char* q : {"norm_x", "norm_xhat", "norm_sa_term", "norm_y",
                          "norm_z", "t_sim", "t_sim_post"}) {
      const ResultRow* row = find_row(table, b, 0, q);
      REQUIRE_MESSAGE(row != nullptr, q);
      CHECK(row->trials == spec.trials);
    }
    norm_x.push_back(find_row(table, b, 0, "norm_x")->mean);
    // Layer norm pins every row to norm sqrt(d), so the whole normalized
    // matrix has Frobenius norm sqrt(n d) up to the epsilon floor.
    const double expected =
        std::sqrt(static_cast<double>(spec.cfg.n * spec.cfg.d));
    CHECK(find_row(table, b, 0, "norm_xhat")->mean ==
          doctest::Approx(expected).epsilon(0.02));
  }
  // Residual streams only add energy.
  for (std::size_t b = 1; b < norm_x.size(); ++b) {
    CHECK(norm_x[b] > norm_x[b - 1]);
  }
}

TEST_CASE("deescalation run sweeps tau and full centering caps diversity") {
  ExperimentSpec spec = small_spec(ExperimentName::deescalate_fig5);
  spec.tau_list = {0.0, 1.0};
  const ResultTable table = run_deescalate(spec);

  for (int b = 1; b <= spec.depth; ++b) {
    const ResultRow* full = find_row(table, b, 0, "t_div@tau=1");
    REQUIRE(full != nullptr);
    CHECK(full->trials == spec.trials);
    CHECK(std::abs(full->mean - 1.0) <= 1e-12);
    CHECK(full->std <= 1e-12);

    const ResultRow* off = find_row(table, b, 0, "t_div@tau=0");
    REQUIRE(off != nullptr);
    CHECK(off->mean < 1.0);
    CHECK(off->mean > 0.0);
  }

  // Past the first block the tau = 1 model runs on input whose mean part
  // is rounding residue. Ratios dividing by it (omega, mu1) have no
  // defined value and the cells say so instead of carrying noise; the
  // complement-side quantities stay meaningful.
  const ResultRow* om = find_row(table, 2, 0, "omega@tau=1");
  REQUIRE(om != nullptr);
  CHECK(om->trials == 0);
  CHECK(std::isnan(om->mean));
  CHECK(om->flags.find("undefined=") != std::string::npos);
  CHECK(find_row(table, 2, 0, "mu1_bar@tau=1")->trials == 0);
  CHECK(find_row(table, 2, 0, "tech_holds@tau=1")->trials == 0);
  const ResultRow* mu2 = find_row(table, 2, 0, "mu2_bar@tau=1");
  REQUIRE(mu2 != nullptr);
  CHECK(mu2->trials == spec.trials);
  CHECK(mu2->mean > 0.0);
  CHECK(find_row(table, 2, 0, "delta@tau=1")->trials == spec.trials);

  // The tau = 0 de-escalated block is bit-equal to the plain post-norm
  // block, so its diversity matches the escalation experiment's gate.
  const ResultRow* om0 = find_row(table, 2, 0, "omega@tau=0");
  REQUIRE(om0 != nullptr);
  CHECK(om0->trials == spec.trials);
}

TEST_CASE("eta concentration run grids over width and perturbation") {
  ExperimentSpec spec;
  spec.name = ExperimentName::eta_concentration_fig6;
  spec.cfg.n = 32;
  spec.cfg.seed = 5;
  spec.d_list = {8, 16};
  spec.t_grid = {0.1, 0.5, 1.0};
  spec.trials = 20;
  const ResultTable table = run_eta_concentration(spec);

  for (std::size_t d : spec.d_list) {
    const int block = static_cast<int>(d);
    for (double t : spec.t_grid) {
      const std::string suffix = "@t=" + format_double(t);
      const ResultRow* eta = find_row(table, block, 0, "eta" + suffix);
      REQUIRE(eta != nullptr);
      CHECK(eta->trials == spec.trials);
      CHECK(std::isfinite(eta->mean));

      const ResultRow* ts = find_row(table, block, 0, "t_sim" + suffix);
      REQUIRE(ts != nullptr);
      CHECK(ts->trials == 1);
    }
    // Stronger perturbation means lower similarity.
    const double near = find_row(table, block, 0, "t_sim@t=0.1")->mean;
    const double far = find_row(table, block, 0, "t_sim@t=1")->mean;
    CHECK(near > far + 0.2);
    CHECK(near > 0.9);
  }
}

TEST_CASE("oracle run checks sampled xi against the closed form") {
  ExperimentSpec spec;
  spec.name = ExperimentName::oracle_expected_xi;
  spec.cfg.seed = 12;
  spec.trials = 500;
  spec.oracle_heads = {2};
  const ResultTable table = run_oracle_expected_xi(spec);

  const int cells = count_rows(table, "xi1_sample");
  CHECK(cells == 11);  // 8 single-head, one alpha = 0, two multi-head
  CHECK(count_rows(table, "xi1_closed") == cells);

  int alpha_zero_block = 0;
  for (const ResultRow& row : table.rows) {
    if (row.quantity == "xi1_sample" || row.quantity == "xi2_sample") {
      CHECK_MESSAGE(row.flags.find("pass=yes") != std::string::npos,
                    row.flags);
      CHECK(row.trials == spec.trials);
      CHECK(row.flags.find("n=") != std::string::npos);
      CHECK(row.flags.find("alpha=") != std::string::npos);
    }
    if (row.quantity == "xi1_sample" &&
        row.flags.find("alpha=0;") != std::string::npos) {
      alpha_zero_block = row.block;
    }
  }

  // alpha = 0 leaves the input untouched, so both ratios are exactly one
  // on every draw.
  REQUIRE(alpha_zero_block != 0);
  const ResultRow* xi1 = find_row(table, alpha_zero_block, 0, "xi1_sample");
  const ResultRow* xi2 = find_row(table, alpha_zero_block, 0, "xi2_sample");
  CHECK(xi1->mean == 1.0);
  CHECK(xi1->std == 0.0);
  CHECK(xi2->mean == 1.0);
  CHECK(find_row(table, alpha_zero_block, 0, "xi1_closed")->mean == 1.0);

  // Closed-form cells for alpha = 1 single head: E[xi_i] = 1 + mu_i^2.
  for (const ResultRow& row : table.rows) {
    if (row.quantity != "xi1_closed") continue;
    CHECK(row.mean >= 1.0);
    const ResultRow* sample = find_row(table, row.block, 0, "xi1_sample");
    REQUIRE(sample != nullptr);
    CHECK(sample->mean == doctest::Approx(row.mean).epsilon(0.1));
  }
}

TEST_CASE("dispatch routes by name") {
  ExperimentSpec spec = small_spec(ExperimentName::escalation_fig2);
  spec.depth = 2;
  spec.trials = 2;
  const std::string direct = to_csv(run_escalation(spec));
  const std::string routed = to_csv(run_experiment(spec));
  CHECK(direct == routed);
}

TEST_CASE("csv output pins the header and formats specials") {
  ResultTable table;
  ResultRow row;
  row.experiment = "demo";
  row.block = 3;
  row.step = 1;
  row.quantity = "t_sim";
  row.mean = 0.1;
  row.std = std::numeric_limits<double>::quiet_NaN();
  row.trials = 0;
  row.flags = "a=1,b=2\nc";
  table.rows.push_back(row);

  const std::string csv = to_csv(table);
  const std::string header =
      "experiment,block,step,quantity,mean,std,trials,flags\n";
  CHECK(csv.substr(0, header.size()) == header);
  CHECK(csv.find("demo,3,1,t_sim,0.1,nan,0,") != std::string::npos);
  // Flag separators never collide with the CSV delimiter.
  CHECK(csv.find("a=1;b=2;c") != std::string::npos);
}

TEST_CASE("format_double round trips and names specials") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(-2.5e-17) == "-2.5e-17");
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_double(-std::numeric_limits<double>::infinity()) == "-inf");

  RngStream rng(3, 9);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.next_gaussian() * std::pow(10.0, i % 40 - 20);
    CHECK(std::stod(format_double(x)) == x);
  }
}

TEST_CASE("json output parses back with full precision") {
  ExperimentSpec spec = small_spec(ExperimentName::escalation_fig2);
  spec.depth = 2;
  spec.trials = 2;
  const ResultTable table = run_escalation(spec);
  const std::string text = to_json(table);

  const nlohmann::json parsed = nlohmann::json::parse(text);
  REQUIRE(parsed.is_array());
  REQUIRE(parsed.size() == table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& obj = parsed[i];
    CHECK(obj.at("experiment").get<std::string>() == table.rows[i].experiment);
    CHECK(obj.at("block").get<int>() == table.rows[i].block);
    CHECK(obj.at("quantity").get<std::string>() == table.rows[i].quantity);
    CHECK(obj.at("mean").get<double>() == table.rows[i].mean);
    CHECK(obj.at("trials").get<long long>() == table.rows[i].trials);
  }
}
