#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tselab/errors.hpp"
#include "tselab/experiments.hpp"
#include "tselab/matrix.hpp"
#include "tselab/report.hpp"
#include "tselab/spectral.hpp"
#include "tselab/transformer.hpp"

namespace {

constexpr const char* kArtifactVersion = "0.1.0";

// Set by callbacks that complete the run but report a failed check (the
// oracle subcommand with a cell outside 3 standard errors).
int g_exit_code = 0;

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunOpts {
  tselab::ExperimentSpec spec;
  std::string out;          // empty = derive from experiment name
  std::string out_dir = ".";
  std::string format = "csv";
  std::string config_path;  // consumed by apply_config_layer before parse
};

std::string trim_ws(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return std::string();
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Config layering: built-in defaults < config file < explicit flags.
// CLI11 only processes config files attached to the top-level app, and the
// flags here live on subcommands, so the file is folded in before parsing:
// each key=value line becomes a --key=value token right after the
// subcommand name, skipped when the command line already sets that flag.
// Comma-separated values expand to repeated flags for list options.
std::vector<std::string> apply_config_layer(std::vector<std::string> args) {
  std::string path;
  std::size_t sub_idx = args.size();
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (sub_idx == args.size() && !a.empty() && a[0] != '-') {
      sub_idx = i;
      continue;
    }
    if (a == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (a.rfind("--config=", 0) == 0) {
      path = a.substr(9);
    }
  }
  if (path.empty() || sub_idx == args.size()) return args;

  std::ifstream is(path);
  if (!is.good()) {
    throw tselab::ValidationError("cannot read config file " + path);
  }

  auto already_set = [&args, sub_idx](const std::string& key) {
    const std::string flag = "--" + key;
    for (std::size_t i = sub_idx + 1; i < args.size(); ++i) {
      if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };

  std::vector<std::string> inject;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim_ws(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = path + ":" + std::to_string(lineno);
    if (eq == std::string::npos) {
      throw tselab::ValidationError(where + ": expected key=value");
    }
    const std::string key = trim_ws(line.substr(0, eq));
    const std::string value = trim_ws(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw tselab::ValidationError(where + ": expected key=value");
    }
    if (key == "config") {
      throw tselab::ValidationError(where + ": config files do not nest");
    }
    if (already_set(key)) continue;
    std::stringstream ss(value);
    std::string piece;
    while (std::getline(ss, piece, ',')) {
      inject.push_back("--" + key + "=" + trim_ws(piece));
    }
  }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_idx) + 1,
              inject.begin(), inject.end());
  return args;
}

std::filesystem::path resolve_out(const std::string& name,
                                  const std::string& dir) {
  const std::filesystem::path p(name);
  if (p.is_absolute()) return p;
  return std::filesystem::path(dir) / p;
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& content) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream os(path, std::ios::binary);
  os << content;
  os.flush();
  if (!os.good()) {
    throw std::runtime_error("cannot write " + path.string());
  }
}

const char* variant_name(tselab::BlockVariant v) {
  switch (v) {
    case tselab::BlockVariant::post_norm:
      return "post_norm";
    case tselab::BlockVariant::pre_norm:
      return "pre_norm";
    case tselab::BlockVariant::post_norm_deescalated:
      return "post_norm_deescalated";
  }
  return "unknown";
}

nlohmann::json spec_echo(const tselab::ExperimentSpec& spec) {
  nlohmann::json j;
  j["experiment"] = tselab::experiment_name_string(spec.name);
  j["n"] = spec.cfg.n;
  j["d"] = spec.cfg.d;
  j["heads"] = spec.cfg.h;
  j["alpha"] = spec.cfg.alpha;
  j["ffn_width"] = spec.cfg.ffn_width();
  j["weight_variance"] = spec.cfg.weight_variance();
  j["variant"] = variant_name(spec.cfg.variant);
  j["tau"] = spec.cfg.tau;
  j["ln_epsilon"] = spec.cfg.ln.epsilon;
  j["seed"] = spec.cfg.seed;
  j["depth"] = spec.depth;
  j["trials"] = spec.trials;
  j["tau_list"] = spec.tau_list;
  j["d_list"] = spec.d_list;
  j["t_grid"] = spec.t_grid;
  j["oracle_heads"] = spec.oracle_heads;
  return j;
}

// Runs the experiment, writes the table, then the manifest. The manifest
// goes last on purpose: its presence marks a run that completed.
void execute_run(const RunOpts& opts) {
  opts.spec.validate();
  const std::string name = tselab::experiment_name_string(opts.spec.name);
  const std::string started = utc_timestamp();

  const tselab::ResultTable table = tselab::run_experiment(opts.spec);

  const bool as_json = opts.format == "json";
  const std::string out_name =
      opts.out.empty() ? name + (as_json ? ".json" : ".csv") : opts.out;
  const std::filesystem::path out_path = resolve_out(out_name, opts.out_dir);
  write_text_file(out_path,
                  as_json ? tselab::to_json(table) : tselab::to_csv(table));

  int checks = 0, failed = 0;
  for (const tselab::ResultRow& row : table.rows) {
    if (row.flags.find("pass=") == std::string::npos) continue;
    ++checks;
    if (row.flags.find("pass=no") != std::string::npos) {
      ++failed;
      std::cerr << "check failed: block " << row.block << " " << row.quantity
                << " [" << row.flags << "]\n";
    }
  }

  nlohmann::json manifest;
  manifest["artifact_version"] = kArtifactVersion;
  manifest["experiment"] = name;
  manifest["seed"] = opts.spec.cfg.seed;
  manifest["spec"] = spec_echo(opts.spec);
  manifest["started_utc"] = started;
  manifest["finished_utc"] = utc_timestamp();
  manifest["outputs"] = {out_path.string()};
  const std::filesystem::path manifest_path(out_path.string() +
                                            ".manifest.json");
  write_text_file(manifest_path, manifest.dump(2) + "\n");

  std::cout << name << ": " << table.rows.size() << " rows -> "
            << out_path.string() << "\n";
  if (checks > 0) {
    std::cout << "checks: " << (checks - failed) << "/" << checks
              << " passed\n";
    if (failed > 0) g_exit_code = 1;
  }
}

// Registers the flags shared by every experiment subcommand and binds them
// straight into the spec, so config-file keys and flag names coincide.
void add_run_options(CLI::App* sub, RunOpts& opts, bool single_head_flag) {
  sub->add_option("--n", opts.spec.cfg.n, "tokens (rows)")
      ->capture_default_str();
  sub->add_option("--d", opts.spec.cfg.d, "embedding width")
      ->capture_default_str();
  if (single_head_flag) {
    sub->add_option("--heads", opts.spec.cfg.h, "attention heads")
        ->capture_default_str();
  }
  sub->add_option("--alpha", opts.spec.cfg.alpha, "residual strength")
      ->capture_default_str();
  sub->add_option("--depth", opts.spec.depth, "blocks to stack")
      ->capture_default_str();
  sub->add_option("--trials", opts.spec.trials, "independent trials")
      ->capture_default_str();
  sub->add_option("--seed", opts.spec.cfg.seed, "random seed")
      ->capture_default_str();
  sub->add_option("--out", opts.out,
                  "output file (default <experiment>.<format>)");
  sub->add_option("--out-dir", opts.out_dir, "output directory")
      ->envname("TSELAB_OUT_DIR")
      ->capture_default_str();
  sub->add_option("--format", opts.format, "output format")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();
  sub->add_option("--config", opts.config_path,
                  "config file with key=value lines (flags win)");
  sub->callback([&opts]() { execute_run(opts); });
}

struct SpectralOpts {
  std::string input;
  bool random = false;
  std::size_t n = 64;
  std::uint64_t seed = 0;
};

tselab::RealMatrix read_csv_matrix(const std::string& path) {
  std::ifstream is(path);
  if (!is.good()) {
    throw tselab::ValidationError("cannot read " + path);
  }
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        row.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw tselab::ValidationError(path + ": cannot parse '" + tok +
                                      "' as a number");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw tselab::ValidationError(
          path + ": row " + std::to_string(rows.size()) + " has " +
          std::to_string(row.size()) + " columns, expected " +
          std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw tselab::ValidationError(path + ": no rows");
  }
  tselab::RealMatrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

// Reports the row farthest from summing to one (or a negative entry), so a
// rejected matrix tells the user where to look.
void check_stochastic(const tselab::RealMatrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw tselab::ShapeError("spectral input must be square and nonempty, got " +
                             std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()));
  }
  double worst = 0.0;
  std::size_t worst_row = 0;
  double worst_sum = 1.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (!(m(i, j) >= 0.0)) {
        throw tselab::ValidationError(
            "not row-stochastic: entry (" + std::to_string(i) + "," +
            std::to_string(j) + ") = " + tselab::format_double(m(i, j)) +
            " is negative");
      }
      sum += m(i, j);
    }
    if (std::abs(sum - 1.0) > worst) {
      worst = std::abs(sum - 1.0);
      worst_row = i;
      worst_sum = sum;
    }
  }
  if (worst > tselab::AttentionMatrix::kRowSumTolerance) {
    throw tselab::ValidationError(
        "not row-stochastic: worst row " + std::to_string(worst_row) +
        " sums to " + tselab::format_double(worst_sum) + " (|sum - 1| = " +
        tselab::format_double(worst) + ")");
  }
}

void execute_spectral(const SpectralOpts& opts) {
  if (opts.random != opts.input.empty()) {
    throw tselab::ValidationError(
        "spectral: pass exactly one of an input CSV path or --random");
  }
  tselab::RealMatrix m;
  if (opts.random) {
    if (opts.n < 1) throw tselab::ValidationError("spectral: n must be >= 1");
    tselab::RngStream rng(opts.seed, 3001);
    const tselab::RealMatrix x =
        tselab::sample_gaussian(rng, opts.n, opts.n, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(opts.n));
    const tselab::RealMatrix wq =
        tselab::sample_uniform_scaled(rng, opts.n, opts.n, scale);
    const tselab::RealMatrix wk =
        tselab::sample_uniform_scaled(rng, opts.n, opts.n, scale);
    m = tselab::softmax_attention(x, wq, wk, opts.n).matrix();
  } else {
    m = read_csv_matrix(opts.input);
  }
  check_stochastic(m);
  const tselab::AttentionMatrix p(std::move(m));
  const tselab::SpectralReport rep = tselab::spectral_report(p);
  std::cout << "n: " << p.n() << "\n"
            << "delta: " << tselab::format_double(rep.delta) << "\n"
            << "lambda2_modulus: "
            << tselab::format_double(rep.lambda2_modulus) << "\n"
            << "spectral_gap_sym: "
            << tselab::format_double(rep.spectral_gap_sym) << "\n"
            << "rows: stochastic within "
            << tselab::format_double(tselab::AttentionMatrix::kRowSumTolerance)
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"token similarity escalation lab"};
  app.require_subcommand(1);

  using tselab::ExperimentName;

  RunOpts escalate;
  escalate.spec.name = ExperimentName::escalation_fig2;
  add_run_options(
      app.add_subcommand("escalate",
                         "similarity escalation across stacked blocks"),
      escalate, true);

  RunOpts fixed;
  fixed.spec.name = ExperimentName::fixed_input_fig3;
  fixed.spec.trials = 1000;
  add_run_options(
      app.add_subcommand("fixed-input",
                         "rate vs estimates with only step-1 weights random"),
      fixed, true);

  RunOpts prenorm;
  prenorm.spec.name = ExperimentName::prenorm_fig4;
  add_run_options(
      app.add_subcommand("prenorm",
                         "pre-norm norm growth vs post-norm similarity"),
      prenorm, true);

  RunOpts deescalate;
  deescalate.spec.name = ExperimentName::deescalate_fig5;
  deescalate.spec.trials = 20;
  CLI::App* de_sub = app.add_subcommand(
      "deescalate", "diversity under the de-escalation operator");
  de_sub
      ->add_option("--tau", deescalate.spec.tau_list,
                   "de-escalation strengths (repeatable)")
      ->capture_default_str();
  add_run_options(de_sub, deescalate, true);

  RunOpts eta;
  eta.spec.name = ExperimentName::eta_concentration_fig6;
  eta.spec.cfg.n = 100;
  CLI::App* eta_sub = app.add_subcommand(
      "eta", "concentration of the xi-ratio deviation as width grows");
  eta_sub
      ->add_option("--d-list", eta.spec.d_list,
                   "embedding widths (repeatable)")
      ->capture_default_str();
  eta_sub
      ->add_option("--t-grid", eta.spec.t_grid,
                   "perturbation sizes in (0,1] (repeatable)")
      ->capture_default_str();
  add_run_options(eta_sub, eta, false);

  RunOpts oracle;
  oracle.spec.name = ExperimentName::oracle_expected_xi;
  oracle.spec.trials = 10000;
  CLI::App* oracle_sub = app.add_subcommand(
      "oracle", "Monte-Carlo xi means against the closed forms");
  oracle_sub
      ->add_option("--heads", oracle.spec.oracle_heads,
                   "multi-head cell sizes (repeatable)")
      ->capture_default_str();
  add_run_options(oracle_sub, oracle, false);

  SpectralOpts spectral;
  CLI::App* spectral_sub = app.add_subcommand(
      "spectral", "delta, |lambda2| and gap of one attention matrix");
  spectral_sub->add_option("input", spectral.input,
                           "CSV file with an n x n row-stochastic matrix");
  spectral_sub->add_flag("--random", spectral.random,
                         "analyze a random softmax attention matrix instead");
  spectral_sub->add_option("--n", spectral.n, "size for --random")
      ->capture_default_str();
  spectral_sub->add_option("--seed", spectral.seed, "seed for --random")
      ->capture_default_str();
  spectral_sub->callback([&spectral]() { execute_spectral(spectral); });

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = apply_config_layer(std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 vector parse order
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const tselab::ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const tselab::OverflowError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return g_exit_code;
}
