#include "tselab/report.hpp"

#include <charconv>
#include <cmath>

#include "json.hpp"

namespace tselab {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

namespace {

// Flags are key=value pairs joined by ';'. A comma would break the CSV
// row, so scrub any that sneak in through user-supplied labels.
std::string sanitize_flags(const std::string& flags) {
  std::string out = flags;
  for (char& c : out) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return out;
}

}  // namespace

std::string to_csv(const ResultTable& table) {
  std::string out = "experiment,block,step,quantity,mean,std,trials,flags\n";
  for (const ResultRow& row : table.rows) {
    out += row.experiment;
    out += ',';
    out += std::to_string(row.block);
    out += ',';
    out += std::to_string(row.step);
    out += ',';
    out += row.quantity;
    out += ',';
    out += format_double(row.mean);
    out += ',';
    out += format_double(row.std);
    out += ',';
    out += std::to_string(row.trials);
    out += ',';
    out += sanitize_flags(row.flags);
    out += '\n';
  }
  return out;
}

std::string to_json(const ResultTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const ResultRow& row : table.rows) {
    nlohmann::json r;
    r["experiment"] = row.experiment;
    r["block"] = row.block;
    r["step"] = row.step;
    r["quantity"] = row.quantity;
    r["mean"] = row.mean;
    r["std"] = row.std;
    r["trials"] = row.trials;
    r["flags"] = sanitize_flags(row.flags);
    rows.push_back(std::move(r));
  }
  return rows.dump(2) + "\n";
}

}  // namespace tselab
