#pragma once

#include <string>

#include "tselab/experiments.hpp"

namespace tselab {

// Shortest decimal representation that round-trips the exact double
// (std::to_chars general form). Non-finite values print as "nan", "inf",
// "-inf".
std::string format_double(double value);

// Render a table as CSV with the pinned header
// "experiment,block,step,quantity,mean,std,trials,flags".
std::string to_csv(const ResultTable& table);

// Render a table as a JSON array of row objects with the same field names.
// Non-finite numbers serialize as null.
std::string to_json(const ResultTable& table);

}  // namespace tselab
