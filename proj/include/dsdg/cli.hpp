#pragma once

#include <json.hpp>

#include "dsdg/run_config.hpp"

namespace dsdg::cli {

// Process entry points. Exit codes: 0 success, 1 validation or I/O error,
// 2 numeric failure.
int dsdg_main(int argc, const char* const* argv);
int fas_main(int argc, const char* const* argv);

nlohmann::json to_json(const RunConfig& cfg);

}  // namespace dsdg::cli
