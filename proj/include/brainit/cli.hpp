#pragma once

#include <string>

#include "brainit/io.hpp"

namespace brainit::cli {

/// Full-scale defaults for every run option.
io::json default_config();

/// Desk-scale profile applied under --toy for keys the user did not set.
io::json toy_overrides();

/// Strict schema: unknown keys and type mismatches are rejected, invariants
/// enforced, defaults filled. Returns the normalized config.
io::json validate_config(const io::json& user, bool toy = false);

/// Reads a config file; an empty or missing-body file yields all defaults.
io::json read_config_file(const std::string& path);

/// Entry point behind the `brainit` binary. Exit codes: 0 ok, 1 runtime
/// failure, 2 usage error.
int run_cli(int argc, const char* const* argv);

}  // namespace brainit::cli
