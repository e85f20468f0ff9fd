// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line entry points: prepare, train, evaluate, report.
//
// Exit codes: 0 success, 2 input error, 3 state/compatibility error,
// 4 numerical failure.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>

namespace sslcap {

/// Environment variable naming the default parent of run directories.
inline constexpr const char* kOutputDirEnv = "SSLCAP_OUTPUT_DIR";

/// `args` excludes the program name.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

/// $SSLCAP_OUTPUT_DIR (or ./runs) / "<command>-YYYYmmdd-HHMMSS".
std::filesystem::path default_run_dir(const std::string& command);

}  // namespace sslcap
