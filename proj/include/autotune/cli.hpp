#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace autotune::cli {

enum ExitCode { kOk = 0, kUsage = 1, kEvaluatorAbort = 2, kCorruptLog = 2, kShapeMismatch = 3 };

/// Entry point of the `autotune` tool; argv[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Resolves `name` as a path, else as a bundled file under the data
/// directory (`spaces/` or `archs/`, with or without ".json").
std::filesystem::path resolve_data_file(const std::string& name, const std::string& subdir);

/// Directory holding the bundled spaces and architectures. AUTOTUNE_DATA_DIR
/// overrides the compiled-in location.
std::filesystem::path data_dir();

/// AUTOTUNE_LOG_DIR, else "autotune_logs".
std::filesystem::path default_log_dir();

struct Quartiles {
  double median = 0.0;
  double best = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
};

/// Linear interpolation between order statistics at p (n - 1).
Quartiles quartiles(std::vector<double> values);

}  // namespace autotune::cli
