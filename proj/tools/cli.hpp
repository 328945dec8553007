#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>

#include "capstraffic/model.hpp"
#include "capstraffic/task.hpp"

namespace capstraffic::cli {

// Resolved settings of one command. Precedence: flags, then the --config
// file, then these defaults.
struct RunConfig {
  std::string data;
  std::string output;
  std::string checkpoint;
  std::string model = "cnn";
  std::string width = "full";  // full | reduced (CapsNet only)
  std::string task = "task1";
  std::optional<std::size_t> horizon, history, segments;  // override the named task
  double lr0 = 0.0005;
  double decay = 0.9999;
  std::size_t epochs = 50;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  std::string split;  // ISO timestamp; empty = midnight nearest 75% of the days
  double max_missing_day = 0.5;
  std::size_t sensors = 20;
  std::size_t days = 30;
  double missing_rate = 0.0;
  double noise = 2.0;
  bool baseline_only = false;
  std::optional<std::size_t> end_row;

  TaskSpec resolved_task() const;
  ModelSpec resolved_model() const;
};

// Plain key=value lines; '#' starts a comment. Throws ConfigError.
std::map<std::string, std::string> read_config_file(const std::string& path);

// Entry point shared by the executable and the tests. Returns the process
// exit code: 0 success, 1 runtime/data error, 2 usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace capstraffic::cli
