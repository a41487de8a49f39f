#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace abcd {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct SimulateOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<int> steps;
  std::optional<int> mc_samples;
  std::optional<double> beta;
  std::optional<int> bo_budget;
};

/// Runs one simulated episode into `out`: manifest.json, trace.jsonl,
/// summary.csv, diagnostics.json, observational.jsonl. The directory is
/// assembled under a temporary name and renamed on success.
int cmd_simulate(const SimulateOptions& options, std::ostream& out, std::ostream& err);

int cmd_enumerate(int d, bool list, std::ostream& out, std::ostream& err);

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> state_dir;
};

/// Blocks until SIGINT or SIGTERM.
int cmd_serve(const ServeOptions& options, std::ostream& err);

}  // namespace abcd
