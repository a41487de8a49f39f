#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "abcd/agent.hpp"
#include "abcd/serialization.hpp"

namespace abcd {

/// Invalid configuration. `line` is set for JSON syntax errors, `field` for
/// schema violations.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::optional<int> line, std::string field)
      : std::runtime_error(what), line_(line), field_(std::move(field)) {}
  std::optional<int> line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::optional<int> line_;
  std::string field_;
};

/// Parses a JSON document, mapping syntax errors to ConfigError with a line.
Json parse_json_text(const std::string& text, const std::string& source);

EpisodeConfig load_episode_config(const std::filesystem::path& path);
EpisodeConfig parse_episode_config(const std::string& text, const std::string& source = "<config>");

}  // namespace abcd
