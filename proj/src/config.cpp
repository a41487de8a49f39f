#include "abcd/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace abcd {

Json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    const auto offset = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
    throw ConfigError(source + ":" + std::to_string(line) + ": invalid JSON: " + e.what(), line, "");
  }
}

EpisodeConfig parse_episode_config(const std::string& text, const std::string& source) {
  const Json doc = parse_json_text(text, source);
  try {
    // A run manifest embeds the resolved config.
    if (doc.is_object() && doc.contains("tool_version") && doc.contains("episode")) {
      return episode_config_from_json(doc["episode"]);
    }
    return episode_config_from_json(doc);
  } catch (const FieldError& e) {
    throw ConfigError(source + ": " + e.what(), std::nullopt, e.field());
  }
}

EpisodeConfig load_episode_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string(), std::nullopt, "");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_episode_config(buffer.str(), path.string());
}

}  // namespace abcd
