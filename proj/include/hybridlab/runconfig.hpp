#pragma once

#include <map>
#include <optional>
#include <string>

#include "hybridlab/config.hpp"
#include "hybridlab/harness.hpp"
#include "json.hpp"

namespace hybridlab {

/// Flat "section.key" -> value settings from an INI file with sections
/// [model], [layout], [fusion] and [train]; later set() calls override.
class RunConfig {
 public:
  static RunConfig from_ini(const std::string& path);
  static RunConfig from_ini_text(const std::string& text);

  void set(const std::string& key, const std::string& value);
  std::optional<std::string> get(const std::string& key) const;
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Preset (model.preset, default `fallback_preset`) with [model] and [fusion] overrides.
  ModelConfig model(const std::string& fallback_preset = "toy-intra") const;
  /// layout.file, else depth/ratio or counts planning, else the preset layout.
  LayoutSpec layout(const std::string& fallback_preset = "toy-intra") const;
  TrainConfig train() const;

  /// Settings plus the resolved model and layout.
  nlohmann::json resolved(const std::string& fallback_preset = "toy-intra") const;

 private:
  std::map<std::string, std::string> values_;
};

/// Keys accepted in each section.
const std::map<std::string, std::string>& run_config_keys();

}  // namespace hybridlab
