#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "qaplaus/dataset.hpp"
#include "qaplaus/model.hpp"
#include "qaplaus/pipeline.hpp"
#include "qaplaus/training.hpp"

namespace qaplaus {

// Environment variable naming a config file to read when --config is absent.
inline constexpr const char* kConfigEnvVar = "QAPLAUS_CONFIG";

// Flat key = value configuration. Every key has a default; unknown keys and
// unparsable values are rejected when set.
class RunConfig {
 public:
  RunConfig();

  void set(std::string_view key, std::string_view value);
  const std::string& get(std::string_view key) const;

  /// `key = value` lines; blank lines and `#` comments are ignored.
  void load_file(const std::filesystem::path& path);
  void load_text(std::string_view text, std::string_view origin = "<config>");

  void dump(std::ostream& out) const;
  std::vector<std::string> keys() const;

  std::uint64_t seed() const;
  /// vocab_size is left 0; fill it from the vocabulary in use.
  ModelConfig model_config() const;
  TrainConfig train_config() const;
  PipelineConfig pipeline_config() const;
  SplitFractions split_fractions() const;
  ClassProportions synth_proportions() const;
  std::size_t synth_count() const;
  std::size_t vocab_max_size() const;
  std::size_t span_cap() const;

 private:
  double real(std::string_view key) const;
  std::size_t count(std::string_view key) const;

  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace qaplaus
