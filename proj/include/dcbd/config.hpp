#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dcbd/trainer.hpp"

namespace dcbd::cli {

enum class Command { train, denoise, eval, synth_noise, rf_table };

enum class KeyType { integer, unsigned_integer, real, boolean, text, choice };

struct KeySpec {
  const char* name;
  KeyType type;
  const char* default_value;
  const char* help;
  std::vector<std::string> choices = {};  // KeyType::choice only
};

/// Every recognised configuration key with its default.
const std::vector<KeySpec>& config_keys();

/// Fully resolved configuration: defaults, then the file, then overrides.
class RunConfig {
 public:
  Command command = Command::train;

  const std::string& get(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Sorted `key=value` lines; parsing them back yields the same config.
  std::string serialize() const;

  /// Throws a config error naming the key when a required key is empty.
  void require(const std::string& key) const;

  train::TrainConfig train_config() const;

 private:
  friend RunConfig parse_config(Command, const std::string&,
                                const std::vector<std::pair<std::string, std::string>>&);
  std::map<std::string, std::string> values_;
};

/// `text` holds `key=value` lines with `#` comments. Unknown keys, values
/// of the wrong type and out-of-range noise levels are config errors that
/// name the key.
RunConfig parse_config(
    Command command, const std::string& text,
    const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// Reads the file (when non-empty) and delegates to parse_config.
RunConfig load_config(
    Command command, const std::filesystem::path& file,
    const std::vector<std::pair<std::string, std::string>>& overrides = {});

}  // namespace dcbd::cli
