#pragma once

// Command-line driver: synth-data, train-image, train-video, baseline,
// insert, eval-ois, eval-recall.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace vins {

/// Sectioned key=value settings. Only known sections and keys are
/// accepted; every key has a default.
class RunConfig {
 public:
  RunConfig();

  /// Reads an INI file on top of the defaults; throws ConfigError naming
  /// the first unknown or malformed key.
  void load(const std::filesystem::path& path);
  /// `section.key=value`.
  void set(const std::string& assignment);
  void set(const std::string& section, const std::string& key, const std::string& value);

  std::string str(const std::string& key) const;  // "section.key"
  int integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;

  /// Every key with its current value, `section.key=value` per line.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

/// args excludes the program name. Summaries go to `out`, logs and errors
/// to `err`. Returns 0 on success.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vins
