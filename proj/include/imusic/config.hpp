#pragma once

// Run configuration: plain sectioned key=value text.
//
//   # comment
//   [train]
//   lr = 0.001
//
// Keys are addressed as "section.key". Only known keys are accepted; values
// given on the command line override values from a file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace imusic::cfg {

class RunConfig {
 public:
  RunConfig();

  void load_file(const std::filesystem::path& path);
  void parse(const std::string& text, const std::string& origin = "<text>");
  // UsageError for unknown keys or values that do not parse as the key's type.
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;

  bool has(const std::string& key) const;
  std::vector<std::string> keys() const;
  // Fully resolved config in the same text format.
  std::string dump() const;

 private:
  enum class Kind { kString, kInt, kReal };
  struct Entry {
    std::string key;
    Kind kind;
    std::string value;
  };
  Entry& find(const std::string& key);
  const Entry& find(const std::string& key) const;
  std::vector<Entry> entries_;
};

}  // namespace imusic::cfg
