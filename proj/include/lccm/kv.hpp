#pragma once

// Plain "key = value" text files. Lines starting with '#' are comments,
// keys are unique, insertion order is preserved on write.

#include "lccm/linalg.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lccm {

class KeyValueFile {
public:
  KeyValueFile() = default;

  static KeyValueFile parse(std::string_view text);
  static KeyValueFile read(const std::filesystem::path& path);

  void write(const std::filesystem::path& path) const;
  std::string str() const;

  bool contains(std::string_view key) const;
  /// Throws DataError naming the key when absent.
  const std::string& at(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;

  /// Sets (or replaces) a key.
  void set(std::string key, std::string value);
  void comment(std::string text);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  // typed accessors
  double get_double(std::string_view key) const;
  long long get_int(std::string_view key) const;
  Vector get_vector(std::string_view key) const;
  std::vector<std::string> get_list(std::string_view key) const;

private:
  // Comments are stored with an empty key.
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);
std::string format_vector(const Eigen::Ref<const Vector>& v);
/// Row-major flattening.
std::string format_matrix(const Eigen::Ref<const Matrix>& m);

double parse_double(std::string_view s);
long long parse_int(std::string_view s);
/// Whitespace- or comma-separated numbers.
Vector parse_vector(std::string_view s);
Matrix parse_matrix(std::string_view s, Index rows, Index cols);
/// Comma-separated names, whitespace-trimmed, empty input -> empty list.
std::vector<std::string> split_list(std::string_view s);
std::string join_list(const std::vector<std::string>& items);
std::string trim(std::string_view s);

}  // namespace lccm
