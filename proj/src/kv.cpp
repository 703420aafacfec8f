#include "lccm/kv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace lccm {

std::string trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

KeyValueFile KeyValueFile::parse(std::string_view text) {
  KeyValueFile kv;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view raw =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("line " + std::to_string(line_no) + ": expected 'key = value'");
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw DataError("line " + std::to_string(line_no) + ": empty key");
    if (kv.contains(key)) throw DataError("duplicate key '" + key + "'");
    kv.entries_.emplace_back(std::move(key), trim(std::string_view(line).substr(eq + 1)));
  }
  return kv;
}

KeyValueFile KeyValueFile::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string KeyValueFile::str() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    if (k.empty()) {
      out += "# " + v + "\n";
    } else {
      out += k + " = " + v + "\n";
    }
  }
  return out;
}

void KeyValueFile::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << str();
}

bool KeyValueFile::contains(std::string_view key) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return !e.first.empty() && e.first == key; });
}

const std::string& KeyValueFile::at(std::string_view key) const {
  for (const auto& e : entries_)
    if (!e.first.empty() && e.first == key) return e.second;
  throw DataError("missing key '" + std::string(key) + "'");
}

std::optional<std::string> KeyValueFile::get(std::string_view key) const {
  for (const auto& e : entries_)
    if (!e.first.empty() && e.first == key) return e.second;
  return std::nullopt;
}

void KeyValueFile::set(std::string key, std::string value) {
  for (auto& e : entries_) {
    if (e.first == key) {
      e.second = std::move(value);
      return;
    }
  }
  entries_.emplace_back(std::move(key), std::move(value));
}

void KeyValueFile::comment(std::string text) { entries_.emplace_back(std::string{}, std::move(text)); }

double KeyValueFile::get_double(std::string_view key) const { return parse_double(at(key)); }
long long KeyValueFile::get_int(std::string_view key) const { return parse_int(at(key)); }
Vector KeyValueFile::get_vector(std::string_view key) const { return parse_vector(at(key)); }
std::vector<std::string> KeyValueFile::get_list(std::string_view key) const {
  return split_list(at(key));
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_vector(const Eigen::Ref<const Vector>& v) {
  std::string out;
  for (Index i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += format_double(v[i]);
  }
  return out;
}

std::string format_matrix(const Eigen::Ref<const Matrix>& m) {
  std::string out;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) {
      if (r || c) out += ' ';
      out += format_double(m(r, c));
    }
  return out;
}

double parse_double(std::string_view s) {
  const std::string t = trim(s);
  if (t == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (t == "inf") return std::numeric_limits<double>::infinity();
  if (t == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc{} || res.ptr != t.data() + t.size())
    throw DataError("not a number: '" + t + "'");
  return v;
}

long long parse_int(std::string_view s) {
  const std::string t = trim(s);
  long long v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc{} || res.ptr != t.data() + t.size())
    throw DataError("not an integer: '" + t + "'");
  return v;
}

Vector parse_vector(std::string_view s) {
  std::vector<double> values;
  std::string token;
  const auto flush = [&] {
    if (!token.empty()) values.push_back(parse_double(token));
    token.clear();
  };
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == ',') {
      flush();
    } else {
      token += c;
    }
  }
  flush();
  return Eigen::Map<Vector>(values.data(), static_cast<Index>(values.size()));
}

Matrix parse_matrix(std::string_view s, Index rows, Index cols) {
  const Vector flat = parse_vector(s);
  if (flat.size() != rows * cols)
    throw DataError("expected " + std::to_string(rows * cols) + " values, got " +
                    std::to_string(flat.size()));
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = flat[r * cols + c];
  return m;
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = s.find(',', pos);
    out.push_back(trim(s.substr(pos, comma == std::string_view::npos ? std::string_view::npos
                                                                      : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += items[i];
  }
  return out;
}

}  // namespace lccm
