#include "lccm/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace lccm {

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

// Integers compare numerically, everything else lexicographically; integers
// sort before non-integers.
bool id_less(const std::string& a, const std::string& b) {
  const auto as_int = [](const std::string& s, long long& out) {
    if (s.empty()) return false;
    try {
      out = parse_int(s);
      return true;
    } catch (const DataError&) {
      return false;
    }
  };
  long long ia = 0, ib = 0;
  const bool na = as_int(a, ia);
  const bool nb = as_int(b, ib);
  if (na && nb) return ia < ib;
  if (na != nb) return na;
  return a < b;
}

double parse_binary(const std::string& s, const std::string& column, std::size_t line) {
  const double v = parse_double(s);
  if (v != 0.0 && v != 1.0)
    throw DataError("line " + std::to_string(line) + ": non-binary value '" + s +
                    "' in column '" + column + "'");
  return v;
}

}  // namespace

Index ChoiceDataset::situation_count() const {
  Index n = 0;
  for (const auto& p : persons) n += static_cast<Index>(p.situations.size());
  return n;
}

Matrix ChoiceDataset::continuous_matrix() const {
  Matrix m(person_count(), cont_count);
  for (Index n = 0; n < person_count(); ++n) m.row(n) = persons[n].s_cont.transpose();
  return m;
}

Matrix ChoiceDataset::binary_matrix() const {
  Matrix m(person_count(), bin_count);
  for (Index n = 0; n < person_count(); ++n) m.row(n) = persons[n].s_bin.transpose();
  return m;
}

ChoiceDataset ChoiceDataset::subset(const std::vector<Index>& person_indices) const {
  ChoiceDataset out = *this;
  out.persons.clear();
  out.persons.reserve(person_indices.size());
  for (Index i : person_indices) {
    if (i < 0 || i >= person_count()) throw DataError("person index out of range");
    out.persons.push_back(persons[i]);
  }
  return out;
}

void ChoiceDataset::validate() const {
  if (alt_count < 2) throw DataError("need at least two alternatives");
  if (attr_count < 1) throw DataError("need at least one attribute");
  if (persons.empty()) throw DataError("dataset has no persons");
  for (const auto& p : persons) {
    if (p.s_cont.size() != cont_count || p.s_bin.size() != bin_count)
      throw DataError("person '" + p.id + "': characteristic count mismatch");
    for (Index i = 0; i < p.s_bin.size(); ++i)
      if (p.s_bin[i] != 0.0 && p.s_bin[i] != 1.0)
        throw DataError("person '" + p.id + "': non-binary characteristic");
    if (!p.s_cont.allFinite()) throw DataError("person '" + p.id + "': non-finite characteristic");
    if (p.situations.empty()) throw DataError("person '" + p.id + "' has no choice situations");
    for (const auto& s : p.situations) {
      if (s.attrs.rows() != alt_count || s.attrs.cols() != attr_count ||
          s.available.size() != alt_count)
        throw DataError("person '" + p.id + "': ragged attribute counts");
      if (s.chosen < 0 || s.chosen >= alt_count)
        throw DataError("person '" + p.id + "': chosen index out of range");
      if (!s.available[s.chosen]) throw DataError("person '" + p.id + "': chosen unavailable");
      if (s.available.count() < 2)
        throw DataError("person '" + p.id + "': fewer than two available alternatives");
      if (!s.attrs.allFinite()) throw DataError("person '" + p.id + "': non-finite attribute");
    }
  }
}

Schema Schema::from_kv(const KeyValueFile& kv, const std::string& prefix) {
  Schema s;
  const auto opt = [&](const char* key, std::string& dst) {
    if (auto v = kv.get(prefix + key)) dst = *v;
  };
  opt("person", s.person);
  opt("situation", s.situation);
  opt("alternative", s.alternative);
  opt("chosen", s.chosen);
  opt("available", s.available);
  s.attributes = split_list(kv.at(prefix + "attributes"));
  if (auto v = kv.get(prefix + "continuous")) s.continuous = split_list(*v);
  if (auto v = kv.get(prefix + "binary")) s.binary = split_list(*v);
  return s;
}

void Schema::to_kv(KeyValueFile& kv, const std::string& prefix) const {
  kv.set(prefix + "person", person);
  kv.set(prefix + "situation", situation);
  kv.set(prefix + "alternative", alternative);
  kv.set(prefix + "chosen", chosen);
  kv.set(prefix + "available", available);
  kv.set(prefix + "attributes", join_list(attributes));
  kv.set(prefix + "continuous", join_list(continuous));
  kv.set(prefix + "binary", join_list(binary));
}

ChoiceDataset parse_dataset(std::string_view text, const Schema& schema) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw DataError("empty CSV");

  std::unordered_map<std::string, std::size_t> col_of;
  for (std::size_t i = 0; i < header.size(); ++i) col_of.emplace(header[i], i);
  const auto column = [&](const std::string& name) -> std::size_t {
    auto it = col_of.find(name);
    if (it == col_of.end()) throw DataError("missing column '" + name + "'");
    return it->second;
  };
  const std::size_t c_person = column(schema.person);
  const std::size_t c_sit = column(schema.situation);
  const std::size_t c_alt = column(schema.alternative);
  const std::size_t c_chosen = column(schema.chosen);
  const bool has_avail = !schema.available.empty();
  const std::size_t c_avail = has_avail ? column(schema.available) : 0;
  std::vector<std::size_t> c_attr, c_cont, c_bin;
  for (const auto& a : schema.attributes) c_attr.push_back(column(a));
  for (const auto& a : schema.continuous) c_cont.push_back(column(a));
  for (const auto& a : schema.binary) c_bin.push_back(column(a));
  if (c_attr.empty()) throw DataError("schema lists no attribute columns");

  struct Row {
    std::string alt;
    Vector attrs;
    bool available;
    bool chosen;
  };
  struct Situation {
    std::string id;
    std::vector<Row> rows;
    std::size_t first_line;
  };
  struct Person {
    Vector cont, bin;
    std::vector<Situation> situations;
    std::map<std::string, std::size_t> sit_index;
  };
  std::map<std::string, Person, decltype(&id_less)> people(&id_less);
  std::vector<std::string> alt_ids;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": ragged row (" +
                      std::to_string(f.size()) + " fields, header has " +
                      std::to_string(header.size()) + ")");
    Row row;
    row.alt = f[c_alt];
    row.attrs.resize(static_cast<Index>(c_attr.size()));
    for (std::size_t i = 0; i < c_attr.size(); ++i)
      row.attrs[static_cast<Index>(i)] = parse_double(f[c_attr[i]]);
    row.chosen = parse_binary(f[c_chosen], schema.chosen, line_no) == 1.0;
    row.available = has_avail ? parse_binary(f[c_avail], schema.available, line_no) == 1.0 : true;
    if (row.chosen && !row.available)
      throw DataError("line " + std::to_string(line_no) + ": chosen unavailable");

    Vector cont(static_cast<Index>(c_cont.size())), bin(static_cast<Index>(c_bin.size()));
    for (std::size_t i = 0; i < c_cont.size(); ++i)
      cont[static_cast<Index>(i)] = parse_double(f[c_cont[i]]);
    for (std::size_t i = 0; i < c_bin.size(); ++i)
      bin[static_cast<Index>(i)] = parse_binary(f[c_bin[i]], schema.binary[i], line_no);

    auto [it, inserted] = people.try_emplace(f[c_person]);
    Person& p = it->second;
    if (inserted) {
      p.cont = cont;
      p.bin = bin;
    } else if (p.cont != cont || p.bin != bin) {
      throw DataError("line " + std::to_string(line_no) + ": characteristics of person '" +
                      f[c_person] + "' differ between rows");
    }
    auto [sit, new_sit] = p.sit_index.try_emplace(f[c_sit], p.situations.size());
    if (new_sit) p.situations.push_back(Situation{f[c_sit], {}, line_no});
    Situation& s = p.situations[sit->second];
    for (const auto& r : s.rows)
      if (r.alt == row.alt)
        throw DataError("line " + std::to_string(line_no) + ": duplicate alternative '" +
                        row.alt + "' in situation '" + s.id + "'");
    if (std::find(alt_ids.begin(), alt_ids.end(), row.alt) == alt_ids.end())
      alt_ids.push_back(row.alt);
    s.rows.push_back(std::move(row));
  }
  if (people.empty()) throw DataError("CSV has no data rows");

  std::sort(alt_ids.begin(), alt_ids.end(), id_less);
  std::unordered_map<std::string, Index> alt_index;
  for (std::size_t j = 0; j < alt_ids.size(); ++j) alt_index[alt_ids[j]] = static_cast<Index>(j);

  ChoiceDataset ds;
  ds.alt_count = static_cast<Index>(alt_ids.size());
  ds.attr_count = static_cast<Index>(c_attr.size());
  ds.cont_count = static_cast<Index>(c_cont.size());
  ds.bin_count = static_cast<Index>(c_bin.size());
  ds.alt_labels = alt_ids;
  ds.attr_names = schema.attributes;
  ds.cont_names = schema.continuous;
  ds.bin_names = schema.binary;

  for (auto& [id, p] : people) {
    PersonRecord rec;
    rec.id = id;
    rec.s_cont = p.cont;
    rec.s_bin = p.bin;
    for (auto& s : p.situations) {
      ChoiceSituation cs;
      cs.attrs = Matrix::Zero(ds.alt_count, ds.attr_count);
      cs.available = BoolArray::Constant(ds.alt_count, false);
      Index n_chosen = 0;
      for (const auto& r : s.rows) {
        const Index j = alt_index.at(r.alt);
        cs.attrs.row(j) = r.attrs.transpose();
        cs.available[j] = r.available;
        if (r.chosen) {
          cs.chosen = j;
          ++n_chosen;
        }
      }
      if (n_chosen != 1)
        throw DataError("situation '" + s.id + "' of person '" + id + "' (line " +
                        std::to_string(s.first_line) + "): expected exactly one chosen row, got " +
                        std::to_string(n_chosen));
      rec.situations.push_back(std::move(cs));
    }
    ds.persons.push_back(std::move(rec));
  }
  ds.validate();
  return ds;
}

ChoiceDataset load_dataset(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_dataset(ss.str(), schema);
}

Schema canonical_schema(const ChoiceDataset& ds) {
  Schema s;
  s.available = "available";
  s.attributes = ds.attr_names;
  s.continuous = ds.cont_names;
  s.binary = ds.bin_names;
  return s;
}

std::string dataset_to_csv(const ChoiceDataset& ds) {
  const Schema schema = canonical_schema(ds);
  std::string out = "person,situation,alternative,chosen,available";
  for (const auto& n : schema.attributes) out += "," + n;
  for (const auto& n : schema.continuous) out += "," + n;
  for (const auto& n : schema.binary) out += "," + n;
  out += '\n';
  for (const auto& p : ds.persons) {
    std::string chars;
    for (Index i = 0; i < p.s_cont.size(); ++i) chars += "," + format_double(p.s_cont[i]);
    for (Index i = 0; i < p.s_bin.size(); ++i) chars += "," + format_double(p.s_bin[i]);
    for (std::size_t t = 0; t < p.situations.size(); ++t) {
      const auto& s = p.situations[t];
      for (Index j = 0; j < ds.alt_count; ++j) {
        out += p.id + "," + std::to_string(t) + "," + ds.alt_labels[j] + "," +
               (s.chosen == j ? "1" : "0") + "," + (s.available[j] ? "1" : "0");
        for (Index a = 0; a < ds.attr_count; ++a) out += "," + format_double(s.attrs(j, a));
        out += chars;
        out += '\n';
      }
    }
  }
  return out;
}

void write_dataset(const ChoiceDataset& ds, const std::filesystem::path& path,
                   const StandardizationRecord* record) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << dataset_to_csv(ds);
  }
  KeyValueFile meta;
  meta.set("persons", std::to_string(ds.person_count()));
  meta.set("situations", std::to_string(ds.situation_count()));
  meta.set("alternatives", std::to_string(ds.alt_count));
  meta.set("alternative_labels", join_list(ds.alt_labels));
  meta.set("attributes_count", std::to_string(ds.attr_count));
  meta.set("continuous_count", std::to_string(ds.cont_count));
  meta.set("binary_count", std::to_string(ds.bin_count));
  canonical_schema(ds).to_kv(meta, "schema.");
  if (record) record->to_kv(meta, "standardize.");
  meta.write(path.string() + ".meta");
}

ChoiceDataset StandardizationRecord::apply(const ChoiceDataset& ds) const {
  ChoiceDataset out = ds;
  for (const auto& e : entries) {
    if (e.column < 0 || e.column >= ds.cont_count)
      throw DataError("standardization column '" + e.name + "' out of range");
    for (auto& p : out.persons) p.s_cont[e.column] = (p.s_cont[e.column] - e.mean) / e.stddev;
  }
  return out;
}

ChoiceDataset StandardizationRecord::invert(const ChoiceDataset& ds) const {
  ChoiceDataset out = ds;
  for (const auto& e : entries)
    for (auto& p : out.persons) p.s_cont[e.column] = p.s_cont[e.column] * e.stddev + e.mean;
  return out;
}

double StandardizationRecord::invert_value(Index column, double z) const {
  for (const auto& e : entries)
    if (e.column == column) return z * e.stddev + e.mean;
  return z;
}

StandardizationRecord StandardizationRecord::from_kv(const KeyValueFile& kv,
                                                     const std::string& prefix) {
  StandardizationRecord rec;
  const auto count = kv.get(prefix + "count");
  if (!count) return rec;
  const long long n = parse_int(*count);
  for (long long i = 0; i < n; ++i) {
    const std::string key = prefix + std::to_string(i);
    const auto parts = split_list(kv.at(key));
    if (parts.size() != 4) throw DataError("malformed standardization entry '" + key + "'");
    rec.entries.push_back(
        Entry{parse_int(parts[0]), parts[1], parse_double(parts[2]), parse_double(parts[3])});
  }
  return rec;
}

void StandardizationRecord::to_kv(KeyValueFile& kv, const std::string& prefix) const {
  kv.set(prefix + "count", std::to_string(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    kv.set(prefix + std::to_string(i), std::to_string(e.column) + "," + e.name + "," +
                                           format_double(e.mean) + "," + format_double(e.stddev));
  }
}

std::pair<ChoiceDataset, StandardizationRecord> standardize(const ChoiceDataset& ds,
                                                            const std::vector<Index>& vars) {
  StandardizationRecord rec;
  const Matrix s = ds.continuous_matrix();
  const Index n = s.rows();
  for (Index v : vars) {
    if (v < 0 || v >= ds.cont_count) throw DataError("standardization index out of range");
    const std::string name =
        static_cast<std::size_t>(v) < ds.cont_names.size() ? ds.cont_names[v] : std::to_string(v);
    if (n < 2) throw DataError("zero-variance column '" + name + "'");
    const double mean = s.col(v).mean();
    const double var = (s.col(v).array() - mean).square().sum() / static_cast<double>(n - 1);
    const double sd = std::sqrt(var);
    if (!(sd > 0.0) || sd <= 1e-12 * std::max(1.0, std::abs(mean)))
      throw DataError("zero-variance column '" + name + "'");
    rec.entries.push_back({v, name, mean, sd});
  }
  return {rec.apply(ds), rec};
}

std::vector<std::vector<int>> enumerate_count_alternatives(int total, int modes) {
  std::vector<std::vector<int>> out;
  if (total < 0 || modes < 1) return out;
  std::vector<int> cur(static_cast<std::size_t>(modes), 0);
  // Depth-first over the first modes-1 entries; the last takes the remainder.
  const auto rec = [&](auto&& self, int pos, int remaining) -> void {
    if (pos == modes - 1) {
      cur[static_cast<std::size_t>(pos)] = remaining;
      out.push_back(cur);
      return;
    }
    for (int v = 0; v <= remaining; ++v) {
      cur[static_cast<std::size_t>(pos)] = v;
      self(self, pos + 1, remaining - v);
    }
  };
  rec(rec, 0, total);
  return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t counter) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (counter + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<std::vector<Index>> split_folds(Index person_count, int k, std::uint64_t seed) {
  if (k < 2 || k > person_count)
    throw DataError("fold count " + std::to_string(k) + " out of range [2, " +
                    std::to_string(person_count) + "]");
  std::vector<Index> order(static_cast<std::size_t>(person_count));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the permutation is library-independent.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<Index>> folds(static_cast<std::size_t>(k));
  const Index base = person_count / k;
  const Index extra = person_count % k;
  std::size_t pos = 0;
  for (int f = 0; f < k; ++f) {
    const Index size = base + (f < extra ? 1 : 0);
    auto& fold = folds[static_cast<std::size_t>(f)];
    fold.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                order.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(size)));
    std::sort(fold.begin(), fold.end());
    pos += static_cast<std::size_t>(size);
  }
  return folds;
}

}  // namespace lccm
