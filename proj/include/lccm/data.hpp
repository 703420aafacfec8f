#pragma once

// Panel choice data: persons x situations x alternatives, with per-person
// continuous and binary characteristics.

#include "lccm/kv.hpp"
#include "lccm/linalg.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace lccm {

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, 1>;

struct ChoiceSituation {
  Matrix attrs;         // J x P
  BoolArray available;  // J
  Index chosen = 0;

  bool operator==(const ChoiceSituation& o) const {
    return chosen == o.chosen && attrs.rows() == o.attrs.rows() &&
           attrs.cols() == o.attrs.cols() && attrs == o.attrs &&
           available.size() == o.available.size() && (available == o.available).all();
  }
};

struct PersonRecord {
  std::string id;
  Vector s_cont;  // D_c
  Vector s_bin;   // D_d, entries 0/1
  std::vector<ChoiceSituation> situations;

  bool operator==(const PersonRecord& o) const {
    return id == o.id && s_cont.size() == o.s_cont.size() && s_cont == o.s_cont &&
           s_bin.size() == o.s_bin.size() && s_bin == o.s_bin && situations == o.situations;
  }
};

struct ChoiceDataset {
  std::vector<PersonRecord> persons;
  Index alt_count = 0;
  Index attr_count = 0;
  Index cont_count = 0;
  Index bin_count = 0;

  std::vector<std::string> alt_labels;
  std::vector<std::string> attr_names;
  std::vector<std::string> cont_names;
  std::vector<std::string> bin_names;

  Index person_count() const { return static_cast<Index>(persons.size()); }
  Index situation_count() const;

  /// N x D_c and N x D_d characteristic matrices.
  Matrix continuous_matrix() const;
  Matrix binary_matrix() const;

  /// Dataset restricted to the given person indices (in the given order).
  ChoiceDataset subset(const std::vector<Index>& person_indices) const;

  /// Throws DataError describing the first violated invariant.
  void validate() const;

  bool operator==(const ChoiceDataset&) const = default;
};

/// Column mapping of a long-format CSV.
struct Schema {
  std::string person = "person";
  std::string situation = "situation";
  std::string alternative = "alternative";
  std::string chosen = "chosen";
  std::string available;  // empty: every listed row is available
  std::vector<std::string> attributes;
  std::vector<std::string> continuous;
  std::vector<std::string> binary;

  static Schema from_kv(const KeyValueFile& kv, const std::string& prefix = "");
  void to_kv(KeyValueFile& kv, const std::string& prefix = "") const;

  bool operator==(const Schema&) const = default;
};

ChoiceDataset load_dataset(const std::filesystem::path& path, const Schema& schema);
ChoiceDataset parse_dataset(std::string_view csv_text, const Schema& schema);

/// Schema of the canonical dump written by write_dataset.
Schema canonical_schema(const ChoiceDataset& ds);
std::string dataset_to_csv(const ChoiceDataset& ds);

struct StandardizationRecord;

/// Writes the canonical CSV plus a "<path>.meta" key-value sidecar.
void write_dataset(const ChoiceDataset& ds, const std::filesystem::path& path,
                   const StandardizationRecord* record = nullptr);

struct StandardizationRecord {
  struct Entry {
    Index column = 0;  // index into the continuous characteristics
    std::string name;
    double mean = 0.0;
    double stddev = 1.0;
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries;

  bool empty() const { return entries.empty(); }
  /// Applies the stored transform (e.g. training-set transform to a holdout).
  ChoiceDataset apply(const ChoiceDataset& ds) const;
  ChoiceDataset invert(const ChoiceDataset& ds) const;
  double invert_value(Index column, double z) const;

  static StandardizationRecord from_kv(const KeyValueFile& kv, const std::string& prefix = "");
  void to_kv(KeyValueFile& kv, const std::string& prefix = "") const;

  bool operator==(const StandardizationRecord&) const = default;
};

/// Standardizes the selected continuous characteristics to mean 0 and sample
/// standard deviation 1 (n - 1 denominator).
std::pair<ChoiceDataset, StandardizationRecord> standardize(const ChoiceDataset& ds,
                                                            const std::vector<Index>& vars);

/// All non-negative integer tuples of length `modes` summing to `total`,
/// lexicographically ascending.
std::vector<std::vector<int>> enumerate_count_alternatives(int total, int modes);

/// Random partition of person indices into k folds whose sizes differ by at
/// most one; earlier folds take the remainder. Indices are sorted within a fold.
std::vector<std::vector<Index>> split_folds(Index person_count, int k, std::uint64_t seed);
inline std::vector<std::vector<Index>> split_folds(const ChoiceDataset& ds, int k,
                                                   std::uint64_t seed) {
  return split_folds(ds.person_count(), k, seed);
}

/// Stream seed derived from a base seed and a counter (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t counter);

}  // namespace lccm
