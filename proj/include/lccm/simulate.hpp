#pragma once

// Synthetic panel data drawn from a known GBM-LCCM, for parameter recovery.

#include "lccm/data.hpp"
#include "lccm/em.hpp"
#include "lccm/kv.hpp"

#include <cstdint>
#include <vector>

namespace lccm {

/// How one attribute column is drawn for every alternative of a situation.
struct AttributeColumn {
  enum class Kind { Uniform, Normal, Constant };
  Kind kind = Kind::Uniform;
  double a = -1.0;  // uniform lo / normal mean
  double b = 1.0;   // uniform hi / normal sd
  Index alt = 0;    // Constant: indicator of this alternative
  bool operator==(const AttributeColumn&) const = default;
};

struct AttributeSampler {
  Index alt_count = 2;
  std::vector<AttributeColumn> columns;

  /// P independent uniform(lo, hi) columns.
  static AttributeSampler uniform(Index alt_count, Index attr_count, double lo = -1.0, double hi = 1.0);

  Index attr_count() const { return static_cast<Index>(columns.size()); }

  /// Keys: alternatives = J, attributes = P, attr.<i> = "uniform lo hi" |
  /// "normal mean sd" | "asc j".
  static AttributeSampler from_kv(const KeyValueFile& kv, const std::string& prefix = "");
  void to_kv(KeyValueFile& kv, const std::string& prefix = "") const;
  bool operator==(const AttributeSampler&) const = default;
};

/// Draws a class per person from pi, characteristics from that class, then T
/// situations of sampled attributes with logit choices. Deterministic in seed.
/// `classes_out`, when given, receives the drawn class of each person.
ChoiceDataset simulate_dataset(const GbmLccmParams& params, Index persons, Index periods,
                               const AttributeSampler& sampler, std::uint64_t seed,
                               std::vector<Index>* classes_out = nullptr);

}  // namespace lccm
