#pragma once

// Text serialization of model parameters, choice specifications and fitted
// models. Every file is "key = value" (see kv.hpp) with shortest round-trip
// number formatting, so write -> read reproduces values bit for bit.

#include "lccm/data.hpp"
#include "lccm/em.hpp"
#include "lccm/kv.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace lccm {

/// Maps data attribute columns to model coefficients. A coefficient shared by
/// several columns enters the model as their sum; fixed_zero columns are
/// dropped. Every data attribute must be mentioned exactly once.
///   coefficient.<name> = col1, col2
///   fixed_zero = col3
struct ChoiceSpec {
  struct Coefficient {
    std::string name;
    std::vector<std::string> columns;
    bool operator==(const Coefficient&) const = default;
  };
  std::vector<Coefficient> coefficients;
  std::vector<std::string> fixed_zero;

  bool empty() const { return coefficients.empty() && fixed_zero.empty(); }
  static ChoiceSpec from_kv(const KeyValueFile& kv, const std::string& prefix = "");
  void to_kv(KeyValueFile& kv, const std::string& prefix = "") const;
  /// Dataset whose attributes are the model columns. An empty spec is the identity.
  ChoiceDataset apply(const ChoiceDataset& ds) const;
  bool operator==(const ChoiceSpec&) const = default;
};

void params_to_kv(const ModelParams& params, KeyValueFile& kv, const std::string& prefix = "");
ModelParams params_from_kv(const KeyValueFile& kv, const std::string& prefix = "");

GbmLccmParams read_gbm_params(const std::filesystem::path& path);
void write_params(const ModelParams& params, const std::filesystem::path& path);

/// A fitted model with everything prediction needs: the schema of the raw
/// data, the choice specification, the training standardization, and the
/// estimation record.
struct FittedModel {
  FitResult fit;
  CovarianceStructure structure = CovarianceStructure::Full;
  Schema schema;
  ChoiceSpec choice;
  StandardizationRecord standardization;
  std::vector<std::string> alt_labels;
  std::vector<std::string> attr_names;  // model columns
  std::vector<std::string> cont_names;
  std::vector<std::string> bin_names;
  Index persons = 0;
  Index situations = 0;

  KeyValueFile to_kv() const;
  static FittedModel from_kv(const KeyValueFile& kv);
  void write(const std::filesystem::path& path) const;
  static FittedModel read(const std::filesystem::path& path);

  /// Raw data -> model dataset: choice spec, then training standardization.
  ChoiceDataset prepare(const ChoiceDataset& raw) const;
};

}  // namespace lccm
