#include "lccm/model_io.hpp"

#include <map>
#include <set>

namespace lccm {

// ---------------------------------------------------------------------------
// choice specification

ChoiceSpec ChoiceSpec::from_kv(const KeyValueFile& kv, const std::string& prefix) {
  ChoiceSpec spec;
  const std::string coef = prefix + "coefficient.";
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind(coef, 0) != 0) continue;
    Coefficient c{key.substr(coef.size()), split_list(value)};
    if (c.name.empty()) throw DataError("coefficient with an empty name");
    if (c.columns.empty()) throw DataError("coefficient '" + c.name + "' names no columns");
    spec.coefficients.push_back(std::move(c));
  }
  if (auto z = kv.get(prefix + "fixed_zero")) spec.fixed_zero = split_list(*z);
  return spec;
}

void ChoiceSpec::to_kv(KeyValueFile& kv, const std::string& prefix) const {
  for (const auto& c : coefficients) kv.set(prefix + "coefficient." + c.name, join_list(c.columns));
  if (!fixed_zero.empty()) kv.set(prefix + "fixed_zero", join_list(fixed_zero));
}

ChoiceDataset ChoiceSpec::apply(const ChoiceDataset& ds) const {
  if (empty()) return ds;
  std::map<std::string, Index> column;
  for (Index i = 0; i < ds.attr_count; ++i) column[ds.attr_names[static_cast<std::size_t>(i)]] = i;
  std::set<std::string> used;
  const auto claim = [&](const std::string& name) {
    if (!column.count(name)) throw DataError("choice specification names unknown attribute '" + name + "'");
    if (!used.insert(name).second)
      throw DataError("attribute '" + name + "' appears twice in the choice specification");
    return column[name];
  };
  std::vector<std::vector<Index>> groups;
  for (const auto& c : coefficients) {
    std::vector<Index> g;
    for (const auto& col : c.columns) g.push_back(claim(col));
    groups.push_back(std::move(g));
  }
  for (const auto& z : fixed_zero) claim(z);
  for (const auto& name : ds.attr_names)
    if (!used.count(name))
      throw DataError("attribute '" + name + "' is neither a coefficient nor fixed to zero");
  if (groups.empty()) throw DataError("choice specification has no free coefficients");

  ChoiceDataset out = ds;
  out.attr_count = static_cast<Index>(groups.size());
  out.attr_names.clear();
  for (const auto& c : coefficients) out.attr_names.push_back(c.name);
  for (auto& p : out.persons)
    for (auto& s : p.situations) {
      Matrix m = Matrix::Zero(s.attrs.rows(), out.attr_count);
      for (std::size_t g = 0; g < groups.size(); ++g)
        for (Index col : groups[g]) m.col(static_cast<Index>(g)) += s.attrs.col(col);
      s.attrs = std::move(m);
    }
  return out;
}

// ---------------------------------------------------------------------------
// parameters

namespace {

std::string idx(const std::string& base, Index k) { return base + "." + std::to_string(k); }

Vector checked_vector(const KeyValueFile& kv, const std::string& key, Index size) {
  Vector v = kv.get_vector(key);
  if (v.size() != size)
    throw DataError(key + ": expected " + std::to_string(size) + " values, got " + std::to_string(v.size()));
  return v;
}

void betas_to_kv(const std::vector<MnlParams>& betas, KeyValueFile& kv, const std::string& prefix) {
  for (std::size_t k = 0; k < betas.size(); ++k)
    kv.set(idx(prefix + "beta", static_cast<Index>(k)), format_vector(betas[k].beta));
}

std::vector<MnlParams> betas_from_kv(const KeyValueFile& kv, const std::string& prefix, Index K, Index P) {
  std::vector<MnlParams> out;
  for (Index k = 0; k < K; ++k) out.emplace_back(checked_vector(kv, idx(prefix + "beta", k), P));
  return out;
}

Index block_rows(CovarianceStructure s, Index D) {
  return s == CovarianceStructure::Spherical ? 1 : D;
}
Index block_cols(CovarianceStructure s, Index D) {
  return s == CovarianceStructure::Full || s == CovarianceStructure::Tied ? D : 1;
}

}  // namespace

void params_to_kv(const ModelParams& params, KeyValueFile& kv, const std::string& prefix) {
  kv.set(prefix + "model", to_string(model_kind(params)));
  if (const auto* m = std::get_if<MnlParams>(&params)) {
    kv.set(prefix + "classes", "1");
    kv.set(prefix + "attributes", std::to_string(m->beta.size()));
    kv.set(prefix + "beta", format_vector(m->beta));
    return;
  }
  if (const auto* l = std::get_if<LccmParams>(&params)) {
    kv.set(prefix + "classes", std::to_string(l->classes()));
    kv.set(prefix + "attributes", std::to_string(l->betas.front().beta.size()));
    kv.set(prefix + "membership_covariates", std::to_string(l->gamma.cols()));
    kv.set(prefix + "gamma", format_matrix(l->gamma));
    betas_to_kv(l->betas, kv, prefix);
    return;
  }
  const auto& g = std::get<GbmLccmParams>(params);
  const auto& m = g.membership;
  kv.set(prefix + "classes", std::to_string(g.classes()));
  kv.set(prefix + "attributes", std::to_string(g.betas.front().beta.size()));
  kv.set(prefix + "structure", to_string(m.sigma_c.structure()));
  kv.set(prefix + "continuous", std::to_string(m.cont_dim()));
  kv.set(prefix + "binary", std::to_string(m.bin_dim()));
  kv.set(prefix + "pi", format_vector(m.pi));
  for (Index k = 0; k < g.classes(); ++k) {
    kv.set(idx(prefix + "mu_c", k), format_vector(m.mu_c.row(k).transpose()));
    kv.set(idx(prefix + "mu_d", k), format_vector(m.mu_d.row(k).transpose()));
  }
  const auto& blocks = m.sigma_c.blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b)
    kv.set(idx(prefix + "sigma", static_cast<Index>(b)), format_matrix(blocks[b]));
  betas_to_kv(g.betas, kv, prefix);
}

ModelParams params_from_kv(const KeyValueFile& kv, const std::string& prefix) {
  const ModelKind kind = parse_model_kind(kv.at(prefix + "model"));
  const Index K = kv.get_int(prefix + "classes");
  const Index P = kv.get_int(prefix + "attributes");
  if (K < 1) throw DataError("classes must be at least 1");
  if (P < 1) throw DataError("attributes must be at least 1");
  if (kind == ModelKind::Mnl) return MnlParams(checked_vector(kv, prefix + "beta", P));
  if (kind == ModelKind::Lccm) {
    LccmParams l;
    const Index D = kv.get_int(prefix + "membership_covariates");
    l.gamma = K > 1 ? parse_matrix(kv.at(prefix + "gamma"), K - 1, D) : Matrix(0, D);
    l.betas = betas_from_kv(kv, prefix, K, P);
    l.validate();
    return l;
  }
  GbmLccmParams g;
  auto& m = g.membership;
  const CovarianceStructure s = parse_structure(kv.at(prefix + "structure"));
  const Index Dc = kv.get_int(prefix + "continuous");
  const Index Dd = kv.get_int(prefix + "binary");
  m.pi = checked_vector(kv, prefix + "pi", K);
  m.mu_c.resize(K, Dc);
  m.mu_d.resize(K, Dd);
  for (Index k = 0; k < K; ++k) {
    m.mu_c.row(k) = checked_vector(kv, idx(prefix + "mu_c", k), Dc).transpose();
    m.mu_d.row(k) = checked_vector(kv, idx(prefix + "mu_d", k), Dd).transpose();
  }
  std::vector<Matrix> blocks;
  if (Dc > 0) {
    const Index count = s == CovarianceStructure::Tied ? 1 : K;
    for (Index b = 0; b < count; ++b)
      blocks.push_back(parse_matrix(kv.at(idx(prefix + "sigma", b)), block_rows(s, Dc), block_cols(s, Dc)));
  }
  m.sigma_c = Covariances(s, K, Dc, std::move(blocks));
  g.betas = betas_from_kv(kv, prefix, K, P);
  g.validate();
  return g;
}

GbmLccmParams read_gbm_params(const std::filesystem::path& path) {
  ModelParams p = params_from_kv(KeyValueFile::read(path));
  if (auto* g = std::get_if<GbmLccmParams>(&p)) return std::move(*g);
  throw DataError("'" + path.string() + "' does not hold gbm-lccm parameters");
}

void write_params(const ModelParams& params, const std::filesystem::path& path) {
  KeyValueFile kv;
  params_to_kv(params, kv);
  kv.write(path);
}

// ---------------------------------------------------------------------------
// fitted model

KeyValueFile FittedModel::to_kv() const {
  KeyValueFile kv;
  kv.set("format", "lccm-model 1");
  params_to_kv(fit.params, kv);
  if (fit.kind() != ModelKind::GbmLccm) kv.set("structure", to_string(structure));
  kv.set("alternative_labels", join_list(alt_labels));
  kv.set("attribute_names", join_list(attr_names));
  kv.set("continuous_names", join_list(cont_names));
  kv.set("binary_names", join_list(bin_names));
  kv.set("persons", std::to_string(persons));
  kv.set("situations", std::to_string(situations));
  schema.to_kv(kv, "schema.");
  choice.to_kv(kv, "choice.");
  standardization.to_kv(kv, "standardize.");
  if (fit.joint_ll) kv.set("joint_ll", format_double(*fit.joint_ll));
  kv.set("marginal_ll", format_double(fit.marginal_ll));
  kv.set("iterations", std::to_string(fit.iterations));
  kv.set("converged", fit.converged ? "1" : "0");
  kv.set("seed", std::to_string(fit.seed));
  kv.set("init", to_string(fit.init));
  kv.set("ll_trace", format_vector(Eigen::Map<const Vector>(fit.ll_trace.data(),
                                                            static_cast<Index>(fit.ll_trace.size()))));
  kv.set("ll_variance", format_double(fit.ll_variance));
  kv.set("completed_restarts", std::to_string(fit.completed_restarts));
  kv.set("restarts", std::to_string(fit.restarts.size()));
  for (std::size_t i = 0; i < fit.restarts.size(); ++i) {
    const auto& r = fit.restarts[i];
    const std::string p = "restart." + std::to_string(i) + ".";
    kv.set(p + "seed", std::to_string(r.seed));
    kv.set(p + "init", to_string(r.init));
    kv.set(p + "completed", r.completed ? "1" : "0");
    kv.set(p + "marginal_ll", format_double(r.marginal_ll));
    if (r.joint_ll) kv.set(p + "joint_ll", format_double(*r.joint_ll));
    kv.set(p + "iterations", std::to_string(r.iterations));
    kv.set(p + "converged", r.converged ? "1" : "0");
    if (!r.error.empty()) kv.set(p + "error", r.error);
  }
  for (std::size_t i = 0; i < fit.warnings.size(); ++i)
    kv.set("warning." + std::to_string(i), fit.warnings[i]);
  return kv;
}

FittedModel FittedModel::from_kv(const KeyValueFile& kv) {
  if (kv.get("format").value_or("") != "lccm-model 1") throw DataError("not a fitted-model file");
  FittedModel m;
  m.fit.params = params_from_kv(kv);
  m.structure = parse_structure(kv.get("structure").value_or("full"));
  m.alt_labels = kv.get_list("alternative_labels");
  m.attr_names = kv.get_list("attribute_names");
  m.cont_names = kv.get_list("continuous_names");
  m.bin_names = kv.get_list("binary_names");
  m.persons = kv.get_int("persons");
  m.situations = kv.get_int("situations");
  m.schema = Schema::from_kv(kv, "schema.");
  m.choice = ChoiceSpec::from_kv(kv, "choice.");
  m.standardization = StandardizationRecord::from_kv(kv, "standardize.");
  if (kv.contains("joint_ll")) m.fit.joint_ll = kv.get_double("joint_ll");
  m.fit.marginal_ll = kv.get_double("marginal_ll");
  m.fit.iterations = static_cast<int>(kv.get_int("iterations"));
  m.fit.converged = kv.get_int("converged") != 0;
  m.fit.seed = std::stoull(kv.at("seed"));
  m.fit.init = parse_init(kv.at("init"));
  const Vector trace = kv.get_vector("ll_trace");
  m.fit.ll_trace.assign(trace.data(), trace.data() + trace.size());
  m.fit.ll_variance = kv.get_double("ll_variance");
  m.fit.completed_restarts = kv.get_int("completed_restarts");
  const long long count = kv.get_int("restarts");
  for (long long i = 0; i < count; ++i) {
    const std::string p = "restart." + std::to_string(i) + ".";
    RestartOutcome r;
    r.seed = std::stoull(kv.at(p + "seed"));
    r.init = parse_init(kv.at(p + "init"));
    r.completed = kv.get_int(p + "completed") != 0;
    r.marginal_ll = kv.get_double(p + "marginal_ll");
    if (kv.contains(p + "joint_ll")) r.joint_ll = kv.get_double(p + "joint_ll");
    r.iterations = static_cast<int>(kv.get_int(p + "iterations"));
    r.converged = kv.get_int(p + "converged") != 0;
    r.error = kv.get(p + "error").value_or("");
    m.fit.restarts.push_back(std::move(r));
  }
  for (std::size_t i = 0;; ++i) {
    auto w = kv.get("warning." + std::to_string(i));
    if (!w) break;
    m.fit.warnings.push_back(*w);
  }
  return m;
}

void FittedModel::write(const std::filesystem::path& path) const { to_kv().write(path); }

FittedModel FittedModel::read(const std::filesystem::path& path) {
  return from_kv(KeyValueFile::read(path));
}

ChoiceDataset FittedModel::prepare(const ChoiceDataset& raw) const {
  ChoiceDataset ds = standardization.apply(choice.apply(raw));
  const auto mismatch = [](const std::string& what) {
    throw SchemaMismatch("schema mismatch: " + what);
  };
  if (ds.attr_names != attr_names) mismatch("model attributes differ");
  if (ds.cont_names != cont_names) mismatch("continuous characteristics differ");
  if (ds.bin_names != bin_names) mismatch("binary characteristics differ");
  if (ds.alt_labels != alt_labels) mismatch("alternatives differ");
  return ds;
}

}  // namespace lccm
