#include "lccm/simulate.hpp"

#include <random>
#include <sstream>

namespace lccm {

AttributeSampler AttributeSampler::uniform(Index alt_count, Index attr_count, double lo, double hi) {
  AttributeSampler s;
  s.alt_count = alt_count;
  s.columns.assign(static_cast<std::size_t>(attr_count), {AttributeColumn::Kind::Uniform, lo, hi, 0});
  return s;
}

AttributeSampler AttributeSampler::from_kv(const KeyValueFile& kv, const std::string& prefix) {
  AttributeSampler s;
  s.alt_count = kv.get_int(prefix + "alternatives");
  const long long P = kv.get_int(prefix + "attributes");
  if (s.alt_count < 2) throw DataError("sampler needs at least two alternatives");
  if (P < 1) throw DataError("sampler needs at least one attribute");
  for (long long i = 0; i < P; ++i) {
    const std::string key = prefix + "attr." + std::to_string(i);
    std::istringstream in(kv.get(key).value_or("uniform -1 1"));
    std::string kind;
    in >> kind;
    AttributeColumn c;
    if (kind == "uniform" || kind == "normal") {
      std::string a, b;
      in >> a >> b;
      c.kind = kind == "uniform" ? AttributeColumn::Kind::Uniform : AttributeColumn::Kind::Normal;
      c.a = parse_double(a);
      c.b = parse_double(b);
      if (kind == "uniform" && !(c.b > c.a)) throw DataError(key + ": uniform needs lo < hi");
      if (kind == "normal" && !(c.b > 0)) throw DataError(key + ": normal needs sd > 0");
    } else if (kind == "asc") {
      std::string j;
      in >> j;
      c.kind = AttributeColumn::Kind::Constant;
      c.alt = parse_int(j);
      if (c.alt < 0 || c.alt >= s.alt_count) throw DataError(key + ": alternative out of range");
    } else {
      throw DataError(key + ": unknown sampler '" + kind + "'");
    }
    s.columns.push_back(c);
  }
  return s;
}

void AttributeSampler::to_kv(KeyValueFile& kv, const std::string& prefix) const {
  kv.set(prefix + "alternatives", std::to_string(alt_count));
  kv.set(prefix + "attributes", std::to_string(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const auto& c = columns[i];
    std::string v;
    switch (c.kind) {
      case AttributeColumn::Kind::Uniform: v = "uniform " + format_double(c.a) + " " + format_double(c.b); break;
      case AttributeColumn::Kind::Normal: v = "normal " + format_double(c.a) + " " + format_double(c.b); break;
      case AttributeColumn::Kind::Constant: v = "asc " + std::to_string(c.alt); break;
    }
    kv.set(prefix + "attr." + std::to_string(i), v);
  }
}

ChoiceDataset simulate_dataset(const GbmLccmParams& params, Index persons, Index periods,
                               const AttributeSampler& sampler, std::uint64_t seed,
                               std::vector<Index>* classes_out) {
  params.validate();
  if (persons < 1) throw Error("need at least one person");
  if (periods < 1) throw Error("need at least one situation per person");
  if (sampler.alt_count < 2) throw Error("need at least two alternatives");
  if (params.betas.front().beta.size() != sampler.attr_count())
    throw Error("coefficient length differs from the sampler's attribute count");

  const Index K = params.classes();
  const Index J = sampler.alt_count;
  const Index P = sampler.attr_count();
  const auto& m = params.membership;
  std::vector<GaussianFactor> factors;
  for (Index k = 0; k < K && m.cont_dim() > 0; ++k)
    factors.push_back(factorize_covariance(m.sigma_c.realized(k)));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  ChoiceDataset ds;
  ds.alt_count = J;
  ds.attr_count = P;
  ds.cont_count = m.cont_dim();
  ds.bin_count = m.bin_dim();
  for (Index j = 0; j < J; ++j) ds.alt_labels.push_back(std::to_string(j + 1));
  for (Index i = 0; i < P; ++i) ds.attr_names.push_back("x" + std::to_string(i + 1));
  for (Index i = 0; i < ds.cont_count; ++i) ds.cont_names.push_back("c" + std::to_string(i + 1));
  for (Index i = 0; i < ds.bin_count; ++i) ds.bin_names.push_back("b" + std::to_string(i + 1));
  if (classes_out) classes_out->clear();

  for (Index n = 0; n < persons; ++n) {
    Index k = 0;
    const double draw = unit(rng);
    for (double acc = m.pi[0]; k + 1 < K && draw >= acc; acc += m.pi[++k]) {}
    if (classes_out) classes_out->push_back(k);

    PersonRecord p;
    p.id = std::to_string(n + 1);
    p.s_cont.resize(ds.cont_count);
    if (ds.cont_count > 0) {
      Vector z(ds.cont_count);
      for (Index d = 0; d < ds.cont_count; ++d) z[d] = gauss(rng);
      p.s_cont = m.mu_c.row(k).transpose() + factors[static_cast<std::size_t>(k)].lower * z;
    }
    p.s_bin.resize(ds.bin_count);
    for (Index d = 0; d < ds.bin_count; ++d) p.s_bin[d] = unit(rng) < m.mu_d(k, d) ? 1.0 : 0.0;

    const Vector& beta = params.betas[static_cast<std::size_t>(k)].beta;
    for (Index t = 0; t < periods; ++t) {
      ChoiceSituation s;
      s.attrs.resize(J, P);
      for (Index j = 0; j < J; ++j)
        for (Index i = 0; i < P; ++i) {
          const auto& c = sampler.columns[static_cast<std::size_t>(i)];
          switch (c.kind) {
            case AttributeColumn::Kind::Uniform: s.attrs(j, i) = c.a + (c.b - c.a) * unit(rng); break;
            case AttributeColumn::Kind::Normal: s.attrs(j, i) = c.a + c.b * gauss(rng); break;
            case AttributeColumn::Kind::Constant: s.attrs(j, i) = j == c.alt ? 1.0 : 0.0; break;
          }
        }
      s.available = BoolArray::Constant(J, true);
      const Vector prob = softmax(Vector(s.attrs * beta));
      const double u = unit(rng);
      double acc = prob[0];
      s.chosen = 0;
      while (s.chosen + 1 < J && u >= acc) acc += prob[++s.chosen];
      p.situations.push_back(std::move(s));
    }
    ds.persons.push_back(std::move(p));
  }
  ds.validate();
  return ds;
}

}  // namespace lccm
