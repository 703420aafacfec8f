#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lccm/metrics.hpp"
#include "lccm/simulate.hpp"
#include "oracles.hpp"

using namespace lccm;

namespace {

struct ReportedRow {
  const char* label;
  ModelKind kind;
  Index K;
  CovarianceStructure structure;
  double ll, aic, bic;
  Index p;  // 0 when the row does not state it
};

struct ReportedTable {
  const char* name;
  Index P, Dc, Dd, n_obs;
  std::vector<ReportedRow> rows;
};

constexpr auto F = CovarianceStructure::Full;
constexpr auto T = CovarianceStructure::Tied;
constexpr auto D = CovarianceStructure::Diagonal;
constexpr auto S = CovarianceStructure::Spherical;
constexpr auto G = ModelKind::GbmLccm;
constexpr auto L = ModelKind::Lccm;
constexpr auto M = ModelKind::Mnl;

// Reported summary rows: model, log-likelihood, AIC and BIC for four
// specifications. The parameter counts must reproduce every AIC and BIC.
const std::vector<ReportedTable> kReported{
    {"mode choice, five attributes", 5, 1, 4, 7814,
     {{"MNL", M, 1, F, -4017.47, 8044.94, 8079.76, 5},
      {"LCCM 2", L, 2, F, -2643.15, 5318.30, 5429.72, 16},
      {"full 2", G, 2, F, -2920.92, 5887.84, 6048.00, 23},
      {"full 3", G, 3, F, -2807.87, 5685.74, 5929.47, 35},
      {"full 4", G, 4, F, -2703.27, 5500.54, 5827.83, 47},
      {"tied 2", G, 2, T, -2920.81, 5885.62, 6038.82, 22},
      {"tied 3", G, 3, T, -2807.91, 5681.82, 5911.62, 33},
      {"tied 4", G, 4, T, -2703.38, 5494.76, 5801.16, 44}}},
    {"mode choice, seven attributes", 7, 1, 4, 7814,
     {{"MNL", M, 1, F, -4003.98, 8021.97, 8070.71, 7},
      {"LCCM 2", L, 2, F, -2633.56, 5307.12, 5446.39, 20},
      {"LCCM 3", L, 3, F, -2458.11, 4982.22, 5212.02, 33},
      {"full 2", G, 2, F, -2906.82, 5867.64, 6055.66, 27},
      {"full 3", G, 3, F, -2790.88, 5663.76, 5949.27, 0},
      {"full 4", G, 4, F, -2684.59, 5479.18, 5862.18, 0},
      {"tied 2", G, 2, T, -2907.00, 5866.00, 6047.06, 26},
      {"tied 3", G, 3, T, -2791.21, 5660.42, 5932.00, 0},
      {"tied 4", G, 4, T, -2684.57, 5473.14, 5835.25, 0}}},
    {"mode choice, twelve attributes", 12, 1, 4, 7814,
     {{"MNL", M, 1, F, -3778.40, 7580.80, 7664.36, 12},
      {"full 2", G, 2, F, -2769.56, 5613.12, 5870.78, 37},
      {"tied 2", G, 2, T, -2769.17, 5610.34, 5861.03, 36}}},
    {"route choice", 21, 4, 0, 2600,
     {{"LCCM 2", L, 2, F, -4910.92, 9915.84, 10191.41, 47},
      {"full 2", G, 2, F, -4937.64, 10017.28, 10433.57, 71},
      {"tied 2", G, 2, T, -4911.08, 9944.16, 10301.82, 61},
      {"diagonal 2", G, 2, D, -4935.51, 9989.02, 10334.95, 59},
      {"spherical 2", G, 2, S, -4927.54, 9961.08, 10271.83, 53},
      {"spherical 3", G, 3, S, -4893.29, 9946.58, 10415.64, 80}}},
};

// Standard-normal two-sided tail for the p-value oracle.
double two_sided(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

ChoiceDataset mnl_data(std::mt19937_64& rng, const Vector& beta, Index N, Index T) {
  LccmParams one;
  one.gamma = Matrix(0, 1);
  one.betas = {MnlParams(beta)};
  return oracle::simulate_lccm(rng, one, N, T, 3, 0, 0);
}

}  // namespace

TEST_CASE("counts and information criteria reproduce the reported summary rows") {
  for (const auto& table : kReported)
    for (const auto& row : table.rows) {
      INFO(table.name << " / " << row.label);
      const Index p = count_params(row.kind, row.K, row.structure, table.P, table.Dc, table.Dd,
                                   1 + table.Dc + table.Dd);
      if (row.p > 0) CHECK(p == row.p);
      const InformationCriteria ic = information_criteria(row.ll, p, table.n_obs);
      CHECK(std::abs(ic.aic - row.aic) <= 0.02);
      CHECK(std::abs(ic.bic - row.bic) <= 0.02);
    }
}

TEST_CASE("count_params from parameter objects") {
  std::mt19937_64 rng(1);
  for (auto s : {F, T, D, S}) {
    const GbmLccmParams g = oracle::random_gbm_params(rng, 3, 2, 1, 4, s);
    CHECK(count_params(ModelParams(g)) == count_params(G, 3, s, 4, 2, 1));
  }
  CHECK(count_params(ModelParams(MnlParams::zeros(6))) == 6);
  LccmParams l;
  l.gamma = Matrix::Zero(2, 4);
  l.betas = {MnlParams::zeros(3), MnlParams::zeros(3), MnlParams::zeros(3)};
  CHECK(count_params(ModelParams(l)) == 3 * 3 + 2 * 4);
  // without characteristics a GBM-LCCM only adds the mixing weights
  CHECK(count_params(G, 2, F, 3, 0, 0) == 7);
}

TEST_CASE("information criteria need observations") {
  CHECK_THROWS_AS(information_criteria(-10.0, 2, 0), Error);
}

TEST_CASE("value of time: reported class coefficients") {
  struct Pair {
    double time, cost, vot;
  };
  const std::vector<Pair> pairs{{-0.658, -0.0456, 9.61}, {-0.646, -0.109, 3.96}, {-0.387, -0.0998, 2.59},
                                {-0.409, -0.0446, 6.11}, {-0.372, -0.101, 2.44}, {-0.252, -0.0400, 4.20},
                                {-0.653, -0.0462, 9.42}, {-0.641, -0.110, 3.90}, {-0.384, -0.0993, 2.58},
                                {-0.409, -0.0442, 6.16}, {-0.372, -0.101, 2.45}, {-0.252, -0.0401, 4.19}};
  for (const auto& p : pairs) CHECK(std::abs(value_of_time(p.time, p.cost, 1000.0, 1500.0) - p.vot) <= 0.02);
}

TEST_CASE("value of time: invariant to a common rescaling") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int i = 0; i < 50; ++i) {
    const double t = -u(rng), c = -u(rng), k = u(rng);
    CHECK(value_of_time(k * t, k * c, 60.0, 1.0) == doctest::Approx(value_of_time(t, c, 60.0, 1.0)));
  }
  CHECK_THROWS_AS(value_of_time(-1.0, 0.0, 1.0, 1.0), Error);
}

TEST_CASE("cross-validation: folds partition the persons") {
  std::mt19937_64 rng(3);
  const ChoiceDataset ds = oracle::random_dataset(rng, 23, 2, 3, 2, 0, 0);
  const CvReport r = cross_validate(ds, ModelSpec{ModelKind::Mnl, 1}, 4, 9);
  std::vector<Index> all;
  for (const auto& f : r.folds) all.insert(all.end(), f.begin(), f.end());
  std::sort(all.begin(), all.end());
  CHECK(all.size() == 23);
  for (Index i = 0; i < 23; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
  CHECK(r.failed == 0);
  double sum = 0.0;
  for (const auto& v : r.fold_ll) sum += *v;
  CHECK(r.mean_ll == doctest::Approx(sum / 4.0));
}

TEST_CASE("cross-validation: identical halves score identically") {
  std::mt19937_64 rng(4);
  ChoiceDataset ds = oracle::random_dataset(rng, 30, 3, 3, 2, 1, 1);
  const auto half = ds.persons;
  for (auto p : half) {
    p.id = std::to_string(std::stoi(p.id) + 30);
    ds.persons.push_back(p);
  }
  std::vector<std::vector<Index>> folds(2);
  for (Index n = 0; n < 30; ++n) {
    folds[0].push_back(n);
    folds[1].push_back(n + 30);
  }
  for (const ModelSpec& spec : {ModelSpec{ModelKind::Mnl, 1}, ModelSpec{ModelKind::GbmLccm, 2, T}}) {
    CvOptions opt;
    opt.trials = 1;
    const CvReport r = cross_validate(ds, spec, folds, 5, opt);
    REQUIRE(r.failed == 0);
    CHECK(std::abs(*r.fold_ll[0] - *r.fold_ll[1]) < 1e-6);
  }
}

TEST_CASE("cross-validation: one class matches MNL fold by fold") {
  std::mt19937_64 rng(5);
  const ChoiceDataset ds = oracle::random_dataset(rng, 40, 3, 3, 2, 1, 2);
  const CvReport a = cross_validate(ds, ModelSpec{ModelKind::GbmLccm, 1}, 4, 11);
  const CvReport b = cross_validate(ds, ModelSpec{ModelKind::Mnl, 1}, 4, 11);
  for (std::size_t f = 0; f < 4; ++f) CHECK(std::abs(*a.fold_ll[f] - *b.fold_ll[f]) < 1e-6);
}

TEST_CASE("cross-validation: invalid fold counts") {
  std::mt19937_64 rng(6);
  const ChoiceDataset ds = oracle::random_dataset(rng, 5, 1, 3, 2, 0, 0);
  CHECK_THROWS_AS(cross_validate(ds, ModelSpec{ModelKind::Mnl, 1}, 6, 1), DataError);
  CHECK_THROWS_AS(cross_validate(ds, ModelSpec{ModelKind::Mnl, 1}, 1, 1), DataError);
}

TEST_CASE("cross-validation: deterministic and thread independent") {
  std::mt19937_64 rng(7);
  const GbmLccmParams truth = oracle::random_gbm_params(rng, 2, 1, 1, 2, T, 2.0);
  const ChoiceDataset ds = simulate_dataset(truth, 120, 3, AttributeSampler::uniform(3, 2), 8);
  CvOptions opt;
  opt.trials = 1;
  const ModelSpec spec{ModelKind::GbmLccm, 2, T};
  const CvReport a = cross_validate(ds, spec, 3, 2, opt);
  opt.threads = 3;
  const CvReport b = cross_validate(ds, spec, 3, 2, opt);
  CHECK(a.folds == b.folds);
  CHECK(a.fold_ll == b.fold_ll);
  CHECK(a.render() == b.render());
}

TEST_CASE("class profile: de-standardized means and binary complements") {
  GbmLccmParams g;
  g.membership.pi = Vector{{0.25, 0.75}};
  g.membership.mu_c = Matrix{{0.5}, {-1.0}};
  g.membership.sigma_c = Covariances::identity(F, 2, 1);
  g.membership.mu_d = Matrix{{0.3, 0.9}, {0.6, 0.1}};
  g.betas = {MnlParams::zeros(1), MnlParams::zeros(1)};
  StandardizationRecord rec;
  rec.entries.push_back({0, "age", 40.0, 10.0});
  const ClassProfile prof = class_profile(g, rec, {"age"}, {"female", "car"});
  CHECK(prof.shares == g.membership.pi);
  REQUIRE(prof.rows.size() == 5);
  CHECK(prof.rows[0].variable == "age");
  CHECK(prof.rows[0].values[0] == doctest::Approx(45.0));
  CHECK(prof.rows[0].values[1] == doctest::Approx(30.0));
  for (std::size_t r = 1; r < 5; r += 2) {
    CHECK(prof.rows[r].category == "Yes");
    CHECK(prof.rows[r + 1].category == "No");
    CHECK(((prof.rows[r].values + prof.rows[r + 1].values).array() - 1.0).abs().maxCoeff() < 1e-15);
  }
  const std::string text = prof.render();
  CHECK(text.find("Class 2") != std::string::npos);
  CHECK(text.find("45.000") != std::string::npos);
  CHECK_THROWS(class_profile(g, rec, {"age"}, {"female"}));
}

TEST_CASE("class profile: logit membership weights the sample") {
  std::mt19937_64 rng(9);
  const ChoiceDataset ds = oracle::random_dataset(rng, 25, 1, 3, 2, 1, 1);
  LccmParams l;
  l.gamma = Matrix{{0.4, 1.0, -0.7}};
  l.betas = {MnlParams::zeros(2), MnlParams::zeros(2)};
  const ClassProfile prof = class_profile(l, ds, StandardizationRecord{});
  Vector mass = Vector::Zero(2), cont = Vector::Zero(2), bin = Vector::Zero(2);
  for (const auto& p : ds.persons) {
    const Vector w = oracle::lccm_class_probs(p, l);
    mass += w;
    cont += w * p.s_cont[0];
    bin += w * p.s_bin[0];
  }
  CHECK((prof.shares - mass / 25.0).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((prof.rows[0].values - cont.cwiseQuotient(mass)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((prof.rows[1].values - bin.cwiseQuotient(mass)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(prof.shares.sum() == doctest::Approx(1.0));
}

TEST_CASE("standard errors: shrink with the square root of the sample size") {
  const Vector beta{{0.8, -0.5}};
  Vector se[2];
  const Index sizes[] = {1000, 4000};
  for (int i = 0; i < 2; ++i) {
    std::mt19937_64 rng(100 + i);
    const ChoiceDataset ds = mnl_data(rng, beta, sizes[i], 1);
    const FitResult fit = fit_mnl_result(ds);
    const auto est = standard_errors(ds, fit.params);
    REQUIRE(est.size() == 2);
    se[i] = Vector{{*est[0].se, *est[1].se}};
  }
  for (Index j = 0; j < 2; ++j) CHECK(std::abs(se[0][j] / se[1][j] - 2.0) < 0.4);
}

TEST_CASE("standard errors: match the analytic MNL information") {
  std::mt19937_64 rng(12);
  const ChoiceDataset ds = mnl_data(rng, Vector{{0.5, 1.0, -0.3}}, 400, 2);
  const FitResult fit = fit_mnl_result(ds);
  const Vector b = std::get<MnlParams>(fit.params).beta;
  // Fisher information sum over situations of X' (diag(p) - p p') X.
  Matrix info = Matrix::Zero(3, 3);
  for (const auto& p : ds.persons)
    for (const auto& s : p.situations) {
      Vector e = (s.attrs * b).array().exp();
      e /= e.sum();
      info += s.attrs.transpose() * (Matrix(e.asDiagonal()) - e * e.transpose()) * s.attrs;
    }
  const Matrix cov = info.inverse();
  const auto est = standard_errors(ds, fit.params);
  for (Index j = 0; j < 3; ++j) {
    CHECK(*est[static_cast<std::size_t>(j)].se == doctest::Approx(std::sqrt(cov(j, j))).epsilon(1e-3));
    CHECK(*est[static_cast<std::size_t>(j)].p_value ==
          doctest::Approx(two_sided(b[j] / std::sqrt(cov(j, j)))).epsilon(1e-2));
  }
}

TEST_CASE("standard errors: a null coefficient is rarely significant") {
  int kept = 0;
  for (int run = 0; run < 20; ++run) {
    std::mt19937_64 rng(200 + run);
    const ChoiceDataset ds = mnl_data(rng, Vector{{1.0, 0.0}}, 500, 1);
    const FitResult fit = fit_mnl_result(ds);
    const auto est = standard_errors(ds, fit.params);
    if (*est[1].p_value > 0.05) ++kept;
  }
  CHECK(kept >= 16);
}

TEST_CASE("standard errors: collinear attributes have none") {
  std::mt19937_64 rng(13);
  ChoiceDataset ds = mnl_data(rng, Vector{{0.7, 0.2}}, 200, 2);
  for (auto& p : ds.persons)
    for (auto& s : p.situations) {
      Matrix a(s.attrs.rows(), 3);
      a << s.attrs, s.attrs.col(0);
      s.attrs = a;
    }
  ds.attr_count = 3;
  ds.attr_names.push_back("x1_copy");
  const auto est = standard_errors(ds, ModelParams(MnlParams(Vector{{0.35, 0.2, 0.35}})));
  CHECK(!est[0].se);
  CHECK(!est[2].se);
  CHECK(est[1].se);
  const std::string text = render_estimates(est);
  CHECK(text.find("n/a") != std::string::npos);
  CHECK(text.find("x1_copy") != std::string::npos);
}

TEST_CASE("standard errors: GBM-LCCM parameter names and count") {
  std::mt19937_64 rng(14);
  const GbmLccmParams truth = oracle::random_gbm_params(rng, 2, 2, 1, 2, D, 2.0);
  const ChoiceDataset ds = simulate_dataset(truth, 300, 3, AttributeSampler::uniform(3, 2), 15);
  const FitResult fit = fit_gbm_lccm(ds, 2, D, {}, 1);
  const auto est = standard_errors(ds, fit.params);
  CHECK(static_cast<Index>(est.size()) == count_params(fit.params));
  CHECK(est.front().name == "pi.1");
  for (const auto& e : est)
    if (e.se) CHECK(*e.se > 0.0);
}

TEST_CASE("summary: row values and rendering") {
  std::mt19937_64 rng(16);
  const ChoiceDataset ds = oracle::random_dataset(rng, 30, 2, 3, 2, 1, 1);
  FitResult fit = fit_gbm_lccm(ds, 2, T, {}, 3);
  fit.restarts.resize(3);
  fit.completed_restarts = 2;
  const ModelSummary s = summarize(fit, ds.situation_count());
  CHECK(s.model == to_string(ModelKind::GbmLccm));
  CHECK(s.structure == "tied");
  CHECK(s.params == count_params(fit.params));
  CHECK(s.aic == doctest::Approx(-2.0 * fit.marginal_ll + 2.0 * static_cast<double>(s.params)));
  CHECK(s.notes.find("1 restarts failed") != std::string::npos);

  const ModelSummary mnl = summarize(fit_mnl_result(ds), ds.situation_count());
  const std::string table = render_summary({mnl, s});
  std::istringstream lines(table);
  std::string header, first, second;
  std::getline(lines, header);
  std::getline(lines, first);
  std::getline(lines, second);
  CHECK(header.rfind("Model", 0) == 0);
  CHECK(header.find("Pred LL") != std::string::npos);
  CHECK(first.find(" - ") != std::string::npos);  // MNL has no structure or joint LL

  KeyValueFile kv;
  s.to_kv(kv, "row.");
  CHECK(kv.get_double("row.marginal_ll") == s.marginal_ll);
  CHECK(kv.get_int("row.params") == s.params);
  CHECK(kv.at("row.structure") == "tied");
}
