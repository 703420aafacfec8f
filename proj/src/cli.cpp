#include "lccm/cli.hpp"

#include "lccm/metrics.hpp"
#include "lccm/model_io.hpp"
#include "lccm/simulate.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <ostream>
#include <random>

namespace fs = std::filesystem;

namespace lccm {

namespace {

// Invalid configuration: bad flag values, unknown columns, malformed files.
class ConfigError : public Error {
public:
  using Error::Error;
};

template <class F>
auto configure(F&& f) {
  try {
    return f();
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

struct DataFlags {
  std::string data;
  std::string schema;
  std::string spec;
  std::vector<std::string> standardize;
};

struct FitFlags {
  std::string model = "gbm-lccm";
  int classes = 2;
  std::string structure = "full";
  std::string init = "grid";
  int restarts = 5;
  bool no_incremental = false;
  double tol = 1e-7;
  int max_iter = 500;
};

struct Common {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out = ".";
};

void add_data_flags(CLI::App* cmd, DataFlags& d, bool data_required = true) {
  auto* o = cmd->add_option("--data", d.data, "long-format choice CSV");
  if (data_required) o->required();
  cmd->add_option("--schema", d.schema, "column mapping file (default: the data file's .meta sidecar)");
  cmd->add_option("--spec", d.spec, "choice specification file (coefficient.<name> = columns)");
  cmd->add_option("--standardize", d.standardize, "continuous characteristics to standardize")
      ->delimiter(',');
}

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--model", f.model, "mnl | lccm | gbm-lccm")->capture_default_str();
  cmd->add_option("--classes", f.classes, "number of latent classes K")->capture_default_str();
  cmd->add_option("--structure", f.structure, "full | tied | diagonal | spherical")->capture_default_str();
  cmd->add_option("--init", f.init, "grid, or one strategy such as kmeans/zero")->capture_default_str();
  cmd->add_option("--restarts", f.restarts, "trials per strategy")->capture_default_str();
  cmd->add_flag("--no-incremental", f.no_incremental, "skip incremental starts from the K-1 model");
  cmd->add_option("--tol", f.tol, "relative log-likelihood tolerance")->capture_default_str();
  cmd->add_option("--max-iter", f.max_iter, "EM iteration cap")->capture_default_str();
}

void add_common(CLI::App* cmd, Common& c, const char* out_help) {
  cmd->add_option("--seed", c.seed, "base random seed")->capture_default_str();
  cmd->add_option("--threads", c.threads, "worker threads")->capture_default_str();
  cmd->add_option("--out", c.out, out_help)->capture_default_str();
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " '" + path + "' not found");
}

Schema read_schema(const DataFlags& d) {
  if (!d.schema.empty()) {
    require_file(d.schema, "schema file");
    return configure([&] { return Schema::from_kv(KeyValueFile::read(d.schema)); });
  }
  const std::string meta = d.data + ".meta";
  if (fs::is_regular_file(meta))
    return configure([&] { return Schema::from_kv(KeyValueFile::read(meta), "schema."); });
  throw ConfigError("no --schema given and no '" + meta + "' sidecar");
}

ChoiceSpec read_spec(const DataFlags& d) {
  if (d.spec.empty()) return {};
  require_file(d.spec, "choice specification");
  return configure([&] { return ChoiceSpec::from_kv(KeyValueFile::read(d.spec)); });
}

std::vector<Index> continuous_indices(const ChoiceDataset& ds, const std::vector<std::string>& names) {
  std::vector<Index> out;
  for (const auto& n : names) {
    const auto it = std::find(ds.cont_names.begin(), ds.cont_names.end(), n);
    if (it == ds.cont_names.end())
      throw ConfigError("--standardize: '" + n + "' is not a continuous characteristic");
    out.push_back(static_cast<Index>(it - ds.cont_names.begin()));
  }
  return out;
}

struct Prepared {
  Schema schema;
  ChoiceSpec spec;
  ChoiceDataset mapped;  // after the choice specification, before standardization
  std::vector<Index> standardize;
};

Prepared prepare(const DataFlags& d) {
  require_file(d.data, "data file");
  Prepared p;
  p.schema = read_schema(d);
  p.spec = read_spec(d);
  p.mapped = configure([&] { return p.spec.apply(load_dataset(d.data, p.schema)); });
  p.standardize = continuous_indices(p.mapped, d.standardize);
  return p;
}

ModelSpec model_spec(const FitFlags& f) {
  return configure([&] {
    ModelSpec s;
    s.kind = parse_model_kind(f.model);
    s.structure = parse_structure(f.structure);
    if (f.classes < 1) throw Error("--classes must be at least 1");
    if (f.max_iter < 1) throw Error("--max-iter must be at least 1");
    if (!(f.tol > 0.0)) throw Error("--tol must be positive");
    s.classes = s.kind == ModelKind::Mnl ? 1 : f.classes;
    s.em.tol = f.tol;
    s.em.max_iter = f.max_iter;
    return s;
  });
}

RestartPlan restart_plan(const ModelSpec& spec, const FitFlags& f, const Common& c) {
  return configure([&] {
    if (f.restarts < 1) throw Error("--restarts must be at least 1");
    if (c.threads < 1) throw Error("--threads must be at least 1");
    RestartPlan plan;
    if (f.init == "grid") {
      plan = restart_grid(spec, c.seed, f.restarts, !f.no_incremental);
    } else {
      const InitStrategy s = parse_init(f.init);
      plan.seed = c.seed;
      plan.trials = f.restarts;
      for (int i = 0; i < f.restarts; ++i)
        plan.entries.push_back({s, derive_seed(c.seed, static_cast<std::uint64_t>(i))});
    }
    plan.threads = c.threads;
    return plan;
  });
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("cannot write '" + path.string() + "'");
}

fs::path output_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
  return dir;
}

std::string convergence_log(const FitResult& fit) {
  std::string s = "# iteration log_likelihood seconds\n";
  for (std::size_t i = 0; i < fit.ll_trace.size(); ++i) {
    const double sec = i == 0 || i > fit.iteration_seconds.size() ? 0.0 : fit.iteration_seconds[i - 1];
    s += std::to_string(i) + " " + format_double(fit.ll_trace[i]) + " " + format_double(sec) + "\n";
  }
  return s;
}

// -- commands ---------------------------------------------------------------

int cmd_estimate(const DataFlags& d, const FitFlags& f, const Common& c, bool with_se, std::ostream& out,
                 std::ostream& err) {
  const Prepared p = prepare(d);
  const ModelSpec spec = model_spec(f);
  const RestartPlan plan = restart_plan(spec, f, c);
  auto [ds, record] = configure([&] { return standardize(p.mapped, p.standardize); });
  const fs::path dir = output_dir(c.out);

  FittedModel fm;
  fm.fit = run_restarts(ds, spec, plan);
  fm.structure = spec.structure;
  fm.schema = p.schema;
  fm.choice = p.spec;
  fm.standardization = record;
  fm.alt_labels = ds.alt_labels;
  fm.attr_names = ds.attr_names;
  fm.cont_names = ds.cont_names;
  fm.bin_names = ds.bin_names;
  fm.persons = ds.person_count();
  fm.situations = ds.situation_count();
  fm.write(dir / "model.txt");

  const ModelSummary summary = summarize(fm.fit, ds.situation_count());
  const std::string table = render_summary({summary});
  KeyValueFile skv;
  summary.to_kv(skv);
  write_text(dir / "summary.txt", table);
  skv.write(dir / "summary.kv");
  write_text(dir / "convergence.log", convergence_log(fm.fit));
  out << table;
  if (with_se) {
    const std::string est = render_estimates(standard_errors(ds, fm.fit.params));
    write_text(dir / "estimates.txt", est);
    out << "\n" << est;
  }
  for (const auto& w : fm.fit.warnings) err << "warning: " << w << "\n";
  for (const auto& r : fm.fit.restarts)
    if (!r.completed) err << "restart " << to_string(r.init) << " seed " << r.seed << " failed: " << r.error << "\n";
  return kExitOk;
}

int cmd_predict(const std::string& fit_path, const DataFlags& d, const Common& c, std::ostream& out) {
  require_file(fit_path, "model file");
  require_file(d.data, "data file");
  const FittedModel fm = configure([&] { return FittedModel::read(fit_path); });
  Schema schema = fm.schema;
  if (!d.schema.empty()) schema = read_schema(d);
  const ChoiceDataset raw = configure([&] { return load_dataset(d.data, schema); });
  const ChoiceDataset ds = configure([&] { return fm.prepare(raw); });
  const Prediction pred = configure([&] { return predict(fm.fit.params, ds); });

  const fs::path dir = output_dir(c.out);
  std::string csv = "person,situation";
  for (const auto& a : ds.alt_labels) csv += "," + a;
  csv += "\n";
  Index row = 0;
  for (const auto& person : ds.persons)
    for (std::size_t t = 0; t < person.situations.size(); ++t, ++row) {
      csv += person.id + "," + std::to_string(t + 1);
      for (Index j = 0; j < ds.alt_count; ++j) csv += "," + format_double(pred.probabilities(row, j));
      csv += "\n";
    }
  write_text(dir / "probabilities.csv", csv);
  KeyValueFile kv;
  kv.set("predictive_ll", format_double(pred.total_ll));
  kv.set("persons", std::to_string(ds.person_count()));
  kv.set("situations", std::to_string(ds.situation_count()));
  kv.write(dir / "prediction.kv");
  out << "predictive_ll = " << format_double(pred.total_ll) << "\n";
  return kExitOk;
}

int cmd_cv(const DataFlags& d, const FitFlags& f, const Common& c, int k, std::ostream& out,
           std::ostream& err) {
  const Prepared p = prepare(d);
  const ModelSpec spec = model_spec(f);
  if (f.init != "grid") throw ConfigError("cross-validation uses the restart grid");
  restart_plan(spec, f, c);  // validates the flags
  const auto folds = configure([&] { return split_folds(p.mapped, k, c.seed); });
  CvOptions opt;
  opt.trials = f.restarts;
  opt.incremental = !f.no_incremental;
  opt.threads = c.threads;
  opt.standardize = p.standardize;
  const CvReport rep = cross_validate(p.mapped, spec, folds, c.seed, opt);
  const fs::path dir = output_dir(c.out);
  const std::string text = rep.render();
  write_text(dir / "cv.txt", text);
  out << text;
  if (rep.failed > 0) {
    for (std::size_t i = 0; i < rep.fold_errors.size(); ++i)
      if (!rep.fold_errors[i].empty()) err << "fold " << i + 1 << ": " << rep.fold_errors[i] << "\n";
    return kExitEstimation;
  }
  return kExitOk;
}

int cmd_simulate(const std::string& params_path, long long persons, long long periods, const Common& c,
                 std::ostream& out) {
  require_file(params_path, "parameter file");
  const auto [params, sampler] = configure([&] {
    const KeyValueFile kv = KeyValueFile::read(params_path);
    const ModelParams mp = params_from_kv(kv);
    const auto* g = std::get_if<GbmLccmParams>(&mp);
    if (!g) throw Error("simulation needs gbm-lccm parameters");
    return std::pair{*g, AttributeSampler::from_kv(kv, "sampler.")};
  });
  if (persons < 1) throw ConfigError("--persons must be at least 1");
  if (periods < 1) throw ConfigError("--periods must be at least 1");
  const ChoiceDataset ds = configure([&] { return simulate_dataset(params, persons, periods, sampler, c.seed); });
  if (c.out == ".") throw ConfigError("--out must name the CSV to write");
  if (const fs::path parent = fs::path(c.out).parent_path(); !parent.empty()) output_dir(parent.string());
  write_dataset(ds, c.out);
  out << "wrote " << ds.person_count() << " persons, " << ds.situation_count() << " situations to " << c.out
      << "\n";
  return kExitOk;
}

int cmd_profile(const std::string& fit_path, const DataFlags& d, std::ostream& out) {
  require_file(fit_path, "model file");
  const FittedModel fm = configure([&] { return FittedModel::read(fit_path); });
  ClassProfile prof;
  if (const auto* g = std::get_if<GbmLccmParams>(&fm.fit.params)) {
    prof = class_profile(*g, fm.standardization, fm.cont_names, fm.bin_names);
  } else if (const auto* l = std::get_if<LccmParams>(&fm.fit.params)) {
    if (d.data.empty()) throw ConfigError("profiling an lccm model needs --data");
    require_file(d.data, "data file");
    Schema schema = d.schema.empty() ? fm.schema : read_schema(d);
    const ChoiceDataset ds = configure([&] { return fm.prepare(load_dataset(d.data, schema)); });
    prof = class_profile(*l, ds, fm.standardization);
  } else {
    throw ConfigError("an mnl model has no latent classes to profile");
  }
  out << prof.render();
  return kExitOk;
}

int cmd_gradcheck(const DataFlags& d, const Common& c, int trials, std::ostream& out) {
  const Prepared p = prepare(d);
  const PanelDesign design(p.mapped);
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> coef(-1.0, 1.0), weight(0.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Vector beta(design.attr_count());
    for (Index i = 0; i < beta.size(); ++i) beta[i] = coef(rng);
    Vector w(design.person_count());
    for (Index n = 0; n < w.size(); ++n) w[n] = weight(rng);
    const Objective obj = [&](const Vector& b, Vector& g) {
      LogLikGrad r = weighted_panel_loglik(design, b, w);
      g = std::move(r.gradient);
      return r.value;
    };
    worst = std::max(worst, check_gradient(obj, beta, 1e-5));
  }
  out << "max relative gradient error over " << trials << " points: " << format_double(worst) << "\n";
  return worst < 1e-6 ? kExitOk : kExitEstimation;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent class choice models estimated by EM"};
  app.set_config("--config", "", "key = value run configuration; flags override it");
  app.require_subcommand(1);

  DataFlags data;
  FitFlags fit;
  Common common;
  bool with_se = false;
  std::string fit_path, params_path;
  int k = 5, trials = 10;
  long long persons = 0, periods = 1;

  auto* estimate = app.add_subcommand("estimate", "estimate a model with the restart protocol");
  add_data_flags(estimate, data);
  add_fit_flags(estimate, fit);
  add_common(estimate, common, "output directory");
  estimate->add_flag("--se", with_se, "finite-difference standard errors and p-values");

  auto* predict_cmd = app.add_subcommand("predict", "predictive log-likelihood and choice probabilities");
  predict_cmd->add_option("--fit", fit_path, "fitted-model file")->required();
  add_data_flags(predict_cmd, data);
  add_common(predict_cmd, common, "output directory");

  auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
  add_data_flags(cv, data);
  add_fit_flags(cv, fit);
  add_common(cv, common, "output directory");
  cv->add_option("--k", k, "number of folds")->capture_default_str();

  auto* simulate = app.add_subcommand("simulate", "draw a synthetic dataset from gbm-lccm parameters");
  simulate->add_option("--params", params_path, "parameter file with sampler.* keys")->required();
  simulate->add_option("--persons", persons, "number of persons")->required();
  simulate->add_option("--periods", periods, "choice situations per person")->capture_default_str();
  add_common(simulate, common, "CSV to write (a .meta sidecar is written next to it)");

  auto* profile = app.add_subcommand("profile", "class profile of a fitted latent class model");
  profile->add_option("--fit", fit_path, "fitted-model file")->required();
  add_data_flags(profile, data, false);

  auto* gradcheck = app.add_subcommand("gradcheck", "check the logit gradient against finite differences");
  add_data_flags(gradcheck, data);
  gradcheck->add_option("--seed", common.seed, "random seed")->capture_default_str();
  gradcheck->add_option("--trials", trials, "random points to test")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*estimate) return cmd_estimate(data, fit, common, with_se, out, err);
    if (*predict_cmd) return cmd_predict(fit_path, data, common, out);
    if (*cv) return cmd_cv(data, fit, common, k, out, err);
    if (*simulate) return cmd_simulate(params_path, persons, periods, common, out);
    if (*profile) return cmd_profile(fit_path, data, out);
    if (*gradcheck) return cmd_gradcheck(data, common, trials, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "estimation failed: " << e.what() << "\n";
    return kExitEstimation;
  }
  return kExitConfig;
}

}  // namespace lccm
