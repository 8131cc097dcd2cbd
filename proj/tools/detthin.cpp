// detthin: generate training sets, fit thinning models, estimate functionals
// and validate fitted models against fresh test-case samples.
//
// Exit codes: 0 success, 1 validation threshold failed, 2 input error,
// 3 fit did not converge, 4 numeric failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "detthin/detthin.hpp"

using namespace detthin;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum Exit { ok = 0, threshold_failed = 1, input_error = 2, not_converged = 3, numeric_failure = 4 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_argument:
    case ErrorKind::invalid_training_pair:
    case ErrorKind::invalid_subset:
    case ErrorKind::invalid_function:
    case ErrorKind::too_large:
    case ErrorKind::io:
      return input_error;
    default:
      return numeric_failure;
  }
}

std::vector<double> parse_numbers(const std::string& s, const char* what) {
  std::vector<double> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      fail(ErrorKind::invalid_argument, std::string("bad number in ") + what + ": '" + tok + "'");
    }
  }
  return out;
}

Point parse_point(const std::string& s, const char* what) {
  const auto v = parse_numbers(s, what);
  if (v.size() != 2) fail(ErrorKind::invalid_argument, std::string(what) + " needs x,y");
  return {v[0], v[1]};
}

// disk:r, disk:cx,cy,r or rect:x0,x1,y0,y1
Region parse_region(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) fail(ErrorKind::invalid_argument, "region must look like disk:r or rect:x0,x1,y0,y1");
  const auto kind = s.substr(0, colon);
  const auto v = parse_numbers(s.substr(colon + 1), "region");
  if (kind == "disk" && v.size() == 1) return Disk{{0.0, 0.0}, v[0]};
  if (kind == "disk" && v.size() == 3) return Disk{{v[0], v[1]}, v[2]};
  if ((kind == "rect" || kind == "rectangle") && v.size() == 4) return Rect{v[0], v[1], v[2], v[3]};
  fail(ErrorKind::invalid_argument, "cannot parse region '" + s + "'");
}

Window parse_window(const std::string& s) { return Window(parse_region(s)); }

std::string read_input(const std::string& path) { return io::read_file(path); }

/// Primary output goes to `out`, or stdout when no path is given.
void emit(const std::string& out, const std::string& content) {
  if (out.empty() || out == "-")
    std::cout << content << std::flush;
  else
    io::write_atomic(out, content);
}

struct Run {
  std::string command;
  CLI::App* app = nullptr;
  std::string config_path;
  std::string out;
  std::string manifest;
  std::uint64_t seed = 1;
  std::vector<std::string> inputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  Run(std::string name, CLI::App* sub) : command(std::move(name)), app(sub) {}

  void common_options() {
    app->add_option("--seed", seed, "Master seed")->capture_default_str();
    app->add_option("--config", config_path, "JSON object whose keys override flags of the same name");
    app->add_option("--out", out, "Output path (stdout when omitted)");
    app->add_option("--manifest", manifest, "Run manifest path (default <out>.manifest.json)");
  }

  /// Applies the --config overrides to the parsed options.
  void apply_config() {
    if (config_path.empty()) return;
    inputs.push_back(config_path);
    json j;
    try {
      j = json::parse(read_input(config_path));
    } catch (const json::exception& e) {
      fail(ErrorKind::invalid_argument, "bad config " + config_path + ": " + e.what());
    }
    if (!j.is_object()) fail(ErrorKind::invalid_argument, "config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "config") continue;
      CLI::Option* opt = app->get_option_no_throw("--" + key);
      if (opt == nullptr) opt = app->get_option_no_throw(key);
      if (opt == nullptr) fail(ErrorKind::invalid_argument, "unknown config key '" + key + "'");
      std::string text;
      if (value.is_string()) {
        text = value.get<std::string>();
      } else if (value.is_array()) {
        for (std::size_t i = 0; i < value.size(); ++i)
          text += (i ? "," : "") + (value[i].is_string() ? value[i].get<std::string>() : value[i].dump());
      } else {
        text = value.dump();
      }
      opt->clear();
      opt->add_result(text);
      opt->run_callback();
    }
  }

  json resolved_config() const {
    json c = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_name() == "--help" || opt->get_name() == "--config" || opt->get_name() == "--manifest") continue;
      const auto& res = opt->results();
      std::string v;
      for (std::size_t i = 0; i < res.size(); ++i) v += (i ? "," : "") + res[i];
      if (res.empty()) v = opt->get_default_str();
      auto name = opt->get_name(false, true);
      while (!name.empty() && name.front() == '-') name.erase(0, 1);
      c[name] = v;
    }
    return c;
  }

  /// Written once, at the end of a run that produced its output.
  void write_manifest() const {
    json files_in = json::array();
    for (const auto& p : inputs) files_in.push_back({{"path", p}, {"digest", io::digest(read_input(p))}});
    json files_out = json::array();
    if (!out.empty() && out != "-") files_out.push_back({{"path", out}, {"digest", io::digest(read_input(out))}});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const json m{{"command", command},
                 {"config", resolved_config()},
                 {"seed", seed},
                 {"threads", detail::resolve_threads(0)},
                 {"inputs", files_in},
                 {"outputs", files_out},
                 {"wall_seconds", secs}};
    std::string path = manifest;
    if (path.empty()) path = (out.empty() || out == "-") ? "detthin-" + command + ".manifest.json" : out + ".manifest.json";
    io::write_atomic(path, m.dump(2) + "\n");
  }
};

// --- generate ----------------------------------------------------------------

struct GenerateArgs {
  std::string kind;
  double lambda = 10.0;
  double r_m = 0.2530;
  double r_t = 0.6325;
  double retain = 0.5;
  std::string window = "disk:1";
  std::string model;
  std::size_t count = 100;
};

ThinningProcess make_process(const std::string& kind, double lambda, double r_m, double r_t, double retain,
                             const Window& w, const std::string& model_path, Run& run) {
  if (!(lambda > 0.0)) fail(ErrorKind::invalid_argument, "lambda must be positive");
  if (kind == "matern2") {
    if (!(r_m > 0.0)) fail(ErrorKind::invalid_argument, "rm must be positive");
    return matern2_process(lambda, r_m, w);
  }
  if (kind == "triangle") {
    if (!(r_t > 0.0)) fail(ErrorKind::invalid_argument, "rt must be positive");
    return triangle_process(lambda, r_t, w);
  }
  if (kind == "poisson") return poisson_process(lambda, retain, w);
  if (kind == "model") {
    if (model_path.empty()) fail(ErrorKind::invalid_argument, "kind 'model' needs a model file");
    run.inputs.push_back(model_path);
    return model_process(io::read_model(model_path));
  }
  fail(ErrorKind::invalid_argument, "unknown kind '" + kind + "' (matern2|triangle|poisson|model)");
}

void add_process_options(CLI::App* app, GenerateArgs& a, const std::string& model_flag) {
  app->add_option("--lambda", a.lambda, "Poisson intensity")->capture_default_str();
  app->add_option("--rm", a.r_m, "Matérn II hard-core radius")->capture_default_str();
  app->add_option("--rt", a.r_t, "Triangle threshold")->capture_default_str();
  app->add_option("--retain", a.retain, "Retention probability for kind poisson")->capture_default_str();
  app->add_option("--window", a.window, "disk:r, disk:cx,cy,r or rect:x0,x1,y0,y1")->capture_default_str();
  app->add_option(model_flag, a.model, "Model file for kind model");
}

int run_generate(Run& run, const GenerateArgs& a) {
  const auto proc = make_process(a.kind, a.lambda, a.r_m, a.r_t, a.retain, parse_window(a.window), a.model, run);
  const auto data = generate_training(proc, a.count, run.seed);
  emit(run.out, io::training_jsonl(data));
  std::size_t full = 0, kept = 0;
  for (const auto& d : data) {
    full += d.full.size();
    kept += d.retained_idx.size();
  }
  std::fprintf(stderr, "generated %zu pairs (%zu points, %zu retained)\n", data.size(), full, kept);
  return ok;
}

// --- fit ---------------------------------------------------------------------

struct FitArgs {
  std::string training;
  std::string mask = "theta0,theta1,theta2,theta3,sigma";
  std::string sigma_grid;
  std::string init_theta;
  std::string features = "const,d1,d2,d3";
  std::size_t max_iters = 200;
  double grad_tol = 1e-6;
};

FitConfig make_fit_config(const FitArgs& a) {
  FitConfig cfg;
  cfg.features = io::parse_feature_spec(a.features);
  const auto p = cfg.features.size();
  cfg.theta_mask.assign(p, false);
  cfg.init_theta.assign(p, 0.0);
  bool fit_sigma = false;
  std::istringstream in(a.mask);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (tok == "sigma") {
      fit_sigma = true;
      continue;
    }
    std::size_t k = p;
    if (tok.rfind("theta", 0) == 0 && tok.size() > 5) {
      try {
        k = std::stoul(tok.substr(5));
      } catch (const std::exception&) {
      }
    }
    if (k >= p) fail(ErrorKind::invalid_argument, "bad mask entry '" + tok + "'");
    cfg.theta_mask[k] = true;
  }
  if (!a.init_theta.empty()) {
    const auto v = parse_numbers(a.init_theta, "init-theta");
    if (v.size() != p) fail(ErrorKind::invalid_argument, "init-theta needs one value per feature");
    cfg.init_theta = v;
  }
  if (!a.sigma_grid.empty())
    cfg.sigma_grid = parse_numbers(a.sigma_grid, "sigma-grid");
  else if (!fit_sigma)
    cfg.sigma_grid = {0.0};
  cfg.max_iters = a.max_iters;
  cfg.grad_tol = a.grad_tol;
  return cfg;
}

int run_fit(Run& run, const FitArgs& a) {
  const auto cfg = make_fit_config(a);
  run.inputs.push_back(a.training);
  const auto data = io::read_training(a.training);
  if (data.empty()) fail(ErrorKind::invalid_argument, "training file has no pairs");
  const auto r = fit(data, cfg);
  const auto m = to_model(r, {estimate_intensity(data), data.front().full.window()});
  emit(run.out, io::fit_result_to_json(r, m).dump(2) + "\n");
  std::fprintf(stderr, "loglik %.6f sigma %.6g theta", r.loglik_star, r.sigma_star);
  for (double t : r.theta_star) std::fprintf(stderr, " %.6g", t);
  std::fprintf(stderr, " iterations %zu%s\n", r.iterations, r.converged ? "" : " (not converged)");
  return r.converged ? ok : not_converged;
}

// --- estimate ----------------------------------------------------------------

struct EstimateArgs {
  std::string model;
  std::string quantity;
  std::string center = "0,0";
  std::string at = "0,0";
  std::string region;
  std::string f = "zero";
  std::size_t n = 1000;
  double r_max = 0.0;
  std::size_t grid_size = default_grid_size;
  bool isotonic = false;
};

SpatialFunction parse_function(const std::string& s) {
  if (s == "zero") return [](Point) { return 0.0; };
  if (s == "norm") return [](Point x) { return std::hypot(x.x, x.y); };
  if (s.rfind("const:", 0) == 0) {
    const double c = parse_numbers(s.substr(6), "f").at(0);
    return [c](Point) { return c; };
  }
  fail(ErrorKind::invalid_argument, "unknown function '" + s + "' (zero|norm|const:c)");
}

MCConfig mc_config(const Run& run, std::size_t n, double r_max, std::size_t grid_size, bool isotonic) {
  MCConfig cfg;
  cfg.n_samples = n;
  cfg.seed = run.seed;
  if (r_max > 0.0) cfg.grid = linear_grid(r_max, grid_size);
  cfg.isotonic = isotonic;
  return cfg;
}

int run_estimate(Run& run, const EstimateArgs& a) {
  static const std::vector<std::string> known{"G", "H", "J", "void", "laplace", "intensity", "retention"};
  if (std::find(known.begin(), known.end(), a.quantity) == known.end())
    fail(ErrorKind::invalid_argument, "unknown quantity '" + a.quantity + "'");
  run.inputs.push_back(a.model);
  const auto m = io::read_model(a.model);
  auto cfg = mc_config(run, a.n, a.r_max, a.grid_size, a.isotonic);
  const Point at = parse_point(a.at, "at");
  const Point center = parse_point(a.center, "center");
  auto region = [&] {
    if (a.region.empty()) fail(ErrorKind::invalid_argument, "quantity '" + a.quantity + "' needs --region");
    return parse_region(a.region);
  };

  if (a.quantity == "G") {
    emit(run.out, io::curve_csv(nearest_neighbour_dist(m, at, cfg)));
  } else if (a.quantity == "H") {
    emit(run.out, io::curve_csv(contact_dist(m, center, cfg)));
  } else if (a.quantity == "J") {
    if (cfg.grid.empty())
      cfg.grid = linear_grid(std::min(inradius_at(m.poisson.window.shape(), at),
                                      inradius_at(m.poisson.window.shape(), center)),
                             a.grid_size);
    const auto g = nearest_neighbour_dist(m, at, cfg);
    const auto h = contact_dist(m, center, cfg);
    emit(run.out, io::curve_csv(j_function(g, h)));
  } else if (a.quantity == "void") {
    emit(run.out, io::estimate_json("void", void_probability(m, region(), cfg)));
  } else if (a.quantity == "laplace") {
    emit(run.out, io::estimate_json("laplace", laplace_functional(m, parse_function(a.f), cfg)));
  } else if (a.quantity == "intensity") {
    emit(run.out, io::estimate_json("intensity", intensity_measure(m, region(), cfg)));
  } else {
    emit(run.out, io::estimate_json("retention", retention_probability(m, at, cfg)));
  }
  return ok;
}

// --- validate ----------------------------------------------------------------

struct ValidateArgs {
  std::string model;
  GenerateArgs testcase;
  std::string at;
  std::size_t n = 2000;
  double h_threshold = 0.05;
  double g_threshold = 0.05;
};

json curve_report(const EstimateCurve& model, const EstimateCurve& empirical, double threshold) {
  json pts = json::array();
  double max_z = 0.0;
  for (std::size_t i = 0; i < std::min(model.size(), empirical.size()); ++i) {
    const double se = combined_se(model, empirical, i);
    max_z = std::max(max_z, std::abs(model.values[i] - empirical.values[i]) / se);
    pts.push_back({{"r", model.radii[i]},
                   {"model", model.values[i]},
                   {"model_se", model.std_errors[i]},
                   {"empirical", empirical.values[i]},
                   {"empirical_se", empirical.std_errors[i]}});
  }
  const double sup = sup_distance(model, empirical);
  json j{{"sup_distance", sup}, {"max_abs_z", max_z}, {"points", pts}};
  if (threshold > 0.0) {
    j["threshold"] = threshold;
    j["pass"] = sup <= threshold;
  } else {
    j["threshold"] = nullptr;
  }
  return j;
}

int run_validate(Run& run, const ValidateArgs& a) {
  run.inputs.push_back(a.model);
  const auto m = io::read_model(a.model);
  const auto& tc = a.testcase;
  const Window w = tc.window.empty() ? m.poisson.window : parse_window(tc.window);
  const auto proc = make_process(tc.kind, tc.lambda, tc.r_m, tc.r_t, tc.retain, w, tc.model, run);
  const Point u = a.at.empty() ? w.center() : parse_point(a.at, "at");

  MCConfig model_cfg;
  model_cfg.n_samples = a.n;
  model_cfg.seed = derive_seed(run.seed, "validate-model");
  model_cfg.grid = linear_grid(std::min(inradius_at(w.shape(), u), inradius_at(m.poisson.window.shape(), u)));
  MCConfig emp_cfg = model_cfg;
  emp_cfg.seed = derive_seed(run.seed, "validate-testcase");

  const auto g_model = nearest_neighbour_dist(m, u, model_cfg);
  const auto h_model = contact_dist(m, u, model_cfg);
  const auto g_emp = empirical_palm_nn(proc, u, emp_cfg);
  const auto h_emp = empirical_contact(proc, u, emp_cfg);

  const auto h = curve_report(h_model, h_emp, a.h_threshold);
  const auto g = curve_report(g_model, g_emp, a.g_threshold);
  // J only where 1 - H is not close to 0 on either side.
  std::size_t j_len = 0;
  while (j_len < h_model.size() && 1.0 - h_model.values[j_len] >= 0.1 && 1.0 - h_emp.values[j_len] >= 0.1) ++j_len;
  auto head = [j_len](EstimateCurve c) {
    c.radii.resize(j_len);
    c.values.resize(j_len);
    c.std_errors.resize(j_len);
    return c;
  };
  const auto jr = curve_report(j_function(head(g_model), head(h_model)), j_function(head(g_emp), head(h_emp)), 0.0);
  const bool pass = h.value("pass", true) && g.value("pass", true);
  const json report{{"testcase", proc.name},
                    {"location", {u.x, u.y}},
                    {"replicates", a.n},
                    {"threshold_note", "sup-distance thresholds are calibration choices, not derived bounds"},
                    {"H", h},
                    {"G", g},
                    {"J", jr},
                    {"pass", pass}};
  emit(run.out, report.dump(2) + "\n");
  std::fprintf(stderr, "H sup %.4f (threshold %.3g) %s\n", h["sup_distance"].get<double>(), a.h_threshold,
               h.value("pass", true) ? "PASS" : "FAIL");
  std::fprintf(stderr, "G sup %.4f (threshold %.3g) %s\n", g["sup_distance"].get<double>(), a.g_threshold,
               g.value("pass", true) ? "PASS" : "FAIL");
  std::fprintf(stderr, "J sup %.4f (no threshold)\n", jr["sup_distance"].get<double>());
  return pass ? ok : threshold_failed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Determinantally-thinned Poisson point processes"};
  app.require_subcommand(1);

  Run gen_run{"generate", app.add_subcommand("generate", "Simulate training pairs")};
  GenerateArgs gen;
  gen_run.common_options();
  gen_run.app->add_option("kind", gen.kind, "matern2|triangle|poisson|model")->required();
  add_process_options(gen_run.app, gen, "--model");
  gen_run.app->add_option("--T", gen.count, "Number of pairs")->capture_default_str();

  Run fit_run{"fit", app.add_subcommand("fit", "Maximum-likelihood fit of (theta, sigma)")};
  FitArgs fa;
  fit_run.common_options();
  fit_run.app->add_option("training", fa.training, "Training set (JSON lines)")->required();
  fit_run.app->add_option("--mask", fa.mask, "Free parameters, e.g. theta0,sigma")->capture_default_str();
  fit_run.app->add_option("--sigma-grid", fa.sigma_grid, "Comma-separated sigma candidates (0 = identity)");
  fit_run.app->add_option("--init-theta", fa.init_theta, "Start and fixed values of theta");
  fit_run.app->add_option("--features", fa.features, "Feature list")->capture_default_str();
  fit_run.app->add_option("--max-iters", fa.max_iters)->capture_default_str();
  fit_run.app->add_option("--grad-tol", fa.grad_tol)->capture_default_str();

  Run est_run{"estimate", app.add_subcommand("estimate", "Semi-analytic functionals of a model")};
  EstimateArgs ea;
  est_run.common_options();
  est_run.app->add_option("model", ea.model, "Model file")->required();
  est_run.app->add_option("--quantity", ea.quantity, "G|H|J|void|laplace|intensity|retention")->required();
  est_run.app->add_option("--center", ea.center, "Location for H")->capture_default_str();
  est_run.app->add_option("--at", ea.at, "Location for G and retention")->capture_default_str();
  est_run.app->add_option("--region", ea.region, "Region for void and intensity");
  est_run.app->add_option("--f", ea.f, "Laplace function: zero|norm|const:c")->capture_default_str();
  est_run.app->add_option("--n", ea.n, "Poisson replicates")->capture_default_str();
  est_run.app->add_option("--r-max", ea.r_max, "Largest radius (default: inradius at the location)");
  est_run.app->add_option("--grid-size", ea.grid_size)->capture_default_str();
  est_run.app->add_flag("--isotonic", ea.isotonic, "Monotone-project curves");

  Run val_run{"validate", app.add_subcommand("validate", "Compare a model with fresh test-case samples")};
  ValidateArgs va;
  va.testcase.window.clear();
  val_run.common_options();
  val_run.app->add_option("model", va.model, "Model file")->required();
  val_run.app->add_option("--kind", va.testcase.kind, "matern2|triangle|poisson|model")->required();
  add_process_options(val_run.app, va.testcase, "--testcase-model");
  val_run.app->add_option("--at", va.at, "Location of G and H (default: window centre)");
  val_run.app->add_option("--n", va.n, "Replicates on each side")->capture_default_str();
  val_run.app->add_option("--h-threshold", va.h_threshold, "H sup-distance threshold (calibration)")
      ->capture_default_str();
  val_run.app->add_option("--g-threshold", va.g_threshold, "G sup-distance threshold (calibration, 0 = none)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return input_error;
  }

  for (Run* run : {&gen_run, &fit_run, &est_run, &val_run}) {
    if (!run->app->parsed()) continue;
    try {
      run->apply_config();
      int code = ok;
      if (run == &gen_run) code = run_generate(*run, gen);
      if (run == &fit_run) code = run_fit(*run, fa);
      if (run == &est_run) code = run_estimate(*run, ea);
      if (run == &val_run) code = run_validate(*run, va);
      run->write_manifest();
      return code;
    } catch (const CLI::ParseError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return input_error;
    } catch (const Error& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return exit_code(e.kind());
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return numeric_failure;
    }
  }
  return input_error;
}
