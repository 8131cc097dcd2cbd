#ifndef DETTHIN_IO_HPP
#define DETTHIN_IO_HPP

// File formats: point-pattern CSV with a window sidecar, model JSON,
// training-set JSON lines, curve CSV.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "detthin/error.hpp"
#include "detthin/estimators.hpp"
#include "detthin/fitting.hpp"
#include "detthin/geometry.hpp"
#include "detthin/model.hpp"

namespace detthin::io {

using nlohmann::json;

/// Shortest decimal form with at least 17 significant digits.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json window_to_json(const Window& w) {
  if (const auto* d = std::get_if<Disk>(&w.shape()))
    return {{"shape", "disk"}, {"center", {d->center.x, d->center.y}}, {"radius", d->radius}};
  const auto& b = std::get<Rect>(w.shape());
  return {{"shape", "rectangle"}, {"x", {b.x_min, b.x_max}}, {"y", {b.y_min, b.y_max}}};
}

inline Window window_from_json(const json& j) {
  try {
    const auto shape = j.at("shape").get<std::string>();
    if (shape == "disk") {
      const auto c = j.value("center", std::vector<double>{0.0, 0.0});
      if (c.size() != 2) fail(ErrorKind::invalid_argument, "disk center needs two coordinates");
      return Window::disk({c[0], c[1]}, j.at("radius").get<double>());
    }
    if (shape == "rectangle") {
      const auto x = j.at("x").get<std::vector<double>>();
      const auto y = j.at("y").get<std::vector<double>>();
      if (x.size() != 2 || y.size() != 2) fail(ErrorKind::invalid_argument, "rectangle needs x and y ranges");
      return Window::rectangle(x[0], x[1], y[0], y[1]);
    }
    fail(ErrorKind::invalid_argument, "unknown window shape '" + shape + "'");
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("bad window: ") + e.what());
  }
}

/// Writes `content` to `path` through a temporary file and a rename.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    out << content;
    if (!out) fail(ErrorKind::io, "write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- point patterns --------------------------------------------------------

inline std::string pattern_csv(const PointPattern& p) {
  std::string s = "x,y\n";
  for (const auto& x : p) s += format_double(x.x) + "," + format_double(x.y) + "\n";
  return s;
}

inline PointPattern parse_pattern_csv(const std::string& csv, const Window& w) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line.rfind("x,y", 0) != 0) fail(ErrorKind::invalid_argument, "CSV header must be x,y");
  std::vector<Point> pts;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail(ErrorKind::invalid_argument, "line " + std::to_string(lineno) + ": expected x,y");
    try {
      const double x = std::stod(line.substr(0, comma));
      const double y = std::stod(line.substr(comma + 1));
      pts.push_back({x, y});
    } catch (const std::exception&) {
      fail(ErrorKind::invalid_argument, "line " + std::to_string(lineno) + ": bad number");
    }
  }
  return PointPattern(w, std::move(pts));
}

/// `<stem>.csv` plus the window sidecar `<stem>.window.json`.
inline void write_pattern(const std::filesystem::path& csv_path, const PointPattern& p) {
  write_atomic(csv_path, pattern_csv(p));
  auto side = csv_path;
  side.replace_extension(".window.json");
  write_atomic(side, window_to_json(p.window()).dump() + "\n");
}

inline PointPattern read_pattern(const std::filesystem::path& csv_path) {
  auto side = csv_path;
  side.replace_extension(".window.json");
  json wj;
  try {
    wj = json::parse(read_file(side));
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("bad window sidecar: ") + e.what());
  }
  return parse_pattern_csv(read_file(csv_path), window_from_json(wj));
}

// --- model -----------------------------------------------------------------

inline std::string feature_spec(const std::vector<Feature>& fs) {
  std::string s;
  for (std::size_t i = 0; i < fs.size(); ++i) s += (i ? "," : "") + std::string(to_string(fs[i]));
  return s;
}

inline std::vector<Feature> parse_feature_spec(const std::string& spec) {
  std::vector<Feature> out;
  std::istringstream in(spec);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (tok == "const") out.push_back(Feature::constant);
    else if (tok == "d1") out.push_back(Feature::d1);
    else if (tok == "d2") out.push_back(Feature::d2);
    else if (tok == "d3") out.push_back(Feature::d3);
    else fail(ErrorKind::invalid_argument, "unknown feature '" + tok + "'");
  }
  if (out.empty()) fail(ErrorKind::invalid_argument, "empty feature spec");
  return out;
}

inline json model_to_json(const ThinningModel& m) {
  const auto* g = std::get_if<GaussianSimilarity>(&m.similarity);
  if (g == nullptr && !std::holds_alternative<IdentitySimilarity>(m.similarity))
    fail(ErrorKind::invalid_argument, "only Gaussian or identity similarity can be serialized");
  return {{"theta", m.quality.theta},
          {"sigma", g ? g->sigma : 0.0},
          {"C", g ? g->amplitude : 1.0},
          {"lambda", m.poisson.intensity},
          {"window", window_to_json(m.poisson.window)},
          {"feature_spec", feature_spec(m.quality.features)}};
}

inline ThinningModel model_from_json(const json& j) {
  try {
    ThinningModel m;
    m.quality.theta = j.at("theta").get<std::vector<double>>();
    m.quality.features = parse_feature_spec(j.value("feature_spec", std::string("const,d1,d2,d3")));
    m.similarity = GaussianSimilarity{j.at("sigma").get<double>(), j.value("C", 1.0)};
    m.poisson = PoissonModel{j.at("lambda").get<double>(), window_from_json(j.at("window"))};
    m.validate();
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("bad model file: ") + e.what());
  }
}

inline ThinningModel read_model(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("bad model JSON: ") + e.what());
  }
  return model_from_json(j);
}

inline json fit_result_to_json(const FitResult& r, const ThinningModel& m) {
  json j = model_to_json(m);
  j["loglik"] = r.loglik_star;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["trace"] = r.trace;
  json runs = json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"sigma", run.sigma},
                    {"loglik", std::isfinite(run.loglik) ? json(run.loglik) : json(nullptr)},
                    {"theta", run.theta},
                    {"iterations", run.iterations},
                    {"converged", run.converged},
                    {"failed", run.failed}});
  }
  j["sigma_runs"] = runs;
  return j;
}

// --- training sets ---------------------------------------------------------

inline std::string training_record(const TrainingPair& p) {
  json pts = json::array();
  for (const auto& x : p.full) pts.push_back({x.x, x.y});
  json j{{"full", pts}, {"retained_idx", p.retained_idx.indices()}, {"window", window_to_json(p.full.window())}};
  return j.dump(-1, ' ', false, json::error_handler_t::strict);
}

inline std::string training_jsonl(const std::vector<TrainingPair>& data) {
  std::string s;
  for (const auto& p : data) s += training_record(p) + "\n";
  return s;
}

/// Parse failure with the 1-based line number of the offending record.
class TrainingParseError : public Error {
 public:
  TrainingParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::invalid_argument, "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline std::vector<TrainingPair> parse_training(const std::string& text) {
  std::vector<TrainingPair> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      std::vector<Point> pts;
      for (const auto& xy : j.at("full")) {
        if (!xy.is_array() || xy.size() != 2) throw TrainingParseError(lineno, "points must be [x, y]");
        pts.push_back({xy[0].get<double>(), xy[1].get<double>()});
      }
      PointPattern full(window_from_json(j.at("window")), std::move(pts));
      SubsetIndex idx(j.at("retained_idx").get<std::vector<std::size_t>>());
      if (!idx.empty() && idx.indices().back() >= full.size())
        throw TrainingParseError(lineno, "retained index out of range");
      out.push_back({std::move(full), std::move(idx)});
    } catch (const TrainingParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw TrainingParseError(lineno, e.what());
    }
  }
  return out;
}

inline std::vector<TrainingPair> read_training(const std::filesystem::path& path) {
  return parse_training(read_file(path));
}

// --- curves ----------------------------------------------------------------

inline std::string curve_csv(const EstimateCurve& c) {
  std::string s = "r,value,se,n\n";
  for (std::size_t i = 0; i < c.size(); ++i)
    s += format_double(c.radii[i]) + "," + format_double(c.values[i]) + "," + format_double(c.std_errors[i]) + "," +
         std::to_string(c.n_samples) + "\n";
  return s;
}

inline EstimateCurve parse_curve_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line.rfind("r,value,se,n", 0) != 0)
    fail(ErrorKind::invalid_argument, "curve CSV header must be r,value,se,n");
  EstimateCurve c;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string r, v, se, n;
    std::getline(row, r, ',');
    std::getline(row, v, ',');
    std::getline(row, se, ',');
    std::getline(row, n, ',');
    c.radii.push_back(std::stod(r));
    c.values.push_back(std::stod(v));
    c.std_errors.push_back(std::stod(se));
    c.n_samples = std::stoul(n);
  }
  return c;
}

inline std::string estimate_json(const std::string& quantity, const Estimate& e) {
  json j{{"quantity", quantity}, {"value", e.value}, {"se", e.std_error}, {"n", e.n_samples}};
  return j.dump(2) + "\n";
}

/// FNV-1a 64-bit digest in hex; used for run metadata.
inline std::string digest(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(bytes)));
  return buf;
}

}  // namespace detthin::io

#endif  // DETTHIN_IO_HPP
