#ifndef DETTHIN_FITTING_HPP
#define DETTHIN_FITTING_HPP

// Supervised maximum-likelihood fitting of (theta, sigma) from observed
// (realization, retained subset) pairs. For fixed sigma the log-likelihood
// is concave in theta and is maximized by BFGS with Armijo backtracking;
// sigma is chosen by an outer grid search.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "detthin/error.hpp"
#include "detthin/estimators.hpp"
#include "detthin/geometry.hpp"
#include "detthin/kernels.hpp"
#include "detthin/model.hpp"
#include "detthin/processes.hpp"

namespace detthin {

/// A full realization and the positions of its retained points.
struct TrainingPair {
  PointPattern full;
  SubsetIndex retained_idx;

  PointPattern retained() const { return full.subset(retained_idx.indices()); }

  /// Pairs a pattern with a retained pattern by exact coordinate match.
  static TrainingPair from_patterns(PointPattern full, const PointPattern& retained, std::size_t t = 0) {
    std::vector<std::size_t> idx;
    for (const auto& x : retained) {
      const auto it = std::find(full.begin(), full.end(), x);
      if (it == full.end())
        fail(ErrorKind::invalid_training_pair,
             "pair " + std::to_string(t) + ": retained point is not in the full pattern");
      idx.push_back(static_cast<std::size_t>(it - full.begin()));
    }
    return {std::move(full), SubsetIndex(std::move(idx))};
  }
};

/// det(S_psi) at or below this makes a pair impossible under the model.
inline constexpr double det_floor = 1e-300;

struct FitConfig {
  /// Candidate sigma values; 0 is the identity similarity. Empty selects the default grid.
  std::vector<double> sigma_grid;
  /// Free theta components; fixed ones stay at init_theta.
  std::vector<bool> theta_mask = {true, true, true, true};
  std::vector<double> init_theta = {0.0, 0.0, 0.0, 0.0};
  std::vector<Feature> features = default_features();
  double amplitude = 1.0;
  std::size_t max_iters = 200;
  /// Convergence when the gradient of the mean per-pair log-likelihood has
  /// Euclidean norm at most grad_tol.
  double grad_tol = 1e-6;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  std::size_t max_backtracks = 60;

  void validate() const {
    const auto p = features.size();
    if (theta_mask.size() != p || init_theta.size() != p)
      fail(ErrorKind::invalid_argument, "theta_mask and init_theta must match the feature count");
    if (!(grad_tol > 0.0) || !(armijo_c > 0.0 && armijo_c < 1.0) || !(backtrack > 0.0 && backtrack < 1.0))
      fail(ErrorKind::invalid_argument, "tolerances must be positive");
    for (double s : sigma_grid)
      if (!(s >= 0.0) || !std::isfinite(s)) fail(ErrorKind::invalid_argument, "sigma grid values must be >= 0");
  }
};

struct SigmaRun {
  double sigma = 0.0;
  double loglik = -std::numeric_limits<double>::infinity();
  std::vector<double> theta;
  std::size_t iterations = 0;
  bool converged = false;
  bool failed = false;
  std::vector<double> trace;
};

struct FitResult {
  std::vector<double> theta_star;
  double sigma_star = 0.0;
  double loglik_star = -std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  bool converged = false;
  /// Log-likelihood after every accepted step of the winning sigma run.
  std::vector<double> trace;
  std::vector<SigmaRun> runs;
  std::vector<Feature> features;
  double amplitude = 1.0;
};

namespace detail {

inline void check_pairs(std::span<const TrainingPair> data) {
  for (std::size_t t = 0; t < data.size(); ++t) {
    const auto& d = data[t];
    if (!d.retained_idx.empty() && d.retained_idx.indices().back() >= d.full.size())
      fail(ErrorKind::invalid_training_pair, "pair " + std::to_string(t) + ": retained index out of range");
  }
}

/// Per-pair quantities that do not depend on theta.
struct PairCache {
  Matrix features;
  Matrix similarity;
  double logdet_s_retained = 0.0;
  Vector retained_feature_sum;
  std::vector<std::size_t> retained;
};

inline std::vector<PairCache> build_cache(std::span<const TrainingPair> data, const std::vector<Feature>& features,
                                          const SimilarityParams& sim) {
  std::vector<PairCache> cache;
  cache.reserve(data.size());
  for (const auto& d : data) {
    PairCache c;
    c.features = feature_matrix(features, d.full);
    c.similarity = similarity_entries(sim, d.full);
    c.retained = d.retained_idx.indices();
    const double ld = psd_log_determinant(principal(c.similarity, c.retained));
    c.logdet_s_retained = ld <= std::log(det_floor) ? -std::numeric_limits<double>::infinity() : ld;
    c.retained_feature_sum = Vector::Zero(c.features.cols());
    for (auto i : c.retained) c.retained_feature_sum += c.features.row(static_cast<Index>(i)).transpose();
    cache.push_back(std::move(c));
  }
  return cache;
}

struct Evaluation {
  double value = -std::numeric_limits<double>::infinity();
  Vector gradient;
};

/// log-likelihood and its full theta-gradient:
///   sum_t [ 2 sum_{x in psi} theta.f_x + log det S_psi - log det(I + L) ],
///   grad = sum_t 2 [ sum_{x in psi} f_x - sum_x K_xx f_x ].
inline Evaluation evaluate(const std::vector<PairCache>& cache, const Vector& theta, bool with_gradient) {
  Evaluation ev;
  ev.gradient = Vector::Zero(theta.size());
  double total = 0.0;
  for (const auto& c : cache) {
    if (!std::isfinite(c.logdet_s_retained)) return ev;
    const Vector q = quality_from_features(c.features, theta);
    const auto n = c.features.rows();
    double term = c.logdet_s_retained;
    for (auto i : c.retained) term += 2.0 * std::log(q(static_cast<Index>(i)));
    if (n > 0) {
      Matrix a = q.asDiagonal() * c.similarity * q.asDiagonal();
      a.diagonal().array() += 1.0;
      Eigen::LLT<Matrix> llt(a);
      if (llt.info() != Eigen::Success) throw NumericError("I + L is not positive definite", 0.0);
      term -= 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      if (with_gradient) {
        const Matrix inv = llt.solve(Matrix::Identity(n, n));
        const Vector kdiag = (1.0 - inv.diagonal().array()).matrix();
        ev.gradient += 2.0 * (c.retained_feature_sum - c.features.transpose() * kdiag);
      }
    } else if (with_gradient) {
      ev.gradient += 2.0 * c.retained_feature_sum;
    }
    total += term;
  }
  ev.value = total;
  return ev;
}

inline Evaluation safe_evaluate(const std::vector<PairCache>& cache, const Vector& theta, bool with_gradient) {
  try {
    return evaluate(cache, theta, with_gradient);
  } catch (const SaturationError&) {
    Evaluation ev;
    ev.gradient = Vector::Zero(theta.size());
    return ev;
  }
}

inline SimilarityParams similarity_for(double sigma, double amplitude) {
  return GaussianSimilarity{sigma, amplitude};
}

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

/// BFGS ascent over the free components of theta for one sigma.
inline SigmaRun ascend(const std::vector<PairCache>& cache, double sigma, const FitConfig& cfg) {
  SigmaRun run;
  run.sigma = sigma;
  std::vector<Index> free;
  for (std::size_t k = 0; k < cfg.theta_mask.size(); ++k)
    if (cfg.theta_mask[k]) free.push_back(static_cast<Index>(k));
  const auto nf = static_cast<Index>(free.size());
  const double scale = 1.0 / static_cast<double>(std::max<std::size_t>(cache.size(), 1));

  Vector theta = to_vector(cfg.init_theta);
  auto restrict_free = [&](const Vector& full) {
    Vector g(nf);
    for (Index k = 0; k < nf; ++k) g(k) = full(free[static_cast<std::size_t>(k)]);
    return g;
  };
  auto eval = [&](const Vector& th) {
    auto ev = safe_evaluate(cache, th, true);
    return std::pair{ev.value, restrict_free(ev.gradient)};
  };

  auto [f, g] = eval(theta);
  run.theta = to_std(theta);
  if (!std::isfinite(f)) {
    run.failed = true;
    return run;
  }
  run.loglik = f;
  run.trace.push_back(f);
  if (nf == 0) {
    run.converged = true;
    return run;
  }

  Matrix h = Matrix::Identity(nf, nf) / std::max(1.0, g.norm());
  bool fresh = true;
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    if (g.norm() * scale <= cfg.grad_tol) {
      run.converged = true;
      break;
    }
    Vector dir = h * g;
    double slope = g.dot(dir);
    if (!(slope > 0.0)) {
      h = Matrix::Identity(nf, nf) / std::max(1.0, g.norm());
      dir = h * g;
      slope = g.dot(dir);
      fresh = true;
    }

    double step = 1.0;
    bool accepted = false;
    Vector next = theta;
    double f_next = f;
    Vector g_next = g;
    for (std::size_t b = 0; b < cfg.max_backtracks; ++b) {
      next = theta;
      for (Index k = 0; k < nf; ++k) next(free[static_cast<std::size_t>(k)]) += step * dir(k);
      std::tie(f_next, g_next) = eval(next);
      if (std::isfinite(f_next) && f_next >= f + cfg.armijo_c * step * slope) {
        accepted = true;
        break;
      }
      step *= cfg.backtrack;
    }
    if (!accepted) {
      if (!fresh) {
        // Curvature model went stale; retry from steepest ascent.
        h = Matrix::Identity(nf, nf) / std::max(1.0, g.norm());
        fresh = true;
        continue;
      }
      break;
    }

    const Vector s = restrict_free(next - theta);
    const Vector y = g - g_next;
    const double ys = y.dot(s);
    if (ys > 1e-12 * s.norm() * y.norm() && ys > 0.0) {
      if (fresh) h = Matrix::Identity(nf, nf) * (ys / y.squaredNorm());
      const double rho = 1.0 / ys;
      const Matrix left = Matrix::Identity(nf, nf) - rho * s * y.transpose();
      h = left * h * left.transpose() + rho * s * s.transpose();
      fresh = false;
    } else {
      h = Matrix::Identity(nf, nf) / std::max(1.0, g_next.norm());
      fresh = true;
    }

    theta = next;
    f = f_next;
    g = g_next;
    run.iterations = it + 1;
    run.trace.push_back(f);
  }
  if (!run.converged && g.norm() * scale <= cfg.grad_tol) run.converged = true;
  run.theta = to_std(theta);
  run.loglik = f;
  return run;
}

}  // namespace detail

/// Log-likelihood of the pairs under the model (sum over independent pairs);
/// -inf if some retained similarity block is numerically singular.
inline double log_likelihood(const ThinningModel& m, std::span<const TrainingPair> data) {
  m.validate();
  detail::check_pairs(data);
  const auto cache = detail::build_cache(data, m.quality.features, m.similarity);
  return detail::evaluate(cache, theta_vector(m.quality), false).value;
}

/// Gradient of log_likelihood with respect to theta; components with
/// mask == false are reported as 0.
inline Vector grad_theta(const ThinningModel& m, std::span<const TrainingPair> data,
                         const std::vector<bool>& mask = {}) {
  m.validate();
  detail::check_pairs(data);
  const auto cache = detail::build_cache(data, m.quality.features, m.similarity);
  auto ev = detail::evaluate(cache, theta_vector(m.quality), true);
  if (!std::isfinite(ev.value)) fail(ErrorKind::numeric, "log-likelihood is not finite");
  for (std::size_t k = 0; k < mask.size() && k < static_cast<std::size_t>(ev.gradient.size()); ++k)
    if (!mask[k]) ev.gradient(static_cast<Index>(k)) = 0.0;
  return ev.gradient;
}

/// Observed information -d2 loglik / dtheta2 = 4 sum_t F^T ((I+L)^-1 o K) F,
/// where o is the entrywise product.
inline Matrix observed_information(const ThinningModel& m, std::span<const TrainingPair> data) {
  m.validate();
  detail::check_pairs(data);
  const auto p = static_cast<Index>(m.quality.features.size());
  Matrix info = Matrix::Zero(p, p);
  const Vector theta = theta_vector(m.quality);
  for (const auto& d : data) {
    if (d.full.empty()) continue;
    const Matrix f = feature_matrix(m.quality.features, d.full);
    const Vector q = quality_from_features(f, theta);
    const Matrix l = q.asDiagonal() * similarity_entries(m.similarity, d.full) * q.asDiagonal();
    const auto n = l.rows();
    const Matrix a = (Matrix::Identity(n, n) + l).llt().solve(Matrix::Identity(n, n));
    const Matrix k = Matrix::Identity(n, n) - a;
    info += 4.0 * f.transpose() * a.cwiseProduct(k) * f;
  }
  return info;
}

/// Mean nearest-neighbour distance over all points of the full patterns.
inline double mean_nn_distance(std::span<const TrainingPair> data) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& d : data) {
    if (d.full.size() < 2) continue;
    for (std::size_t i = 0; i < d.full.size(); ++i) {
      sum += nearest_neighbour_distance(d.full.points(), i);
      ++n;
    }
  }
  return n == 0 ? 1.0 : sum / static_cast<double>(n);
}

/// 0 plus 16 log-spaced values over [0.1, 5] x mean nearest-neighbour distance.
inline std::vector<double> default_sigma_grid(std::span<const TrainingPair> data) {
  const double base = mean_nn_distance(data);
  std::vector<double> g{0.0};
  const double lo = std::log(0.1 * base), hi = std::log(5.0 * base);
  for (int i = 0; i < 16; ++i) g.push_back(std::exp(lo + (hi - lo) * i / 15.0));
  return g;
}

inline FitResult fit(std::span<const TrainingPair> data, const FitConfig& cfg) {
  cfg.validate();
  if (data.empty()) fail(ErrorKind::invalid_argument, "no training pairs");
  detail::check_pairs(data);
  const auto grid = cfg.sigma_grid.empty() ? default_sigma_grid(data) : cfg.sigma_grid;

  FitResult res;
  res.features = cfg.features;
  res.amplitude = cfg.amplitude;
  const SigmaRun* best = nullptr;
  for (double sigma : grid) {
    const auto cache = detail::build_cache(data, cfg.features, detail::similarity_for(sigma, cfg.amplitude));
    res.runs.push_back(detail::ascend(cache, sigma, cfg));
  }
  for (const auto& r : res.runs)
    if (!r.failed && (best == nullptr || r.loglik > best->loglik)) best = &r;
  if (best == nullptr) fail(ErrorKind::optimization_failure, "log-likelihood is -inf for every sigma candidate");

  res.theta_star = best->theta;
  res.sigma_star = best->sigma;
  res.loglik_star = best->loglik;
  res.iterations = best->iterations;
  res.converged = best->converged;
  res.trace = best->trace;
  return res;
}

/// Model with the fitted parameters and the given Poisson component.
inline ThinningModel to_model(const FitResult& r, PoissonModel poisson) {
  ThinningModel m;
  m.quality.theta = r.theta_star;
  m.quality.features = r.features;
  m.similarity = GaussianSimilarity{r.sigma_star, r.amplitude};
  m.poisson = std::move(poisson);
  return m;
}

/// Poisson intensity estimate: total full-pattern count over total area.
inline double estimate_intensity(std::span<const TrainingPair> data) {
  if (data.empty()) fail(ErrorKind::invalid_argument, "no training pairs");
  double pts = 0.0, area_sum = 0.0;
  for (const auto& d : data) {
    pts += static_cast<double>(d.full.size());
    area_sum += d.full.window().area();
  }
  return pts / area_sum;
}

struct ChordViolation {
  std::vector<double> theta_a;
  std::vector<double> theta_b;
  double mix = 0.0;
  double value_mid = 0.0;
  double value_chord = 0.0;
};

struct ConcavityReport {
  std::size_t trials = 0;
  std::size_t skipped = 0;
  std::vector<ChordViolation> violations;
};

/// Random chord test of concavity in theta at fixed sigma: checks
/// ll(a theta_a + (1 - a) theta_b) >= a ll(theta_a) + (1 - a) ll(theta_b) - 1e-8.
inline ConcavityReport concavity_diagnostic(std::span<const TrainingPair> data, double sigma, std::size_t trials,
                                            Rng& rng, const std::vector<Feature>& features = default_features(),
                                            double theta_scale = 2.0) {
  detail::check_pairs(data);
  const auto cache = detail::build_cache(data, features, detail::similarity_for(sigma, 1.0));
  const auto p = static_cast<Index>(features.size());
  std::uniform_real_distribution<double> unif(-theta_scale, theta_scale);
  ConcavityReport rep;
  rep.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    Vector a(p), b(p);
    for (Index k = 0; k < p; ++k) a(k) = unif(rng);
    for (Index k = 0; k < p; ++k) b(k) = unif(rng);
    const double mix = uniform01(rng);
    const double fa = detail::safe_evaluate(cache, a, false).value;
    const double fb = detail::safe_evaluate(cache, b, false).value;
    const double fm = detail::safe_evaluate(cache, mix * a + (1.0 - mix) * b, false).value;
    if (!std::isfinite(fa) || !std::isfinite(fb)) {
      ++rep.skipped;
      continue;
    }
    const double chord = mix * fa + (1.0 - mix) * fb;
    if (!(fm >= chord - 1e-8))
      rep.violations.push_back({detail::to_std(a), detail::to_std(b), mix, fm, chord});
  }
  return rep;
}

/// T training pairs from a thinned process; pair t uses its own derived stream.
inline std::vector<TrainingPair> generate_training(const ThinningProcess& proc, std::size_t count,
                                                   std::uint64_t seed, unsigned threads = 0) {
  auto samples = detail::map_replicates<std::optional<TrainingPair>>(count, threads, [&](std::size_t t) {
    Rng rng = make_rng(seed, "training-pair", t);
    auto s = simulate(proc, rng);
    return std::optional<TrainingPair>(TrainingPair{std::move(s.full), std::move(s.retained_idx)});
  });
  std::vector<TrainingPair> out;
  out.reserve(count);
  for (auto& s : samples) out.push_back(std::move(*s));
  return out;
}

}  // namespace detthin

#endif  // DETTHIN_FITTING_HPP
