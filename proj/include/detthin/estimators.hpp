#ifndef DETTHIN_ESTIMATORS_HPP
#define DETTHIN_ESTIMATORS_HPP

// Monte Carlo estimators of functionals of the thinned process. The
// semi-analytic estimators average closed-form determinants over realizations
// of the underlying Poisson process only; the empirical ones simulate the
// thinning and serve as validation counterparts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "detthin/error.hpp"
#include "detthin/geometry.hpp"
#include "detthin/kernels.hpp"
#include "detthin/model.hpp"
#include "detthin/processes.hpp"
#include "detthin/random.hpp"

namespace detthin {

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
};

struct EstimateCurve {
  std::vector<double> radii;
  std::vector<double> values;
  std::vector<double> std_errors;
  std::size_t n_samples = 0;

  std::size_t size() const { return radii.size(); }
};

struct MCConfig {
  std::size_t n_samples = 1000;
  std::uint64_t seed = 1;
  /// Radius grid for curves; empty selects the default grid.
  std::vector<double> grid;
  /// Poisson replicates are drawn on the window grown by this margin and
  /// cropped back before any kernel is built.
  double margin = 0.0;
  /// Worker threads; 0 reads DETTHIN_THREADS and falls back to 1.
  unsigned threads = 0;
  /// Apply pooled-adjacent-violators to curve outputs.
  bool isotonic = false;

  void validate() const {
    if (n_samples < 1) fail(ErrorKind::invalid_argument, "n_samples must be >= 1");
    if (!(margin >= 0.0)) fail(ErrorKind::invalid_argument, "margin must be non-negative");
  }
};

inline constexpr std::size_t default_grid_size = 64;
inline constexpr std::size_t max_joint_points = 4;

inline std::vector<double> linear_grid(double r_max, std::size_t n = default_grid_size) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = n == 1 ? 0.0 : r_max * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

/// 64 radii from 0 to the largest r with B_u(r) inside the window.
inline std::vector<double> default_grid(const Window& w, Point u) { return linear_grid(inradius_at(w.shape(), u)); }

namespace detail {

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DETTHIN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return 1;
}

/// results[i] = f(i), computed on `threads` workers; output order is the
/// index order regardless of scheduling.
template <class R, class F>
std::vector<R> map_replicates(std::size_t n, unsigned threads, F&& f) {
  std::vector<R> out(n);
  const unsigned workers = std::max(1u, std::min<unsigned>(resolve_threads(threads), static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) out[i] = f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline Estimate mean_estimate(const std::vector<double>& xs) {
  Estimate e;
  e.n_samples = xs.size();
  if (xs.empty()) return e;
  double s = 0.0;
  for (double x : xs) s += x;
  e.value = s / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - e.value) * (x - e.value);
    e.std_error = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  }
  return e;
}

/// Ratio of means sum(y) / sum(x) over shared replicates with the
/// delta-method standard error sqrt(sum (y_i - R x_i)^2 / (n (n - 1))) / mean(x).
inline Estimate ratio_estimate(const std::vector<double>& num, const std::vector<double>& den) {
  Estimate e;
  e.n_samples = num.size();
  double sy = 0.0, sx = 0.0;
  for (std::size_t i = 0; i < num.size(); ++i) {
    sy += num[i];
    sx += den[i];
  }
  if (!(sx > 0.0)) return e;
  e.value = sy / sx;
  const auto n = static_cast<double>(num.size());
  if (num.size() > 1) {
    double ss = 0.0;
    for (std::size_t i = 0; i < num.size(); ++i) {
      const double r = num[i] - e.value * den[i];
      ss += r * r;
    }
    e.std_error = std::sqrt(ss / (n * (n - 1.0))) / (sx / n);
  }
  return e;
}

inline void require_inside(const Window& w, Point x, const char* what) {
  if (!w.contains(x)) fail(ErrorKind::invalid_argument, std::string(what) + " lies outside the window");
}

inline void require_region(const Window& w, const Region& b) {
  if (!region_within(b, w.shape())) fail(ErrorKind::invalid_argument, "region is not inside the window");
}

/// Determinants of the leading k x k blocks of a PSD matrix, k = 0..n, from
/// one unpivoted Cholesky pass.
inline std::vector<double> leading_minors(const Matrix& m) {
  const Index n = m.rows();
  std::vector<double> out(static_cast<std::size_t>(n) + 1, 1.0);
  Matrix a = m;
  double det = 1.0;
  for (Index k = 0; k < n; ++k) {
    const double d = a(k, k) - a.row(k).head(k).squaredNorm();
    if (!(d > 1e-300)) {
      for (Index j = k + 1; j <= n; ++j)
        out[static_cast<std::size_t>(j)] = std::max(0.0, psd_determinant(m.topLeftCorner(j, j)));
      return out;
    }
    const double l = std::sqrt(d);
    a(k, k) = l;
    for (Index i = k + 1; i < n; ++i) a(i, k) = (a(i, k) - a.row(i).head(k).dot(a.row(k).head(k))) / l;
    det *= d;
    out[static_cast<std::size_t>(k) + 1] = det;
  }
  return out;
}

/// Indices of `pts` sorted by distance to u (ties by index).
inline std::vector<std::size_t> order_by_distance(const std::vector<Point>& pts, Point u, std::size_t count) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return distance(pts[a], u) < distance(pts[b], u); });
  return idx;
}

/// 1 - det((I - K)_{points within r of u}) for every r in `grid`, using the
/// first `count` ground-set elements only.
inline std::vector<double> disk_hit_probabilities(const Matrix& k, const std::vector<Point>& pts, std::size_t count,
                                                  Point u, const std::vector<double>& grid) {
  const auto order = order_by_distance(pts, u, count);
  Matrix c(static_cast<Index>(count), static_cast<Index>(count));
  for (std::size_t a = 0; a < count; ++a)
    for (std::size_t b = 0; b < count; ++b)
      c(static_cast<Index>(a), static_cast<Index>(b)) =
          (a == b ? 1.0 : 0.0) - k(static_cast<Index>(order[a]), static_cast<Index>(order[b]));
  const auto minors = leading_minors(c);
  std::vector<double> out(grid.size());
  std::size_t inside = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    while (inside < count && distance(pts[order[inside]], u) <= grid[g]) ++inside;
    out[g] = std::clamp(1.0 - minors[inside], 0.0, 1.0);
  }
  return out;
}

inline std::vector<double> resolve_grid(const MCConfig& cfg, const Window& w, Point u, bool truncate, const char* what) {
  if (cfg.grid.empty()) return default_grid(w, u);
  std::vector<double> g = cfg.grid;
  if (!std::is_sorted(g.begin(), g.end()) || g.front() < 0.0)
    fail(ErrorKind::invalid_argument, "radius grid must be non-negative and increasing");
  if (truncate) {
    const double lim = inradius_at(w.shape(), u) + 1e-12;
    const auto keep = std::find_if(g.begin(), g.end(), [&](double r) { return r > lim; });
    if (keep != g.end()) {
      std::clog << "warning: " << what << " grid truncated at r = " << lim
                << " (disk leaves the window)\n";
      g.erase(keep, g.end());
    }
  }
  return g;
}

}  // namespace detail

/// Pooled-adjacent-violators projection of the values onto non-decreasing
/// sequences (weights 1); standard errors are left as estimated.
inline EstimateCurve isotonize(EstimateCurve c) {
  std::vector<double> level, weight;
  std::vector<std::size_t> span;
  for (double v : c.values) {
    level.push_back(v);
    weight.push_back(1.0);
    span.push_back(1);
    while (level.size() > 1 && level[level.size() - 2] > level.back()) {
      const std::size_t k = level.size() - 1;
      const double w = weight[k - 1] + weight[k];
      level[k - 1] = (level[k - 1] * weight[k - 1] + level[k] * weight[k]) / w;
      weight[k - 1] = w;
      span[k - 1] += span[k];
      level.pop_back();
      weight.pop_back();
      span.pop_back();
    }
  }
  std::size_t pos = 0;
  for (std::size_t b = 0; b < level.size(); ++b)
    for (std::size_t j = 0; j < span[b]; ++j) c.values[pos++] = level[b];
  return c;
}

/// One Poisson replicate on the model's window (generated on the extended
/// window and cropped back when cfg.margin > 0).
inline PointPattern poisson_replicate(const ThinningModel& m, const MCConfig& cfg, Rng& rng) {
  const PoissonModel ext{m.poisson.intensity, extend_window(m.poisson.window, cfg.margin)};
  auto full = sample_poisson(ext, rng);
  return cfg.margin > 0.0 ? crop(full, m.poisson.window) : full;
}

inline Rng replicate_rng(const MCConfig& cfg, std::size_t i) { return make_rng(cfg.seed, "poisson-replicate", i); }

/// pi(x) = E[K_xx(Phi + x)].
inline Estimate retention_probability(const ThinningModel& m, Point x, const MCConfig& cfg) {
  cfg.validate();
  m.validate();
  detail::require_inside(m.poisson.window, x, "x");
  auto vals = detail::map_replicates<double>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = replicate_rng(cfg, i);
    const auto p = poisson_replicate(m, cfg, rng).with_points({x});
    const auto k = build_K(m, p);
    const auto last = static_cast<Index>(p.size() - 1);
    return std::clamp(k(last, last), 0.0, 1.0);
  });
  return detail::mean_estimate(vals);
}

/// pi(x_1..x_n) = E[det K_{x_1..x_n}(Phi + {x_1..x_n})]; 0 when two points coincide.
inline Estimate joint_retention(const ThinningModel& m, const std::vector<Point>& xs, const MCConfig& cfg) {
  cfg.validate();
  m.validate();
  if (xs.empty() || xs.size() > max_joint_points)
    fail(ErrorKind::invalid_argument, "joint retention needs 1..4 points");
  for (auto& x : xs) detail::require_inside(m.poisson.window, x, "x");
  for (std::size_t a = 0; a < xs.size(); ++a)
    for (std::size_t b = a + 1; b < xs.size(); ++b)
      if (xs[a] == xs[b]) return {0.0, 0.0, cfg.n_samples};
  auto vals = detail::map_replicates<double>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = replicate_rng(cfg, i);
    const auto p = poisson_replicate(m, cfg, rng).with_points(xs);
    const auto k = build_K(m, p);
    std::vector<std::size_t> idx(xs.size());
    std::iota(idx.begin(), idx.end(), p.size() - xs.size());
    return inclusion_probability(k, SubsetIndex(idx));
  });
  return detail::mean_estimate(vals);
}

/// M(B) = lambda |B| E[K_UU(Phi + U)], U uniform in B.
inline Estimate intensity_measure(const ThinningModel& m, const Region& b, const MCConfig& cfg) {
  cfg.validate();
  m.validate();
  if (!(area(b) > 0.0)) fail(ErrorKind::invalid_argument, "region has zero area");
  detail::require_region(m.poisson.window, b);
  const double scale = m.poisson.intensity * area(b);
  auto vals = detail::map_replicates<double>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = replicate_rng(cfg, i);
    auto phi = poisson_replicate(m, cfg, rng);
    const Point u = uniform_point(b, rng);
    const auto p = phi.with_points({u});
    const auto k = build_K(m, p);
    const auto last = static_cast<Index>(p.size() - 1);
    return scale * std::clamp(k(last, last), 0.0, 1.0);
  });
  return detail::mean_estimate(vals);
}

/// n-th factorial moment measure M^(n)(B_1 x ... x B_n), n <= 4.
inline Estimate factorial_moment(const ThinningModel& m, const std::vector<Region>& regions, const MCConfig& cfg) {
  cfg.validate();
  m.validate();
  if (regions.empty() || regions.size() > max_joint_points)
    fail(ErrorKind::invalid_argument, "factorial moments support 1..4 regions");
  double scale = 1.0;
  for (const auto& b : regions) {
    detail::require_region(m.poisson.window, b);
    scale *= m.poisson.intensity * area(b);
  }
  auto vals = detail::map_replicates<double>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = replicate_rng(cfg, i);
    auto phi = poisson_replicate(m, cfg, rng);
    std::vector<Point> us;
    for (const auto& b : regions) us.push_back(uniform_point(b, rng));
    for (std::size_t a = 0; a < us.size(); ++a)
      for (std::size_t c = a + 1; c < us.size(); ++c)
        if (us[a] == us[c]) return 0.0;
    const auto p = phi.with_points(us);
    const auto k = build_K(m, p);
    std::vector<std::size_t> idx(us.size());
    std::iota(idx.begin(), idx.end(), p.size() - us.size());
    return scale * inclusion_probability(k, SubsetIndex(idx));
  });
  return detail::mean_estimate(vals);
}

inline Estimate second_moment(const ThinningModel& m, const Region& b1, const Region& b2, const MCConfig& cfg) {
  return factorial_moment(m, {b1, b2}, cfg);
}

/// nu(B) = E[det((I - K(Phi))_{Phi in B})].
inline Estimate void_probability(const ThinningModel& m, const Region& b, const MCConfig& cfg) {
  cfg.validate();
  m.validate();
  detail::require_region(m.poisson.window, b);
  auto vals = detail::map_replicates<double>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = replicate_rng(cfg, i);
    const auto phi = poisson_replicate(m, cfg, rng);
    std::vector<std::size_t> in;
    for (std::size_t j = 0; j < phi.size(); ++j)
      if (contains(b, phi[j])) in.push_back(j);
    if (in.empty()) return 1.0;
    return void_probability_discrete(build_K(m, phi), SubsetIndex(in));
  });
  return detail::mean_estimate(vals);
}

using SpatialFunction = std::function<double(Point)>;

/// L(f) = E[det(I - K'(Phi))] with K' the Laplace-modified kernel.
inline Estimate laplace_functional(const ThinningModel& m, const SpatialFunction& f, const MCConfig& cfg) {
  cfg.validate();
  m.validate();
  auto vals = detail::map_replicates<double>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = replicate_rng(cfg, i);
    const auto phi = poisson_replicate(m, cfg, rng);
    std::vector<double> fv(phi.size());
    for (std::size_t j = 0; j < phi.size(); ++j) fv[j] = f(phi[j]);
    if (phi.empty()) return 1.0;
    const auto kp = laplace_modified_kernel(build_K(m, phi), fv);
    return void_probability_discrete(kp, SubsetIndex::all(phi.size()));
  });
  return detail::mean_estimate(vals);
}

/// h(Psi) = 1{no point of Psi in region}; evaluated in closed form.
struct VoidIndicator {
  Region region;
};

/// A general functional of a pattern, evaluated on sampled Palm realizations.
struct SampledFunctional {
  std::function<double(const PointPattern&)> h;
  std::size_t draws = 1;
};

using PalmFunctional = std::variant<VoidIndicator, SampledFunctional>;

/// E[h(Psi^T)] as the ratio of E[E[h(bar Psi^T) | Phi] det K_T(Phi + T)] and
/// pi(T), both over the same replicates.
inline Estimate palm_expectation(const ThinningModel& m, const std::vector<Point>& t, const PalmFunctional& h,
                                 const MCConfig& cfg) {
  cfg.validate();
  m.validate();
  if (t.empty() || t.size() > 2) fail(ErrorKind::invalid_argument, "Palm conditioning supports 1 or 2 points");
  for (auto& x : t) detail::require_inside(m.poisson.window, x, "conditioning point");
  if (t.size() == 2 && t[0] == t[1]) fail(ErrorKind::invalid_argument, "conditioning points must be distinct");

  struct Term {
    double num = 0.0;
    double den = 0.0;
  };
  auto terms = detail::map_replicates<Term>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = replicate_rng(cfg, i);
    const auto phi = poisson_replicate(m, cfg, rng);
    const auto p = phi.with_points(t);
    const auto k = build_K(m, p);
    std::vector<std::size_t> cidx(t.size());
    std::iota(cidx.begin(), cidx.end(), phi.size());
    const SubsetIndex cond(cidx);
    const double w = inclusion_probability(k, cond);
    if (!(w > tol::schur)) return Term{};
    const auto kt = palm_kernel_schur(k, cond);

    double inner = 0.0;
    if (const auto* v = std::get_if<VoidIndicator>(&h)) {
      std::vector<std::size_t> in;
      for (std::size_t j = 0; j < phi.size(); ++j)
        if (contains(v->region, phi[j])) in.push_back(j);
      inner = in.empty() ? 1.0 : void_probability_discrete(kt, SubsetIndex(in));
    } else {
      const auto& s = std::get<SampledFunctional>(h);
      Rng palm_rng = make_rng(cfg.seed, "palm-draw", i);
      const std::size_t draws = std::max<std::size_t>(1, s.draws);
      for (std::size_t d = 0; d < draws; ++d) {
        const auto idx = sample_dpp(kt, palm_rng);
        inner += s.h(phi.subset(idx.indices()));
      }
      inner /= static_cast<double>(draws);
    }
    return Term{w * inner, w};
  });

  std::vector<double> num(terms.size()), den(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    num[i] = terms[i].num;
    den[i] = terms[i].den;
  }
  const auto d = detail::mean_estimate(den);
  if (!(d.value >= 10.0 * d.std_error) || !(d.value > 0.0))
    fail(ErrorKind::unstable_conditioning, "pi(T) estimate " + std::to_string(d.value) +
                                               " is below 10 standard errors (" + std::to_string(d.std_error) + ")");
  return detail::ratio_estimate(num, den);
}

/// Nearest-neighbour distance distribution G^u(r) of a typical point at u:
/// E[(1 - det((I - K^u)_{Phi in B_u(r)})) K_uu(Phi + u)] / pi(u).
inline EstimateCurve nearest_neighbour_dist(const ThinningModel& m, Point u, const MCConfig& cfg) {
  cfg.validate();
  m.validate();
  detail::require_inside(m.poisson.window, u, "u");
  const auto grid = detail::resolve_grid(cfg, m.poisson.window, u, true, "G");

  struct Term {
    double w = 0.0;
    std::vector<double> hit;
  };
  auto terms = detail::map_replicates<Term>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = replicate_rng(cfg, i);
    const auto phi = poisson_replicate(m, cfg, rng);
    const auto p = phi.with_points({u});
    const auto k = build_K(m, p);
    const SubsetIndex cond{phi.size()};
    const double w = std::clamp(k(static_cast<Index>(phi.size()), static_cast<Index>(phi.size())), 0.0, 1.0);
    if (!(w > tol::schur)) return Term{0.0, std::vector<double>(grid.size(), 0.0)};
    const auto kt = palm_kernel_schur(k, cond);
    return Term{w, detail::disk_hit_probabilities(kt.entries(), phi.points(), phi.size(), u, grid)};
  });

  std::vector<double> den(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) den[i] = terms[i].w;
  const auto d = detail::mean_estimate(den);
  if (!(d.value >= 10.0 * d.std_error) || !(d.value > 0.0))
    fail(ErrorKind::unstable_conditioning, "pi(u) estimate " + std::to_string(d.value) +
                                               " is below 10 standard errors (" + std::to_string(d.std_error) + ")");

  EstimateCurve c;
  c.radii = grid;
  c.n_samples = cfg.n_samples;
  std::vector<double> num(terms.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (std::size_t i = 0; i < terms.size(); ++i) num[i] = terms[i].w * terms[i].hit[g];
    const auto e = detail::ratio_estimate(num, den);
    c.values.push_back(grid[g] == 0.0 ? 0.0 : std::clamp(e.value, 0.0, 1.0));
    c.std_errors.push_back(grid[g] == 0.0 ? 0.0 : e.std_error);
  }
  return cfg.isotonic ? isotonize(std::move(c)) : c;
}

/// G^u averaged over u with respect to the mean measure restricted to
/// `region`: U is uniform in the region and each replicate is weighted by
/// K_UU, so the ratio is E[hit K_UU] / E[K_UU]. The grid is truncated where
/// B_U(r) could leave the window for some U in the region.
inline EstimateCurve averaged_nearest_neighbour_dist(const ThinningModel& m, const Region& region, const MCConfig& cfg) {
  cfg.validate();
  m.validate();
  if (!(area(region) > 0.0)) fail(ErrorKind::invalid_argument, "region has zero area");
  detail::require_region(m.poisson.window, region);
  double lim = std::numeric_limits<double>::infinity();
  if (const auto* d = std::get_if<Disk>(&region)) {
    lim = inradius_at(m.poisson.window.shape(), d->center) - d->radius;
  } else {
    const auto& b = std::get<Rect>(region);
    for (Point c : {Point{b.x_min, b.y_min}, Point{b.x_min, b.y_max}, Point{b.x_max, b.y_min}, Point{b.x_max, b.y_max}})
      lim = std::min(lim, inradius_at(m.poisson.window.shape(), c));
  }
  lim = std::max(0.0, lim);
  std::vector<double> grid = cfg.grid.empty() ? linear_grid(lim) : cfg.grid;
  const auto cut = std::find_if(grid.begin(), grid.end(), [&](double r) { return r > lim + 1e-12; });
  if (cut != grid.end()) {
    std::clog << "warning: averaged G grid truncated at r = " << lim << "\n";
    grid.erase(cut, grid.end());
  }

  struct Term {
    double w = 0.0;
    std::vector<double> hit;
  };
  auto terms = detail::map_replicates<Term>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = replicate_rng(cfg, i);
    const auto phi = poisson_replicate(m, cfg, rng);
    const Point u = uniform_point(region, rng);
    const auto p = phi.with_points({u});
    const auto k = build_K(m, p);
    const double w = std::clamp(k(static_cast<Index>(phi.size()), static_cast<Index>(phi.size())), 0.0, 1.0);
    if (!(w > tol::schur)) return Term{0.0, std::vector<double>(grid.size(), 0.0)};
    const auto kt = palm_kernel_schur(k, SubsetIndex{phi.size()});
    return Term{w, detail::disk_hit_probabilities(kt.entries(), phi.points(), phi.size(), u, grid)};
  });
  std::vector<double> den(terms.size()), num(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) den[i] = terms[i].w;
  const auto d = detail::mean_estimate(den);
  if (!(d.value >= 10.0 * d.std_error) || !(d.value > 0.0))
    fail(ErrorKind::unstable_conditioning, "mean retention estimate is below 10 standard errors");
  EstimateCurve c;
  c.radii = grid;
  c.n_samples = cfg.n_samples;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (std::size_t i = 0; i < terms.size(); ++i) num[i] = terms[i].w * terms[i].hit[g];
    const auto e = detail::ratio_estimate(num, den);
    c.values.push_back(grid[g] == 0.0 ? 0.0 : std::clamp(e.value, 0.0, 1.0));
    c.std_errors.push_back(grid[g] == 0.0 ? 0.0 : e.std_error);
  }
  return cfg.isotonic ? isotonize(std::move(c)) : c;
}

/// Contact distribution H_o(r) = 1 - nu(B_o(r)).
inline EstimateCurve contact_dist(const ThinningModel& m, Point o, const MCConfig& cfg) {
  cfg.validate();
  m.validate();
  detail::require_inside(m.poisson.window, o, "o");
  const auto grid = detail::resolve_grid(cfg, m.poisson.window, o, true, "H");
  auto hits = detail::map_replicates<std::vector<double>>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = replicate_rng(cfg, i);
    const auto phi = poisson_replicate(m, cfg, rng);
    if (phi.empty()) return std::vector<double>(grid.size(), 0.0);
    const auto k = build_K(m, phi);
    return detail::disk_hit_probabilities(k.entries(), phi.points(), phi.size(), o, grid);
  });
  EstimateCurve c;
  c.radii = grid;
  c.n_samples = cfg.n_samples;
  std::vector<double> col(hits.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (std::size_t i = 0; i < hits.size(); ++i) col[i] = hits[i][g];
    const auto e = detail::mean_estimate(col);
    c.values.push_back(e.value);
    c.std_errors.push_back(e.std_error);
  }
  return cfg.isotonic ? isotonize(std::move(c)) : c;
}

/// J = (1 - G) / (1 - H), truncated at the first radius where 1 - H <= 0.
/// Standard errors by the delta method, treating G and H as independent.
inline EstimateCurve j_function(const EstimateCurve& g, const EstimateCurve& h) {
  EstimateCurve j;
  j.n_samples = std::min(g.n_samples, h.n_samples);
  const std::size_t n = std::min(g.size(), h.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(g.radii[i] - h.radii[i]) > 1e-12) fail(ErrorKind::invalid_argument, "G and H grids differ");
    const double one_g = 1.0 - g.values[i];
    const double one_h = 1.0 - h.values[i];
    if (!(one_h > 0.0)) break;
    const double v = one_g / one_h;
    const double rel_g = one_g > 0.0 ? g.std_errors[i] / one_g : 0.0;
    const double rel_h = h.std_errors[i] / one_h;
    j.radii.push_back(g.radii[i]);
    j.values.push_back(v);
    j.std_errors.push_back(one_g > 0.0 ? v * std::hypot(rel_g, rel_h) : g.std_errors[i] / one_h);
  }
  return j;
}

struct SummaryCurves {
  EstimateCurve g;
  EstimateCurve h;
  EstimateCurve j;
};

/// Uncorrected empirical G (pooled nearest-neighbour ECDF over all points),
/// H (distance from the window centre to the nearest point) and J.
inline SummaryCurves empirical_summaries(const std::vector<PointPattern>& samples, const std::vector<double>& grid) {
  if (samples.empty()) fail(ErrorKind::invalid_argument, "no samples");
  const Point o = samples.front().window().center();
  const auto n = samples.size();
  std::vector<std::vector<double>> g_num(grid.size(), std::vector<double>(n, 0.0));
  std::vector<double> g_den(n, 0.0);
  std::vector<std::vector<double>> h_hit(grid.size(), std::vector<double>(n, 0.0));
  for (std::size_t s = 0; s < n; ++s) {
    const auto& pts = samples[s].points();
    g_den[s] = static_cast<double>(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double d = nearest_neighbour_distance(pts, i);
      for (std::size_t k = 0; k < grid.size(); ++k)
        if (d <= grid[k] && grid[k] > 0.0) g_num[k][s] += 1.0;
    }
    const double dh = distance_to_nearest(pts, o);
    for (std::size_t k = 0; k < grid.size(); ++k)
      if (dh <= grid[k] && grid[k] > 0.0) h_hit[k][s] = 1.0;
  }
  SummaryCurves out;
  out.g.radii = out.h.radii = grid;
  out.g.n_samples = out.h.n_samples = n;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto ge = detail::ratio_estimate(g_num[k], g_den);
    out.g.values.push_back(ge.value);
    out.g.std_errors.push_back(ge.std_error);
    const auto he = detail::mean_estimate(h_hit[k]);
    out.h.values.push_back(he.value);
    out.h.std_errors.push_back(he.std_error);
  }
  out.j = j_function(out.g, out.h);
  return out;
}

// ---------------------------------------------------------------------------
// Thinning-simulation counterparts.

inline Rng empirical_rng(std::uint64_t seed, std::size_t i) { return make_rng(seed, "thinning-replicate", i); }

/// Empirical P(Psi(B) = 0).
inline Estimate empirical_void(const ThinningProcess& proc, const Region& b, const MCConfig& cfg) {
  cfg.validate();
  auto vals = detail::map_replicates<double>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = empirical_rng(cfg.seed, i);
    const auto s = simulate(proc, rng);
    for (const auto& x : s.retained)
      if (contains(b, x)) return 0.0;
    return 1.0;
  });
  return detail::mean_estimate(vals);
}

/// Empirical E[exp(-sum_{x in Psi} f(x))].
inline Estimate empirical_laplace(const ThinningProcess& proc, const SpatialFunction& f, const MCConfig& cfg) {
  cfg.validate();
  auto vals = detail::map_replicates<double>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = empirical_rng(cfg.seed, i);
    const auto s = simulate(proc, rng);
    double sum = 0.0;
    for (const auto& x : s.retained) sum += f(x);
    return std::exp(-sum);
  });
  return detail::mean_estimate(vals);
}

/// Empirical E[Psi(B)].
inline Estimate empirical_intensity(const ThinningProcess& proc, const Region& b, const MCConfig& cfg) {
  cfg.validate();
  auto vals = detail::map_replicates<double>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = empirical_rng(cfg.seed, i);
    const auto s = simulate(proc, rng);
    double c = 0.0;
    for (const auto& x : s.retained)
      if (contains(b, x)) c += 1.0;
    return c;
  });
  return detail::mean_estimate(vals);
}

/// Empirical retention frequency of a point planted at x.
inline Estimate empirical_retention(const ThinningProcess& proc, Point x, const MCConfig& cfg) {
  cfg.validate();
  auto vals = detail::map_replicates<double>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = empirical_rng(cfg.seed, i);
    const auto s = simulate(proc, rng, {x});
    return s.retained_idx.contains(s.full.size() - 1) ? 1.0 : 0.0;
  });
  return detail::mean_estimate(vals);
}

/// Empirical contact distribution from o.
inline EstimateCurve empirical_contact(const ThinningProcess& proc, Point o, const MCConfig& cfg) {
  cfg.validate();
  const auto grid = cfg.grid.empty() ? default_grid(proc.observation, o) : cfg.grid;
  auto dist = detail::map_replicates<double>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = empirical_rng(cfg.seed, i);
    return distance_to_nearest(simulate(proc, rng).retained.points(), o);
  });
  EstimateCurve c;
  c.radii = grid;
  c.n_samples = cfg.n_samples;
  std::vector<double> col(dist.size());
  for (double r : grid) {
    for (std::size_t i = 0; i < dist.size(); ++i) col[i] = (r > 0.0 && dist[i] <= r) ? 1.0 : 0.0;
    const auto e = detail::mean_estimate(col);
    c.values.push_back(e.value);
    c.std_errors.push_back(e.std_error);
  }
  return c;
}

/// Empirical nearest-neighbour distribution of a point planted at u,
/// conditioned on that point being retained. n_samples of the result is the
/// number of replicates that retained u.
inline EstimateCurve empirical_palm_nn(const ThinningProcess& proc, Point u, const MCConfig& cfg) {
  cfg.validate();
  const auto grid = cfg.grid.empty() ? default_grid(proc.observation, u) : cfg.grid;
  auto dist = detail::map_replicates<double>(cfg.n_samples, cfg.threads, [&](std::size_t i) {
    Rng rng = empirical_rng(cfg.seed, i);
    const auto s = simulate(proc, rng, {u});
    const std::size_t planted = s.full.size() - 1;
    if (!s.retained_idx.contains(planted)) return -1.0;
    double best = std::numeric_limits<double>::infinity();
    for (auto j : s.retained_idx)
      if (j != planted) best = std::min(best, distance(s.full[j], u));
    return best;
  });
  std::vector<double> den(dist.size()), num(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) den[i] = dist[i] >= 0.0 ? 1.0 : 0.0;
  EstimateCurve c;
  c.radii = grid;
  // The conditional proportion rests on the replicates that kept u.
  c.n_samples = static_cast<std::size_t>(std::count(den.begin(), den.end(), 1.0));
  for (double r : grid) {
    for (std::size_t i = 0; i < dist.size(); ++i) num[i] = (den[i] > 0.0 && r > 0.0 && dist[i] <= r) ? 1.0 : 0.0;
    const auto e = detail::ratio_estimate(num, den);
    c.values.push_back(e.value);
    c.std_errors.push_back(e.std_error);
  }
  return c;
}

/// Retained patterns from n fresh realizations of a process.
inline std::vector<PointPattern> simulate_retained(const ThinningProcess& proc, std::size_t n, std::uint64_t seed,
                                                   unsigned threads = 0) {
  auto samples = detail::map_replicates<std::vector<Point>>(n, threads, [&](std::size_t i) {
    Rng rng = empirical_rng(seed, i);
    return simulate(proc, rng).retained.points();
  });
  std::vector<PointPattern> out;
  out.reserve(n);
  for (auto& s : samples) out.emplace_back(proc.observation, std::move(s));
  return out;
}

/// Standard error of a - b for independent estimates. Each se is floored at
/// 1/n, the resolution of an n-replicate proportion, so a saturated empirical
/// point (all replicates 0 or all 1) does not claim zero uncertainty.
inline double combined_se(double se_a, std::size_t n_a, double se_b, std::size_t n_b) {
  const double fa = n_a > 0 ? 1.0 / static_cast<double>(n_a) : 0.0;
  const double fb = n_b > 0 ? 1.0 / static_cast<double>(n_b) : 0.0;
  return std::hypot(std::max(se_a, fa), std::max(se_b, fb));
}

inline double combined_se(const Estimate& a, const Estimate& b) {
  return combined_se(a.std_error, a.n_samples, b.std_error, b.n_samples);
}

inline double combined_se(const EstimateCurve& a, const EstimateCurve& b, std::size_t i) {
  return combined_se(a.std_errors[i], a.n_samples, b.std_errors[i], b.n_samples);
}

/// sup_r |a(r) - b(r)| over the common grid prefix.
inline double sup_distance(const EstimateCurve& a, const EstimateCurve& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) s = std::max(s, std::abs(a.values[i] - b.values[i]));
  return s;
}

}  // namespace detthin

#endif  // DETTHIN_ESTIMATORS_HPP
