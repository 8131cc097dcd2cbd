#ifndef DETTHIN_GEOMETRY_HPP
#define DETTHIN_GEOMETRY_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "detthin/error.hpp"
#include "detthin/kernels.hpp"
#include "detthin/random.hpp"

namespace detthin {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
  friend auto operator<=>(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct Disk {
  Point center;
  double radius = 0.0;
};

struct Rect {
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;
};

/// A planar region. Unlike Window, a Region may be degenerate (zero area).
using Region = std::variant<Disk, Rect>;

inline double area(const Region& r) {
  if (const auto* d = std::get_if<Disk>(&r)) return std::numbers::pi * d->radius * d->radius;
  const auto& b = std::get<Rect>(r);
  return (b.x_max - b.x_min) * (b.y_max - b.y_min);
}

inline bool contains(const Region& r, Point p) {
  if (const auto* d = std::get_if<Disk>(&r)) return distance(p, d->center) <= d->radius;
  const auto& b = std::get<Rect>(r);
  return p.x >= b.x_min && p.x <= b.x_max && p.y >= b.y_min && p.y <= b.y_max;
}

inline Point center(const Region& r) {
  if (const auto* d = std::get_if<Disk>(&r)) return d->center;
  const auto& b = std::get<Rect>(r);
  return {0.5 * (b.x_min + b.x_max), 0.5 * (b.y_min + b.y_max)};
}

inline double diameter(const Region& r) {
  if (const auto* d = std::get_if<Disk>(&r)) return 2.0 * d->radius;
  const auto& b = std::get<Rect>(r);
  return std::hypot(b.x_max - b.x_min, b.y_max - b.y_min);
}

/// Largest r such that the disk B_u(r) lies inside `r`; 0 if u is outside.
inline double inradius_at(const Region& r, Point u) {
  if (const auto* d = std::get_if<Disk>(&r)) return std::max(0.0, d->radius - distance(u, d->center));
  const auto& b = std::get<Rect>(r);
  return std::max(0.0, std::min({u.x - b.x_min, b.x_max - u.x, u.y - b.y_min, b.y_max - u.y}));
}

/// True when `inner` lies inside `outer` (boundaries may touch).
inline bool region_within(const Region& inner, const Region& outer) {
  constexpr double slack = 1e-12;
  if (const auto* d = std::get_if<Disk>(&inner)) return inradius_at(outer, d->center) + slack >= d->radius;
  const auto& b = std::get<Rect>(inner);
  const Point corners[] = {{b.x_min, b.y_min}, {b.x_min, b.y_max}, {b.x_max, b.y_min}, {b.x_max, b.y_max}};
  return std::all_of(std::begin(corners), std::end(corners), [&](Point c) {
    if (const auto* od = std::get_if<Disk>(&outer)) return distance(c, od->center) <= od->radius + slack;
    return contains(outer, c);
  });
}

/// Bounded observation or simulation window with positive area.
class Window {
 public:
  explicit Window(Region shape) : shape_(shape) {
    if (const auto* d = std::get_if<Disk>(&shape_)) {
      if (!(d->radius > 0.0) || !std::isfinite(d->radius))
        fail(ErrorKind::invalid_argument, "disk radius must be positive");
    } else {
      const auto& b = std::get<Rect>(shape_);
      if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min))
        fail(ErrorKind::invalid_argument, "rectangle ranges must be non-degenerate");
    }
  }

  static Window disk(Point c, double radius) { return Window(Disk{c, radius}); }
  static Window unit_disk() { return disk({0.0, 0.0}, 1.0); }
  static Window rectangle(double x0, double x1, double y0, double y1) { return Window(Rect{x0, x1, y0, y1}); }

  const Region& shape() const { return shape_; }
  bool is_disk() const { return std::holds_alternative<Disk>(shape_); }
  double area() const { return detthin::area(shape_); }
  double diameter() const { return detthin::diameter(shape_); }
  Point center() const { return detthin::center(shape_); }
  bool contains(Point p) const { return detthin::contains(shape_, p); }

 private:
  Region shape_;
};

/// Grows the window by `margin` on every side.
inline Window extend_window(const Window& w, double margin) {
  if (!(margin >= 0.0)) fail(ErrorKind::invalid_argument, "margin must be non-negative");
  if (const auto* d = std::get_if<Disk>(&w.shape())) return Window::disk(d->center, d->radius + margin);
  const auto& b = std::get<Rect>(w.shape());
  return Window::rectangle(b.x_min - margin, b.x_max + margin, b.y_min - margin, b.y_max + margin);
}

/// Finite simple point pattern inside a window; the ground set of the
/// thinning. Point order is significant and preserved by every operation.
class PointPattern {
 public:
  explicit PointPattern(Window window, std::vector<Point> points = {})
      : points_(std::move(points)), window_(std::move(window)) {
    const double slack = 1e-12 * std::max(1.0, window_.diameter());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const Point p = points_[i];
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        fail(ErrorKind::invalid_argument, "non-finite coordinate at point " + std::to_string(i));
      if (!within_slack(p, slack))
        fail(ErrorKind::invalid_argument, "point " + std::to_string(i) + " outside window");
    }
    std::vector<Point> sorted = points_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      fail(ErrorKind::invalid_argument, "duplicate points in pattern");
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Point& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<Point>& points() const { return points_; }
  const Window& window() const { return window_; }
  auto begin() const { return points_.begin(); }
  auto end() const { return points_.end(); }

  PointPattern subset(const std::vector<std::size_t>& idx) const {
    std::vector<Point> pts;
    pts.reserve(idx.size());
    for (auto i : idx) pts.push_back(points_.at(i));
    return PointPattern(window_, std::move(pts));
  }

  /// Pattern with `extra` appended after the existing points.
  PointPattern with_points(const std::vector<Point>& extra) const {
    std::vector<Point> pts = points_;
    pts.insert(pts.end(), extra.begin(), extra.end());
    return PointPattern(window_, std::move(pts));
  }

 private:
  bool within_slack(Point p, double slack) const {
    if (const auto* d = std::get_if<Disk>(&window_.shape())) return distance(p, d->center) <= d->radius + slack;
    const auto& b = std::get<Rect>(window_.shape());
    return p.x >= b.x_min - slack && p.x <= b.x_max + slack && p.y >= b.y_min - slack && p.y <= b.y_max + slack;
  }

  std::vector<Point> points_;
  Window window_;
};

struct PoissonModel {
  double intensity = 1.0;
  Window window = Window::unit_disk();

  void validate() const {
    if (!(intensity > 0.0) || !std::isfinite(intensity))
      fail(ErrorKind::invalid_argument, "Poisson intensity must be positive");
  }
};

inline Point uniform_point(const Region& r, Rng& rng) {
  if (const auto* d = std::get_if<Disk>(&r)) {
    const double rad = d->radius * std::sqrt(uniform01(rng));
    const double ang = 2.0 * std::numbers::pi * uniform01(rng);
    return {d->center.x + rad * std::cos(ang), d->center.y + rad * std::sin(ang)};
  }
  const auto& b = std::get<Rect>(r);
  const double x = b.x_min + (b.x_max - b.x_min) * uniform01(rng);
  const double y = b.y_min + (b.y_max - b.y_min) * uniform01(rng);
  return {x, y};
}

/// Homogeneous Poisson process on the model's window.
inline PointPattern sample_poisson(const PoissonModel& model, Rng& rng) {
  model.validate();
  std::poisson_distribution<long> count(model.intensity * model.window.area());
  const long n = count(rng);
  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) pts.push_back(uniform_point(model.window.shape(), rng));
  return PointPattern(model.window, std::move(pts));
}

/// Points of `p` inside `w`, in their original order, re-windowed to `w`.
inline PointPattern crop(const PointPattern& p, const Window& w) {
  if (!region_within(w.shape(), p.window().shape()))
    fail(ErrorKind::invalid_argument, "crop window is not contained in the pattern window");
  std::vector<Point> pts;
  for (const auto& x : p)
    if (w.contains(x)) pts.push_back(x);
  return PointPattern(w, std::move(pts));
}

/// Pairwise Euclidean distances.
inline Matrix distance_matrix(const PointPattern& p) {
  const auto n = static_cast<Index>(p.size());
  Matrix d = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = distance(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  return d;
}

/// Retention mask of Matérn II thinning: a point survives iff no other point
/// within distance r_M (inclusive) carries a strictly smaller mark.
inline std::vector<bool> matern2_retention(const std::vector<Point>& pts, double r_m, const std::vector<double>& marks) {
  if (!(r_m > 0.0)) fail(ErrorKind::invalid_argument, "inhibition radius must be positive");
  if (marks.size() != pts.size()) fail(ErrorKind::invalid_argument, "one mark per point required");
  std::vector<bool> keep(pts.size(), true);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < pts.size() && keep[i]; ++j)
      if (j != i && marks[j] < marks[i] && distance(pts[i], pts[j]) <= r_m) keep[i] = false;
  return keep;
}

inline PointPattern matern2_thin(const PointPattern& p, double r_m, Rng& rng) {
  std::vector<double> marks(p.size());
  for (auto& m : marks) m = uniform01(rng);
  const auto keep = matern2_retention(p.points(), r_m, marks);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (keep[i]) idx.push_back(i);
  return p.subset(idx);
}

struct NeighbourFeatures {
  double d1 = 0.0;  ///< distance to the nearest neighbour
  double d2 = 0.0;  ///< distance to the second nearest neighbour
  double d3 = 0.0;  ///< distance between those two neighbours
};

/// Features of point i. Ties in neighbour rank go to the lower index. Missing
/// neighbours (patterns with fewer than three points) are placed at
/// `fallback` distance, the window diameter by default.
inline NeighbourFeatures neighbour_features(const std::vector<Point>& pts, std::size_t i, double fallback) {
  if (i >= pts.size()) fail(ErrorKind::invalid_argument, "point index out of range");
  constexpr auto none = std::numeric_limits<std::size_t>::max();
  std::size_t first = none, second = none;
  double best1 = std::numeric_limits<double>::infinity(), best2 = best1;
  for (std::size_t j = 0; j < pts.size(); ++j) {
    if (j == i) continue;
    const double d = distance(pts[i], pts[j]);
    if (d < best1) {
      second = first;
      best2 = best1;
      first = j;
      best1 = d;
    } else if (d < best2) {
      second = j;
      best2 = d;
    }
  }
  NeighbourFeatures f;
  f.d1 = first == none ? fallback : best1;
  f.d2 = second == none ? fallback : best2;
  f.d3 = second == none ? fallback : distance(pts[first], pts[second]);
  return f;
}

inline NeighbourFeatures neighbour_features(const PointPattern& p, std::size_t i) {
  return neighbour_features(p.points(), i, p.window().diameter());
}

/// Retention mask of the triangle rule, evaluated in one pass on the whole
/// input: keep x iff d1(x) + d2(x) + d3(x) <= r_T.
inline std::vector<bool> triangle_retention(const std::vector<Point>& pts, double r_t, double fallback) {
  if (!(r_t > 0.0)) fail(ErrorKind::invalid_argument, "triangle threshold must be positive");
  std::vector<bool> keep(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto f = neighbour_features(pts, i, fallback);
    keep[i] = f.d1 + f.d2 + f.d3 <= r_t;
  }
  return keep;
}

inline PointPattern triangle_thin(const PointPattern& p, double r_t) {
  const auto keep = triangle_retention(p.points(), r_t, p.window().diameter());
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (keep[i]) idx.push_back(i);
  return p.subset(idx);
}

/// Distance from point i to its nearest other point; +inf if alone.
inline double nearest_neighbour_distance(const std::vector<Point>& pts, std::size_t i) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < pts.size(); ++j)
    if (j != i) best = std::min(best, distance(pts[i], pts[j]));
  return best;
}

/// Distance from `u` to the nearest point of `pts`; +inf if empty.
inline double distance_to_nearest(const std::vector<Point>& pts, Point u) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : pts) best = std::min(best, distance(u, p));
  return best;
}

}  // namespace detthin

#endif  // DETTHIN_GEOMETRY_HPP
