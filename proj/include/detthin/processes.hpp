#ifndef DETTHIN_PROCESSES_HPP
#define DETTHIN_PROCESSES_HPP

// Two-step thinned processes observed in a window: simulate Poisson on the
// window grown by a margin, thin, and keep what falls in the window.

#include <functional>
#include <string>
#include <vector>

#include "detthin/geometry.hpp"
#include "detthin/model.hpp"

namespace detthin {

struct ThinningProcess {
  std::string name;
  double intensity = 1.0;
  Window observation = Window::unit_disk();
  /// Poisson points are generated on observation grown by this margin.
  double margin = 0.0;
  /// When set, the thinning rule sees only the points inside the observation
  /// window; otherwise it sees the whole extended pattern.
  bool thin_after_crop = false;
  /// Retention mask for a full pattern.
  std::function<std::vector<bool>(const PointPattern&, Rng&)> retain;

  Window simulation_window() const { return extend_window(observation, margin); }
};

/// Matérn II: margin r_M so every observed point sees all its competitors.
inline ThinningProcess matern2_process(double intensity, double r_m, Window w) {
  if (!(r_m > 0.0)) fail(ErrorKind::invalid_argument, "r_M must be positive");
  ThinningProcess p{"matern2", intensity, std::move(w), r_m, false, {}};
  p.retain = [r_m](const PointPattern& full, Rng& rng) {
    std::vector<double> marks(full.size());
    for (auto& m : marks) m = uniform01(rng);
    return matern2_retention(full.points(), r_m, marks);
  };
  return p;
}

/// Triangle rule: margin 2 r_T bounds the range of the neighbour dependence.
inline ThinningProcess triangle_process(double intensity, double r_t, Window w) {
  if (!(r_t > 0.0)) fail(ErrorKind::invalid_argument, "r_T must be positive");
  ThinningProcess p{"triangle", intensity, std::move(w), 2.0 * r_t, false, {}};
  p.retain = [r_t](const PointPattern& full, Rng&) {
    return triangle_retention(full.points(), r_t, full.window().diameter());
  };
  return p;
}

/// Independent thinning with constant retention probability.
inline ThinningProcess poisson_process(double intensity, double retain_prob, Window w) {
  if (!(retain_prob >= 0.0 && retain_prob <= 1.0))
    fail(ErrorKind::invalid_argument, "retention probability must lie in [0, 1]");
  ThinningProcess p{"poisson", intensity, std::move(w), 0.0, false, {}};
  p.retain = [retain_prob](const PointPattern& full, Rng& rng) {
    std::vector<bool> keep(full.size());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = uniform01(rng) < retain_prob;
    return keep;
  };
  return p;
}

/// The determinantal thinning itself; the kernel is built on the observed pattern.
inline ThinningProcess model_process(const ThinningModel& m) {
  m.validate();
  ThinningProcess p{"model", m.poisson.intensity, m.poisson.window, 0.0, true, {}};
  p.retain = [m](const PointPattern& full, Rng& rng) {
    const auto idx = sample_dpp(build_K(m, full), rng);
    std::vector<bool> keep(full.size(), false);
    for (auto i : idx) keep[i] = true;
    return keep;
  };
  return p;
}

/// One realization cropped to the observation window. `planted` points are
/// added to the Poisson pattern before thinning and appear last in `full`.
inline ThinnedSample simulate(const ThinningProcess& proc, Rng& rng, const std::vector<Point>& planted = {}) {
  const PoissonModel sim{proc.intensity, proc.simulation_window()};
  auto raw = sample_poisson(sim, rng);
  for (const auto& u : planted)
    if (!proc.observation.contains(u)) fail(ErrorKind::invalid_argument, "planted point outside window");

  if (proc.thin_after_crop) {
    auto full = crop(raw, proc.observation).with_points(planted);
    const auto keep = proc.retain(full, rng);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (keep[i]) idx.push_back(i);
    auto retained = full.subset(idx);
    return {std::move(full), std::move(retained), SubsetIndex(std::move(idx))};
  }

  // Thin on the extended pattern, then keep observed points only. Planted
  // points go last so their positions in the cropped pattern are known.
  std::vector<Point> inside, outside;
  for (const auto& x : raw) (proc.observation.contains(x) ? inside : outside).push_back(x);
  std::vector<Point> ordered = outside;
  ordered.insert(ordered.end(), inside.begin(), inside.end());
  ordered.insert(ordered.end(), planted.begin(), planted.end());
  const PointPattern extended(sim.window, ordered);
  const auto keep = proc.retain(extended, rng);

  std::vector<Point> obs = inside;
  obs.insert(obs.end(), planted.begin(), planted.end());
  PointPattern full(proc.observation, std::move(obs));
  std::vector<std::size_t> idx;
  for (std::size_t i = outside.size(); i < keep.size(); ++i)
    if (keep[i]) idx.push_back(i - outside.size());
  auto retained = full.subset(idx);
  return {std::move(full), std::move(retained), SubsetIndex(std::move(idx))};
}

}  // namespace detthin

#endif  // DETTHIN_PROCESSES_HPP
