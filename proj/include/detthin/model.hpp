#ifndef DETTHIN_MODEL_HPP
#define DETTHIN_MODEL_HPP

// Quality/similarity construction of the thinning kernel over any pattern:
// L = diag(q) S diag(q), q_x = exp(theta . f_x), K = L (I + L)^-1.

#include <cmath>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "detthin/error.hpp"
#include "detthin/geometry.hpp"
#include "detthin/kernels.hpp"
#include "detthin/random.hpp"

namespace detthin {

enum class Feature { constant, d1, d2, d3 };

inline const char* to_string(Feature f) {
  switch (f) {
    case Feature::constant: return "const";
    case Feature::d1: return "d1";
    case Feature::d2: return "d2";
    case Feature::d3: return "d3";
  }
  return "?";
}

inline std::vector<Feature> default_features() {
  return {Feature::constant, Feature::d1, Feature::d2, Feature::d3};
}

/// Exponent cap for q_x = exp(theta . f_x).
inline constexpr double max_quality_exponent = 700.0;

struct QualityParams {
  std::vector<double> theta = std::vector<double>(4, 0.0);
  std::vector<Feature> features = default_features();

  void validate() const {
    if (theta.size() != features.size())
      fail(ErrorKind::invalid_argument, "theta has " + std::to_string(theta.size()) + " entries but " +
                                            std::to_string(features.size()) + " features");
    for (double t : theta)
      if (!std::isfinite(t)) fail(ErrorKind::invalid_argument, "theta must be finite");
  }
};

/// S_xy = C exp(-|x - y|^2 / sigma^2). sigma == 0 selects the identity.
struct GaussianSimilarity {
  double sigma = 0.0;
  double amplitude = 1.0;
};

/// S = V^T V with one feature vector per location.
struct GramSimilarity {
  std::function<Vector(Point)> vectors;
};

struct IdentitySimilarity {};

using SimilarityParams = std::variant<GaussianSimilarity, GramSimilarity, IdentitySimilarity>;

struct ThinningModel {
  QualityParams quality;
  SimilarityParams similarity = GaussianSimilarity{};
  PoissonModel poisson;

  void validate() const {
    quality.validate();
    poisson.validate();
    if (const auto* g = std::get_if<GaussianSimilarity>(&similarity)) {
      if (!(g->sigma >= 0.0) || !std::isfinite(g->sigma))
        fail(ErrorKind::invalid_argument, "sigma must be >= 0");
      if (!(g->amplitude > 0.0)) fail(ErrorKind::invalid_argument, "C must be > 0");
    } else if (const auto* gr = std::get_if<GramSimilarity>(&similarity)) {
      if (!gr->vectors) fail(ErrorKind::invalid_argument, "gram similarity needs a vector map");
    }
  }

  /// sigma of a Gaussian similarity; 0 for identity; NaN for Gram.
  double sigma() const {
    if (const auto* g = std::get_if<GaussianSimilarity>(&similarity)) return g->sigma;
    if (std::holds_alternative<IdentitySimilarity>(similarity)) return 0.0;
    return std::nan("");
  }
};

/// Row x holds f_x in the model's feature order.
inline Matrix feature_matrix(const std::vector<Feature>& features, const PointPattern& p) {
  const auto n = static_cast<Index>(p.size());
  Matrix f(n, static_cast<Index>(features.size()));
  const double fallback = p.window().diameter();
  for (Index i = 0; i < n; ++i) {
    const auto nf = neighbour_features(p.points(), static_cast<std::size_t>(i), fallback);
    for (std::size_t k = 0; k < features.size(); ++k) {
      double v = 1.0;
      switch (features[k]) {
        case Feature::constant: v = 1.0; break;
        case Feature::d1: v = nf.d1; break;
        case Feature::d2: v = nf.d2; break;
        case Feature::d3: v = nf.d3; break;
      }
      f(i, static_cast<Index>(k)) = v;
    }
  }
  return f;
}

inline Vector theta_vector(const QualityParams& q) {
  return Eigen::Map<const Vector>(q.theta.data(), static_cast<Index>(q.theta.size()));
}

/// q_x from a precomputed feature matrix.
inline Vector quality_from_features(const Matrix& features, const Vector& theta) {
  const Vector e = features * theta;
  for (Index i = 0; i < e.size(); ++i)
    if (!(std::abs(e(i)) <= max_quality_exponent)) throw SaturationError(static_cast<std::size_t>(i), e(i));
  return e.array().exp();
}

inline Vector quality_scores(const ThinningModel& m, const PointPattern& p) {
  m.quality.validate();
  return quality_from_features(feature_matrix(m.quality.features, p), theta_vector(m.quality));
}

inline Matrix similarity_entries(const SimilarityParams& s, const PointPattern& p) {
  const auto n = static_cast<Index>(p.size());
  if (const auto* g = std::get_if<GaussianSimilarity>(&s)) {
    if (g->sigma == 0.0) return Matrix::Identity(n, n);
    Matrix m(n, n);
    const double inv = 1.0 / (g->sigma * g->sigma);
    for (Index i = 0; i < n; ++i) {
      m(i, i) = g->amplitude;
      for (Index j = i + 1; j < n; ++j) {
        const double d = distance(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
        m(i, j) = m(j, i) = g->amplitude * std::exp(-d * d * inv);
      }
    }
    return m;
  }
  if (const auto* gr = std::get_if<GramSimilarity>(&s)) {
    if (n == 0) return Matrix(0, 0);
    Vector first = gr->vectors(p[0]);
    Matrix v(first.size(), n);
    v.col(0) = first;
    for (Index i = 1; i < n; ++i) {
      Vector vi = gr->vectors(p[static_cast<std::size_t>(i)]);
      if (vi.size() != v.rows()) fail(ErrorKind::invalid_argument, "gram vectors differ in dimension");
      v.col(i) = vi;
    }
    if (!v.allFinite()) fail(ErrorKind::invalid_argument, "gram vectors must be finite");
    return v.transpose() * v;
  }
  return Matrix::Identity(n, n);
}

inline SymmetricKernel similarity_matrix(const ThinningModel& m, const PointPattern& p) {
  return SymmetricKernel(SymmetricKernel::Unchecked{}, similarity_entries(m.similarity, p),
                         KernelRole::similarity);
}

/// L-ensemble from qualities and a similarity matrix.
inline SymmetricKernel assemble_l(const Vector& q, const Matrix& s) {
  Matrix l = q.asDiagonal() * s * q.asDiagonal();
  return SymmetricKernel(SymmetricKernel::Unchecked{}, std::move(l), KernelRole::l_ensemble);
}

inline SymmetricKernel build_L(const ThinningModel& m, const PointPattern& p) {
  m.validate();
  return assemble_l(quality_scores(m, p), similarity_entries(m.similarity, p));
}

inline SymmetricKernel build_K(const ThinningModel& m, const PointPattern& p) { return l_to_k(build_L(m, p)); }

struct ThinnedSample {
  PointPattern full;
  PointPattern retained;
  SubsetIndex retained_idx;
};

/// Draws a retained subset of a given realization.
inline ThinnedSample thin(const ThinningModel& m, const PointPattern& full, Rng& rng) {
  const auto idx = sample_dpp(build_K(m, full), rng);
  auto retained = full.subset(idx.indices());
  return {full, std::move(retained), idx};
}

/// phi ~ Poisson(m.poisson), psi ~ DPP(build_K(m, phi)).
inline ThinnedSample sample_thinned(const ThinningModel& m, Rng& rng) {
  m.validate();
  auto full = sample_poisson(m.poisson, rng);
  return thin(m, full, rng);
}

}  // namespace detthin

#endif  // DETTHIN_MODEL_HPP
