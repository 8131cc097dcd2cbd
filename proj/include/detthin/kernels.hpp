#ifndef DETTHIN_KERNELS_HPP
#define DETTHIN_KERNELS_HPP

// Exact linear algebra for determinantal point processes on a finite ground
// set. A kernel is a dense symmetric matrix; subsets are index lists into it.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "detthin/error.hpp"
#include "detthin/random.hpp"

namespace detthin {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace tol {
/// Relative PSD slack; multiplied by the max-abs entry of the matrix.
inline constexpr double psd_rel = 1e-9;
inline constexpr double eig = 1e-8;
inline constexpr double inv = 1e-12;
inline constexpr double schur = 1e-12;
/// Largest ground set brute_force_enumerate accepts.
inline constexpr std::size_t enumerate_max_order = 12;
}  // namespace tol

enum class KernelRole { generic, marginal, l_ensemble, similarity };

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// Strictly increasing positions into a kernel's ground set.
class SubsetIndex {
 public:
  SubsetIndex() = default;
  SubsetIndex(std::initializer_list<std::size_t> idx) : SubsetIndex(std::vector<std::size_t>(idx)) {}
  explicit SubsetIndex(std::vector<std::size_t> idx) : indices_(std::move(idx)) {
    std::sort(indices_.begin(), indices_.end());
    if (std::adjacent_find(indices_.begin(), indices_.end()) != indices_.end())
      fail(ErrorKind::invalid_subset, "duplicate index in subset");
  }

  static SubsetIndex from_mask(std::uint64_t mask) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; mask != 0; ++i, mask >>= 1)
      if (mask & 1U) idx.push_back(i);
    return SubsetIndex(std::move(idx));
  }

  static SubsetIndex all(std::size_t order) {
    std::vector<std::size_t> idx(order);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return SubsetIndex(std::move(idx));
  }

  std::uint64_t mask() const {
    std::uint64_t m = 0;
    for (auto i : indices_) m |= std::uint64_t{1} << i;
    return m;
  }

  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  std::size_t operator[](std::size_t k) const { return indices_[k]; }
  auto begin() const { return indices_.begin(); }
  auto end() const { return indices_.end(); }
  const std::vector<std::size_t>& indices() const { return indices_; }
  bool contains(std::size_t i) const { return std::binary_search(indices_.begin(), indices_.end(), i); }

  /// Positions in [0, order) that are not in this subset.
  SubsetIndex complement(std::size_t order) const {
    std::vector<std::size_t> rest;
    rest.reserve(order - std::min(order, indices_.size()));
    for (std::size_t i = 0; i < order; ++i)
      if (!contains(i)) rest.push_back(i);
    return SubsetIndex(std::move(rest));
  }

  void check(std::size_t order) const {
    if (!indices_.empty() && indices_.back() >= order)
      fail(ErrorKind::invalid_subset, "index " + std::to_string(indices_.back()) +
                                          " out of range for order " + std::to_string(order));
  }

  friend bool operator==(const SubsetIndex&, const SubsetIndex&) = default;
  friend bool operator<(const SubsetIndex& a, const SubsetIndex& b) { return a.indices_ < b.indices_; }

 private:
  std::vector<std::size_t> indices_;
};

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
struct EigenDecomposition {
  Vector values;
  Matrix vectors;
};

/// Dense real symmetric matrix over an ordered, labelled ground set.
///
/// The public constructor symmetrizes its input and checks the role's
/// spectral bounds: every role needs eigenvalues >= -psd_tol, a marginal
/// kernel additionally needs eigenvalues <= 1 + psd_tol. Kernels produced by
/// the operations below carry their invariants by construction.
class SymmetricKernel {
 public:
  struct Unchecked {};

  SymmetricKernel() = default;

  explicit SymmetricKernel(Matrix entries, KernelRole role = KernelRole::generic,
                           std::vector<std::size_t> labels = {})
      : SymmetricKernel(Unchecked{}, std::move(entries), role, std::move(labels)) {
    validate();
  }

  SymmetricKernel(Unchecked, Matrix entries, KernelRole role, std::vector<std::size_t> labels = {})
      : entries_(std::move(entries)), role_(role), labels_(std::move(labels)) {
    if (entries_.rows() != entries_.cols())
      fail(ErrorKind::invalid_kernel, "kernel matrix is not square");
    if (!entries_.allFinite()) fail(ErrorKind::invalid_kernel, "kernel has non-finite entries");
    Matrix sym = 0.5 * (entries_ + entries_.transpose());
    entries_ = std::move(sym);
    if (labels_.empty()) {
      labels_.resize(static_cast<std::size_t>(entries_.rows()));
      std::iota(labels_.begin(), labels_.end(), std::size_t{0});
    } else if (labels_.size() != static_cast<std::size_t>(entries_.rows())) {
      fail(ErrorKind::invalid_kernel, "label count does not match kernel order");
    }
  }

  static SymmetricKernel marginal(Matrix m) { return SymmetricKernel(std::move(m), KernelRole::marginal); }
  static SymmetricKernel l_ensemble(Matrix m) { return SymmetricKernel(std::move(m), KernelRole::l_ensemble); }

  std::size_t order() const { return static_cast<std::size_t>(entries_.rows()); }
  const Matrix& entries() const { return entries_; }
  KernelRole role() const { return role_; }
  const std::vector<std::size_t>& labels() const { return labels_; }
  double operator()(Index i, Index j) const { return entries_(i, j); }

  double psd_tol() const { return tol::psd_rel * max_abs(entries_); }

  /// Throws invalid-kernel unless the spectrum lies within the role's bounds.
  void validate() const {
    if (order() == 0) return;
    Eigen::SelfAdjointEigenSolver<Matrix> es(entries_, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) fail(ErrorKind::invalid_kernel, "eigenvalue computation failed");
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    const double t = psd_tol();
    if (role_ != KernelRole::generic && lo < -t)
      fail(ErrorKind::invalid_kernel, "negative eigenvalue " + std::to_string(lo));
    if (role_ == KernelRole::marginal && hi > 1.0 + t)
      fail(ErrorKind::invalid_kernel, "marginal kernel eigenvalue " + std::to_string(hi) + " > 1");
  }

 private:
  Matrix entries_;
  KernelRole role_ = KernelRole::generic;
  std::vector<std::size_t> labels_;
};

namespace detail {

inline Matrix principal(const Matrix& m, const std::vector<std::size_t>& idx) {
  const auto k = static_cast<Index>(idx.size());
  Matrix out(k, k);
  for (Index a = 0; a < k; ++a)
    for (Index b = 0; b < k; ++b)
      out(a, b) = m(static_cast<Index>(idx[a]), static_cast<Index>(idx[b]));
  return out;
}

inline Matrix block(const Matrix& m, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (Index a = 0; a < out.rows(); ++a)
    for (Index b = 0; b < out.cols(); ++b)
      out(a, b) = m(static_cast<Index>(rows[a]), static_cast<Index>(cols[b]));
  return out;
}

inline SymmetricKernel with_role(const SymmetricKernel&, Matrix m, KernelRole role,
                                 std::vector<std::size_t> labels) {
  return SymmetricKernel(SymmetricKernel::Unchecked{}, std::move(m), role, std::move(labels));
}

inline std::vector<std::size_t> pick_labels(const SymmetricKernel& k, const SubsetIndex& s) {
  std::vector<std::size_t> out;
  out.reserve(s.size());
  for (auto i : s) out.push_back(k.labels()[i]);
  return out;
}

}  // namespace detail

/// Determinant of a symmetric PSD matrix: Cholesky, falling back to LDLT
/// when the factorization breaks down. The 0x0 determinant is 1.
inline double psd_determinant(const Matrix& m) {
  if (m.rows() == 0) return 1.0;
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() == Eigen::Success) {
    const auto d = llt.matrixLLT().diagonal();
    double det = 1.0;
    for (Index i = 0; i < d.size(); ++i) det *= d(i) * d(i);
    return det;
  }
  Eigen::LDLT<Matrix> ldlt(m);
  return ldlt.vectorD().prod();
}

/// log det of a symmetric positive definite matrix; -inf when the matrix is
/// not numerically positive definite.
inline double psd_log_determinant(const Matrix& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() == Eigen::Success) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }
  Eigen::LDLT<Matrix> ldlt(m);
  const Vector d = ldlt.vectorD();
  if ((d.array() <= 0.0).any()) return -std::numeric_limits<double>::infinity();
  return d.array().log().sum();
}

/// Symmetric eigendecomposition, descending. Eigenvalues within psd_tol of
/// the role's bounds are clipped onto them (0 for PSD roles, 1 for marginal).
inline EigenDecomposition eigen_decompose(const SymmetricKernel& k) {
  EigenDecomposition out;
  const auto n = static_cast<Index>(k.order());
  if (n == 0) {
    out.values.resize(0);
    out.vectors.resize(0, 0);
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(k.entries());
  if (es.info() != Eigen::Success) throw NumericError("symmetric eigensolver did not converge", 0.0);
  out.values = es.eigenvalues().reverse();
  out.vectors = es.eigenvectors().rowwise().reverse();

  const double scale = max_abs(k.entries());
  const Matrix recon = out.vectors * out.values.asDiagonal() * out.vectors.transpose();
  const double residual = max_abs(recon - k.entries());
  if (residual > tol::eig * std::max(scale, 1e-300) && residual > 1e-300)
    throw NumericError("eigendecomposition reconstruction error", residual);

  const double t = k.psd_tol();
  if (k.role() != KernelRole::generic) {
    for (Index i = 0; i < n; ++i) {
      double& v = out.values(i);
      if (v < -t) fail(ErrorKind::invalid_kernel, "negative eigenvalue " + std::to_string(v));
      if (v < 0.0) v = 0.0;
      if (k.role() == KernelRole::marginal) {
        if (v > 1.0 + t) fail(ErrorKind::invalid_kernel, "eigenvalue " + std::to_string(v) + " > 1");
        if (v > 1.0) v = 1.0;
      }
    }
  }
  return out;
}

/// Principal submatrix on `s`; the empty subset gives the 0x0 kernel.
inline SymmetricKernel restrict(const SymmetricKernel& m, const SubsetIndex& s) {
  s.check(m.order());
  return detail::with_role(m, detail::principal(m.entries(), s.indices()), m.role(),
                           detail::pick_labels(m, s));
}

/// K = L (I + L)^-1, applied to the spectrum as x -> x / (1 + x).
inline SymmetricKernel l_to_k(const SymmetricKernel& l) {
  const SymmetricKernel as_l = l.role() == KernelRole::l_ensemble
                                   ? l
                                   : detail::with_role(l, l.entries(), KernelRole::l_ensemble, l.labels());
  const auto eig = eigen_decompose(as_l);
  const Vector mapped = eig.values.array() / (1.0 + eig.values.array());
  Matrix k = eig.vectors * mapped.asDiagonal() * eig.vectors.transpose();
  return detail::with_role(l, std::move(k), KernelRole::marginal, l.labels());
}

/// L = K (I - K)^-1. Needs every eigenvalue of K strictly below 1 - inv_tol.
inline SymmetricKernel k_to_l(const SymmetricKernel& k) {
  const SymmetricKernel as_k = k.role() == KernelRole::marginal
                                   ? k
                                   : detail::with_role(k, k.entries(), KernelRole::marginal, k.labels());
  const auto eig = eigen_decompose(as_k);
  if (eig.values.size() > 0 && eig.values(0) >= 1.0 - tol::inv)
    fail(ErrorKind::no_l_representation,
         "eigenvalue " + std::to_string(eig.values(0)) + " too close to 1");
  const Vector mapped = eig.values.array() / (1.0 - eig.values.array());
  Matrix l = eig.vectors * mapped.asDiagonal() * eig.vectors.transpose();
  return detail::with_role(k, std::move(l), KernelRole::l_ensemble, k.labels());
}

namespace detail {

inline void require_psd(const SymmetricKernel& l) {
  if (l.role() == KernelRole::l_ensemble || l.role() == KernelRole::similarity ||
      l.role() == KernelRole::marginal)
    return;
  detail::with_role(l, l.entries(), KernelRole::l_ensemble, l.labels()).validate();
}

inline void require_marginal(const SymmetricKernel& k) {
  if (k.role() == KernelRole::marginal) return;
  detail::with_role(k, k.entries(), KernelRole::marginal, k.labels()).validate();
}

inline double clamp01(double p) { return std::clamp(p, 0.0, 1.0); }

}  // namespace detail

/// P(Psi = s) = det(L_s) / det(I + L).
inline double subset_probability(const SymmetricKernel& l, const SubsetIndex& s) {
  s.check(l.order());
  detail::require_psd(l);
  const auto n = static_cast<Index>(l.order());
  const double norm = psd_determinant(Matrix::Identity(n, n) + l.entries());
  return detail::clamp01(psd_determinant(detail::principal(l.entries(), s.indices())) / norm);
}

/// P(Psi contains s) = det(K_s).
inline double inclusion_probability(const SymmetricKernel& k, const SubsetIndex& s) {
  s.check(k.order());
  detail::require_marginal(k);
  return detail::clamp01(psd_determinant(detail::principal(k.entries(), s.indices())));
}

/// I - K: the kernel of the removed points.
inline SymmetricKernel complement_kernel(const SymmetricKernel& k) {
  detail::require_marginal(k);
  const auto n = static_cast<Index>(k.order());
  return detail::with_role(k, Matrix::Identity(n, n) - k.entries(), KernelRole::marginal, k.labels());
}

/// P(Psi and s are disjoint) = det((I - K)_s).
inline double void_probability_discrete(const SymmetricKernel& k, const SubsetIndex& s) {
  s.check(k.order());
  detail::require_marginal(k);
  Matrix c = -detail::principal(k.entries(), s.indices());
  c.diagonal().array() += 1.0;
  return detail::clamp01(psd_determinant(c));
}

/// K' = D K D with D = diag(sqrt(1 - exp(-f))). det(I - K') equals the
/// conditional Laplace functional E[exp(-sum_{x in Psi} f(x))]. f may be +inf.
inline SymmetricKernel laplace_modified_kernel(const SymmetricKernel& k, std::span<const double> f) {
  if (f.size() != k.order())
    fail(ErrorKind::invalid_argument, "function values do not match kernel order");
  detail::require_marginal(k);
  Vector d(static_cast<Index>(f.size()));
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (std::isnan(f[i]) || f[i] < 0.0)
      fail(ErrorKind::invalid_function, "f must be non-negative, got " + std::to_string(f[i]) +
                                            " at element " + std::to_string(i));
    d(static_cast<Index>(i)) = std::sqrt(-std::expm1(-f[i]));
  }
  Matrix m = d.asDiagonal() * k.entries() * d.asDiagonal();
  return detail::with_role(k, std::move(m), KernelRole::marginal, k.labels());
}

/// Reduced Palm kernel given `cond`: the Schur complement
/// K_rest - K_{rest,cond} K_cond^-1 K_{cond,rest}.
inline SymmetricKernel palm_kernel_schur(const SymmetricKernel& k, const SubsetIndex& cond) {
  cond.check(k.order());
  if (cond.empty()) return k;
  const SubsetIndex rest = cond.complement(k.order());
  const Matrix kc = detail::principal(k.entries(), cond.indices());
  const double det_c = psd_determinant(kc);
  if (!(det_c > tol::schur))
    fail(ErrorKind::zero_probability_conditioning,
         "det(K_cond) = " + std::to_string(det_c) + " <= " + std::to_string(tol::schur));
  const Matrix krc = detail::block(k.entries(), rest.indices(), cond.indices());
  Matrix out = detail::principal(k.entries(), rest.indices()) -
               krc * kc.ldlt().solve(krc.transpose());
  return detail::with_role(k, std::move(out), KernelRole::marginal, detail::pick_labels(k, rest));
}

struct PalmEnsemble {
  SymmetricKernel l;
  SymmetricKernel k;
};

/// Reduced Palm process through the L-ensemble:
///   K^T = I - [(I_T' + L)^-1]_T',   L^T = ([(I_T' + L)^-1]_T')^-1 - I,
/// where I_T' is the identity restricted to the complement T' of `cond`.
inline PalmEnsemble palm_borodin_rains(const SymmetricKernel& l, const SubsetIndex& cond) {
  cond.check(l.order());
  if (cond.size() == l.order())
    fail(ErrorKind::invalid_argument, "conditioning set must leave at least one element");
  if (cond.empty()) return {l, l_to_k(l)};
  const SubsetIndex rest = cond.complement(l.order());

  Matrix a = l.entries();
  for (auto i : rest) a(static_cast<Index>(i), static_cast<Index>(i)) += 1.0;
  Eigen::FullPivLU<Matrix> lu(a);
  lu.setThreshold(tol::inv);
  if (!lu.isInvertible() || lu.rcond() < tol::inv)
    throw NumericError("I_T' + L is singular", lu.rcond());
  const Matrix inv = lu.inverse();
  Matrix b = detail::principal(inv, rest.indices());
  b = 0.5 * (b + b.transpose()).eval();

  const auto m = static_cast<Index>(rest.size());
  Matrix kt = Matrix::Identity(m, m) - b;
  Eigen::LLT<Matrix> llt(b);
  if (llt.info() != Eigen::Success) throw NumericError("Palm inner block is not positive definite", 0.0);
  Matrix lt = llt.solve(Matrix::Identity(m, m)) - Matrix::Identity(m, m);
  auto labels = detail::pick_labels(l, rest);
  return {detail::with_role(l, std::move(lt), KernelRole::l_ensemble, labels),
          detail::with_role(l, std::move(kt), KernelRole::marginal, labels)};
}

/// Law of |Psi|: a sum of independent Bernoulli(eigenvalue) trials.
inline std::vector<double> count_distribution(const SymmetricKernel& k) {
  const SymmetricKernel as_k = k.role() == KernelRole::marginal
                                   ? k
                                   : detail::with_role(k, k.entries(), KernelRole::marginal, k.labels());
  const auto eig = eigen_decompose(as_k);
  std::vector<double> dist(k.order() + 1, 0.0);
  dist[0] = 1.0;
  for (Index i = 0; i < eig.values.size(); ++i) {
    const double p = eig.values(i);
    for (auto c = static_cast<std::size_t>(i) + 1; c > 0; --c)
      dist[c] = dist[c] * (1.0 - p) + dist[c - 1] * p;
    dist[0] *= 1.0 - p;
  }
  return dist;
}

/// Exact subset law indexed by bit mask (bit i set iff element i is present).
struct SubsetDistribution {
  std::size_t order = 0;
  std::vector<double> probabilities;

  double probability(const SubsetIndex& s) const {
    s.check(order);
    return probabilities[s.mask()];
  }
};

/// Enumerates det(L_s) / det(I + L) over all 2^order subsets.
inline SubsetDistribution brute_force_enumerate(const SymmetricKernel& l) {
  if (l.order() > tol::enumerate_max_order)
    fail(ErrorKind::too_large, "enumeration limited to order " +
                                   std::to_string(tol::enumerate_max_order) + ", got " +
                                   std::to_string(l.order()));
  detail::require_psd(l);
  const auto n = static_cast<Index>(l.order());
  const double norm = psd_determinant(Matrix::Identity(n, n) + l.entries());
  SubsetDistribution out;
  out.order = l.order();
  out.probabilities.resize(std::size_t{1} << l.order());
  for (std::uint64_t mask = 0; mask < out.probabilities.size(); ++mask) {
    const auto s = SubsetIndex::from_mask(mask);
    out.probabilities[mask] =
        std::max(0.0, psd_determinant(detail::principal(l.entries(), s.indices()))) / norm;
  }
  return out;
}

/// Spectral sampler: keep eigenvector i with probability lambda_i, then pick
/// points one at a time with probability proportional to the squared row norms
/// of the kept basis, projecting the basis onto the complement of the picked
/// coordinate after each pick.
inline SubsetIndex sample_dpp(const SymmetricKernel& k, Rng& rng) {
  const SymmetricKernel as_k = k.role() == KernelRole::marginal
                                   ? k
                                   : detail::with_role(k, k.entries(), KernelRole::marginal, k.labels());
  const auto eig = eigen_decompose(as_k);
  const auto n = static_cast<Index>(k.order());

  std::vector<Index> keep;
  for (Index i = 0; i < eig.values.size(); ++i)
    if (uniform01(rng) < eig.values(i)) keep.push_back(i);
  if (keep.empty()) return {};

  Matrix basis(n, static_cast<Index>(keep.size()));
  for (Index j = 0; j < basis.cols(); ++j) basis.col(j) = eig.vectors.col(keep[static_cast<std::size_t>(j)]);

  std::vector<std::size_t> picked;
  picked.reserve(keep.size());
  while (basis.cols() > 0) {
    const Vector weights = basis.rowwise().squaredNorm();
    const double total = weights.sum();
    if (!(total >= 1e-12)) throw NumericError("sampler basis collapsed before target size", total);

    double u = uniform01(rng) * total;
    Index row = n - 1;
    for (Index i = 0; i < n; ++i) {
      u -= weights(i);
      if (u < 0.0) {
        row = i;
        break;
      }
    }
    while (weights(row) <= 0.0 && row > 0) --row;
    picked.push_back(static_cast<std::size_t>(row));

    Index pivot = 0;
    basis.row(row).cwiseAbs().maxCoeff(&pivot);
    const double pv = basis(row, pivot);
    if (std::abs(pv) < 1e-12) throw NumericError("sampler pivot vanished", std::abs(pv));
    const Vector pivot_col = basis.col(pivot);
    Matrix next(n, basis.cols() - 1);
    for (Index j = 0, c = 0; j < basis.cols(); ++j) {
      if (j == pivot) continue;
      next.col(c++) = basis.col(j) - pivot_col * (basis(row, j) / pv);
    }
    // Modified Gram-Schmidt on the projected basis.
    for (Index j = 0; j < next.cols(); ++j) {
      for (Index i = 0; i < j; ++i) next.col(j) -= next.col(i).dot(next.col(j)) * next.col(i);
      const double nrm = next.col(j).norm();
      if (nrm < 1e-12) throw NumericError("sampler basis lost rank", nrm);
      next.col(j) /= nrm;
    }
    basis = std::move(next);
  }
  return SubsetIndex(std::move(picked));
}

}  // namespace detthin

#endif  // DETTHIN_KERNELS_HPP
