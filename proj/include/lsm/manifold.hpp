#pragma once

// Grassmann-manifold primitives. A point of G(d, p) is represented by a d x p
// matrix with orthonormal columns; tangent vectors at V live in the horizontal
// space { H : V^T H = 0 }.

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <utility>
#include <vector>

#include "lsm/linalg.hpp"

namespace lsm {

/// d x p matrix with orthonormal columns (a Stiefel representative of a
/// Grassmann point). ||B^T B - I||_F <= 1e-10 holds for every instance.
class OrthonormalBasis {
 public:
  static constexpr double kTolerance = 1e-10;

  explicit OrthonormalBasis(Matrix basis) : basis_(std::move(basis)) {
    require_nonempty(basis_, "OrthonormalBasis");
    if (basis_.cols() > basis_.rows()) {
      throw ShapeError("OrthonormalBasis: sub dimension exceeds ambient (" +
                       shape_str(basis_) + ")");
    }
    require_finite(basis_, "OrthonormalBasis");
    const double res = orthonormality_residual(basis_);
    if (!(res <= kTolerance)) {
      std::ostringstream os;
      os << "OrthonormalBasis: columns not orthonormal (residual " << res << ")";
      throw DomainError(os.str());
    }
  }

  /// Orthonormal basis of span(m).
  static OrthonormalBasis spanning(const Matrix& m) {
    return OrthonormalBasis(orthonormalize(m));
  }

  const Matrix& matrix() const noexcept { return basis_; }
  Index ambient_dim() const noexcept { return basis_.rows(); }
  Index sub_dim() const noexcept { return basis_.cols(); }

 private:
  Matrix basis_;
};

/// Gaussian d x p matrix, orthonormalized: a uniformly random point of G(d, p).
template <class Rng>
OrthonormalBasis random_basis(Index d, Index p, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(d, p);
  for (Index j = 0; j < p; ++j) {
    for (Index i = 0; i < d; ++i) g(i, j) = normal(rng);
  }
  return OrthonormalBasis::spanning(g);
}

/// Tangent direction at `at`, horizontal to the fibre of rotations.
class HorizontalVector {
 public:
  static constexpr double kTolerance = 1e-8;

  HorizontalVector(OrthonormalBasis at, Matrix direction)
      : at_(std::move(at)), direction_(std::move(direction)) {
    if (direction_.rows() != at_.ambient_dim() || direction_.cols() != at_.sub_dim()) {
      throw ShapeError("HorizontalVector: direction " + shape_str(direction_) +
                       " does not match basis " + shape_str(at_.matrix()));
    }
    require_finite(direction_, "HorizontalVector");
    const double res = (at_.matrix().transpose() * direction_).norm();
    if (res > kTolerance * std::max(1.0, direction_.norm())) {
      std::ostringstream os;
      os << "HorizontalVector: direction is not horizontal (||V^T H||_F = " << res << ")";
      throw TangencyError(os.str(), res);
    }
  }

  const OrthonormalBasis& at() const noexcept { return at_; }
  const Matrix& direction() const noexcept { return direction_; }

 private:
  OrthonormalBasis at_;
  Matrix direction_;
};

/// (I - V V^T) G: the orthogonal projection of an ambient matrix onto the
/// horizontal space at V.
inline HorizontalVector horizontal_project(const OrthonormalBasis& v, const Matrix& g) {
  const Matrix& vm = v.matrix();
  if (g.rows() != vm.rows() || g.cols() != vm.cols()) {
    throw ShapeError("horizontal_project: gradient " + shape_str(g) +
                     " does not match basis " + shape_str(vm));
  }
  require_finite(g, "horizontal_project");
  Matrix h = g - vm * (vm.transpose() * g);
  return HorizontalVector(v, std::move(h));
}

/// Geodesic step V' = orth(V Q cos(step Θ) Q^T + J sin(step Θ) Q^T) where
/// J Θ Q^T is the compact SVD of the horizontal direction H.
///
/// H must satisfy ||V^T H||_F <= 1e-6 max(1, ||H||_F); a zero direction
/// (||H||_F < 1e-15) returns V as is.
inline OrthonormalBasis grassmann_exp(const OrthonormalBasis& v, const Matrix& h, double step) {
  const Matrix& vm = v.matrix();
  if (h.rows() != vm.rows() || h.cols() != vm.cols()) {
    throw ShapeError("grassmann_exp: direction " + shape_str(h) + " does not match basis " +
                     shape_str(vm));
  }
  if (!std::isfinite(step)) throw DomainError("grassmann_exp: step is not finite");
  require_finite(h, "grassmann_exp");

  const double hnorm = h.norm();
  const double tangency = (vm.transpose() * h).norm();
  if (tangency > 1e-6 * std::max(1.0, hnorm)) {
    std::ostringstream os;
    os << "grassmann_exp: direction is not tangent (||V^T H||_F = " << tangency << ")";
    throw TangencyError(os.str(), tangency);
  }
  if (hnorm < 1e-15) return v;

  const CompactSvd svd = compact_svd(h);
  const Vector angle = svd.singulars * step;
  const Vector cosine = angle.array().cos().matrix();
  const Vector sine = angle.array().sin().matrix();
  const Matrix moved = (vm * svd.right) * cosine.asDiagonal() * svd.right.transpose() +
                       svd.left * sine.asDiagonal() * svd.right.transpose();
  return OrthonormalBasis::spanning(moved);
}

inline OrthonormalBasis grassmann_exp(const OrthonormalBasis& v, const HorizontalVector& h,
                                      double step) {
  if (h.at().matrix() != v.matrix()) {
    throw ArgumentError("grassmann_exp: tangent vector is attached to a different basis");
  }
  return grassmann_exp(v, h.direction(), step);
}

/// One Riemannian SGD step: walk the geodesic along -(I - V V^T) grad.
/// `euclid_grad` is the raw Euclidean gradient of the loss at V.
inline OrthonormalBasis rsgd_step(const OrthonormalBasis& v, const Matrix& euclid_grad,
                                  double rate) {
  if (!std::isfinite(rate) || rate < 0.0) {
    throw ArgumentError("rsgd_step: rate must be finite and nonnegative");
  }
  const HorizontalVector h = horizontal_project(v, -euclid_grad);
  return grassmann_exp(v, h.direction(), rate);
}

/// Cosines of the canonical angles between span(X) and span(V), descending.
/// Values above 1 by at most 1e-9 are clamped; beyond that is an error.
inline Vector canonical_cosines(const OrthonormalBasis& x, const OrthonormalBasis& v) {
  if (x.ambient_dim() != v.ambient_dim()) {
    std::ostringstream os;
    os << "canonical_angles: ambient dimensions differ (" << x.ambient_dim() << " vs "
       << v.ambient_dim() << ")";
    throw ShapeError(os.str());
  }
  Vector s = singular_values(x.matrix().transpose() * v.matrix());
  for (Index i = 0; i < s.size(); ++i) {
    if (s(i) > 1.0 + 1e-9) {
      std::ostringstream os;
      os << "canonical_angles: singular value " << s(i) << " exceeds 1";
      throw DomainError(os.str());
    }
    s(i) = std::clamp(s(i), 0.0, 1.0);
  }
  return s;
}

/// Canonical angles θ_1 <= ... <= θ_r, r = min(m, p), with cos θ_i = σ_i(X^T V).
/// Angles below π/4 are taken from the sines, σ((I - B B^T) A) with A the
/// thinner basis, where acos loses half the digits.
inline Vector canonical_angles(const OrthonormalBasis& x, const OrthonormalBasis& v) {
  const Vector cosines = canonical_cosines(x, v);
  const bool x_thin = x.sub_dim() <= v.sub_dim();
  const Matrix& a = x_thin ? x.matrix() : v.matrix();
  const Matrix& b = x_thin ? v.matrix() : x.matrix();
  const Vector sines_desc = singular_values(a - b * (b.transpose() * a));
  const Index r = cosines.size();
  Vector angles(r);
  for (Index i = 0; i < r; ++i) {
    const double c = cosines(i);
    const double s = std::clamp(sines_desc(r - 1 - i), 0.0, 1.0);
    angles(i) = c >= std::sqrt(0.5) ? std::asin(s) : std::acos(c);
  }
  return angles;
}

/// Σ cos² θ_i = ||X^T V||_F². Equals min(m, p) iff one span contains the other.
inline double subspace_similarity(const OrthonormalBasis& x, const OrthonormalBasis& v) {
  if (x.ambient_dim() != v.ambient_dim()) {
    throw ShapeError("subspace_similarity: ambient dimensions differ");
  }
  return (x.matrix().transpose() * v.matrix()).squaredNorm();
}

}  // namespace lsm
