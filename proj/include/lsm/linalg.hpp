#pragma once

// Dense linear-algebra contract shared by the rest of the library. Every
// routine works in double precision on Eigen dynamic matrices.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>

#include "lsm/errors.hpp"

namespace lsm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Eigenpairs of a symmetric matrix, eigenvalues sorted descending.
struct SymEig {
  Vector eigenvalues;
  Matrix eigenvectors;  // column i pairs with eigenvalues[i]
};

/// Thin SVD M = left * diag(singulars) * right^T with k = min(rows, cols).
struct CompactSvd {
  Matrix left;
  Vector singulars;  // descending, nonnegative
  Matrix right;
};

inline std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw DomainError(std::string(what) + ": matrix contains NaN or Inf");
  }
}

inline void require_nonempty(const Matrix& m, const char* what) {
  if (m.rows() == 0 || m.cols() == 0) {
    throw ShapeError(std::string(what) + ": empty matrix");
  }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in descending
/// order. Symmetry is checked to 1e-10 relative to the largest entry.
inline SymEig sym_eig_desc(const Matrix& a) {
  require_nonempty(a, "sym_eig_desc");
  if (a.rows() != a.cols()) {
    throw ShapeError("sym_eig_desc: matrix is not square (" + shape_str(a) + ")");
  }
  require_finite(a, "sym_eig_desc");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * scale) {
    std::ostringstream os;
    os << "sym_eig_desc: matrix is not symmetric (max |A - A^T| = " << asym << ")";
    throw ShapeError(os.str());
  }

  Eigen::SelfAdjointEigenSolver<Matrix> solver(a, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw DomainError("sym_eig_desc: eigensolver did not converge");
  }
  SymEig out;
  out.eigenvalues = solver.eigenvalues().reverse();
  out.eigenvectors = solver.eigenvectors().rowwise().reverse();
  return out;
}

/// Compact SVD. k == min(rows, cols).
inline CompactSvd compact_svd(const Matrix& m) {
  require_nonempty(m, "compact_svd");
  require_finite(m, "compact_svd");
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return CompactSvd{svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

/// Singular values only, descending.
inline Vector singular_values(const Matrix& m) {
  require_nonempty(m, "singular_values");
  require_finite(m, "singular_values");
  return Eigen::JacobiSVD<Matrix>(m).singularValues();
}

/// Orthonormal basis of the column space of a full-column-rank matrix.
///
/// Householder QR with the signs of R's diagonal forced positive, so an input
/// that is already orthonormal comes back unchanged (up to rounding) and the
/// map is idempotent. Rank is judged by the smallest singular value relative
/// to the largest (threshold 1e-12).
inline Matrix orthonormalize(const Matrix& m) {
  require_nonempty(m, "orthonormalize");
  if (m.cols() > m.rows()) {
    throw ShapeError("orthonormalize: more columns than rows (" + shape_str(m) + ")");
  }
  require_finite(m, "orthonormalize");

  const Vector sv = singular_values(m);
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (!(smax > 0.0) || smin <= 1e-12 * smax) {
    std::ostringstream os;
    os << "orthonormalize: rank-deficient input (smallest singular value " << smin
       << ", largest " << smax << ")";
    throw RankError(os.str(), smin);
  }

  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
  const Matrix& r = qr.matrixQR();
  for (Index j = 0; j < m.cols(); ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

/// ||M^T M - I||_F, the orthonormality residual of a column set.
inline double orthonormality_residual(const Matrix& m) {
  return (m.transpose() * m - Matrix::Identity(m.cols(), m.cols())).norm();
}

}  // namespace lsm
