#pragma once

// Vector-input learning subspace classifiers: the subspace method (SM),
// Kohonen's learning subspace method (LSM) and Oja's averaged variant (ALSM),
// plus the capsule-projection (CapPro) score that links them to gradient
// training.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <utility>
#include <vector>

#include "lsm/manifold.hpp"
#include "lsm/random.hpp"

namespace lsm {

/// A feature vector with its 0-based class label.
struct LabeledVector {
  Vector x;
  std::size_t label = 0;
};

/// One orthonormal d x m basis per class.
class ClassSubspaces {
 public:
  explicit ClassSubspaces(std::vector<OrthonormalBasis> bases) : bases_(std::move(bases)) {
    if (bases_.size() < 2) throw ArgumentError("ClassSubspaces: need at least 2 classes");
    const Index d = bases_.front().ambient_dim();
    const Index m = bases_.front().sub_dim();
    for (const auto& b : bases_) {
      if (b.ambient_dim() != d || b.sub_dim() != m) {
        throw ShapeError("ClassSubspaces: class bases differ in shape");
      }
    }
  }

  std::size_t class_count() const noexcept { return bases_.size(); }
  Index ambient_dim() const noexcept { return bases_.front().ambient_dim(); }
  Index sub_dim() const noexcept { return bases_.front().sub_dim(); }

  const OrthonormalBasis& basis(std::size_t c) const { return bases_.at(c); }
  const std::vector<OrthonormalBasis>& bases() const noexcept { return bases_; }

  void set_basis(std::size_t c, OrthonormalBasis b) {
    if (b.ambient_dim() != ambient_dim() || b.sub_dim() != sub_dim()) {
      throw ShapeError("ClassSubspaces::set_basis: shape mismatch");
    }
    bases_.at(c) = std::move(b);
  }

 private:
  std::vector<OrthonormalBasis> bases_;
};

/// LSM learning rates: alpha reinforces, beta pulls the true class towards a
/// misclassified sample, gamma pushes the wrongly predicted class away.
struct LsmRates {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  void validate() const {
    for (double r : {alpha, beta, gamma}) {
      if (!std::isfinite(r) || r < 0.0) {
        throw ArgumentError("LsmRates: rates must be finite and nonnegative");
      }
    }
  }
};

struct Prediction {
  std::size_t label = 0;
  bool degenerate = false;  // every score was zero (e.g. x == 0)
};

namespace detail {

inline void check_sample(const ClassSubspaces& model, const Vector& x) {
  if (x.size() != model.ambient_dim()) {
    std::ostringstream os;
    os << "sample has dimension " << x.size() << ", model expects " << model.ambient_dim();
    throw ShapeError(os.str());
  }
  if (!x.allFinite()) throw DomainError("sample contains NaN or Inf");
}

inline void check_label(const ClassSubspaces& model, std::size_t y) {
  if (y >= model.class_count()) {
    std::ostringstream os;
    os << "label " << y << " out of range for " << model.class_count() << " classes";
    throw ArgumentError(os.str());
  }
}

/// (I + rate x x^T) V, re-orthonormalized.
inline OrthonormalBasis rotate(const OrthonormalBasis& v, const Vector& x, double rate) {
  const Matrix& vm = v.matrix();
  Matrix moved = vm + rate * x * (x.transpose() * vm);
  return OrthonormalBasis::spanning(moved);
}

}  // namespace detail

/// SM: each class subspace is spanned by the top-m eigenvectors of the
/// uncentered autocorrelation A_c = Σ_{y_i = c} x_i x_i^T.
inline ClassSubspaces fit_sm(const std::vector<LabeledVector>& samples, std::size_t class_count,
                             Index m) {
  if (samples.empty()) throw ArgumentError("fit_sm: no samples");
  if (class_count < 2) throw ArgumentError("fit_sm: need at least 2 classes");
  const Index d = samples.front().x.size();
  if (m < 1 || m > d) throw ArgumentError("fit_sm: sub dimension out of range");

  std::vector<Matrix> autocorr(class_count, Matrix::Zero(d, d));
  for (const auto& s : samples) {
    if (s.x.size() != d) throw ShapeError("fit_sm: samples differ in dimension");
    if (!s.x.allFinite()) throw DomainError("fit_sm: sample contains NaN or Inf");
    if (s.label >= class_count) throw ArgumentError("fit_sm: label out of range");
    autocorr[s.label].noalias() += s.x * s.x.transpose();
  }

  std::vector<OrthonormalBasis> bases;
  bases.reserve(class_count);
  for (std::size_t c = 0; c < class_count; ++c) {
    const SymEig eig = sym_eig_desc(autocorr[c]);
    const double top = eig.eigenvalues(0);
    const double mth = eig.eigenvalues(m - 1);
    if (!(top > 0.0) || mth <= 1e-12 * top) {
      std::ostringstream os;
      os << "fit_sm: class " << c << " autocorrelation has rank below " << m;
      throw RankError(os.str(), mth);
    }
    bases.emplace_back(eig.eigenvectors.leftCols(m));
  }
  return ClassSubspaces(std::move(bases));
}

/// Per-class projection lengths ||V_c^T x||_2.
inline Vector lsm_scores(const ClassSubspaces& model, const Vector& x) {
  detail::check_sample(model, x);
  Vector scores(static_cast<Index>(model.class_count()));
  for (std::size_t c = 0; c < model.class_count(); ++c) {
    scores(static_cast<Index>(c)) = (model.basis(c).matrix().transpose() * x).norm();
  }
  return scores;
}

/// argmax_c ||V_c^T x||, lowest index on ties.
inline Prediction lsm_predict(const ClassSubspaces& model, const Vector& x) {
  const Vector scores = lsm_scores(model, x);
  Prediction p;
  double best = scores(0);
  for (Index c = 1; c < scores.size(); ++c) {
    if (scores(c) > best) {
      best = scores(c);
      p.label = static_cast<std::size_t>(c);
    }
  }
  p.degenerate = (best == 0.0);
  return p;
}

/// Kohonen's LSM update for one sample.
inline ClassSubspaces lsm_update(ClassSubspaces model, const LabeledVector& sample,
                                 const LsmRates& rates) {
  rates.validate();
  detail::check_label(model, sample.label);
  const std::size_t q = lsm_predict(model, sample.x).label;
  const std::size_t y = sample.label;
  if (q == y) {
    model.set_basis(y, detail::rotate(model.basis(y), sample.x, rates.alpha));
  } else {
    OrthonormalBasis vy = detail::rotate(model.basis(y), sample.x, rates.beta);
    OrthonormalBasis vq = detail::rotate(model.basis(q), sample.x, -rates.gamma);
    model.set_basis(y, std::move(vy));
    model.set_basis(q, std::move(vq));
  }
  return model;
}

/// ALSM indicator: +1 when c is the true class (whether or not it was
/// predicted), -1 when c was predicted but is wrong, 0 otherwise.
inline int indicator(std::size_t c, std::size_t q, std::size_t y) {
  if (c == y) return 1;
  if (c == q) return -1;
  return 0;
}

/// Same indicator written on one-hot encodings: y_c - q_c + y_c q_c.
inline int indicator_one_hot(std::size_t c, std::size_t q, std::size_t y) {
  const int yc = (c == y) ? 1 : 0;
  const int qc = (c == q) ? 1 : 0;
  return yc - qc + yc * qc;
}

/// Oja's averaged update with equal rates:
///   V_c <- orth(V_c + rate Σ_i ι(c, q_i, y_i) x_i x_i^T V_c)
/// Predictions q_i all come from the model as passed in.
inline ClassSubspaces alsm_batch_update(ClassSubspaces model,
                                        const std::vector<LabeledVector>& batch, double rate) {
  if (batch.empty()) throw ArgumentError("alsm_batch_update: empty batch");
  if (!std::isfinite(rate)) throw ArgumentError("alsm_batch_update: rate is not finite");
  const Index d = model.ambient_dim();
  const std::size_t classes = model.class_count();

  std::vector<Matrix> drive(classes, Matrix::Zero(d, d));
  std::vector<bool> touched(classes, false);
  for (const auto& s : batch) {
    detail::check_label(model, s.label);
    const std::size_t q = lsm_predict(model, s.x).label;
    for (std::size_t c = 0; c < classes; ++c) {
      const int iota = indicator(c, q, s.label);
      if (iota == 0) continue;
      drive[c].noalias() += static_cast<double>(iota) * (s.x * s.x.transpose());
      touched[c] = true;
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (!touched[c]) continue;
    const Matrix& vc = model.basis(c).matrix();
    model.set_basis(c, OrthonormalBasis::spanning(vc + rate * drive[c] * vc));
  }
  return model;
}

/// Fraction of samples whose LSM prediction matches the label.
inline double lsm_accuracy(const ClassSubspaces& model, const std::vector<LabeledVector>& data) {
  if (data.empty()) throw ArgumentError("lsm_accuracy: empty dataset");
  std::size_t hit = 0;
  for (const auto& s : data) hit += (lsm_predict(model, s.x).label == s.label) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

struct AlsmSchedule {
  int epochs = 10;
  std::size_t batch_size = 16;
  double rate = 0.01;
  std::uint64_t seed = 0;
};

/// Runs ALSM epochs from `model` (usually the SM fit) over shuffled
/// mini-batches.
inline ClassSubspaces train_alsm(ClassSubspaces model, const std::vector<LabeledVector>& samples,
                                 const AlsmSchedule& schedule) {
  if (samples.empty()) throw ArgumentError("train_alsm: no samples");
  if (schedule.batch_size == 0) throw ArgumentError("train_alsm: zero batch size");
  Rng rng(schedule.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<LabeledVector> batch;
  for (int e = 0; e < schedule.epochs; ++e) {
    fisher_yates(order, rng);
    for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
      const std::size_t stop = std::min(order.size(), start + schedule.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(samples[order[i]]);
      model = alsm_batch_update(std::move(model), batch, schedule.rate);
    }
  }
  return model;
}

/// CapPro class score ||V^T x||_2 (V need not be orthonormal).
inline double cappro_score(const Matrix& v, const Vector& x) {
  if (x.size() != v.rows()) throw ShapeError("cappro_score: dimension mismatch");
  return (v.transpose() * x).norm();
}

/// upstream * w x x^T V with w = ||V^T x||^{-1}.
inline Matrix cappro_grad(const Matrix& v, const Vector& x, double upstream) {
  const double norm = cappro_score(v, x);
  if (norm <= 1e-12) {
    throw SingularityError("cappro_grad: ||V^T x|| is zero, gradient undefined");
  }
  return (upstream / norm) * x * (x.transpose() * v);
}

}  // namespace lsm
