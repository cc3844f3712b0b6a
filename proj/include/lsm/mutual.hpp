#pragma once

// Learning mutual subspace layer: matches an input subspace against K learnable
// reference subspaces through the sum of squared canonical-angle cosines, and
// the heads and losses trained on top of it.
//
// Two learning modes share one similarity:
//   grassmann  s_j = tr(V_j^T X X^T V_j), refs kept orthonormal (RSGD)
//   euclidean  s_j = tr(X^T V_j (V_j^T V_j + eps I)^{-1} V_j^T X), refs free (SGD)

#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lsm/manifold.hpp"
#include "lsm/random.hpp"

namespace lsm {

enum class LearningMode { euclidean, grassmann };

inline const char* to_string(LearningMode m) {
  return m == LearningMode::grassmann ? "grassmann" : "euclidean";
}

/// K reference-subspace parameter matrices, all d x p.
class ReferenceBank {
 public:
  static constexpr double kDefaultEpsilon = 1e-6;

  ReferenceBank(std::vector<Matrix> refs, LearningMode mode, double epsilon = kDefaultEpsilon)
      : refs_(std::move(refs)), mode_(mode), epsilon_(epsilon) {
    if (refs_.empty()) throw ArgumentError("ReferenceBank: no references");
    if (!std::isfinite(epsilon_) || epsilon_ < 0.0) {
      throw ArgumentError("ReferenceBank: epsilon must be finite and nonnegative");
    }
    for (std::size_t j = 0; j < refs_.size(); ++j) check_ref(refs_[j]);
  }

  struct Unchecked {};

  /// Skips the mode invariants. Only for finite-difference probes, which step
  /// references off the manifold.
  ReferenceBank(Unchecked, std::vector<Matrix> refs, LearningMode mode, double epsilon)
      : refs_(std::move(refs)), mode_(mode), epsilon_(epsilon) {}

  /// Gaussian d x p draws, orthonormalized. Euclidean banks start from the same
  /// draw and are left unconstrained afterwards.
  static ReferenceBank random(std::size_t k, Index d, Index p, LearningMode mode, Rng& rng,
                              double epsilon = kDefaultEpsilon) {
    std::vector<Matrix> refs;
    refs.reserve(k);
    for (std::size_t j = 0; j < k; ++j) refs.push_back(random_basis(d, p, rng).matrix());
    return ReferenceBank(std::move(refs), mode, epsilon);
  }

  std::size_t size() const noexcept { return refs_.size(); }
  Index ambient_dim() const noexcept { return refs_.front().rows(); }
  Index sub_dim() const noexcept { return refs_.front().cols(); }
  LearningMode mode() const noexcept { return mode_; }
  double epsilon() const noexcept { return epsilon_; }

  const Matrix& ref(std::size_t j) const { return refs_.at(j); }
  const std::vector<Matrix>& refs() const noexcept { return refs_; }

  void set_ref(std::size_t j, Matrix v) {
    check_ref(v);
    refs_.at(j) = std::move(v);
  }

 private:
  void check_ref(const Matrix& v) const {
    require_nonempty(v, "ReferenceBank");
    const Matrix& first = refs_.front();
    if (v.rows() != first.rows() || v.cols() != first.cols()) {
      throw ShapeError("ReferenceBank: reference " + shape_str(v) + " differs from " +
                       shape_str(first));
    }
    if (v.cols() > v.rows()) throw ShapeError("ReferenceBank: p exceeds d");
    require_finite(v, "ReferenceBank");
    if (mode_ == LearningMode::grassmann) {
      const double res = orthonormality_residual(v);
      if (!(res <= OrthonormalBasis::kTolerance)) {
        std::ostringstream os;
        os << "ReferenceBank: grassmann reference not orthonormal (residual " << res << ")";
        throw ModeError(os.str());
      }
    } else {
      const Vector sv = singular_values(v);
      if (!(sv(sv.size() - 1) > 1e-10)) {
        throw RankError("ReferenceBank: euclidean reference is rank deficient",
                        sv(sv.size() - 1));
      }
    }
  }

  std::vector<Matrix> refs_;
  LearningMode mode_;
  double epsilon_;
};

/// How an image set enters the layer: an orthonormal basis X from noncentered
/// PCA, or the autocorrelation matrix H H^T standing in for X X^T.
class SetInput {
 public:
  static SetInput basis(OrthonormalBasis x) { return SetInput(std::move(x).matrix(), true); }

  /// X without the orthonormality check (finite-difference probes only).
  static SetInput unchecked_basis(Matrix x) { return SetInput(std::move(x), true); }

  static SetInput autocorr(Matrix a) {
    require_nonempty(a, "SetInput::autocorr");
    if (a.rows() != a.cols()) throw ShapeError("SetInput::autocorr: matrix is not square");
    require_finite(a, "SetInput::autocorr");
    return SetInput(std::move(a), false);
  }

  bool is_basis() const noexcept { return is_basis_; }
  /// X (d x m) for a basis input, A (d x d) for an autocorrelation input.
  const Matrix& matrix() const noexcept { return data_; }
  Index ambient_dim() const noexcept { return data_.rows(); }

  /// X X^T or A.
  Matrix correlation() const {
    return is_basis_ ? Matrix(data_ * data_.transpose()) : data_;
  }

 private:
  SetInput(Matrix data, bool is_basis) : data_(std::move(data)), is_basis_(is_basis) {}

  Matrix data_;
  bool is_basis_;
};

struct SimilarityVector {
  Vector s;
  Index r_cap = 0;  // min(m, p); for autocorrelation inputs min(d, p)
};

namespace detail {

inline void check_input(const SetInput& input, const ReferenceBank& bank) {
  if (input.ambient_dim() != bank.ambient_dim()) {
    std::ostringstream os;
    os << "input ambient dimension " << input.ambient_dim() << " does not match bank "
       << bank.ambient_dim();
    throw ShapeError(os.str());
  }
}

/// (V^T V + eps I)^{-1}.
inline Matrix regularized_gram_inverse(const Matrix& v, double epsilon) {
  const Index p = v.cols();
  Matrix gram = v.transpose() * v;
  gram.diagonal().array() += epsilon;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw RankError("euclidean similarity: Gram matrix is not positive definite", 0.0);
  }
  return llt.solve(Matrix::Identity(p, p));
}

/// d x d matrix G_j with s_j = <G_j, correlation>: V V^T or V M^{-1} V^T.
inline Matrix similarity_kernel(const Matrix& v, LearningMode mode, double epsilon) {
  if (mode == LearningMode::grassmann) return v * v.transpose();
  return v * regularized_gram_inverse(v, epsilon) * v.transpose();
}

inline double similarity_one(const SetInput& input, const Matrix& v, LearningMode mode,
                             double epsilon) {
  if (input.is_basis()) {
    const Matrix b = input.matrix().transpose() * v;  // m x p
    if (mode == LearningMode::grassmann) return b.squaredNorm();
    const Matrix minv = regularized_gram_inverse(v, epsilon);
    return (b * minv * b.transpose()).trace();
  }
  const Matrix av = input.matrix() * v;
  if (mode == LearningMode::grassmann) return (v.transpose() * av).trace();
  return (regularized_gram_inverse(v, epsilon) * (v.transpose() * av)).trace();
}

/// ds_j/dV_j for correlation P:
///   grassmann  2 P V
///   euclidean  2 P V M^{-1} - 2 V M^{-1} V^T P V M^{-1}
inline Matrix similarity_ref_grad(const Matrix& corr, const Matrix& v, LearningMode mode,
                                  double epsilon) {
  const Matrix pv = corr * v;
  if (mode == LearningMode::grassmann) return 2.0 * pv;
  const Matrix minv = regularized_gram_inverse(v, epsilon);
  const Matrix pvm = pv * minv;
  return 2.0 * pvm - 2.0 * v * (minv * (v.transpose() * pvm));
}

}  // namespace detail

/// Per-reference similarity of a set to every reference subspace.
inline SimilarityVector similarity(const SetInput& input, const ReferenceBank& bank) {
  detail::check_input(input, bank);
  SimilarityVector out;
  out.s.resize(static_cast<Index>(bank.size()));
  for (std::size_t j = 0; j < bank.size(); ++j) {
    out.s(static_cast<Index>(j)) =
        detail::similarity_one(input, bank.ref(j), bank.mode(), bank.epsilon());
  }
  const Index m = input.is_basis() ? input.matrix().cols() : input.matrix().rows();
  out.r_cap = std::min(m, bank.sub_dim());
  return out;
}

inline SimilarityVector similarity(const OrthonormalBasis& x, const ReferenceBank& bank) {
  return similarity(SetInput::basis(x), bank);
}

struct SimilarityGradients {
  std::vector<Matrix> refs;  // d x p each
  Matrix input;              // d x m for a basis input, d x d (w.r.t. A) for autocorr
};

/// Chain rule through the similarity given upstream ds (length K).
/// Grassmann: dV_j = 2 ds_j X X^T V_j and dX = Σ_j 2 ds_j V_j V_j^T X.
inline SimilarityGradients similarity_grad(const SetInput& input, const ReferenceBank& bank,
                                           const Vector& upstream) {
  detail::check_input(input, bank);
  if (upstream.size() != static_cast<Index>(bank.size())) {
    throw ShapeError("similarity_grad: upstream length does not match bank size");
  }
  const Index d = bank.ambient_dim();
  const Matrix corr = input.correlation();
  SimilarityGradients g;
  g.refs.reserve(bank.size());
  Matrix sensitivity = Matrix::Zero(d, d);  // Σ_j ds_j G_j
  for (std::size_t j = 0; j < bank.size(); ++j) {
    const double sd = upstream(static_cast<Index>(j));
    const Matrix& v = bank.ref(j);
    if (sd == 0.0) {
      g.refs.push_back(Matrix::Zero(v.rows(), v.cols()));
      continue;
    }
    g.refs.push_back(sd * detail::similarity_ref_grad(corr, v, bank.mode(), bank.epsilon()));
    sensitivity += sd * detail::similarity_kernel(v, bank.mode(), bank.epsilon());
  }
  g.input = input.is_basis() ? Matrix(2.0 * sensitivity * input.matrix()) : sensitivity;
  return g;
}

inline SimilarityGradients similarity_grad(const OrthonormalBasis& x, const ReferenceBank& bank,
                                           const Vector& upstream) {
  return similarity_grad(SetInput::basis(x), bank, upstream);
}

// ---------------------------------------------------------------------------
// Activation

enum class Activation { identity, sqrt };

inline const char* to_string(Activation a) { return a == Activation::sqrt ? "sqrt" : "id"; }

struct Activated {
  Vector value;
  Vector slope;              // elementwise dφ/ds
  std::size_t clamped = 0;   // entries whose sqrt slope hit the 1e-12 floor
};

/// Elementwise φ(s). For sqrt the slope 1/(2 sqrt(s)) uses max(s, 1e-12).
inline Activated activate(const Vector& s, Activation kind) {
  Activated out;
  if (kind == Activation::identity) {
    out.value = s;
    out.slope = Vector::Ones(s.size());
    return out;
  }
  constexpr double kFloor = 1e-12;
  out.value.resize(s.size());
  out.slope.resize(s.size());
  for (Index i = 0; i < s.size(); ++i) {
    if (s(i) < -1e-9) {
      std::ostringstream os;
      os << "activate: sqrt of negative similarity " << s(i);
      throw DomainError(os.str());
    }
    const double v = std::max(s(i), 0.0);
    out.value(i) = std::sqrt(v);
    if (v < kFloor) ++out.clamped;
    out.slope(i) = 0.5 / std::sqrt(std::max(v, kFloor));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax and losses

/// q_j = exp(τ z_j - max_k τ z_k) / Σ.
inline Vector temp_softmax(const Vector& logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ArgumentError("temp_softmax: tau must be > 0");
  if (!logits.allFinite()) throw DomainError("temp_softmax: non-finite logits");
  const Vector scaled = tau * logits;
  const Vector e = (scaled.array() - scaled.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// (1/τ) log Σ_j exp(τ z_j), max-shifted.
inline double scaled_logsumexp(const Vector& logits, double tau) {
  const Vector scaled = tau * logits;
  const double top = scaled.maxCoeff();
  return (top + std::log((scaled.array() - top).exp().sum())) / tau;
}

struct LossTerm {
  double value = 0.0;
  Vector grad;           // w.r.t. the logits fed to temp_softmax
  bool clamped = false;  // log argument was floored at 1e-300
};

inline Vector one_hot(Index size, std::size_t label) {
  Vector y = Vector::Zero(size);
  y(static_cast<Index>(label)) = 1.0;
  return y;
}

/// Cross-entropy with temperature: -(1/τ) log q_y. Because q = softmax(τ z),
/// the 1/τ prefactor cancels the chain factor τ and dL/dz = q - onehot(y).
inline LossTerm ce_loss(const Vector& q, std::size_t y, double tau) {
  if (y >= static_cast<std::size_t>(q.size())) throw ArgumentError("ce_loss: label out of range");
  if (!(tau > 0.0)) throw ArgumentError("ce_loss: tau must be > 0");
  LossTerm out;
  double qy = q(static_cast<Index>(y));
  if (qy < 1e-300) {
    qy = 1e-300;
    out.clamped = true;
  }
  out.value = -std::log(qy) / tau;
  out.grad = q - one_hot(q.size(), y);
  return out;
}

/// Reinforcement term L_RE = -(1/τ) log Σ_j exp(τ z_j) (label-weighted by a
/// one-hot y, so the label only selects which logit receives the response).
///
/// `grad` is the reinforcing response -y ⊙ q: the partial of L_RE taken along
/// the true-class logit alone. Added to the cross-entropy gradient it gives
/// -(y - q + y ⊙ q), the negated soft ALSM indicator. It is not the total
/// derivative of `value` (that is -q, see `exact_grad`).
struct ReinforcementTerm {
  double value = 0.0;
  Vector grad;
  Vector exact_grad;
};

inline ReinforcementTerm reinforcement_loss(const Vector& logits, std::size_t y, double tau) {
  if (y >= static_cast<std::size_t>(logits.size())) {
    throw ArgumentError("reinforcement_loss: label out of range");
  }
  const Vector q = temp_softmax(logits, tau);
  ReinforcementTerm out;
  out.value = -scaled_logsumexp(logits, tau);
  out.exact_grad = -q;
  out.grad = Vector::Zero(logits.size());
  out.grad(static_cast<Index>(y)) = -q(static_cast<Index>(y));
  return out;
}

struct RepulsionTerm {
  double value = 0.0;
  std::vector<Matrix> grads;
};

/// (1/K²) Σ_i Σ_j ((1/r) ||V_i^T V_j||_F² - δ_ij)² on raw matrices, no mode
/// checks. Gradient: dL/dV_i = (8/(K² r)) Σ_j ((1/r)||V_i^T V_j||² - δ_ij) V_j V_j^T V_i.
inline RepulsionTerm repulsion_terms(const std::vector<Matrix>& refs, double r) {
  const std::size_t k = refs.size();
  const double kk = static_cast<double>(k * k);
  RepulsionTerm out;
  out.grads.reserve(k);
  std::vector<Matrix> outer;  // V_j V_j^T
  outer.reserve(k);
  for (const auto& v : refs) outer.push_back(v * v.transpose());
  for (std::size_t i = 0; i < k; ++i) {
    Matrix g = Matrix::Zero(refs[i].rows(), refs[i].cols());
    for (std::size_t j = 0; j < k; ++j) {
      const double overlap = (refs[i].transpose() * refs[j]).squaredNorm() / r;
      const double resid = overlap - (i == j ? 1.0 : 0.0);
      out.value += resid * resid;
      g += resid * (outer[j] * refs[i]);
    }
    out.grads.push_back((8.0 / (kk * r)) * g);
  }
  out.value /= kk;
  return out;
}

/// Repulsion loss of an orthonormal bank with r = p. Zero iff the references
/// are mutually orthogonal.
inline RepulsionTerm repulsion_loss(const ReferenceBank& bank) {
  if (bank.mode() != LearningMode::grassmann) {
    throw ModeError("repulsion_loss: requires a grassmann (orthonormal) bank");
  }
  return repulsion_terms(bank.refs(), static_cast<double>(bank.sub_dim()));
}

// ---------------------------------------------------------------------------
// Linear head

struct LinearHeadGrads {
  Vector input;  // w.r.t. s
  Matrix weights;
  Vector bias;
};

/// z = W^T s + b with W: K x C.
inline Vector linear_head(const Vector& s, const Matrix& w, const Vector& b) {
  if (w.rows() != s.size() || w.cols() != b.size()) {
    std::ostringstream os;
    os << "linear_head: s has " << s.size() << " entries, W is " << shape_str(w) << ", b has "
       << b.size();
    throw ShapeError(os.str());
  }
  return w.transpose() * s + b;
}

inline LinearHeadGrads linear_head_grad(const Vector& s, const Matrix& w, const Vector& upstream) {
  if (w.rows() != s.size() || w.cols() != upstream.size()) {
    throw ShapeError("linear_head_grad: shape mismatch");
  }
  return LinearHeadGrads{w * upstream, s * upstream.transpose(), upstream};
}

// ---------------------------------------------------------------------------
// Full layer + head

enum class HeadKind { softmax, linear_softmax };

struct HeadConfig {
  Activation activation = Activation::identity;
  double tau = 1.0;  // inverse temperature
  bool learn_tau = false;
  HeadKind head = HeadKind::softmax;
  Matrix weights;  // K x C, linear head only
  Vector bias;     // C, linear head only
  double repulsion = 0.0;
  bool reinforce = false;

  /// Number of output classes for a bank of size k.
  std::size_t class_count(std::size_t k) const {
    return head == HeadKind::softmax ? k : static_cast<std::size_t>(weights.cols());
  }

  void validate(const ReferenceBank& bank) const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ArgumentError("HeadConfig: tau must be > 0");
    if (!std::isfinite(repulsion) || repulsion < 0.0) {
      throw ArgumentError("HeadConfig: repulsion weight must be >= 0");
    }
    if (repulsion > 0.0 && bank.mode() != LearningMode::grassmann) {
      throw ModeError("HeadConfig: repulsion loss needs a grassmann bank");
    }
    if (head == HeadKind::softmax) {
      if (weights.size() != 0 || bias.size() != 0) {
        throw ArgumentError("HeadConfig: softmax head takes no linear weights");
      }
      return;
    }
    if (weights.rows() != static_cast<Index>(bank.size()) || weights.cols() != bias.size() ||
        bias.size() < 2) {
      throw ShapeError("HeadConfig: linear head needs W (K x C) and b (C), C >= 2");
    }
    if (!weights.allFinite() || !bias.allFinite()) {
      throw DomainError("HeadConfig: non-finite linear weights");
    }
  }
};

/// Everything forward computes, kept for backward.
struct ForwardPass {
  SimilarityVector similarity;
  Activated activated;
  Vector logits;
  Vector probabilities;
  std::optional<std::size_t> label;
  double ce = 0.0;
  double repulsion = 0.0;
  double reinforcement = 0.0;
  double loss = 0.0;  // ce + γ_rp·repulsion + reinforcement (when enabled)
  bool clamped = false;

  std::size_t predicted() const {
    Index best = 0;
    probabilities.maxCoeff(&best);
    return static_cast<std::size_t>(best);
  }
};

struct Gradients {
  std::vector<Matrix> refs;
  Matrix input;
  Matrix weights;  // empty for softmax head
  Vector bias;
  double log_tau = 0.0;  // dL/d(log τ); zero unless learn_tau
};

/// similarity -> activation -> (linear head) -> temp softmax -> losses.
inline ForwardPass forward(const SetInput& input, const ReferenceBank& bank,
                           const HeadConfig& head, std::optional<std::size_t> label = {}) {
  head.validate(bank);
  ForwardPass f;
  f.similarity = similarity(input, bank);
  f.activated = activate(f.similarity.s, head.activation);
  f.logits = head.head == HeadKind::linear_softmax
                 ? linear_head(f.activated.value, head.weights, head.bias)
                 : f.activated.value;
  f.probabilities = temp_softmax(f.logits, head.tau);
  f.label = label;
  if (!label) return f;

  const LossTerm ce = ce_loss(f.probabilities, *label, head.tau);
  f.ce = ce.value;
  f.clamped = ce.clamped;
  f.loss = f.ce;
  if (head.repulsion > 0.0) {
    f.repulsion = repulsion_loss(bank).value;
    f.loss += head.repulsion * f.repulsion;
  }
  if (head.reinforce) {
    f.reinforcement = reinforcement_loss(f.logits, *label, head.tau).value;
    f.loss += f.reinforcement;
  }
  return f;
}

inline ForwardPass forward(const OrthonormalBasis& x, const ReferenceBank& bank,
                           const HeadConfig& head, std::optional<std::size_t> label = {}) {
  return forward(SetInput::basis(x), bank, head, label);
}

/// Gradients of f.loss with respect to every parameter and the input.
/// The reinforcement term contributes its reinforcing response (see
/// reinforcement_loss), not the total derivative of its value.
inline Gradients backward(const SetInput& input, const ReferenceBank& bank,
                          const HeadConfig& head, const ForwardPass& f) {
  if (!f.label) throw ArgumentError("backward: forward pass was run without a label");
  const std::size_t y = *f.label;

  Vector dlogits = f.probabilities - one_hot(f.probabilities.size(), y);
  if (head.reinforce) dlogits += reinforcement_loss(f.logits, y, head.tau).grad;

  Gradients g;
  if (head.learn_tau) {
    // L_CE = -z_y + lse_τ(z), lse_τ(z) = (1/τ) log Σ exp(τ z); L_RE = -lse_τ(z).
    // d lse_τ / d log τ = Σ q_j z_j - lse_τ(z).
    const double dlse = f.probabilities.dot(f.logits) - scaled_logsumexp(f.logits, head.tau);
    g.log_tau = dlse - (head.reinforce ? dlse : 0.0);
  }

  Vector dactivated;
  if (head.head == HeadKind::linear_softmax) {
    LinearHeadGrads lg = linear_head_grad(f.activated.value, head.weights, dlogits);
    dactivated = std::move(lg.input);
    g.weights = std::move(lg.weights);
    g.bias = std::move(lg.bias);
  } else {
    dactivated = dlogits;
  }
  const Vector ds = dactivated.cwiseProduct(f.activated.slope);

  SimilarityGradients sg = similarity_grad(input, bank, ds);
  g.refs = std::move(sg.refs);
  g.input = std::move(sg.input);
  if (head.repulsion > 0.0) {
    const RepulsionTerm rp = repulsion_loss(bank);
    for (std::size_t j = 0; j < bank.size(); ++j) g.refs[j] += head.repulsion * rp.grads[j];
  }
  return g;
}

inline Gradients backward(const OrthonormalBasis& x, const ReferenceBank& bank,
                          const HeadConfig& head, const ForwardPass& f) {
  return backward(SetInput::basis(x), bank, head, f);
}

}  // namespace lsm
