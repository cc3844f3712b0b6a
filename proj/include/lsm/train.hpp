#pragma once

// Mini-batch training of the matching layer (SGD for euclidean banks, RSGD on
// the Grassmannian for grassmann banks), evaluation, and the central
// finite-difference gradient auditor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lsm/model.hpp"
#include "lsm/mutual.hpp"
#include "lsm/random.hpp"

namespace lsm {

enum class Optimizer { sgd, rsgd };

inline const char* to_string(Optimizer o) { return o == Optimizer::rsgd ? "rsgd" : "sgd"; }

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 8;
  double rate = 0.05;
  double rate_decay = 0.95;  // multiplicative, per epoch
  std::uint64_t seed = 42;
  Optimizer optimizer = Optimizer::rsgd;
  bool shuffle = true;

  void validate() const {
    if (epochs < 1) throw ArgumentError("TrainConfig: epochs must be positive");
    if (batch_size < 1) throw ArgumentError("TrainConfig: batch size must be positive");
    if (!std::isfinite(rate) || rate < 0.0) throw ArgumentError("TrainConfig: rate must be >= 0");
    if (!(rate_decay > 0.0 && rate_decay <= 1.0)) {
      throw ArgumentError("TrainConfig: rate decay must lie in (0, 1]");
    }
  }
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double train_accuracy = 0.0;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainResult {
  ReferenceBank bank;
  HeadConfig head;
  std::vector<EpochStats> history;
  std::size_t updates = 0;  // parameter updates applied (batches with rate > 0)
};

/// "epoch\tmean_loss\ttrain_acc" header followed by one row per epoch.
inline std::string format_history(const std::vector<EpochStats>& history) {
  std::string out = "epoch\tmean_loss\ttrain_acc\n";
  char buf[96];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof buf, "%d\t%.10g\t%.6f\n", e.epoch, e.mean_loss, e.train_accuracy);
    out += buf;
  }
  return out;
}

namespace detail {

struct GradSum {
  std::vector<Matrix> refs;
  Matrix weights;
  Vector bias;
  double log_tau = 0.0;

  GradSum(const ReferenceBank& bank, const HeadConfig& head) {
    for (const auto& v : bank.refs()) refs.push_back(Matrix::Zero(v.rows(), v.cols()));
    if (head.head == HeadKind::linear_softmax) {
      weights = Matrix::Zero(head.weights.rows(), head.weights.cols());
      bias = Vector::Zero(head.bias.size());
    }
  }

  void add(const Gradients& g) {
    for (std::size_t j = 0; j < refs.size(); ++j) refs[j] += g.refs[j];
    if (weights.size() != 0) {
      weights += g.weights;
      bias += g.bias;
    }
    log_tau += g.log_tau;
  }
};

}  // namespace detail

/// Trains `bank` and `head` on prepared samples. Gradients are averaged over
/// each batch in sample order, so a fixed seed reproduces the run bit for bit.
/// RSGD needs a grassmann bank and takes one exponential-map step per reference
/// per batch; SGD needs a euclidean bank and steps V <- V - rate * grad.
inline TrainResult train(const std::vector<Sample>& samples, ReferenceBank bank, HeadConfig head,
                         const TrainConfig& config) {
  config.validate();
  head.validate(bank);
  if (samples.empty()) throw ArgumentError("train: empty dataset");
  if (config.optimizer == Optimizer::rsgd && bank.mode() != LearningMode::grassmann) {
    throw ModeError("train: rsgd needs a grassmann bank");
  }
  if (config.optimizer == Optimizer::sgd && bank.mode() != LearningMode::euclidean) {
    throw ModeError("train: sgd needs a euclidean bank (use rsgd for grassmann)");
  }
  const std::size_t classes = head.class_count(bank.size());
  for (const auto& s : samples) {
    if (s.label >= classes) throw ArgumentError("train: sample label exceeds class count");
  }

  Rng rng(config.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result{std::move(bank), std::move(head), {}, 0};
  ReferenceBank& b = result.bank;
  HeadConfig& h = result.head;
  double rate = config.rate;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) fisher_yates(order, rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const double count = static_cast<double>(stop - start);
      detail::GradSum sum(b, h);
      double batch_loss = 0.0;
      auto diverged = [&](const std::string& detail) {
        std::ostringstream os;
        os << "train: loss diverged at epoch " << epoch << ", batch " << batch_index << detail;
        return DivergenceError(os.str(), epoch, batch_index);
      };
      try {
        for (std::size_t i = start; i < stop; ++i) {
          const Sample& s = samples[order[i]];
          const ForwardPass f = forward(s.input, b, h, s.label);
          batch_loss += f.loss;
          correct += (f.predicted() == s.label) ? 1 : 0;
          sum.add(backward(s.input, b, h, f));
        }
      } catch (const DomainError& e) {
        throw diverged(std::string(" (") + e.what() + ")");
      }
      if (!std::isfinite(batch_loss)) throw diverged("");
      loss_sum += batch_loss;
      if (rate == 0.0) continue;

      for (std::size_t j = 0; j < b.size(); ++j) {
        const Matrix grad = sum.refs[j] / count;
        if (config.optimizer == Optimizer::rsgd) {
          b.set_ref(j, rsgd_step(OrthonormalBasis(b.ref(j)), grad, rate).matrix());
        } else {
          b.set_ref(j, b.ref(j) - rate * grad);
        }
      }
      if (h.head == HeadKind::linear_softmax) {
        h.weights -= (rate / count) * sum.weights;
        h.bias -= (rate / count) * sum.bias;
      }
      if (h.learn_tau) h.tau = std::exp(std::log(h.tau) - rate * sum.log_tau / count);
      ++result.updates;
    }
    const double n = static_cast<double>(samples.size());
    result.history.push_back(EpochStats{epoch, loss_sum / n, static_cast<double>(correct) / n});
    rate *= config.rate_decay;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  double mean_loss = 0.0;
  std::size_t samples = 0;
};

/// Argmax-prediction accuracy, confusion matrix and mean loss.
inline EvalReport evaluate(const std::vector<Sample>& samples, const ReferenceBank& bank,
                           const HeadConfig& head) {
  if (samples.empty()) throw ArgumentError("evaluate: empty dataset");
  const std::size_t classes = head.class_count(bank.size());
  EvalReport r;
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t correct = 0;
  double loss = 0.0;
  for (const auto& s : samples) {
    if (s.label >= classes) throw ArgumentError("evaluate: label exceeds class count");
    const ForwardPass f = forward(s.input, bank, head, s.label);
    const std::size_t q = f.predicted();
    ++r.confusion[s.label][q];
    correct += (q == s.label) ? 1 : 0;
    loss += f.loss;
  }
  r.samples = samples.size();
  r.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  r.mean_loss = loss / static_cast<double>(samples.size());
  return r;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient audit

struct ParamCheck {
  std::string name;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  std::size_t worst_index = 0;  // flat column-major coordinate
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double step = 0.0;
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[<index>]"
};

/// |a - n| / max(|a|, |n|, kGradCheckFloor). The floor keeps coordinates whose
/// gradient is analytically ~0 from dividing by rounding noise.
inline constexpr double kGradCheckFloor = 1e-3;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares backward() with central differences (L(θ+h) - L(θ-h)) / 2h for
/// every reference entry, every input entry, the linear head and log τ when
/// learnable. The reinforcement term is left out because backward() applies
/// its reinforcing response rather than its derivative.
inline GradCheckReport grad_check(const SetInput& input, const ReferenceBank& bank,
                                  HeadConfig head, std::size_t label, double step = 1e-5) {
  if (!(step > 0.0) || !std::isfinite(step)) throw ArgumentError("grad_check: step must be > 0");
  head.reinforce = false;
  head.validate(bank);

  const ForwardPass f0 = forward(input, bank, head, label);
  const Gradients g = backward(input, bank, head, f0);

  GradCheckReport report;
  report.step = step;

  auto loss_at = [&](const std::vector<Matrix>& refs, const Matrix& x, const HeadConfig& hc) {
    const ReferenceBank probe(ReferenceBank::Unchecked{}, refs, bank.mode(), bank.epsilon());
    const SetInput in = input.is_basis() ? SetInput::unchecked_basis(x) : SetInput::autocorr(x);
    return forward(in, probe, hc, label).loss;
  };

  auto audit = [&](const std::string& name, const Matrix& analytic, auto&& perturbed_loss) {
    ParamCheck pc;
    pc.name = name;
    pc.coords = static_cast<std::size_t>(analytic.size());
    double total = 0.0;
    for (Index i = 0; i < analytic.size(); ++i) {
      const double numeric = (perturbed_loss(i, step) - perturbed_loss(i, -step)) / (2.0 * step);
      const double err = relative_error(analytic.data()[i], numeric);
      total += err;
      if (i == 0 || err > pc.max_rel_error) {
        pc.max_rel_error = err;
        pc.worst_index = static_cast<std::size_t>(i);
      }
    }
    pc.mean_rel_error = analytic.size() ? total / static_cast<double>(analytic.size()) : 0.0;
    if (pc.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = pc.max_rel_error;
      report.worst = name + "[" + std::to_string(pc.worst_index) + "]";
    }
    report.params.push_back(std::move(pc));
  };

  for (std::size_t j = 0; j < bank.size(); ++j) {
    audit("ref" + std::to_string(j), g.refs[j], [&](Index i, double h) {
      std::vector<Matrix> refs = bank.refs();
      refs[j].data()[i] += h;
      return loss_at(refs, input.matrix(), head);
    });
  }
  audit("input", g.input, [&](Index i, double h) {
    Matrix x = input.matrix();
    x.data()[i] += h;
    return loss_at(bank.refs(), x, head);
  });
  if (head.head == HeadKind::linear_softmax) {
    audit("weights", g.weights, [&](Index i, double h) {
      HeadConfig hc = head;
      hc.weights.data()[i] += h;
      return loss_at(bank.refs(), input.matrix(), hc);
    });
    audit("bias", g.bias, [&](Index i, double h) {
      HeadConfig hc = head;
      hc.bias.data()[i] += h;
      return loss_at(bank.refs(), input.matrix(), hc);
    });
  }
  if (head.learn_tau) {
    audit("log_tau", Matrix::Constant(1, 1, g.log_tau), [&](Index, double h) {
      HeadConfig hc = head;
      hc.tau = std::exp(std::log(head.tau) + h);
      return loss_at(bank.refs(), input.matrix(), hc);
    });
  }
  return report;
}

}  // namespace lsm
