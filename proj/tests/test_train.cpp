#include "test_util.hpp"

namespace lsm {
namespace {

using test::gaussian;
using test::span_distance;

std::vector<Sample> synth_samples(std::size_t classes, std::uint64_t seed, double sigma = 0.1,
                                  std::size_t sets_per_class = 10) {
  SynthSpec spec;
  spec.classes = classes;
  spec.sets_per_class = sets_per_class;
  spec.noise_sigma = sigma;
  spec.seed = seed;
  return prepare_samples(generate_synthetic(spec).train, InputKind::pca, 2, false);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = TrainConfig{};
  c.rate = -1.0;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = TrainConfig{};
  c.rate_decay = 1.5;
  EXPECT_THROW(c.validate(), ArgumentError);
}

TEST(Train, ZeroRateLeavesParametersAndHistoryFlat) {
  Rng rng(1);
  const auto samples = synth_samples(3, 1);
  const ReferenceBank bank = ReferenceBank::random(3, 8, 2, LearningMode::grassmann, rng);
  TrainConfig config;
  config.rate = 0.0;
  config.epochs = 5;
  HeadConfig head;
  head.learn_tau = true;
  const TrainResult r = train(samples, bank, head, config);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(r.bank.ref(j), bank.ref(j));
  EXPECT_EQ(r.head.tau, 1.0);
  EXPECT_EQ(r.updates, 0u);
  ASSERT_EQ(r.history.size(), 5u);
  for (const auto& e : r.history) {
    EXPECT_DOUBLE_EQ(e.mean_loss, r.history[0].mean_loss);
    EXPECT_EQ(e.train_accuracy, r.history[0].train_accuracy);
  }
}

TEST(Train, SingleBatchRsgdMatchesManualComposition) {
  Rng rng(2);
  const auto samples = synth_samples(2, 2);
  const ReferenceBank bank = ReferenceBank::random(2, 8, 2, LearningMode::grassmann, rng);
  HeadConfig head;
  TrainConfig config;
  config.epochs = 1;
  config.batch_size = samples.size();
  config.rate = 0.1;
  config.shuffle = false;
  const TrainResult r = train(samples, bank, head, config);

  std::vector<Matrix> mean(2, Matrix::Zero(8, 2));
  for (const auto& s : samples) {
    const Gradients g = backward(s.input, bank, head, forward(s.input, bank, head, s.label));
    for (std::size_t j = 0; j < 2; ++j) mean[j] += g.refs[j] / double(samples.size());
  }
  for (std::size_t j = 0; j < 2; ++j) {
    const OrthonormalBasis v(bank.ref(j));
    const HorizontalVector h = horizontal_project(v, -mean[j]);
    const OrthonormalBasis expected = grassmann_exp(v, h, config.rate);
    EXPECT_LT(span_distance(r.bank.ref(j), expected.matrix()), 1e-12);
  }
}

TEST(Train, SingleBatchSgdIsPlainStep) {
  Rng rng(3);
  const auto samples = synth_samples(2, 3);
  const ReferenceBank bank = ReferenceBank::random(2, 8, 2, LearningMode::euclidean, rng);
  HeadConfig head;
  TrainConfig config;
  config.epochs = 1;
  config.batch_size = samples.size();
  config.rate = 0.1;
  config.optimizer = Optimizer::sgd;
  const TrainResult r = train(samples, bank, head, config);
  std::vector<Matrix> mean(2, Matrix::Zero(8, 2));
  for (const auto& s : samples) {
    const Gradients g = backward(s.input, bank, head, forward(s.input, bank, head, s.label));
    for (std::size_t j = 0; j < 2; ++j) mean[j] += g.refs[j] / double(samples.size());
  }
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_LT((r.bank.ref(j) - (bank.ref(j) - 0.1 * mean[j])).norm(), 1e-12);
  }
}

TEST(Train, SeparableTwoClassReachesHighAccuracy) {
  Rng rng(42);
  const auto samples = synth_samples(2, 42, 0.1, 20);
  const ReferenceBank bank = ReferenceBank::random(2, 8, 2, LearningMode::grassmann, rng);
  TrainConfig config;
  config.seed = 42;
  const TrainResult r = train(samples, bank, HeadConfig{}, config);
  ASSERT_EQ(r.history.size(), 30u);
  EXPECT_GE(r.history.back().train_accuracy, 0.95);
  EXPECT_LT(r.history.back().mean_loss, r.history.front().mean_loss);
}

TEST(Train, ManifoldPreservedAfterManyUpdates) {
  Rng rng(4);
  const auto samples = synth_samples(3, 4);  // 24 samples
  const ReferenceBank bank = ReferenceBank::random(3, 8, 2, LearningMode::grassmann, rng);
  HeadConfig head;
  head.repulsion = 0.1;
  head.learn_tau = true;
  TrainConfig config;
  config.epochs = 42;
  config.batch_size = 1;
  const TrainResult r = train(samples, bank, head, config);
  EXPECT_GE(r.updates, 1000u);
  for (const auto& v : r.bank.refs()) EXPECT_LT(orthonormality_residual(v), 1e-6);
}

TEST(Train, DeterministicHistory) {
  Rng rng(5);
  const auto samples = synth_samples(3, 5);
  const ReferenceBank bank = ReferenceBank::random(3, 8, 2, LearningMode::grassmann, rng);
  TrainConfig config;
  config.epochs = 5;
  const TrainResult a = train(samples, bank, HeadConfig{}, config);
  const TrainResult b = train(samples, bank, HeadConfig{}, config);
  EXPECT_EQ(a.history, b.history);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(a.bank.ref(j), b.bank.ref(j));
  EXPECT_EQ(format_history(a.history), format_history(b.history));
}

TEST(Train, AllArchitecturesLearn) {
  Rng rng(6);
  const auto samples = synth_samples(3, 6);
  for (LearningMode mode : {LearningMode::grassmann, LearningMode::euclidean}) {
    for (bool fc : {false, true}) {
      const ReferenceBank bank = ReferenceBank::random(4, 8, 2, mode, rng);
      HeadConfig head;
      std::size_t k = 3;
      if (fc) {
        head.head = HeadKind::linear_softmax;
        head.weights = 0.5 * gaussian(4, 3, rng);
        head.bias = Vector::Zero(3);
      }
      const ReferenceBank b = fc ? bank : ReferenceBank::random(k, 8, 2, mode, rng);
      TrainConfig config;
      config.rate = 0.5;
      config.optimizer = mode == LearningMode::grassmann ? Optimizer::rsgd : Optimizer::sgd;
      const TrainResult r = train(samples, b, head, config);
      EXPECT_GE(r.history.back().train_accuracy, 0.9)
          << to_string(mode) << (fc ? " fc" : " softmax");
    }
  }
}

TEST(Train, Errors) {
  Rng rng(7);
  const auto samples = synth_samples(3, 7);
  const ReferenceBank g = ReferenceBank::random(3, 8, 2, LearningMode::grassmann, rng);
  const ReferenceBank e = ReferenceBank::random(3, 8, 2, LearningMode::euclidean, rng);
  TrainConfig config;
  config.optimizer = Optimizer::sgd;
  EXPECT_THROW(train(samples, g, HeadConfig{}, config), ModeError);
  config.optimizer = Optimizer::rsgd;
  EXPECT_THROW(train(samples, e, HeadConfig{}, config), ModeError);
  EXPECT_THROW(train({}, g, HeadConfig{}, config), ArgumentError);
  const ReferenceBank two = ReferenceBank::random(2, 8, 2, LearningMode::grassmann, rng);
  EXPECT_THROW(train(samples, two, HeadConfig{}, config), ArgumentError);
}

TEST(Train, DivergenceGuard) {
  Rng rng(8);
  const auto samples = synth_samples(2, 8);
  const ReferenceBank bank = ReferenceBank::random(2, 8, 2, LearningMode::euclidean, rng);
  HeadConfig head;
  head.head = HeadKind::linear_softmax;
  head.weights = Matrix::Constant(2, 2, 1e308);
  head.bias = Vector::Zero(2);
  TrainConfig config;
  config.optimizer = Optimizer::sgd;
  try {
    train(samples, bank, head, config);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 1);
    EXPECT_EQ(e.batch(), 0u);
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch 0"), std::string::npos);
  }
}

TEST(Evaluate, OracleModelIsPerfect) {
  SynthSpec spec;
  spec.noise_sigma = 0.0;
  const SynthData data = generate_synthetic(spec);
  std::vector<Matrix> refs;
  for (const auto& b : data.class_bases) refs.push_back(b.matrix());
  const ReferenceBank oracle(refs, LearningMode::grassmann);
  const auto samples = prepare_samples(data.test, InputKind::pca, 2, false);
  const EvalReport r = evaluate(samples, oracle, HeadConfig{});
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.samples, samples.size());
}

TEST(Evaluate, ChanceLevelOnRandomLabels) {
  Rng rng(9);
  const std::size_t n = 600;
  const std::size_t classes = 3;
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < n; ++i) {
    samples.push_back({SetInput::basis(random_basis(8, 2, rng)), i % classes});
  }
  const ReferenceBank bank = ReferenceBank::random(classes, 8, 2, LearningMode::grassmann, rng);
  const EvalReport r = evaluate(samples, bank, HeadConfig{});
  const double p = 1.0 / classes;
  const double sigma = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(r.accuracy, p, 3 * sigma);
}

TEST(Evaluate, ConfusionRowsSumToClassCounts) {
  Rng rng(10);
  const auto samples = synth_samples(3, 10, 0.8);
  const ReferenceBank bank = ReferenceBank::random(3, 8, 2, LearningMode::grassmann, rng);
  const EvalReport r = evaluate(samples, bank, HeadConfig{});
  std::vector<std::size_t> counts(3, 0);
  for (const auto& s : samples) ++counts[s.label];
  std::size_t diag = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t row = 0;
    for (std::size_t v : r.confusion[c]) row += v;
    EXPECT_EQ(row, counts[c]);
    diag += r.confusion[c][c];
  }
  EXPECT_DOUBLE_EQ(r.accuracy, double(diag) / double(samples.size()));
  EXPECT_THROW(evaluate({}, bank, HeadConfig{}), ArgumentError);
}

TEST(GradCheck, FullGrassmannInstance) {
  Rng rng(11);
  const ReferenceBank bank = ReferenceBank::random(4, 10, 3, LearningMode::grassmann, rng);
  HeadConfig head;
  head.learn_tau = true;
  head.tau = 1.5;
  head.repulsion = 0.2;
  head.activation = Activation::sqrt;
  const GradCheckReport r =
      grad_check(SetInput::basis(random_basis(10, 3, rng)), bank, head, 1);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
  EXPECT_EQ(r.params.size(), 6u);  // 4 refs, input, log_tau
  EXPECT_EQ(r.params.front().coords, 30u);
}

TEST(GradCheck, EuclideanInstance) {
  Rng rng(12);
  const ReferenceBank bank = ReferenceBank::random(4, 10, 3, LearningMode::euclidean, rng);
  HeadConfig head;
  head.head = HeadKind::linear_softmax;
  head.weights = gaussian(4, 3, rng);
  head.bias = test::gaussian_vector(3, rng);
  head.learn_tau = true;
  const GradCheckReport r =
      grad_check(SetInput::basis(random_basis(10, 3, rng)), bank, head, 2);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_EQ(r.params.size(), 8u);  // 4 refs, input, W, b, log_tau
}

TEST(GradCheck, ConfidentPredictionIsTriviallySmall) {
  // q close to onehot: every gradient is near zero and the floor keeps the
  // relative error small.
  Rng rng(13);
  const OrthonormalBasis x = random_basis(6, 2, rng);
  Matrix perp = Matrix::Zero(6, 2);
  const Matrix basis = compact_svd(Matrix::Identity(6, 6) - x.matrix() * x.matrix().transpose()).left;
  perp = basis.leftCols(2);
  const ReferenceBank bank({x.matrix(), perp}, LearningMode::grassmann);
  HeadConfig head;
  head.tau = 30.0;
  const GradCheckReport r = grad_check(SetInput::basis(x), bank, head, 0);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, AbsurdStepFails) {
  Rng rng(14);
  const ReferenceBank bank = ReferenceBank::random(3, 6, 2, LearningMode::grassmann, rng);
  const GradCheckReport r =
      grad_check(SetInput::basis(random_basis(6, 2, rng)), bank, HeadConfig{}, 0, 10.0);
  EXPECT_GT(r.max_rel_error, 1e-2);
  EXPECT_THROW(grad_check(SetInput::basis(random_basis(6, 2, rng)), bank, HeadConfig{}, 0, 0.0),
               ArgumentError);
}

TEST(GradCheck, AutocorrInput) {
  Rng rng(15);
  const Matrix h = gaussian(6, 4, rng);
  const ReferenceBank bank = ReferenceBank::random(3, 6, 2, LearningMode::grassmann, rng);
  const GradCheckReport r =
      grad_check(SetInput::autocorr(set_to_autocorr(ImageSetMatrix{h, 0}, true)), bank,
                 HeadConfig{}, 2);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(History, Format) {
  const std::string s = format_history({{1, 0.5, 0.25}, {2, 0.125, 1.0}});
  EXPECT_EQ(s, "epoch\tmean_loss\ttrain_acc\n1\t0.5\t0.250000\n2\t0.125\t1.000000\n");
}

}  // namespace
}  // namespace lsm
