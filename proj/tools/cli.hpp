#pragma once

// Command-line front end: synth, train, eval, gradcheck.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lsm/lsm.hpp"

namespace lsm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Bad flag combination found after parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;

inline const char* kTrainManifest = "train.tsv";
inline const char* kTestManifest = "test.tsv";
inline const char* kModelFile = "model.txt";
inline const char* kHistoryFile = "history.tsv";

/// A directory resolves to its default manifest; a file is used as is.
inline fs::path resolve_manifest(const std::string& path, const char* default_name) {
  const fs::path p(path);
  return fs::is_directory(p) ? p / default_name : p;
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

struct SynthOptions {
  Index d = 8;
  std::size_t classes = 3;
  std::size_t sets_per_class = 10;
  Index n = 6;
  Index true_dim = 2;
  double sigma = 0.1;
  std::uint64_t seed = 42;
  std::string out;
};

struct TrainOptions {
  std::string data;
  std::string arch = "glmsm-softmax";
  Index m = 3;
  Index p = 3;
  std::size_t k = 0;  // 0: one reference per class
  std::size_t classes = 0;  // 0: from the dataset
  int epochs = 30;
  std::size_t batch = 8;
  double rate = 0.5;
  double decay = 0.95;
  std::string tau = "fixed:1";
  std::string activation = "id";
  double repulsion = 0.0;
  bool reinforce = false;
  std::string input = "pca";
  bool normalize = false;
  std::string optimizer;  // empty: rsgd for glmsm, sgd for lmsm
  std::string init = "random";
  std::uint64_t seed = 42;
  std::string out;
};

struct EvalOptions {
  std::string data;
  std::string model;
  std::string tsv;
};

struct GradcheckOptions {
  std::string arch = "glmsm-softmax";
  Index d = 10;
  Index m = 3;
  Index p = 3;
  std::size_t k = 4;
  std::size_t classes = 0;  // 0: K
  std::uint64_t seed = 1;
  double step = 1e-5;
  double threshold = 0.0;  // 0: 1e-5 grassmann, 1e-4 euclidean
  std::string activation = "id";
  std::string tau = "learn";
  double repulsion = -1.0;  // <0: 0.1 for grassmann archs, 0 otherwise
  std::string input = "pca";
};

struct TauSpec {
  double value = 1.0;
  bool learn = false;
};

inline TauSpec parse_tau(const std::string& s) {
  if (s == "learn") return TauSpec{1.0, true};
  for (const char* prefix : {"fixed:", "learn:"}) {
    const std::string pre(prefix);
    if (s.rfind(pre, 0) == 0) {
      double v = 0.0;
      if (!io::parse_double(s.substr(pre.size()), v) || !(v > 0.0)) {
        throw UsageError("--tau: value must be a positive number, got '" + s + "'");
      }
      return TauSpec{v, pre == "learn:"};
    }
  }
  throw UsageError("--tau: expected fixed:<v>, learn or learn:<v>, got '" + s + "'");
}

inline Activation parse_activation(const std::string& s) {
  if (s == "id") return Activation::identity;
  if (s == "sqrt") return Activation::sqrt;
  throw UsageError("--activation: expected id or sqrt");
}

inline Architecture require_arch(const std::string& s) {
  const auto a = parse_architecture(s);
  if (!a) throw UsageError("--arch: unknown architecture '" + s + "'");
  return *a;
}

/// Initial head for an architecture: softmax needs nothing, the linear head
/// starts from Gaussian weights scaled by 1/sqrt(K) and zero bias.
inline HeadConfig initial_head(Architecture arch, std::size_t k, std::size_t classes, Rng& rng) {
  HeadConfig h;
  if (!has_linear_head(arch)) return h;
  h.head = HeadKind::linear_softmax;
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(k)));
  h.weights.resize(static_cast<Index>(k), static_cast<Index>(classes));
  for (Index j = 0; j < h.weights.cols(); ++j) {
    for (Index i = 0; i < h.weights.rows(); ++i) h.weights(i, j) = normal(rng);
  }
  h.bias = Vector::Zero(static_cast<Index>(classes));
  return h;
}

// ---------------------------------------------------------------------------

inline int cmd_synth(const SynthOptions& o, std::ostream& out) {
  if (o.true_dim > o.d) throw UsageError("--true-dim must not exceed --d");
  SynthSpec spec;
  spec.d = o.d;
  spec.classes = o.classes;
  spec.sets_per_class = o.sets_per_class;
  spec.vectors_per_set = o.n;
  spec.true_sub_dim = o.true_dim;
  spec.noise_sigma = o.sigma;
  spec.seed = o.seed;
  const SynthData data = generate_synthetic(spec);
  const fs::path dir(o.out);
  save_dataset(data.train, dir, kTrainManifest, "train");
  save_dataset(data.test, dir, kTestManifest, "test");
  out << "synth: wrote " << data.train.size() + data.test.size() << " sets (" << data.train.size()
      << " train, " << data.test.size() << " test), d=" << o.d << ", classes=" << o.classes
      << " -> " << (dir / kTrainManifest).generic_string() << ", "
      << (dir / kTestManifest).generic_string() << '\n';
  return kExitOk;
}

inline int cmd_train(const TrainOptions& o, bool timing, std::ostream& out, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  const Architecture arch = require_arch(o.arch);
  const LearningMode mode = mode_of(arch);
  const TauSpec tau = parse_tau(o.tau);
  const Activation activation = parse_activation(o.activation);

  Optimizer optimizer = mode == LearningMode::grassmann ? Optimizer::rsgd : Optimizer::sgd;
  if (!o.optimizer.empty()) {
    optimizer = o.optimizer == "rsgd" ? Optimizer::rsgd : Optimizer::sgd;
    if (optimizer == Optimizer::rsgd && mode != LearningMode::grassmann) {
      throw UsageError("--optimizer rsgd requires a glmsm architecture");
    }
    if (optimizer == Optimizer::sgd && mode != LearningMode::euclidean) {
      throw UsageError("--optimizer sgd requires an lmsm architecture (glmsm trains with rsgd)");
    }
  }
  if (o.repulsion > 0.0 && mode != LearningMode::grassmann) {
    throw UsageError("--repulsion requires a glmsm architecture (orthonormal references)");
  }

  const fs::path manifest = resolve_manifest(o.data, kTrainManifest);
  if (!fs::exists(manifest)) throw UsageError("--data: no manifest at " + manifest.string());
  const Dataset ds = load_dataset(manifest, o.classes);
  const std::size_t classes = ds.class_count();
  const std::size_t k = o.k == 0 ? classes : o.k;
  if (!has_linear_head(arch) && k != classes) {
    throw UsageError("--arch " + o.arch + " needs one reference per class: --K " +
                     std::to_string(k) + " but " + std::to_string(classes) + " classes");
  }
  if (o.p > ds.ambient_dim() || o.m > ds.ambient_dim()) {
    throw UsageError("--m and --p must not exceed the data dimension d=" +
                     std::to_string(ds.ambient_dim()));
  }
  if (o.rate == 0.0) err << "warning: --rate 0 leaves every parameter unchanged\n";

  const InputKind input = o.input == "ac" ? InputKind::ac : InputKind::pca;
  const bool normalize = o.normalize || input == InputKind::ac;
  const std::vector<Sample> samples = prepare_samples(ds, input, o.m, normalize);

  if (o.init == "sm" && k != classes) throw UsageError("--init sm needs --K equal to the class count");

  Rng rng(o.seed);
  ReferenceBank bank = o.init == "sm" ? sm_initial_bank(ds, o.p, mode, normalize)
                                      : ReferenceBank::random(k, ds.ambient_dim(), o.p, mode, rng);
  HeadConfig head = initial_head(arch, k, classes, rng);
  head.activation = activation;
  head.tau = tau.value;
  head.learn_tau = tau.learn;
  head.repulsion = o.repulsion;
  head.reinforce = o.reinforce;

  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.rate = o.rate;
  tc.rate_decay = o.decay;
  tc.seed = o.seed;
  tc.optimizer = optimizer;
  TrainResult result = train(samples, std::move(bank), std::move(head), tc);

  Model model{arch, input, o.m, normalize, std::move(result.bank), std::move(result.head), {}};
  model.config = {{"epochs", std::to_string(o.epochs)},
                  {"batch", std::to_string(o.batch)},
                  {"rate", io::format_double(o.rate)},
                  {"decay", io::format_double(o.decay)},
                  {"optimizer", to_string(optimizer)},
                  {"seed", std::to_string(o.seed)},
                  {"init", o.init},
                  {"tau", o.tau}};

  const fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  save_model(model, dir / kModelFile);
  {
    std::ofstream h(dir / kHistoryFile, std::ios::binary);
    if (!h) throw Error("cannot write " + (dir / kHistoryFile).string());
    h << format_history(result.history);
  }

  out << format_history(result.history);
  const EvalReport final_eval = evaluate(samples, model.bank, model.head);
  out << "train accuracy: " << fixed(final_eval.accuracy, 4) << '\n';
  out << "model: " << (dir / kModelFile).generic_string() << '\n';
  if (timing) {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out << "time: " << fixed(secs, 3) << " s\n";
  }
  return kExitOk;
}

inline void write_eval_tsv(const fs::path& path, const EvalReport& r) {
  std::ofstream t(path, std::ios::binary);
  if (!t) throw Error("cannot write " + path.string());
  t << "metric\tvalue\n";
  t << "accuracy\t" << io::format_double(r.accuracy) << '\n';
  t << "mean_loss\t" << io::format_double(r.mean_loss) << '\n';
  t << "samples\t" << r.samples << '\n';
  t << '\n';
  t << "true";
  for (std::size_t c = 0; c < r.confusion.size(); ++c) t << "\tpred_" << c;
  t << '\n';
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    t << i;
    for (std::size_t n : r.confusion[i]) t << '\t' << n;
    t << '\n';
  }
  if (!t) throw Error("failed writing " + path.string());
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
  fs::path model_path(o.model);
  if (fs::is_directory(model_path)) model_path /= kModelFile;
  if (!fs::exists(model_path)) throw UsageError("--model: no model file at " + model_path.string());
  const fs::path manifest = resolve_manifest(o.data, kTestManifest);
  if (!fs::exists(manifest)) throw UsageError("--data: no manifest at " + manifest.string());

  const Model model = load_model(model_path);
  const Dataset ds = load_dataset(manifest);
  if (ds.ambient_dim() != model.bank.ambient_dim()) {
    std::ostringstream os;
    os << "dimension mismatch: model expects d=" << model.bank.ambient_dim()
       << ", dataset has d=" << ds.ambient_dim();
    throw ShapeError(os.str());
  }
  const EvalReport r = evaluate(prepare_samples(ds, model), model.bank, model.head);

  const std::size_t classes = r.confusion.size();
  out << "samples   " << r.samples << '\n';
  out << "accuracy  " << fixed(r.accuracy, 4) << '\n';
  out << "mean_loss " << fixed(r.mean_loss, 6) << '\n';
  out << "confusion (rows: true class, columns: predicted class)\n";
  out << std::setw(8) << "";
  for (std::size_t c = 0; c < classes; ++c) out << std::setw(8) << ("pred" + std::to_string(c));
  out << '\n';
  for (std::size_t i = 0; i < classes; ++i) {
    out << std::setw(8) << ("true" + std::to_string(i));
    for (std::size_t n : r.confusion[i]) out << std::setw(8) << n;
    out << '\n';
  }
  if (!o.tsv.empty()) write_eval_tsv(o.tsv, r);
  return kExitOk;
}

inline int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out) {
  const Architecture arch = require_arch(o.arch);
  const LearningMode mode = mode_of(arch);
  if (o.m > o.d || o.p > o.d) throw UsageError("--m and --p must not exceed --d");
  const std::size_t classes = o.classes == 0 ? o.k : o.classes;
  if (!has_linear_head(arch) && classes != o.k) {
    throw UsageError("--arch " + o.arch + " needs --classes == --K");
  }
  if (classes < 2) throw UsageError("--classes must be at least 2");
  const double repulsion = o.repulsion < 0.0 ? (mode == LearningMode::grassmann ? 0.1 : 0.0)
                                             : o.repulsion;
  if (repulsion > 0.0 && mode != LearningMode::grassmann) {
    throw UsageError("--repulsion requires a glmsm architecture");
  }
  const double threshold =
      o.threshold > 0.0 ? o.threshold : (mode == LearningMode::grassmann ? 1e-5 : 1e-4);
  const TauSpec tau = parse_tau(o.tau);

  Rng rng(o.seed);
  const ReferenceBank bank = ReferenceBank::random(o.k, o.d, o.p, mode, rng);
  HeadConfig head = initial_head(arch, o.k, classes, rng);
  if (head.head == HeadKind::linear_softmax) {
    std::normal_distribution<double> normal(0.0, 0.1);
    for (Index c = 0; c < head.bias.size(); ++c) head.bias(c) = normal(rng);
  }
  head.activation = parse_activation(o.activation);
  head.tau = tau.value;
  head.learn_tau = tau.learn;
  head.repulsion = repulsion;
  const SetInput input = o.input == "ac"
                             ? SetInput::autocorr(set_to_autocorr(
                                   ImageSetMatrix{random_basis(o.d, o.m, rng).matrix(), 0}, true))
                             : SetInput::basis(random_basis(o.d, o.m, rng));
  const std::size_t label = static_cast<std::size_t>(rng() % classes);

  const GradCheckReport report = grad_check(input, bank, head, label, o.step);
  out << "gradcheck " << o.arch << " d=" << o.d << " m=" << o.m << " p=" << o.p << " K=" << o.k
      << " classes=" << classes << " step=" << o.step << '\n';
  out << std::left << std::setw(10) << "param" << std::right << std::setw(8) << "coords"
      << std::setw(14) << "max_rel" << std::setw(14) << "mean_rel" << '\n';
  for (const auto& p : report.params) {
    char maxbuf[32];
    char meanbuf[32];
    std::snprintf(maxbuf, sizeof maxbuf, "%.3e", p.max_rel_error);
    std::snprintf(meanbuf, sizeof meanbuf, "%.3e", p.mean_rel_error);
    out << std::left << std::setw(10) << p.name << std::right << std::setw(8) << p.coords
        << std::setw(14) << maxbuf << std::setw(14) << meanbuf << '\n';
  }
  char buf[160];
  const bool pass = report.max_rel_error < threshold;
  std::snprintf(buf, sizeof buf, "%s max_rel_error=%.3e at %s (threshold %.0e)\n",
                pass ? "PASS" : "FAIL", report.max_rel_error, report.worst.c_str(), threshold);
  out << buf;
  return pass ? kExitOk : kExitRuntime;
}

// ---------------------------------------------------------------------------

/// Parses argv and runs one subcommand. Defaults < config file < flags.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learning subspace classifiers on the Grassmann manifold", "lsm"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI file of option defaults (flags override it)");
  app.allow_config_extras(false);
  bool no_timing = false;
  app.add_flag("--no-timing", no_timing, "Suppress wall-clock timing lines");

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic image-set dataset");
  synth->add_option("--d", so.d, "Ambient dimension")->check(CLI::PositiveNumber);
  synth->add_option("--classes", so.classes, "Number of classes (>= 2)")
      ->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
  synth->add_option("--sets-per-class", so.sets_per_class, "Sets per class")
      ->check(CLI::PositiveNumber);
  synth->add_option("--n", so.n, "Vectors per set")->check(CLI::PositiveNumber);
  synth->add_option("--true-dim", so.true_dim, "Dimension of each class subspace")
      ->check(CLI::PositiveNumber);
  synth->add_option("--sigma", so.sigma, "Noise standard deviation")
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", so.seed, "Random seed");
  synth->add_option("--out", so.out, "Output directory")->required();

  TrainOptions to;
  auto* trn = app.add_subcommand("train", "Train a matching model");
  trn->add_option("--data", to.data, "Manifest, or directory holding train.tsv")->required();
  trn->add_option("--arch", to.arch, "Architecture")
      ->check(CLI::IsMember({"glmsm-softmax", "glmsm-fc", "lmsm-softmax", "lmsm-fc"}));
  trn->add_option("--m", to.m, "Input subspace dimension")->check(CLI::PositiveNumber);
  trn->add_option("--p", to.p, "Reference subspace dimension")->check(CLI::PositiveNumber);
  trn->add_option("--K", to.k, "Number of references (default: one per class)")
      ->check(CLI::PositiveNumber);
  trn->add_option("--classes", to.classes, "Expected class count (default: from labels)")
      ->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
  trn->add_option("--epochs", to.epochs, "Epochs")->check(CLI::PositiveNumber);
  trn->add_option("--batch", to.batch, "Batch size")->check(CLI::PositiveNumber);
  trn->add_option("--rate", to.rate, "Learning rate")->check(CLI::NonNegativeNumber);
  trn->add_option("--decay", to.decay, "Per-epoch rate multiplier in (0, 1]")
      ->check(CLI::Range(1e-300, 1.0));
  trn->add_option("--tau", to.tau, "Inverse temperature: fixed:<v> | learn | learn:<v>");
  trn->add_option("--activation", to.activation, "Similarity activation")
      ->check(CLI::IsMember({"id", "sqrt"}));
  trn->add_option("--repulsion", to.repulsion, "Repulsion loss weight (glmsm only)")
      ->check(CLI::NonNegativeNumber);
  trn->add_flag("--reinforce", to.reinforce, "Add the ALSM reinforcement term");
  trn->add_option("--input", to.input, "Set front end")->check(CLI::IsMember({"pca", "ac"}));
  trn->add_flag("--normalize", to.normalize, "Unit-normalize feature vectors (always on for ac)");
  trn->add_option("--optimizer", to.optimizer, "sgd (lmsm) or rsgd (glmsm)")
      ->check(CLI::IsMember({"sgd", "rsgd"}));
  trn->add_option("--init", to.init, "Reference initialization")
      ->check(CLI::IsMember({"random", "sm"}));
  trn->add_option("--seed", to.seed, "Random seed");
  trn->add_option("--out", to.out, "Output directory for model.txt and history.tsv")
      ->required();

  EvalOptions eo;
  auto* evl = app.add_subcommand("eval", "Evaluate a model on a dataset");
  evl->add_option("--data", eo.data, "Manifest, or directory holding test.tsv")->required();
  evl->add_option("--model", eo.model, "Model file, or directory holding model.txt")
      ->required();
  evl->add_option("--tsv", eo.tsv, "Also write the report as TSV");

  GradcheckOptions go;
  auto* gck = app.add_subcommand("gradcheck", "Audit analytic gradients by finite differences");
  gck->add_option("--arch", go.arch, "Architecture")
      ->check(CLI::IsMember({"glmsm-softmax", "glmsm-fc", "lmsm-softmax", "lmsm-fc"}));
  gck->add_option("--d", go.d, "Ambient dimension")->check(CLI::PositiveNumber);
  gck->add_option("--m", go.m, "Input subspace dimension")->check(CLI::PositiveNumber);
  gck->add_option("--p", go.p, "Reference subspace dimension")->check(CLI::PositiveNumber);
  gck->add_option("--K", go.k, "Number of references")->check(CLI::PositiveNumber);
  gck->add_option("--classes", go.classes, "Classes (default K)")->check(CLI::PositiveNumber);
  gck->add_option("--seed", go.seed, "Random seed");
  gck->add_option("--step", go.step, "Finite-difference step")->check(CLI::PositiveNumber);
  gck->add_option("--threshold", go.threshold, "Pass threshold on max relative error")
      ->check(CLI::PositiveNumber);
  gck->add_option("--activation", go.activation, "Similarity activation")
      ->check(CLI::IsMember({"id", "sqrt"}));
  gck->add_option("--tau", go.tau, "Inverse temperature: fixed:<v> | learn | learn:<v>");
  gck->add_option("--repulsion", go.repulsion, "Repulsion weight (default 0.1 for glmsm)");
  gck->add_option("--input", go.input, "Set front end")->check(CLI::IsMember({"pca", "ac"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(so, out);
    if (*trn) return cmd_train(to, !no_timing, out, err);
    if (*evl) return cmd_eval(eo, out);
    if (*gck) return cmd_gradcheck(go, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace lsm::cli
