#pragma once

// A trained matching model (bank + head + input front end) and its text file
// format. The format is line oriented and versioned:
//
//   format-version 1
//   arch glmsm-softmax
//   input pca
//   m 3
//   normalize 0
//   mode grassmann
//   d 16
//   p 3
//   K 4
//   classes 4
//   epsilon 9.9999999999999995e-07
//   activation id
//   tau 1
//   learn-tau 0
//   repulsion 0
//   reinforce 0
//   config <key> <value>        (zero or more, echo of the run configuration)
//   ref 0                       (K blocks, each followed by d rows of p values)
//   ...
//   weights K C                 (linear heads only: K rows of C values)
//   bias C                      (linear heads only: one row of C values)
//   end
//
// Floats carry 17 significant digits so save -> load is bit exact.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lsm/data.hpp"
#include "lsm/mutual.hpp"

namespace lsm {

enum class Architecture { glmsm_softmax, glmsm_fc, lmsm_softmax, lmsm_fc };

inline const char* to_string(Architecture a) {
  switch (a) {
    case Architecture::glmsm_softmax: return "glmsm-softmax";
    case Architecture::glmsm_fc: return "glmsm-fc";
    case Architecture::lmsm_softmax: return "lmsm-softmax";
    case Architecture::lmsm_fc: return "lmsm-fc";
  }
  return "?";
}

inline std::optional<Architecture> parse_architecture(const std::string& s) {
  for (auto a : {Architecture::glmsm_softmax, Architecture::glmsm_fc, Architecture::lmsm_softmax,
                 Architecture::lmsm_fc}) {
    if (s == to_string(a)) return a;
  }
  return std::nullopt;
}

inline LearningMode mode_of(Architecture a) {
  return (a == Architecture::glmsm_softmax || a == Architecture::glmsm_fc)
             ? LearningMode::grassmann
             : LearningMode::euclidean;
}

inline bool has_linear_head(Architecture a) {
  return a == Architecture::glmsm_fc || a == Architecture::lmsm_fc;
}

enum class InputKind { pca, ac };

inline const char* to_string(InputKind k) { return k == InputKind::ac ? "ac" : "pca"; }

struct Sample {
  SetInput input;
  std::size_t label = 0;
};

struct Model {
  Architecture arch = Architecture::glmsm_softmax;
  InputKind input = InputKind::pca;
  Index input_dim = 1;     // m, the PCA subspace dimension
  bool normalize = false;  // unit-normalize feature vectors before the front end
  ReferenceBank bank;
  HeadConfig head;
  std::vector<std::pair<std::string, std::string>> config;  // run configuration echo

  std::size_t class_count() const { return head.class_count(bank.size()); }
};

/// Turns one set into the layer input the model expects.
inline SetInput make_input(const ImageSetMatrix& set, InputKind kind, Index m, bool normalize) {
  ImageSetMatrix s = set;
  if (normalize) {
    for (Index j = 0; j < s.features.cols(); ++j) {
      const double n = s.features.col(j).norm();
      if (n == 0.0) throw DomainError("make_input: zero feature vector");
      s.features.col(j) /= n;
    }
  }
  if (kind == InputKind::ac) return SetInput::autocorr(set_to_autocorr(s, false));
  return SetInput::basis(set_to_subspace(s, m));
}

inline std::vector<Sample> prepare_samples(const Dataset& ds, InputKind kind, Index m,
                                           bool normalize) {
  std::vector<Sample> out;
  out.reserve(ds.size());
  for (const auto& set : ds.sets()) out.push_back(Sample{make_input(set, kind, m, normalize), set.label});
  return out;
}

inline std::vector<Sample> prepare_samples(const Dataset& ds, const Model& model) {
  if (ds.ambient_dim() != model.bank.ambient_dim()) {
    std::ostringstream os;
    os << "dataset dimension d=" << ds.ambient_dim() << " does not match model dimension d="
       << model.bank.ambient_dim();
    throw ShapeError(os.str());
  }
  if (ds.class_count() > model.class_count()) {
    std::ostringstream os;
    os << "dataset has " << ds.class_count() << " classes, model predicts "
       << model.class_count();
    throw ShapeError(os.str());
  }
  return prepare_samples(ds, model.input, model.input_dim, model.normalize);
}

/// SM-style reference initialization: reference c spans the top-p
/// eigenvectors of the pooled autocorrelation of class c's feature vectors.
inline ReferenceBank sm_initial_bank(const Dataset& ds, Index p, LearningMode mode,
                                     bool normalize) {
  std::vector<LabeledVector> pooled;
  for (const auto& set : ds.sets()) {
    for (Index j = 0; j < set.features.cols(); ++j) {
      Vector x = set.features.col(j);
      if (normalize) {
        const double n = x.norm();
        if (n == 0.0) throw DomainError("sm_initial_bank: zero feature vector");
        x /= n;
      }
      pooled.push_back(LabeledVector{std::move(x), set.label});
    }
  }
  const ClassSubspaces sm = fit_sm(pooled, ds.class_count(), p);
  std::vector<Matrix> refs;
  for (std::size_t c = 0; c < sm.class_count(); ++c) refs.push_back(sm.basis(c).matrix());
  return ReferenceBank(std::move(refs), mode);
}

namespace detail {

inline void write_matrix_rows(std::ostream& out, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << io::format_double(m(i, j));
    }
    out << '\n';
  }
}

class ModelReader {
 public:
  ModelReader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  std::vector<std::string_view> next() {
    while (std::getline(in_, line_)) {
      ++lineno_;
      auto toks = io::split_ws(line_);
      if (!toks.empty()) return toks;
    }
    throw FormatError(name_, lineno_ + 1, "unexpected end of model file");
  }

  std::string_view expect_key(const char* key, std::size_t values) {
    auto toks = next();
    if (toks.size() != values + 1 || toks[0] != key) {
      fail(std::string("expected '") + key + "' with " + std::to_string(values) + " value(s)");
    }
    return values ? toks[1] : std::string_view{};
  }

  template <class Int>
  Int read_int(const char* key) {
    Int v{};
    if (!io::parse_int(expect_key(key, 1), v)) fail(std::string("bad integer for ") + key);
    return v;
  }

  double read_double(const char* key) {
    double v = 0.0;
    if (!io::parse_double(expect_key(key, 1), v)) fail(std::string("bad number for ") + key);
    return v;
  }

  bool read_bool(const char* key) {
    const auto v = expect_key(key, 1);
    if (v == "0") return false;
    if (v == "1") return true;
    fail(std::string("expected 0 or 1 for ") + key);
  }

  Matrix read_rows(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      const auto toks = next();
      if (static_cast<Index>(toks.size()) != cols) {
        fail("expected " + std::to_string(cols) + " values");
      }
      for (Index j = 0; j < cols; ++j) {
        if (!io::parse_double(toks[static_cast<std::size_t>(j)], m(i, j))) fail("invalid number");
      }
    }
    return m;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw FormatError(name_, lineno_, msg); }

 private:
  std::istream& in_;
  std::string name_;
  std::string line_;
  std::size_t lineno_ = 0;
};

}  // namespace detail

inline void write_model(std::ostream& out, const Model& model) {
  const auto& bank = model.bank;
  const auto& head = model.head;
  out << "format-version 1\n";
  out << "arch " << to_string(model.arch) << '\n';
  out << "input " << to_string(model.input) << '\n';
  out << "m " << model.input_dim << '\n';
  out << "normalize " << (model.normalize ? 1 : 0) << '\n';
  out << "mode " << to_string(bank.mode()) << '\n';
  out << "d " << bank.ambient_dim() << '\n';
  out << "p " << bank.sub_dim() << '\n';
  out << "K " << bank.size() << '\n';
  out << "classes " << model.class_count() << '\n';
  out << "epsilon " << io::format_double(bank.epsilon()) << '\n';
  out << "activation " << to_string(head.activation) << '\n';
  out << "tau " << io::format_double(head.tau) << '\n';
  out << "learn-tau " << (head.learn_tau ? 1 : 0) << '\n';
  out << "repulsion " << io::format_double(head.repulsion) << '\n';
  out << "reinforce " << (head.reinforce ? 1 : 0) << '\n';
  for (const auto& [k, v] : model.config) {
    auto token = [](const std::string& t) {
      return !t.empty() && t.find_first_of(" \t\r\n") == std::string::npos;
    };
    if (!token(k) || !token(v)) {
      throw ArgumentError("write_model: config entries must be single non-empty tokens");
    }
    out << "config " << k << ' ' << v << '\n';
  }
  for (std::size_t j = 0; j < bank.size(); ++j) {
    out << "ref " << j << '\n';
    detail::write_matrix_rows(out, bank.ref(j));
  }
  if (head.head == HeadKind::linear_softmax) {
    out << "weights " << head.weights.rows() << ' ' << head.weights.cols() << '\n';
    detail::write_matrix_rows(out, head.weights);
    out << "bias " << head.bias.size() << '\n';
    detail::write_matrix_rows(out, head.bias.transpose());
  }
  out << "end\n";
}

inline void save_model(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_model(out, model);
  if (!out) throw Error("failed writing " + path.string());
}

inline Model read_model(std::istream& in, const std::string& name) {
  detail::ModelReader r(in, name);
  if (r.read_int<int>("format-version") != 1) r.fail("unsupported format-version");

  const auto arch = parse_architecture(std::string(r.expect_key("arch", 1)));
  if (!arch) r.fail("unknown architecture");
  const std::string input = std::string(r.expect_key("input", 1));
  if (input != "pca" && input != "ac") r.fail("input must be pca or ac");
  const auto m = r.read_int<Index>("m");
  const bool normalize = r.read_bool("normalize");
  const std::string mode = std::string(r.expect_key("mode", 1));
  if (mode != to_string(mode_of(*arch))) r.fail("mode does not match architecture");
  const auto d = r.read_int<Index>("d");
  const auto p = r.read_int<Index>("p");
  const auto k = r.read_int<std::size_t>("K");
  const auto classes = r.read_int<std::size_t>("classes");
  if (d < 1 || p < 1 || p > d || k < 1 || m < 1 || m > d) r.fail("invalid dimensions");
  const double epsilon = r.read_double("epsilon");

  HeadConfig head;
  const std::string act = std::string(r.expect_key("activation", 1));
  if (act == "id") {
    head.activation = Activation::identity;
  } else if (act == "sqrt") {
    head.activation = Activation::sqrt;
  } else {
    r.fail("activation must be id or sqrt");
  }
  head.tau = r.read_double("tau");
  head.learn_tau = r.read_bool("learn-tau");
  head.repulsion = r.read_double("repulsion");
  head.reinforce = r.read_bool("reinforce");
  head.head = has_linear_head(*arch) ? HeadKind::linear_softmax : HeadKind::softmax;

  std::vector<std::pair<std::string, std::string>> config;
  auto toks = r.next();
  while (toks[0] == "config") {
    if (toks.size() != 3) r.fail("config lines hold one key and one value");
    config.emplace_back(std::string(toks[1]), std::string(toks[2]));
    toks = r.next();
  }

  std::vector<Matrix> refs;
  for (std::size_t j = 0; j < k; ++j) {
    std::size_t idx = 0;
    if (j > 0) toks = r.next();
    if (toks.size() != 2 || toks[0] != "ref" || !io::parse_int(toks[1], idx) || idx != j) {
      r.fail("expected 'ref " + std::to_string(j) + "'");
    }
    refs.push_back(r.read_rows(d, p));
  }
  if (head.head == HeadKind::linear_softmax) {
    toks = r.next();
    Index rows = 0;
    Index cols = 0;
    if (toks.size() != 3 || toks[0] != "weights" || !io::parse_int(toks[1], rows) ||
        !io::parse_int(toks[2], cols) || rows != static_cast<Index>(k) ||
        cols != static_cast<Index>(classes)) {
      r.fail("expected 'weights K C'");
    }
    head.weights = r.read_rows(rows, cols);
    toks = r.next();
    Index n = 0;
    if (toks.size() != 2 || toks[0] != "bias" || !io::parse_int(toks[1], n) || n != cols) {
      r.fail("expected 'bias C'");
    }
    head.bias = r.read_rows(1, n).row(0).transpose();
  } else if (classes != k) {
    r.fail("softmax head needs classes == K");
  }
  r.expect_key("end", 0);

  try {
    ReferenceBank bank(std::move(refs), mode_of(*arch), epsilon);
    head.validate(bank);
    return Model{*arch, input == "ac" ? InputKind::ac : InputKind::pca, m, normalize,
                 std::move(bank), std::move(head), std::move(config)};
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    r.fail(e.what());
  }
}

inline Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string(), 0, "cannot open model file");
  return read_model(in, path.string());
}

}  // namespace lsm
