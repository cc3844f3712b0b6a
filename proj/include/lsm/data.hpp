#pragma once

// Image-set datasets: the set -> subspace front end, synthetic generators and
// the manifest + set-file text format.
//
// Manifest: one line per set, "<relative-path>\t<label>", paths relative to
// the manifest's directory. Set file: first line "d n", then n lines of d
// space-separated floats (one feature vector, i.e. one column of H, per line).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lsm/classic.hpp"
#include "lsm/manifold.hpp"
#include "lsm/random.hpp"

namespace lsm {

/// d x n matrix whose columns are the feature vectors of one set.
struct ImageSetMatrix {
  Matrix features;
  std::size_t label = 0;
};

class Dataset {
 public:
  Dataset(std::vector<ImageSetMatrix> sets, std::size_t class_count, Index ambient_dim)
      : sets_(std::move(sets)), class_count_(class_count), ambient_dim_(ambient_dim) {
    if (class_count_ < 2) throw ArgumentError("Dataset: need at least 2 classes");
    if (ambient_dim_ < 1) throw ArgumentError("Dataset: ambient dimension must be positive");
    for (std::size_t i = 0; i < sets_.size(); ++i) {
      const auto& s = sets_[i];
      if (s.features.rows() != ambient_dim_) {
        std::ostringstream os;
        os << "Dataset: set " << i << " has dimension " << s.features.rows() << ", expected "
           << ambient_dim_;
        throw ShapeError(os.str());
      }
      if (s.features.cols() < 1) throw ShapeError("Dataset: empty set");
      if (!s.features.allFinite()) throw DomainError("Dataset: non-finite feature");
      if (s.label >= class_count_) throw ArgumentError("Dataset: label out of range");
    }
  }

  const std::vector<ImageSetMatrix>& sets() const noexcept { return sets_; }
  std::size_t size() const noexcept { return sets_.size(); }
  bool empty() const noexcept { return sets_.empty(); }
  std::size_t class_count() const noexcept { return class_count_; }
  Index ambient_dim() const noexcept { return ambient_dim_; }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    if (a.class_count_ != b.class_count_ || a.ambient_dim_ != b.ambient_dim_ ||
        a.sets_.size() != b.sets_.size()) {
      return false;
    }
    for (std::size_t i = 0; i < a.sets_.size(); ++i) {
      const auto& x = a.sets_[i];
      const auto& y = b.sets_[i];
      if (x.label != y.label || x.features.rows() != y.features.rows() ||
          x.features.cols() != y.features.cols() || x.features != y.features) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<ImageSetMatrix> sets_;
  std::size_t class_count_;
  Index ambient_dim_;
};

/// Noncentered PCA: top-m eigenvectors of H H^T, descending eigenvalue order.
inline OrthonormalBasis set_to_subspace(const ImageSetMatrix& set, Index m) {
  const Index d = set.features.rows();
  if (m < 1 || m > d) throw ArgumentError("set_to_subspace: m out of range");
  const SymEig eig = sym_eig_desc(set.features * set.features.transpose());
  const double top = eig.eigenvalues(0);
  Index rank = 0;
  for (Index i = 0; i < d; ++i) rank += (eig.eigenvalues(i) > 1e-12 * top) ? 1 : 0;
  if (!(top > 0.0) || rank < m) {
    std::ostringstream os;
    os << "set_to_subspace: set has rank " << (top > 0.0 ? rank : 0) << ", need " << m;
    throw RankError(os.str(), eig.eigenvalues(m - 1));
  }
  return OrthonormalBasis(eig.eigenvectors.leftCols(m));
}

/// H H^T, with the columns of H unit-normalized first when `normalize`.
inline Matrix set_to_autocorr(const ImageSetMatrix& set, bool normalize) {
  if (set.features.cols() < 1) throw ArgumentError("set_to_autocorr: empty set");
  if (!normalize) return set.features * set.features.transpose();
  Matrix h = set.features;
  for (Index j = 0; j < h.cols(); ++j) {
    const double n = h.col(j).norm();
    if (n == 0.0) {
      std::ostringstream os;
      os << "set_to_autocorr: column " << j << " is the zero vector";
      throw DomainError(os.str());
    }
    h.col(j) /= n;
  }
  return h * h.transpose();
}

/// Copy of the dataset with every feature vector scaled to unit length.
inline Dataset normalize_vectors(const Dataset& ds) {
  std::vector<ImageSetMatrix> sets = ds.sets();
  for (auto& s : sets) {
    for (Index j = 0; j < s.features.cols(); ++j) {
      const double n = s.features.col(j).norm();
      if (n == 0.0) throw DomainError("normalize_vectors: zero feature vector");
      s.features.col(j) /= n;
    }
  }
  return Dataset(std::move(sets), ds.class_count(), ds.ambient_dim());
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthSpec {
  Index d = 8;
  std::size_t classes = 3;
  std::size_t sets_per_class = 10;
  Index vectors_per_set = 6;
  Index true_sub_dim = 2;
  double noise_sigma = 0.1;
  std::uint64_t seed = 42;

  void validate() const {
    if (d < 1) throw ArgumentError("SynthSpec: d must be positive");
    if (classes < 2) throw ArgumentError("SynthSpec: classes must be >= 2");
    if (sets_per_class < 1) throw ArgumentError("SynthSpec: sets_per_class must be positive");
    if (vectors_per_set < 1) throw ArgumentError("SynthSpec: vectors_per_set must be positive");
    if (true_sub_dim < 1 || true_sub_dim > d) {
      throw ArgumentError("SynthSpec: true_sub_dim must be in [1, d]");
    }
    if (!std::isfinite(noise_sigma) || noise_sigma < 0.0) {
      throw ArgumentError("SynthSpec: noise_sigma must be >= 0");
    }
  }
};

struct SynthData {
  Dataset train;
  Dataset test;
  std::vector<OrthonormalBasis> class_bases;  // B_c
};

/// Number of a class's sets that go to the training split (80/20 by sets).
inline std::size_t synth_train_count(std::size_t sets_per_class) {
  const std::size_t n = (sets_per_class * 4) / 5;
  return n == 0 ? 1 : n;
}

/// Per class a random orthonormal B_c; each set's vectors are B_c * coeffs +
/// sigma * noise with standard normal coeffs and noise.
inline SynthData generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<OrthonormalBasis> bases;
  bases.reserve(spec.classes);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    bases.push_back(random_basis(spec.d, spec.true_sub_dim, rng));
  }

  std::vector<ImageSetMatrix> train;
  std::vector<ImageSetMatrix> test;
  const std::size_t n_train = synth_train_count(spec.sets_per_class);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t s = 0; s < spec.sets_per_class; ++s) {
      Matrix coeffs(spec.true_sub_dim, spec.vectors_per_set);
      for (Index j = 0; j < coeffs.cols(); ++j) {
        for (Index i = 0; i < coeffs.rows(); ++i) coeffs(i, j) = normal(rng);
      }
      Matrix noise(spec.d, spec.vectors_per_set);
      for (Index j = 0; j < noise.cols(); ++j) {
        for (Index i = 0; i < noise.rows(); ++i) noise(i, j) = normal(rng);
      }
      ImageSetMatrix set{bases[c].matrix() * coeffs + spec.noise_sigma * noise, c};
      (s < n_train ? train : test).push_back(std::move(set));
    }
  }
  return SynthData{Dataset(std::move(train), spec.classes, spec.d),
                   Dataset(std::move(test), spec.classes, spec.d), std::move(bases)};
}

/// Vector-classification task with overlapping classes: every class subspace
/// contains `shared_dim` common directions plus its own random ones.
struct VectorTaskSpec {
  Index d = 10;
  std::size_t classes = 3;
  Index true_sub_dim = 3;
  Index shared_dim = 1;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 100;
  double noise_sigma = 0.4;
  std::uint64_t seed = 7;
};

struct VectorTask {
  std::vector<LabeledVector> train;
  std::vector<LabeledVector> test;
};

inline VectorTask generate_vector_task(const VectorTaskSpec& spec) {
  if (spec.classes < 2 || spec.true_sub_dim < 1 || spec.shared_dim < 0 ||
      spec.shared_dim >= spec.true_sub_dim || spec.true_sub_dim > spec.d ||
      !(spec.noise_sigma >= 0.0)) {
    throw ArgumentError("generate_vector_task: invalid spec");
  }
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Index rows, Index cols) {
    Matrix g(rows, cols);
    for (Index j = 0; j < cols; ++j) {
      for (Index i = 0; i < rows; ++i) g(i, j) = normal(rng);
    }
    return g;
  };

  const Matrix shared = gaussian(spec.d, spec.shared_dim);
  std::vector<Matrix> bases;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    Matrix raw(spec.d, spec.true_sub_dim);
    raw << shared, gaussian(spec.d, spec.true_sub_dim - spec.shared_dim);
    bases.push_back(orthonormalize(raw));
  }

  VectorTask task;
  auto draw = [&](std::vector<LabeledVector>& out, std::size_t per_class) {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      for (std::size_t i = 0; i < per_class; ++i) {
        Vector x = bases[c] * gaussian(spec.true_sub_dim, 1).col(0) +
                   spec.noise_sigma * gaussian(spec.d, 1).col(0);
        out.push_back(LabeledVector{std::move(x), c});
      }
    }
  };
  draw(task.train, spec.train_per_class);
  draw(task.test, spec.test_per_class);
  return task;
}

// ---------------------------------------------------------------------------
// Text format

namespace io {

/// Shortest decimal that round-trips is not needed; 17 significant digits
/// always round-trip a double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline bool parse_double(std::string_view tok, double& out) {
  if (tok.empty()) return false;
  std::string s(tok);
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

template <class Int>
bool parse_int(std::string_view tok, Int& out) {
  if (tok.empty()) return false;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size();
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline void write_set_file(const std::filesystem::path& path, const Matrix& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << features.rows() << ' ' << features.cols() << '\n';
  for (Index j = 0; j < features.cols(); ++j) {
    for (Index i = 0; i < features.rows(); ++i) {
      if (i) out << ' ';
      out << format_double(features(i, j));
    }
    out << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

inline Matrix read_set_file(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(name, 0, "cannot open set file");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(name, 1, "missing header line 'd n'");
  const auto head = split_ws(line);
  Index d = 0;
  Index n = 0;
  if (head.size() != 2 || !parse_int(head[0], d) || !parse_int(head[1], n) || d < 1 || n < 1) {
    throw FormatError(name, 1, "malformed header, expected 'd n' with positive integers");
  }
  Matrix features(d, n);
  for (Index j = 0; j < n; ++j) {
    const std::size_t lineno = static_cast<std::size_t>(j) + 2;
    if (!std::getline(in, line)) throw FormatError(name, lineno, "missing feature vector");
    const auto toks = split_ws(line);
    if (static_cast<Index>(toks.size()) != d) {
      std::ostringstream os;
      os << "expected " << d << " values, found " << toks.size();
      throw FormatError(name, lineno, os.str());
    }
    for (Index i = 0; i < d; ++i) {
      if (!parse_double(toks[static_cast<std::size_t>(i)], features(i, j))) {
        throw FormatError(name, lineno, "invalid number '" +
                                            std::string(toks[static_cast<std::size_t>(i)]) + "'");
      }
    }
  }
  while (std::getline(in, line)) {
    if (!split_ws(line).empty()) {
      throw FormatError(name, static_cast<std::size_t>(n) + 2, "trailing data after n vectors");
    }
  }
  return features;
}

}  // namespace io

/// Writes `<dir>/<manifest_name>` and one set file per entry under
/// `<dir>/sets/` named with `prefix`.
inline std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                                          const std::string& manifest_name = "manifest.tsv",
                                          const std::string& prefix = "set") {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "sets", ec);
  if (ec) throw Error("cannot create " + (dir / "sets").string() + ": " + ec.message());
  const fs::path manifest = dir / manifest_name;
  std::ofstream out(manifest, std::ios::binary);
  if (!out) throw Error("cannot write " + manifest.string());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%05zu.txt", prefix.c_str(), i);
    const fs::path rel = fs::path("sets") / name;
    io::write_set_file(dir / rel, ds.sets()[i].features);
    out << rel.generic_string() << '\t' << ds.sets()[i].label << '\n';
  }
  if (!out) throw Error("failed writing " + manifest.string());
  return manifest;
}

/// Reads a manifest and its set files. The class count is the largest label
/// plus one unless `expected_classes` is given, in which case labels must be
/// below it.
inline Dataset load_dataset(const std::filesystem::path& manifest,
                            std::size_t expected_classes = 0) {
  const std::string name = manifest.string();
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw FormatError(name, 0, "cannot open manifest");
  const std::filesystem::path base = manifest.parent_path();

  std::vector<ImageSetMatrix> sets;
  std::size_t max_label = 0;
  Index d = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw FormatError(name, lineno, "expected '<relative-path>\\t<label>'");
    }
    const std::string_view label_tok = std::string_view(line).substr(tab + 1);
    std::size_t label = 0;
    if (!io::parse_int(label_tok, label)) {
      throw FormatError(name, lineno, "label '" + std::string(label_tok) +
                                          "' is not a nonnegative integer");
    }
    if (expected_classes != 0 && label >= expected_classes) {
      std::ostringstream os;
      os << "label " << label << " out of range for " << expected_classes << " classes";
      throw FormatError(name, lineno, os.str());
    }
    const std::filesystem::path set_path = base / line.substr(0, tab);
    if (!std::filesystem::exists(set_path)) {
      throw FormatError(name, lineno, "missing set file " + set_path.string());
    }
    Matrix features = io::read_set_file(set_path);
    if (d == 0) d = features.rows();
    if (features.rows() != d) {
      std::ostringstream os;
      os << "set file " << set_path.string() << " has d=" << features.rows()
         << ", earlier sets have d=" << d;
      throw FormatError(name, lineno, os.str());
    }
    max_label = std::max(max_label, label);
    sets.push_back(ImageSetMatrix{std::move(features), label});
  }
  if (sets.empty()) throw ArgumentError("load_dataset: manifest " + name + " lists no sets");
  const std::size_t classes = expected_classes != 0 ? expected_classes : max_label + 1;
  if (classes < 2) throw FormatError(name, lineno, "dataset needs at least 2 classes");
  return Dataset(std::move(sets), classes, d);
}

}  // namespace lsm
