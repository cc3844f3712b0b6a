#include "test_util.hpp"

#include <fstream>

namespace lsm {
namespace {

using test::gaussian;
using test::span_distance;
using test::TempDir;
using test::unit;

ImageSetMatrix set_of(std::initializer_list<Vector> cols, std::size_t label = 0) {
  Matrix h(cols.begin()->size(), static_cast<Index>(cols.size()));
  Index j = 0;
  for (const auto& c : cols) h.col(j++) = c;
  return ImageSetMatrix{h, label};
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

TEST(SetToSubspace, RepeatedVectors) {
  const OrthonormalBasis b = set_to_subspace(set_of({unit(3, 0), unit(3, 0), unit(3, 1)}), 1);
  EXPECT_LT(span_distance(b.matrix(), unit(3, 0)), 1e-14);
}

TEST(SetToSubspace, OrthonormalColumnsKeepSpan) {
  Rng rng(1);
  const Matrix q = random_basis(6, 3, rng).matrix();
  const OrthonormalBasis b = set_to_subspace(ImageSetMatrix{q, 0}, 3);
  EXPECT_LT(span_distance(b.matrix(), q), 1e-12);
}

TEST(SetToSubspace, MatchesEigenOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix h = gaussian(8, 5, rng);
    const OrthonormalBasis b = set_to_subspace(ImageSetMatrix{h, 0}, 3);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(h * h.transpose());
    EXPECT_LT(span_distance(b.matrix(), eig.eigenvectors().rightCols(3)), 1e-10);
  }
}

TEST(SetToSubspace, RankErrorReportsRank) {
  try {
    set_to_subspace(set_of({unit(4, 0), unit(4, 1)}), 3);
    FAIL() << "expected RankError";
  } catch (const RankError& e) {
    EXPECT_NE(std::string(e.what()).find("rank 2"), std::string::npos);
  }
  EXPECT_THROW(set_to_subspace(set_of({unit(4, 0)}), 0), ArgumentError);
  EXPECT_THROW(set_to_subspace(ImageSetMatrix{Matrix::Zero(3, 2), 0}, 1), RankError);
}

TEST(SetToAutocorr, UnitVectorIsProjector) {
  Rng rng(3);
  Vector x = test::gaussian_vector(5, rng);
  x.normalize();
  const Matrix a = set_to_autocorr(set_of({x}), false);
  EXPECT_LT((a - x * x.transpose()).norm(), 1e-15);
  EXPECT_LT((a * a - a).norm(), 1e-14);
}

TEST(SetToAutocorr, OrthonormalSetMatchesPca) {
  Rng rng(4);
  const Matrix q = random_basis(6, 2, rng).matrix();
  EXPECT_LT((set_to_autocorr(ImageSetMatrix{q, 0}, false) - q * q.transpose()).norm(), 1e-15);
}

TEST(SetToAutocorr, PcaBasisIsRayleighOptimal) {
  Rng rng(5);
  const Matrix h = gaussian(7, 6, rng);
  const ImageSetMatrix set{h, 0};
  const Matrix a = set_to_autocorr(set, false);
  const Matrix best = set_to_subspace(set, 3).matrix();
  const double top = (best.transpose() * a * best).trace();
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix v = random_basis(7, 3, rng).matrix();
    EXPECT_GE(top, (v.transpose() * a * v).trace() - 1e-12);
  }
}

TEST(SetToAutocorr, NormalizeAndZeroColumn) {
  Vector x(2);
  x << 3.0, 4.0;
  const Matrix a = set_to_autocorr(set_of({x}), true);
  EXPECT_NEAR(a.trace(), 1.0, 1e-15);
  EXPECT_THROW(set_to_autocorr(set_of({Vector::Zero(3)}), true), DomainError);
}

TEST(Dataset, Validation) {
  EXPECT_THROW(Dataset({}, 1, 3), ArgumentError);
  EXPECT_THROW(Dataset({set_of({unit(3, 0)})}, 2, 4), ShapeError);
  EXPECT_THROW(Dataset({set_of({unit(3, 0)}, 2)}, 2, 3), ArgumentError);
  Matrix nan = Matrix::Zero(3, 1);
  nan(0, 0) = std::nan("");
  EXPECT_THROW(Dataset({ImageSetMatrix{nan, 0}}, 2, 3), DomainError);
}

TEST(Synthetic, NoiselessRecovery) {
  SynthSpec spec;
  spec.noise_sigma = 0.0;
  spec.true_sub_dim = 2;
  spec.vectors_per_set = 5;
  const SynthData data = generate_synthetic(spec);
  for (const auto& set : data.train.sets()) {
    const OrthonormalBasis b = set_to_subspace(set, 2);
    EXPECT_NEAR(subspace_similarity(b, data.class_bases[set.label]), 2.0, 1e-10);
  }
}

TEST(Synthetic, SplitAndShape) {
  SynthSpec spec;  // 3 classes x 10 sets
  const SynthData data = generate_synthetic(spec);
  EXPECT_EQ(data.train.size() + data.test.size(), 30u);
  EXPECT_EQ(data.train.size(), 24u);
  EXPECT_EQ(data.train.ambient_dim(), 8);
  for (const auto& s : data.test.sets()) EXPECT_EQ(s.features.cols(), 6);
  EXPECT_EQ(synth_train_count(1), 1u);
}

TEST(Synthetic, NearestSubspaceIsPerfectWithoutNoise) {
  // Two classes in orthogonal coordinate planes.
  std::vector<ImageSetMatrix> sets;
  Rng rng(6);
  for (std::size_t c = 0; c < 2; ++c) {
    for (int s = 0; s < 5; ++s) {
      Matrix h = Matrix::Zero(6, 4);
      h.middleRows(3 * Index(c), 2) = gaussian(2, 4, rng);
      sets.push_back(ImageSetMatrix{h, c});
    }
  }
  Matrix b0 = Matrix::Zero(6, 2);
  b0(0, 0) = b0(1, 1) = 1.0;
  Matrix b1 = Matrix::Zero(6, 2);
  b1(3, 0) = b1(4, 1) = 1.0;
  const ReferenceBank oracle({b0, b1}, LearningMode::grassmann);
  std::size_t hit = 0;
  for (const auto& s : sets) {
    hit += forward(set_to_subspace(s, 2), oracle, HeadConfig{}).predicted() == s.label ? 1 : 0;
  }
  EXPECT_EQ(hit, sets.size());
}

TEST(Synthetic, DeterministicForSeed) {
  SynthSpec spec;
  spec.seed = 1234;
  const SynthData a = generate_synthetic(spec);
  const SynthData b = generate_synthetic(spec);
  EXPECT_TRUE(a.train == b.train);
  EXPECT_TRUE(a.test == b.test);
  spec.seed = 1235;
  EXPECT_FALSE(generate_synthetic(spec).train == a.train);
}

TEST(Synthetic, SpecValidation) {
  SynthSpec spec;
  spec.classes = 1;
  EXPECT_THROW(generate_synthetic(spec), ArgumentError);
  spec = SynthSpec{};
  spec.noise_sigma = -1.0;
  EXPECT_THROW(generate_synthetic(spec), ArgumentError);
  spec = SynthSpec{};
  spec.true_sub_dim = 9;
  EXPECT_THROW(generate_synthetic(spec), ArgumentError);
}

TEST(VectorTask, ShapeAndDeterminism) {
  const VectorTask a = generate_vector_task(VectorTaskSpec{});
  const VectorTask b = generate_vector_task(VectorTaskSpec{});
  ASSERT_EQ(a.train.size(), 300u);
  ASSERT_EQ(a.test.size(), 300u);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].x, b.train[i].x);
  VectorTaskSpec bad;
  bad.shared_dim = 3;
  EXPECT_THROW(generate_vector_task(bad), ArgumentError);
}

TEST(DatasetIo, SingleSetRoundTrip) {
  TempDir dir;
  Rng rng(7);
  const Dataset ds({ImageSetMatrix{gaussian(4, 3, rng), 1}}, 2, 4);
  const auto manifest = save_dataset(ds, dir.path());
  EXPECT_TRUE(load_dataset(manifest, 2) == ds);
}

TEST(DatasetIo, SyntheticRoundTrip) {
  TempDir dir;
  SynthSpec spec;
  spec.classes = 3;
  spec.sets_per_class = 20;
  const SynthData data = generate_synthetic(spec);
  std::vector<ImageSetMatrix> all = data.train.sets();
  all.insert(all.end(), data.test.sets().begin(), data.test.sets().end());
  const Dataset ds(all, 3, 8);
  ASSERT_EQ(ds.size(), 60u);
  EXPECT_TRUE(load_dataset(save_dataset(ds, dir.path())) == ds);
}

TEST(DatasetIo, ExtremeValuesRoundTrip) {
  TempDir dir;
  Matrix h(3, 2);
  h << 1e-300, -0.1, 1.0 / 3.0, 1e300, -0.0, 4.9406564584124654e-324;
  const Dataset ds({ImageSetMatrix{h, 0}, ImageSetMatrix{h, 1}}, 2, 3);
  const Dataset back = load_dataset(save_dataset(ds, dir.path()));
  EXPECT_TRUE(back == ds);
}

TEST(DatasetIo, EmptyManifest) {
  TempDir dir;
  write_text(dir / "m.tsv", "");
  EXPECT_THROW(load_dataset(dir / "m.tsv"), ArgumentError);
}

TEST(DatasetIo, FormatErrorsCarryLineNumbers) {
  TempDir dir;
  std::filesystem::create_directories(dir / "sets");
  write_text(dir / "sets/a.txt", "2 1\n1 2\n");
  write_text(dir / "sets/bad.txt", "2 2\n1 2\n3\n");
  write_text(dir / "sets/d3.txt", "3 1\n1 2 3\n");

  auto expect_line = [&](const std::string& manifest, std::size_t line) {
    write_text(dir / "m.tsv", manifest);
    try {
      load_dataset(dir / "m.tsv");
      ADD_FAILURE() << "expected FormatError for: " << manifest;
    } catch (const FormatError& e) {
      EXPECT_EQ(e.line(), line) << e.what();
    }
  };
  expect_line("sets/a.txt\t0\nsets/a.txt x\n", 2);
  expect_line("sets/a.txt\t0\nsets/a.txt\t-1\n", 2);
  expect_line("sets/a.txt\t0\nsets/missing.txt\t1\n", 2);
  expect_line("sets/a.txt\t0\nsets/d3.txt\t1\n", 2);
  expect_line("sets/a.txt\t0\n", 1);  // single class

  write_text(dir / "m.tsv", "sets/a.txt\t0\nsets/bad.txt\t1\n");
  try {
    load_dataset(dir / "m.tsv");
    ADD_FAILURE() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(e.file().find("bad.txt"), std::string::npos);
  }
  write_text(dir / "m.tsv", "sets/a.txt\t0\nsets/a.txt\t3\n");
  EXPECT_THROW(load_dataset(dir / "m.tsv", 3), FormatError);
  EXPECT_EQ(load_dataset(dir / "m.tsv", 4).class_count(), 4u);
}

TEST(DatasetIo, SetFileErrors) {
  TempDir dir;
  write_text(dir / "h.txt", "2\n");
  EXPECT_THROW(io::read_set_file(dir / "h.txt"), FormatError);
  write_text(dir / "n.txt", "2 1\n1 nan\n");
  EXPECT_THROW(io::read_set_file(dir / "n.txt"), FormatError);
  write_text(dir / "t.txt", "1 1\n1\n2\n");
  EXPECT_THROW(io::read_set_file(dir / "t.txt"), FormatError);
  write_text(dir / "crlf.txt", "2 1\r\n1 2\r\n");
  EXPECT_EQ(io::read_set_file(dir / "crlf.txt").col(0), Eigen::Vector2d(1, 2));
}

TEST(DatasetIo, ManifestPathsAreRelative) {
  TempDir dir;
  Rng rng(8);
  const Dataset ds({ImageSetMatrix{gaussian(3, 2, rng), 0}, ImageSetMatrix{gaussian(3, 2, rng), 1}},
                   2, 3);
  save_dataset(ds, dir / "orig");
  std::filesystem::rename(dir / "orig", dir / "moved");
  EXPECT_TRUE(load_dataset(dir / "moved" / "manifest.tsv") == ds);
}

}  // namespace
}  // namespace lsm
