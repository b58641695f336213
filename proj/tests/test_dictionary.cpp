#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "rbr/dictionary.hpp"
#include "test_util.hpp"

using namespace rbr;
using rbr::testing::gaussian_matrix;
using rbr::testing::gaussian_vector;

namespace {

FeatureDataset class_set(std::size_t classes, std::size_t per_class, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  FeatureDataset ds;
  ds.d = d;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      FeatureRecord r;
      r.features = gaussian_vector(d, rng);
      r.distance = 1.0 + static_cast<double>(c);
      r.source_id = std::to_string(c) + ":" + std::to_string(i);
      ds.records.push_back(std::move(r));
    }
  return ds;
}

SplitSpec range_for(std::size_t classes) {
  SplitSpec s;
  s.range_max = 0.5 + static_cast<double>(classes);
  return s;
}

double stationarity_residual(const Matrix& D, const Vector& x, const Vector& y, double lambda) {
  Vector r = matvec(D, x);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= y[i];
  Vector g = matvec_t(D, r);
  for (std::size_t j = 0; j < g.size(); ++j) g[j] += lambda * x[j];
  return max_abs(g);
}

}  // namespace

TEST(Layout, SixtyClassGrid) {
  const GridLayout g = make_layout(60, 20);
  EXPECT_EQ(g.grid_rows, 80u);
  EXPECT_EQ(g.grid_cols, 15u);
  EXPECT_EQ(g.block_rows, 4u);
  EXPECT_EQ(g.block_cols, 5u);
  EXPECT_EQ(g.blocks_per_row, 3u);
}

TEST(Layout, ColumnToCellExamples) {
  const GridLayout g = make_layout(60, 20);
  EXPECT_EQ(column_to_cell(g, 0), (Cell{0, 0}));
  EXPECT_EQ(column_to_cell(g, 20), (Cell{0, 5}));
  EXPECT_EQ(column_to_cell(g, 1199), (Cell{79, 14}));
}

TEST(Layout, BijectiveAndClassPerWindow) {
  const GridLayout g = make_layout(60, 20);
  const auto perm = layout_permutation(g);
  std::set<std::size_t> seen(perm.begin(), perm.end());
  EXPECT_EQ(seen.size(), 1200u);
  EXPECT_EQ(*seen.rbegin(), 1199u);
  for (std::size_t j = 0; j < 1200; ++j) {
    const Cell c = column_to_cell(g, j);
    const std::size_t window = (c.row / g.block_rows) * (g.grid_cols / g.block_cols) + c.col / g.block_cols;
    EXPECT_EQ(window, j / 20);
  }
}

TEST(Layout, OverrideAndMismatch) {
  const GridLayout g = make_layout(2, 20, 1);
  EXPECT_EQ(g.grid_rows, 8u);
  EXPECT_EQ(g.grid_cols, 5u);
  EXPECT_THROW(make_layout(60, 20, 7), Error);
}

TEST(Pca, TwoPoints) {
  FeatureDataset ds;
  ds.d = 2;
  ds.records = {{{0.0, 0.0}, 1.0, "a"}, {{2.0, 2.0}, 1.0, "b"}};
  const Pca p = fit_pca(ds, 1);
  EXPECT_NEAR(std::abs(p.A(0, 0)), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(p.A(0, 0), p.A(0, 1), 1e-12);
  EXPECT_NEAR(p.mean[0], 1.0, 1e-15);
}

TEST(Pca, AnisotropicCloudFindsAxes) {
  Rng rng(4);
  FeatureDataset ds;
  ds.d = 3;
  const double sd[3] = {0.5, 3.0, 1.5};
  for (int i = 0; i < 400; ++i) ds.records.push_back({{sd[0] * rng.gaussian(), sd[1] * rng.gaussian(), sd[2] * rng.gaussian()}, 1.0, ""});
  const Pca p = fit_pca(ds, 2);
  EXPECT_GT(std::abs(p.A(0, 1)), 0.99);
  EXPECT_GT(std::abs(p.A(1, 2)), 0.99);
  // independent oracle: eigenvectors of the sample covariance
  Matrix X(400, 3);
  for (std::size_t i = 0; i < 400; ++i)
    for (std::size_t k = 0; k < 3; ++k) X(i, k) = ds.records[i].features[k] - p.mean[k];
  const auto e = eig_sym_descending(gram(X));
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(std::abs(dot(p.A.row(r), e.vectors.col(r))), 1.0, 1e-9);
}

TEST(Pca, GramRouteMatchesCovarianceRoute) {
  Rng rng(8);
  FeatureDataset ds;
  ds.d = 30;
  for (int i = 0; i < 12; ++i) ds.records.push_back({gaussian_vector(30, rng), 1.0, ""});
  const Pca p = fit_pca(ds, 5);
  Matrix X(12, 30);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t k = 0; k < 30; ++k) X(i, k) = ds.records[i].features[k] - p.mean[k];
  const auto e = eig_sym_descending(gram(X));
  for (std::size_t r = 0; r < 5; ++r) EXPECT_NEAR(std::abs(dot(p.A.row(r), e.vectors.col(r))), 1.0, 1e-8);
  EXPECT_LT(max_abs_diff(matmul_nt(p.A, p.A), Matrix::identity(5)), 1e-7);
}

TEST(Pca, RankDeficient) {
  FeatureDataset ds;
  ds.d = 4;
  for (int i = 0; i < 6; ++i) ds.records.push_back({{double(i), 2.0 * i, 0.0, 0.0}, 1.0, ""});
  try {
    fit_pca(ds, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RankDeficient);
  }
}

TEST(Pca, FullScaleOrthonormalRows) {
  Rng rng(12);
  FeatureDataset ds;
  ds.d = 2048;
  for (int i = 0; i < 1200; ++i) ds.records.push_back({gaussian_vector(2048, rng), 1.0, ""});
  EXPECT_EQ(compressed_dim(2048, 0.5), 1024u);
  const Pca p = fit_pca(ds, 1024);
  EXPECT_EQ(p.A.rows(), 1024u);
  EXPECT_EQ(p.A.cols(), 2048u);
  EXPECT_LT(max_abs_diff(matmul_nt(p.A, p.A), Matrix::identity(1024)), 1e-7);
}

TEST(Denoiser, IdentityDictionary) {
  const DenoiserMap dm = build_denoiser(Matrix::identity(4), 1.0);
  Matrix half = Matrix::identity(4);
  for (double& v : half.data()) v *= 0.5;
  EXPECT_LT(max_abs_diff(dm.B, half), 1e-15);
}

TEST(Denoiser, MultiplyBackBothRoutes) {
  Rng rng(21);
  for (auto [m, n] : {std::pair<std::size_t, std::size_t>{20, 60}, {60, 20}}) {
    const Matrix D = gaussian_matrix(m, n, rng);
    const double lambda = 0.3;
    const DenoiserMap dm = build_denoiser(D, lambda);
    const Matrix lhs = matmul(add_diagonal(gram(D), lambda), dm.B);
    EXPECT_LT(max_abs_diff(lhs, transpose(D)), 1e-8);
  }
}

TEST(Proxy, IdentityHalvesQuery) {
  const DenoiserMap dm = build_denoiser(Matrix::identity(3), 1.0);
  const Vector y = {0.6, 0.0, 0.8};
  const Vector x = matvec(dm.B, y);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x[i], y[i] / 2.0);
}

TEST(Proxy, AtomQueryPeaksAtAtom) {
  Rng rng(31);
  const std::size_t m = 8;
  // orthonormal columns from an eigenbasis
  Matrix S = gaussian_matrix(m, m, rng);
  const auto e = eig_sym_descending(gram(S));
  const Matrix D = transpose(e.vectors);
  const DenoiserMap dm = build_denoiser(D, 1e-6);
  for (std::size_t j = 0; j < m; ++j) {
    const Vector x = matvec(dm.B, D.col(j));
    const auto best = std::max_element(x.begin(), x.end()) - x.begin();
    EXPECT_EQ(static_cast<std::size_t>(best), j);
  }
}

TEST(Proxy, StationarityOnRandomSystems) {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix D = gaussian_matrix(15, 45, rng);
    const Vector y = gaussian_vector(15, rng);
    const double lambda = 0.05;
    const Vector x = matvec(build_denoiser(D, lambda).B, y);
    EXPECT_LE(stationarity_residual(D, x, y, lambda), 1e-8 * (1.0 + norm2(y)));
  }
}

TEST(Dictionary, BuildBundleShapesAndUnitAtoms) {
  const FeatureDataset ds = class_set(6, 4, 16, 2);
  const std::size_t m = compressed_dim(16, 0.5);
  const DictionaryBundle b = build_dictionary(ds, fit_pca(ds, m), 0.1, range_for(6), 1);
  EXPECT_EQ(b.dict.m(), 8u);
  EXPECT_EQ(b.dict.n(), 24u);
  EXPECT_EQ(b.dict.per_class, 4u);
  EXPECT_EQ(b.layout.size(), 24u);
  for (std::size_t j = 0; j < b.dict.n(); ++j) {
    EXPECT_NEAR(norm2(b.dict.D.col(j)), 1.0, 1e-12);
    EXPECT_EQ(b.dict.class_of_column[j], j / 4);
  }
  EXPECT_EQ(b.denoiser.B.rows(), 24u);
  EXPECT_EQ(b.denoiser.B.cols(), 8u);
}

TEST(Dictionary, SixtyClassesGiveTwelveHundredAtoms) {
  const FeatureDataset ds = class_set(60, 20, 64, 3);
  const DictionaryBundle b = build_dictionary(ds, fit_pca(ds, 32), 1e-2);
  EXPECT_EQ(b.dict.n(), 1200u);
  EXPECT_EQ(b.layout.grid_rows, 80u);
  EXPECT_EQ(b.layout.grid_cols, 15u);
}

TEST(Dictionary, ZeroNormAtom) {
  FeatureDataset ds = class_set(2, 3, 6, 5);
  const Pca p = fit_pca(ds, 3);
  ds.records[2].features = p.mean;
  try {
    build_dictionary(ds, p, 0.1, range_for(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroNormAtom);
  }
}

TEST(Dictionary, NonUniformRejectedByBuild) {
  FeatureDataset ds = class_set(2, 3, 6, 5);
  ds.records.pop_back();
  EXPECT_THROW(build_dictionary(ds, fit_pca(ds, 3), 0.1, range_for(2)), Error);
  EXPECT_EQ(assemble_dictionary(ds, fit_pca(ds, 3), 0.1, range_for(2)).per_class, 0u);
}

TEST(Dictionary, QueryScaleInvariance) {
  const FeatureDataset ds = class_set(3, 4, 10, 6);
  const DictionaryBundle b = build_dictionary(ds, fit_pca(ds, 5), 0.1, range_for(3), 1);
  Vector f = ds.records[0].features;
  for (std::size_t k = 0; k < f.size(); ++k) f[k] = b.dict.feature_mean[k] + 0.3 * (f[k] - b.dict.feature_mean[k]);
  const Vector a = compress_query(b.dict, ds.records[0].features), c = compress_query(b.dict, f);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], c[i], 1e-12);
  EXPECT_THROW(compress_query(b.dict, b.dict.feature_mean), Error);
  EXPECT_THROW(compress_query(b.dict, Vector(3, 1.0)), Error);
}

TEST(Bundle, RoundTrip) {
  const FeatureDataset ds = class_set(3, 4, 10, 6);
  const DictionaryBundle b = build_dictionary(ds, fit_pca(ds, 5), 0.1, range_for(3), 1);
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  save_bundle(b, ss);
  const DictionaryBundle r = load_bundle(ss);
  EXPECT_EQ(r.dict.D, b.dict.D);
  EXPECT_EQ(r.dict.A, b.dict.A);
  EXPECT_EQ(r.dict.feature_mean, b.dict.feature_mean);
  EXPECT_EQ(r.denoiser.B, b.denoiser.B);
  EXPECT_EQ(r.layout, b.layout);
  EXPECT_EQ(r.dict.lambda, b.dict.lambda);
  EXPECT_EQ(r.dict.class_of_column, b.dict.class_of_column);
}
