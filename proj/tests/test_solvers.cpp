#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "rbr/solvers.hpp"
#include "rbr/synth.hpp"
#include "test_util.hpp"

using namespace rbr;
using rbr::testing::gaussian_matrix;
using rbr::testing::gaussian_vector;
using rbr::testing::normalize_columns;

namespace {

// Dictionary with identity compression, so features are queries.
Dictionary raw_dictionary(Matrix D, std::size_t classes) {
  Dictionary dict;
  const std::size_t m = D.rows(), n = D.cols();
  dict.D = std::move(D);
  dict.A = Matrix::identity(m);
  dict.feature_mean = Vector(m, 0.0);
  dict.classes = classes;
  dict.per_class = n / classes;
  for (std::size_t j = 0; j < n; ++j) dict.class_of_column.push_back(j / dict.per_class);
  return dict;
}

Matrix orthonormal(std::size_t m, Rng& rng) {
  const auto e = eig_sym_descending(gram(gaussian_matrix(m, m, rng)));
  return transpose(e.vectors);
}

struct SparseProblem {
  Matrix D;
  Vector x;
  Vector y;
  std::vector<std::size_t> support;
};

SparseProblem sparse_problem(std::size_t m, std::size_t n, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  SparseProblem p;
  p.D = normalize_columns(gaussian_matrix(m, n, rng));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  p.support.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(p.support.begin(), p.support.end());
  p.x.assign(n, 0.0);
  for (std::size_t j : p.support) p.x[j] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (1.0 + rng.uniform());
  p.y = matvec(p.D, p.x);
  return p;
}

std::vector<std::size_t> top_k(const Vector& x, std::size_t k) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return std::abs(x[a]) > std::abs(x[b]); });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<std::size_t> support_of(const Vector& x) {
  std::vector<std::size_t> s;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (x[j] != 0.0) s.push_back(j);
  return s;
}

}  // namespace

TEST(Crc, IdentityCases) {
  const Vector y = {0.6, -0.8, 0.0};
  const Vector x0 = crc_solve(Matrix::identity(3), y, 0.0);
  const Vector x1 = crc_solve(Matrix::identity(3), y, 1.0);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(x0[i], y[i]);
    EXPECT_DOUBLE_EQ(x1[i], y[i] / 2.0);
  }
}

TEST(Crc, NormalEquationResidual) {
  Rng rng(5);
  const Matrix D = normalize_columns(gaussian_matrix(30, 90, rng));
  const Vector y = gaussian_vector(30, rng);
  const double lambda = 0.1;
  const Vector x = crc_solve(D, y, lambda);
  Vector r = matvec(D, x);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= y[i];
  Vector g = matvec_t(D, r);
  for (std::size_t j = 0; j < g.size(); ++j) g[j] += lambda * x[j];
  EXPECT_LT(max_abs(g), 1e-8);
}

TEST(Crc, EqualsDenoiserProxy) {
  Rng rng(6);
  const Matrix D = normalize_columns(gaussian_matrix(20, 60, rng));
  const DenoiserMap dm = build_denoiser(D, 0.05);
  const Vector y = gaussian_vector(20, rng);
  const Vector a = crc_solve(D, y, 0.05), b = crc_solve(dm, y);
  for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-12);
}

TEST(Fista, ZeroQuery) {
  Rng rng(7);
  const Matrix D = normalize_columns(gaussian_matrix(10, 30, rng));
  SolverConfig cfg;
  for (double v : lasso_fista(D, Vector(10, 0.0), cfg)) EXPECT_EQ(v, 0.0);
  for (double v : lasso_admm(D, Vector(10, 0.0), cfg)) EXPECT_EQ(v, 0.0);
}

TEST(Fista, IdentityIsSoftThreshold) {
  const Vector y = {0.5, -0.004, 0.2, -0.7};
  SolverConfig cfg;
  cfg.lambda = 0.01;
  cfg.tol = 1e-14;
  // minimizer of ‖x−y‖² + λ‖x‖₁ is soft(y, λ/2)
  const Vector xf = lasso_fista(Matrix::identity(4), y, cfg);
  const Vector xa = lasso_admm(Matrix::identity(4), y, [&] {
    SolverConfig c = cfg;
    c.tol = 1e-12;
    c.max_iter = 5000;
    return c;
  }());
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(xf[i], soft_threshold(y[i], 0.005), 1e-12);
    EXPECT_NEAR(xa[i], soft_threshold(y[i], 0.005), 1e-9);
  }
}

TEST(Ista, ObjectiveNonIncreasing) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SparseProblem p = sparse_problem(32, 96, 4, 100 + seed);
    SolverConfig cfg;
    cfg.lambda = 1e-2;
    cfg.max_iter = 300;
    cfg.tol = 1e-15;
    std::vector<double> trace;
    lasso_ista(p.D, p.y, cfg, &trace);
    ASSERT_GT(trace.size(), 2u);
    for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] * (1.0 + 1e-14)) << i;
  }
}

TEST(Fista, RecoversSupport) {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SparseProblem p = sparse_problem(64, 256, 5, 1000 + seed);
    SolverConfig cfg;
    cfg.lambda = 1e-3;
    cfg.max_iter = 2000;
    cfg.tol = 1e-10;
    hits += top_k(lasso_fista(p.D, p.y, cfg), 5) == p.support;
  }
  EXPECT_GE(hits, 90);
}

TEST(Fista, AgreesWithAdmm) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SparseProblem p = sparse_problem(30, 80, 4, 2000 + seed);
    SolverConfig cfg;
    cfg.lambda = 5e-2;
    cfg.max_iter = 20000;
    cfg.tol = 1e-12;
    const double ff = lasso_objective(p.D, p.y, lasso_fista(p.D, p.y, cfg), cfg.lambda);
    const double fa = lasso_objective(p.D, p.y, lasso_admm(p.D, p.y, cfg), cfg.lambda);
    EXPECT_LE(std::abs(ff - fa), 1e-4 * std::max(ff, fa)) << seed;
  }
}

TEST(Admm, TallAndWideRoutesAgree) {
  Rng rng(9);
  const Matrix D = normalize_columns(gaussian_matrix(40, 25, rng));
  const Vector y = gaussian_vector(40, rng);
  SolverConfig cfg;
  cfg.lambda = 0.1;
  cfg.max_iter = 20000;
  cfg.tol = 1e-12;
  const double fa = lasso_objective(D, y, lasso_admm(D, y, cfg), cfg.lambda);
  const double ff = lasso_objective(D, y, lasso_fista(D, y, cfg), cfg.lambda);
  EXPECT_LE(std::abs(ff - fa), 1e-6 * ff);
  EXPECT_THROW(LassoAdmm(D, 0.0), Error);
}

TEST(Omp, ExactAtomAndScaling) {
  Rng rng(10);
  const Matrix D = orthonormal(8, rng);
  SolverConfig cfg;
  cfg.omp_k = 3;
  const Vector x = omp(D, D.col(5), cfg);
  EXPECT_EQ(support_of(x), std::vector<std::size_t>{5});
  EXPECT_NEAR(x[5], 1.0, 1e-12);
  Vector y = D.col(2);
  for (double& v : y) v *= 3.0;
  EXPECT_NEAR(omp(D, y, cfg)[2], 3.0, 1e-12);
  cfg.omp_k = 9;
  EXPECT_THROW(omp(D, y, cfg), Error);
}

TEST(Omp, RecoversSupport) {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SparseProblem p = sparse_problem(64, 256, 5, 3000 + seed);
    SolverConfig cfg;
    cfg.omp_k = 5;
    cfg.tol = 1e-10;
    hits += support_of(omp(p.D, p.y, cfg)) == p.support;
  }
  EXPECT_GE(hits, 95);
}

TEST(FourStep, ExactAtomOfClassSeven) {
  Rng rng(11);
  const Dictionary dict = raw_dictionary(orthonormal(10, rng), 10);
  SolverConfig cfg;
  cfg.lambda = 1e-8;
  const auto res = classify_four_step(dict, dict.D.col(7), cfg);
  EXPECT_EQ(res.predicted_class, 7u);
  EXPECT_DOUBLE_EQ(res.predicted_distance, 8.0);
  EXPECT_EQ(res.residuals.size(), 10u);
}

TEST(FourStep, TiesGoToLowestClass) {
  // symmetric query between two orthogonal single-atom classes
  const Dictionary dict = raw_dictionary(Matrix::identity(2), 2);
  SolverConfig cfg;
  cfg.lambda = 0.5;
  const auto res = classify_four_step(dict, Vector{1.0, 1.0}, cfg);
  EXPECT_EQ(res.residuals[0], res.residuals[1]);
  EXPECT_EQ(res.predicted_class, 0u);
}

TEST(FourStep, ScaleInvariantArgmin) {
  Rng rng(12);
  const Dictionary dict = raw_dictionary(normalize_columns(gaussian_matrix(12, 36, rng)), 6);
  for (auto method : {SolverMethod::Crc, SolverMethod::Fista, SolverMethod::Omp, SolverMethod::Admm}) {
    SolverConfig cfg;
    cfg.method = method;
    cfg.omp_k = 5;
    for (int t = 0; t < 10; ++t) {
      const Vector f = gaussian_vector(12, rng);
      Vector g = f;
      for (double& v : g) v *= 7.5;
      EXPECT_EQ(classify_four_step(dict, f, cfg).predicted_class, classify_four_step(dict, g, cfg).predicted_class);
    }
  }
}

TEST(FourStep, NoiselessSynthIsSeparable) {
  SynthSpec spec;
  spec.classes = 12;
  spec.d = 32;
  spec.noise_sigma = 0.0;
  spec.jitter = 0.0;
  spec.train_per_class = 5;
  spec.test_per_class = 1;
  const SynthData data = synth_generate(spec);
  SplitSpec range;
  range.range_max = 12.5;
  const DictionaryBundle b = build_dictionary(data.dict, fit_pca(data.dict, 10), 1e-3, range, 1);
  SolverConfig cfg;
  cfg.lambda = 1e-3;
  const FourStepClassifier clf(b.dict, cfg, &b.denoiser);
  for (const auto& r : data.train.records) {
    const auto res = clf.classify(r.features);
    EXPECT_DOUBLE_EQ(res.predicted_distance, r.distance);
  }
}

TEST(FourStep, SynthCrcBeatsChance) {
  SynthSpec spec;
  spec.seed = 1;
  const SynthData data = synth_generate(spec);
  const DictionaryBundle b = build_dictionary(data.dict, fit_pca(data.dict, 128), 1e-2);
  SolverConfig cfg;
  cfg.lambda = 1e-2;
  const FourStepClassifier clf(b.dict, cfg, &b.denoiser);
  std::size_t correct = 0;
  for (const auto& r : data.test.records)
    correct += clf.classify(r.features).predicted_class ==
               quantize_distance(r.distance, 0.5, 60.5, 1.0);
  const double acc = static_cast<double>(correct) / static_cast<double>(data.test.size());
  EXPECT_GE(acc, 10.0 / 60.0);
}

TEST(SolverNames, Parse) {
  EXPECT_EQ(parse_solver_method("fista"), SolverMethod::Fista);
  EXPECT_EQ(parse_solver_method("palm"), SolverMethod::Admm);
  EXPECT_THROW(parse_solver_method("homotopy?"), Error);
}
