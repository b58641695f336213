#pragma once

// Compressed representative dictionary: PCA compression A, unit-norm atoms
// D = A·(Φ − mean), the regularized least-squares denoiser
// B = (DᵀD + λI)⁻¹Dᵀ and the 2-D layout that groups each distance class
// into one pooling window.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "rbr/binio.hpp"
#include "rbr/dataio.hpp"
#include "rbr/error.hpp"
#include "rbr/numlin.hpp"

namespace rbr {

struct Pca {
  Matrix A;     // m×d, orthonormal rows
  Vector mean;  // length d
};

struct Dictionary {
  Matrix D;  // m×n, unit-norm columns sorted by class
  Matrix A;  // m×d
  double lambda = 0.0;
  std::size_t classes = 0;
  std::size_t per_class = 0;  // 0 when the class histogram is not uniform
  std::vector<std::size_t> class_of_column;
  Vector feature_mean;

  std::size_t m() const noexcept { return D.rows(); }
  std::size_t n() const noexcept { return D.cols(); }
  std::size_t d() const noexcept { return A.cols(); }
};

struct DenoiserMap {
  Matrix B;  // n×m
  double lambda = 0.0;
};

struct GridLayout {
  std::size_t grid_rows = 0;  // H
  std::size_t grid_cols = 0;  // W
  std::size_t block_rows = 0;  // h
  std::size_t block_cols = 0;  // w
  std::size_t blocks_per_row = 0;
  std::size_t classes = 0;
  std::size_t per_class = 0;

  std::size_t size() const noexcept { return grid_rows * grid_cols; }
  bool operator==(const GridLayout&) const = default;
};

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const Cell&) const = default;
};

enum class ProxyKind { Lmmse, MaxCorrelation };

// ----------------------------------------------------------------------
// Layout
// ----------------------------------------------------------------------

/// Block (h, w) is the most-square factor pair of P with h ≤ w. Blocks per
/// row default to the smallest divisor of C that is at least min(3, C),
/// which gives 3 for C = 60 and hence the 80×15 grid of 4×5 windows.
inline GridLayout make_layout(std::size_t classes, std::size_t per_class, std::size_t blocks_per_row = 0) {
  if (classes == 0 || per_class == 0) throw Error(ErrorCode::LayoutMismatch, "layout needs C ≥ 1 and P ≥ 1");
  GridLayout g;
  g.classes = classes;
  g.per_class = per_class;
  for (std::size_t h = 1; h * h <= per_class; ++h)
    if (per_class % h == 0) g.block_rows = h;
  g.block_cols = per_class / g.block_rows;

  if (blocks_per_row == 0) {
    const std::size_t floor_g = std::min<std::size_t>(3, classes);
    for (std::size_t cand = floor_g; cand <= classes; ++cand)
      if (classes % cand == 0) {
        blocks_per_row = cand;
        break;
      }
  }
  if (classes % blocks_per_row != 0)
    throw Error(ErrorCode::LayoutMismatch, "blocks per row must divide the class count");
  g.blocks_per_row = blocks_per_row;
  g.grid_rows = (classes / blocks_per_row) * g.block_rows;
  g.grid_cols = blocks_per_row * g.block_cols;
  return g;
}

inline Cell column_to_cell(const GridLayout& layout, std::size_t j) {
  const std::size_t k = j / layout.per_class;
  const std::size_t within = j % layout.per_class;
  const std::size_t block_row = k / layout.blocks_per_row;
  const std::size_t block_col = k % layout.blocks_per_row;
  return {block_row * layout.block_rows + within / layout.block_cols,
          block_col * layout.block_cols + within % layout.block_cols};
}

/// perm[j] = row-major grid index of dictionary column j.
inline std::vector<std::size_t> layout_permutation(const GridLayout& layout) {
  std::vector<std::size_t> perm(layout.size());
  for (std::size_t j = 0; j < perm.size(); ++j) {
    const Cell c = column_to_cell(layout, j);
    perm[j] = c.row * layout.grid_cols + c.col;
  }
  return perm;
}

// ----------------------------------------------------------------------
// PCA
// ----------------------------------------------------------------------

inline std::size_t compressed_dim(std::size_t d, double compression_ratio) {
  const auto m = static_cast<std::size_t>(std::llround(compression_ratio * static_cast<double>(d)));
  return std::max<std::size_t>(m, 1);
}

/// Top-m principal directions of the centered samples. When there are
/// fewer samples than features the n×n Gram matrix is decomposed and the
/// directions are mapped back through the data.
inline Pca fit_pca(const FeatureDataset& samples, std::size_t m) {
  const std::size_t n = samples.size();
  const std::size_t d = samples.d;
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "PCA needs at least two samples");
  if (m == 0 || m > std::min(d, n))
    throw Error(ErrorCode::InvalidArgument, "PCA dimension m=" + std::to_string(m) + " exceeds min(d, n)");

  Pca pca{Matrix(m, d), Vector(d, 0.0)};
  for (const auto& r : samples.records)
    for (std::size_t k = 0; k < d; ++k) pca.mean[k] += r.features[k];
  for (double& v : pca.mean) v /= static_cast<double>(n);

  Matrix xc(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = samples.records[i].features;
    if (f.size() != d) throw Error(ErrorCode::DimensionMismatch, "PCA sample has wrong length");
    for (std::size_t k = 0; k < d; ++k) xc(i, k) = f[k] - pca.mean[k];
  }

  const bool use_gram = n < d;
  const EigenDecomposition eig = eig_sym_descending(use_gram ? matmul_nt(xc, xc) : gram(xc));
  const double top = eig.values.empty() ? 0.0 : eig.values[0];
  for (std::size_t i = 0; i < m; ++i)
    if (!(top > 0.0) || !(eig.values[i] > 1e-10 * top))
      throw Error(ErrorCode::RankDeficient, "only " + std::to_string(i) + " positive principal variances, need " +
                                                std::to_string(m));

  for (std::size_t i = 0; i < m; ++i) {
    auto row = pca.A.row(i);
    if (use_gram) {
      const Vector u = eig.vectors.col(i);
      const Vector dir = matvec_t(xc, u);
      std::copy(dir.begin(), dir.end(), row.begin());
    } else {
      for (std::size_t k = 0; k < d; ++k) row[k] = eig.vectors(k, i);
    }
    const double nr = norm2(row);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < d; ++k)
      if (std::abs(row[k]) > std::abs(row[arg])) arg = k;
    const double scale = (row[arg] < 0.0 ? -1.0 : 1.0) / nr;
    for (double& v : row) v *= scale;
  }
  return pca;
}

// ----------------------------------------------------------------------
// Dictionary and denoiser
// ----------------------------------------------------------------------

/// y = A·(feature − mean), scaled to unit ℓ2 norm.
inline Vector compress(const Matrix& A, const Vector& mean, std::span<const double> feature) {
  if (feature.size() != A.cols())
    throw Error(ErrorCode::DimensionMismatch, "feature length " + std::to_string(feature.size()) +
                                                  " does not match d=" + std::to_string(A.cols()));
  Vector centered(feature.begin(), feature.end());
  for (std::size_t k = 0; k < centered.size(); ++k) centered[k] -= mean[k];
  return matvec(A, centered);
}

inline Vector compress_query(const Dictionary& dict, std::span<const double> feature) {
  Vector y = compress(dict.A, dict.feature_mean, feature);
  const double ny = norm2(y);
  if (!(ny > 0.0)) throw Error(ErrorCode::ZeroNormQuery, "compressed query is the zero vector");
  for (double& v : y) v /= ny;
  return y;
}

/// B = (DᵀD + λI)⁻¹Dᵀ. For m < n the equivalent m×m system
/// Dᵀ(DDᵀ + λI)⁻¹ is solved instead.
inline DenoiserMap build_denoiser(const Matrix& D, double lambda) {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be non-negative");
  DenoiserMap dm{Matrix(), lambda};
  if (D.rows() < D.cols()) {
    const Matrix inner = add_diagonal(matmul_nt(D, D), lambda);
    dm.B = transpose(solve_spd(inner, D));
  } else {
    const Matrix normal = add_diagonal(gram(D), lambda);
    dm.B = solve_spd(normal, transpose(D));
  }
  return dm;
}

/// Compresses and normalizes each record into a column of D. Columns are
/// ordered by class (stable within a class). Classes need not be uniform.
inline Dictionary assemble_dictionary(const FeatureDataset& samples, const Pca& pca, double lambda,
                                      const SplitSpec& range) {
  if (samples.size() == 0) throw Error(ErrorCode::EmptyInput, "dictionary sample set is empty");
  Dictionary dict;
  dict.A = pca.A;
  dict.feature_mean = pca.mean;
  dict.lambda = lambda;
  dict.classes = num_classes(range.range_min, range.range_max, range.bin_width);

  std::vector<std::size_t> cls(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    cls[i] = quantize_distance(samples.records[i].distance, range.range_min, range.range_max, range.bin_width);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cls[a] < cls[b]; });

  const std::size_t m = pca.A.rows();
  dict.D = Matrix(m, samples.size());
  dict.class_of_column.resize(samples.size());
  for (std::size_t j = 0; j < order.size(); ++j) {
    const Vector atom = compress(pca.A, pca.mean, samples.records[order[j]].features);
    const double na = norm2(atom);
    if (!(na > 0.0))
      throw Error(ErrorCode::ZeroNormAtom, "record '" + samples.records[order[j]].source_id + "' compresses to zero");
    for (std::size_t r = 0; r < m; ++r) dict.D(r, j) = atom[r] / na;
    dict.class_of_column[j] = cls[order[j]];
  }

  std::vector<std::size_t> hist(dict.classes, 0);
  for (std::size_t c : dict.class_of_column) ++hist[c];
  const bool uniform = std::all_of(hist.begin(), hist.end(), [&](std::size_t h) { return h == hist[0]; });
  dict.per_class = uniform ? hist[0] : 0;
  return dict;
}

struct DictionaryBundle {
  Dictionary dict;
  DenoiserMap denoiser;
  GridLayout layout;
};

inline DictionaryBundle build_dictionary(const FeatureDataset& dict_set, const Pca& pca, double lambda,
                                         const SplitSpec& range = {}, std::size_t blocks_per_row = 0) {
  if (!(lambda > 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be positive");
  DictionaryBundle b;
  b.dict = assemble_dictionary(dict_set, pca, lambda, range);
  if (b.dict.per_class == 0)
    throw Error(ErrorCode::LayoutMismatch, "dictionary set is not class-uniform");
  b.denoiser = build_denoiser(b.dict.D, lambda);
  b.layout = make_layout(b.dict.classes, b.dict.per_class, blocks_per_row);
  return b;
}

/// x̃ = B·y (LMMSE) or Dᵀy (maximum correlation) for the normalized compressed query y.
inline Vector proxy(const DenoiserMap& dm, const Dictionary& dict, std::span<const double> feature,
                    ProxyKind kind = ProxyKind::Lmmse) {
  const Vector y = compress_query(dict, feature);
  return kind == ProxyKind::Lmmse ? matvec(dm.B, y) : matvec_t(dict.D, y);
}

// ----------------------------------------------------------------------
// RBD1 bundle: magic | u32 m,n,C,P,H,W,h,w,d | f64 lambda | mean | A | D | B
// ----------------------------------------------------------------------

inline void save_bundle(const DictionaryBundle& b, std::ostream& os) {
  const auto& dict = b.dict;
  binio::put_magic(os, "RBD1");
  for (std::size_t v : {dict.m(), dict.n(), dict.classes, dict.per_class, b.layout.grid_rows, b.layout.grid_cols,
                        b.layout.block_rows, b.layout.block_cols, dict.d()})
    binio::put_u32(os, static_cast<std::uint32_t>(v));
  binio::put_f64(os, dict.lambda);
  for (double v : dict.feature_mean) binio::put_f64(os, v);
  for (double v : dict.A.data()) binio::put_f64(os, v);
  for (double v : dict.D.data()) binio::put_f64(os, v);
  for (double v : b.denoiser.B.data()) binio::put_f64(os, v);
}

inline void save_bundle(const DictionaryBundle& b, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  save_bundle(b, os);
  if (!os) throw Error(ErrorCode::Io, "write failed for '" + path + "'");
}

inline DictionaryBundle load_bundle(std::istream& is, const std::string& source = "<stream>") {
  binio::Reader in(is, source);
  in.expect_magic("RBD1");
  const std::size_t m = in.u32("m"), n = in.u32("n"), classes = in.u32("C"), per_class = in.u32("P");
  const std::size_t grid_rows = in.u32("H"), grid_cols = in.u32("W"), block_rows = in.u32("h"),
                    block_cols = in.u32("w"), d = in.u32("d");
  if (classes * per_class != n || grid_rows * grid_cols != n || block_rows * block_cols != per_class ||
      block_cols == 0 || grid_cols % block_cols != 0)
    throw Error(ErrorCode::LayoutMismatch, source + ": inconsistent bundle header");
  DictionaryBundle b;
  auto& dict = b.dict;
  dict.lambda = in.f64("lambda");
  dict.classes = classes;
  dict.per_class = per_class;
  auto read_block = [&](std::vector<double>& out, std::size_t count, const char* field) {
    out.resize(count);
    for (double& v : out) v = in.f64(field);
  };
  read_block(dict.feature_mean, d, "mean");
  std::vector<double> buf;
  read_block(buf, m * d, "A");
  dict.A = Matrix(m, d, std::move(buf));
  read_block(buf, m * n, "D");
  dict.D = Matrix(m, n, std::move(buf));
  read_block(buf, n * m, "B");
  b.denoiser = DenoiserMap{Matrix(n, m, std::move(buf)), dict.lambda};
  dict.class_of_column.resize(n);
  for (std::size_t j = 0; j < n; ++j) dict.class_of_column[j] = j / per_class;
  b.layout = make_layout(classes, per_class, grid_cols / block_cols);
  if (b.layout.grid_rows != grid_rows || b.layout.block_rows != block_rows)
    throw Error(ErrorCode::LayoutMismatch, source + ": layout does not match the block rule");
  return b;
}

inline DictionaryBundle load_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open dictionary bundle '" + path + "'");
  return load_bundle(is, path);
}

}  // namespace rbr
