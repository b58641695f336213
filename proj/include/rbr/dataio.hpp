#pragma once

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rbr/binio.hpp"
#include "rbr/error.hpp"
#include "rbr/numlin.hpp"
#include "rbr/rng.hpp"

namespace rbr {

struct FeatureRecord {
  Vector features;
  double distance = 0.0;  // meters
  std::string source_id;

  bool operator==(const FeatureRecord&) const = default;
};

struct FeatureDataset {
  std::size_t d = 0;
  std::vector<FeatureRecord> records;
  std::string backbone_tag;

  std::size_t size() const noexcept { return records.size(); }
  bool operator==(const FeatureDataset&) const = default;
};

struct SplitSpec {
  std::uint64_t seed = 0;
  std::size_t dict_per_class = 20;
  double train_fraction = 0.5;
  double val_fraction_of_train = 0.20;
  double range_min = 0.5;
  double range_max = 60.5;
  double bin_width = 1.0;
  bool dict_with_replacement = false;
};

struct Splits {
  FeatureDataset dict;
  FeatureDataset train;
  FeatureDataset val;
  FeatureDataset test;
};

// ----------------------------------------------------------------------
// Distance quantization
// ----------------------------------------------------------------------

inline std::size_t num_classes(double range_min, double range_max, double bin_width = 1.0) {
  if (!(range_max > range_min) || !(bin_width > 0.0))
    throw Error(ErrorCode::InvalidArgument, "distance range must be non-empty with positive bin width");
  const auto c = static_cast<long long>(std::llround((range_max - range_min) / bin_width));
  if (c < 1) throw Error(ErrorCode::InvalidArgument, "distance range holds no bins");
  return static_cast<std::size_t>(c);
}

/// Class c covers [range_min + c·w, range_min + (c+1)·w); the top edge folds into the last class.
inline std::size_t quantize_distance(double d, double range_min, double range_max, double bin_width = 1.0) {
  if (!(d >= range_min && d <= range_max))
    throw Error(ErrorCode::OutOfRange, "distance " + std::to_string(d) + " outside [" +
                                           std::to_string(range_min) + ", " + std::to_string(range_max) + "]");
  const std::size_t classes = num_classes(range_min, range_max, bin_width);
  const double raw = std::floor((d - range_min) / bin_width);
  if (raw <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(raw), classes - 1);
}

inline double bin_midpoint(std::size_t class_index, double range_min, double bin_width = 1.0) {
  return range_min + (static_cast<double>(class_index) + 0.5) * bin_width;
}

// ----------------------------------------------------------------------
// RBF1 feature files
// ----------------------------------------------------------------------

inline constexpr std::size_t kBackboneTagBytes = 32;

inline void validate_dataset(const FeatureDataset& ds, const std::string& where) {
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    if (r.features.size() != ds.d)
      throw Error(ErrorCode::DimensionMismatch, where + ": record " + std::to_string(i) + " has " +
                                                    std::to_string(r.features.size()) + " features, expected " +
                                                    std::to_string(ds.d));
    if (!all_finite(r.features) || !std::isfinite(r.distance))
      throw Error(ErrorCode::NonFiniteValue, where + ": record " + std::to_string(i) + " is not finite");
  }
}

inline void write_features(const FeatureDataset& ds, std::ostream& os) {
  validate_dataset(ds, "write_features");
  if (ds.backbone_tag.size() > kBackboneTagBytes)
    throw Error(ErrorCode::InvalidArgument, "backbone tag longer than 32 bytes");
  binio::put_magic(os, "RBF1");
  binio::put_u32(os, 1);
  binio::put_u32(os, static_cast<std::uint32_t>(ds.d));
  binio::put_u64(os, ds.records.size());
  std::string tag = ds.backbone_tag;
  tag.resize(kBackboneTagBytes, '\0');
  os.write(tag.data(), kBackboneTagBytes);
  for (const auto& r : ds.records) {
    for (double f : r.features) binio::put_f32(os, static_cast<float>(f));
    binio::put_f64(os, r.distance);
    binio::put_u32(os, static_cast<std::uint32_t>(r.source_id.size()));
    os.write(r.source_id.data(), static_cast<std::streamsize>(r.source_id.size()));
  }
}

inline void write_features(const FeatureDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  write_features(ds, os);
  if (!os) throw Error(ErrorCode::Io, "write failed for '" + path + "'");
}

inline FeatureDataset read_features(std::istream& is, const std::string& source = "<stream>") {
  binio::Reader in(is, source);
  in.expect_magic("RBF1");
  const std::uint32_t version = in.u32("version");
  if (version != 1) throw Error(ErrorCode::BadMagic, source + ": unsupported RBF1 version " + std::to_string(version));
  FeatureDataset ds;
  ds.d = in.u32("d");
  const std::uint64_t count = in.u64("record count");
  std::string tag(kBackboneTagBytes, '\0');
  in.bytes(tag.data(), kBackboneTagBytes, "backbone tag");
  ds.backbone_tag = tag.substr(0, tag.find('\0'));
  ds.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureRecord r;
    r.features.resize(ds.d);
    for (std::size_t k = 0; k < ds.d; ++k) {
      const float f = in.f32("features");
      if (!std::isfinite(f))
        throw Error(ErrorCode::NonFiniteValue, source + ": record " + std::to_string(i) + " has a non-finite feature");
      r.features[k] = f;
    }
    r.distance = in.f64("distance");
    if (!std::isfinite(r.distance))
      throw Error(ErrorCode::NonFiniteValue, source + ": record " + std::to_string(i) + " has a non-finite distance");
    const std::uint32_t id_len = in.u32("id length");
    r.source_id.assign(id_len, '\0');
    in.bytes(r.source_id.data(), id_len, "source id");
    ds.records.push_back(std::move(r));
  }
  return ds;
}

inline FeatureDataset read_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open feature file '" + path + "'");
  return read_features(is, path);
}

// ----------------------------------------------------------------------
// CSV interchange: "# backbone=<tag>" then "source_id,distance_m,f0..f{d-1}"
// ----------------------------------------------------------------------

inline void write_features_csv(const FeatureDataset& ds, std::ostream& os) {
  validate_dataset(ds, "write_features_csv");
  os << "# backbone=" << ds.backbone_tag << '\n';
  os << "source_id,distance_m";
  for (std::size_t k = 0; k < ds.d; ++k) os << ",f" << k;
  os << '\n';
  char buf[64];
  for (const auto& r : ds.records) {
    if (r.source_id.find_first_of(",\n") != std::string::npos)
      throw Error(ErrorCode::InvalidArgument, "source id '" + r.source_id + "' cannot be written as CSV");
    std::snprintf(buf, sizeof buf, "%.17g", r.distance);
    os << r.source_id << ',' << buf;
    for (double f : r.features) {
      std::snprintf(buf, sizeof buf, "%.9g", f);
      os << ',' << buf;
    }
    os << '\n';
  }
}

inline FeatureDataset read_features_csv(std::istream& is, const std::string& source = "<stream>") {
  FeatureDataset ds;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# backbone=", 0) == 0) {
      ds.backbone_tag = line.substr(11);
      continue;
    }
    if (line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!have_header) {
      if (cells.size() < 3 || cells[0] != "source_id" || cells[1] != "distance_m")
        throw Error(ErrorCode::BadMagic, source + ": missing 'source_id,distance_m,...' header");
      ds.d = cells.size() - 2;
      have_header = true;
      continue;
    }
    if (cells.size() != ds.d + 2)
      throw Error(ErrorCode::DimensionMismatch, source + ":" + std::to_string(line_no) + ": expected " +
                                                    std::to_string(ds.d + 2) + " columns");
    FeatureRecord r;
    r.source_id = cells[0];
    try {
      r.distance = std::stod(cells[1]);
      r.features.reserve(ds.d);
      for (std::size_t k = 0; k < ds.d; ++k) r.features.push_back(std::stod(cells[k + 2]));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::NonFiniteValue, source + ":" + std::to_string(line_no) + ": unparsable number");
    }
    ds.records.push_back(std::move(r));
  }
  if (!have_header) throw Error(ErrorCode::BadMagic, source + ": empty CSV");
  validate_dataset(ds, source);
  return ds;
}

// ----------------------------------------------------------------------
// Splits
// ----------------------------------------------------------------------

/// Range filter, seeded shuffle, class-uniform dictionary draw, then a
/// train/test cut of the remainder and a validation tail of the train part.
inline Splits make_splits(const FeatureDataset& ds, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) ||
      !(spec.val_fraction_of_train > 0.0 && spec.val_fraction_of_train < 1.0))
    throw Error(ErrorCode::InvalidArgument, "split fractions must lie in (0, 1)");
  const std::size_t classes = num_classes(spec.range_min, spec.range_max, spec.bin_width);

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const double d = ds.records[i].distance;
    if (d >= spec.range_min && d < spec.range_max) kept.push_back(i);
  }
  Rng rng(derive_seed(spec.seed, 0));
  rng.shuffle(kept);

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t idx : kept)
    by_class[quantize_distance(ds.records[idx].distance, spec.range_min, spec.range_max, spec.bin_width)]
        .push_back(idx);

  auto empty_like = [&] {
    FeatureDataset out;
    out.d = ds.d;
    out.backbone_tag = ds.backbone_tag;
    return out;
  };
  Splits s{empty_like(), empty_like(), empty_like(), empty_like()};

  std::vector<char> used(ds.records.size(), 0);
  Rng draw(derive_seed(spec.seed, 1));
  for (std::size_t c = 0; c < classes; ++c) {
    const auto& pool = by_class[c];
    if (pool.size() < spec.dict_per_class) {
      if (!spec.dict_with_replacement || pool.empty())
        throw Error(ErrorCode::InsufficientClassSamples,
                    "class " + std::to_string(c) + " has " + std::to_string(pool.size()) + " samples, need " +
                        std::to_string(spec.dict_per_class));
      for (std::size_t k = 0; k < spec.dict_per_class; ++k) {
        const std::size_t idx = pool[static_cast<std::size_t>(draw.below(pool.size()))];
        s.dict.records.push_back(ds.records[idx]);
        used[idx] = 1;
      }
      continue;
    }
    // pool is already in shuffled order, so its head is a uniform draw without replacement
    for (std::size_t k = 0; k < spec.dict_per_class; ++k) {
      s.dict.records.push_back(ds.records[pool[k]]);
      used[pool[k]] = 1;
    }
  }

  std::vector<std::size_t> rest;
  for (std::size_t idx : kept)
    if (!used[idx]) rest.push_back(idx);
  const auto n_train_pool =
      static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(rest.size())));
  std::vector<std::size_t> train_pool(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_train_pool));
  for (std::size_t i = n_train_pool; i < rest.size(); ++i) s.test.records.push_back(ds.records[rest[i]]);

  Rng val_rng(derive_seed(spec.seed, 2));
  val_rng.shuffle(train_pool);
  const auto n_val =
      static_cast<std::size_t>(std::llround(spec.val_fraction_of_train * static_cast<double>(train_pool.size())));
  const std::size_t n_train = train_pool.size() - n_val;
  for (std::size_t i = 0; i < train_pool.size(); ++i)
    (i < n_train ? s.train : s.val).records.push_back(ds.records[train_pool[i]]);
  return s;
}

/// Concatenation keeping the first operand's metadata.
inline FeatureDataset concat(const FeatureDataset& a, const FeatureDataset& b) {
  if (a.d != b.d) throw Error(ErrorCode::DimensionMismatch, "cannot concatenate datasets of different d");
  FeatureDataset out = a;
  out.records.insert(out.records.end(), b.records.begin(), b.records.end());
  return out;
}

}  // namespace rbr
