#pragma once

// Class-template feature generator for desk-scale runs without real data.
// Class c owns a random unit template t_c; a sample of class c is
//   t_c·(1 + ε) + σ·g,   ε ~ U(−0.1, 0.1),  g ~ N(0, I)
// with distance = bin midpoint + jitter·U(−0.5, 0.5)·bin_width.

#include <cstdint>
#include <string>

#include "rbr/dataio.hpp"
#include "rbr/error.hpp"
#include "rbr/numlin.hpp"
#include "rbr/rng.hpp"

namespace rbr {

struct SynthSpec {
  std::size_t classes = 60;
  std::size_t dict_per_class = 20;
  std::size_t train_per_class = 40;
  std::size_t test_per_class = 40;
  std::size_t d = 256;
  double noise_sigma = 0.1;
  double scale_spread = 0.1;
  double jitter = 1.0;
  double range_min = 0.5;
  double bin_width = 1.0;
  std::uint64_t seed = 0;
};

struct SynthData {
  FeatureDataset dict;
  FeatureDataset train;
  FeatureDataset test;

  FeatureDataset all() const { return concat(concat(dict, train), test); }
};

inline SynthData synth_generate(const SynthSpec& spec) {
  if (spec.classes == 0 || spec.d < spec.classes)
    throw Error(ErrorCode::InvalidArgument, "synthetic generator needs d ≥ C ≥ 1");
  if (spec.noise_sigma < 0.0 || spec.jitter < 0.0 || spec.jitter > 1.0)
    throw Error(ErrorCode::InvalidArgument, "noise sigma must be ≥ 0 and jitter within [0, 1]");

  Rng trng(derive_seed(spec.seed, 10));
  std::vector<Vector> templates(spec.classes, Vector(spec.d));
  for (auto& t : templates) {
    double nrm = 0.0;
    while (nrm == 0.0) {
      for (double& v : t) v = trng.gaussian();
      nrm = norm2(t);
    }
    for (double& v : t) v /= nrm;
  }

  auto fill = [&](FeatureDataset& ds, std::size_t per_class, std::uint64_t stream, const char* tag) {
    Rng rng(derive_seed(spec.seed, stream));
    ds.d = spec.d;
    ds.backbone_tag = "synthetic";
    for (std::size_t c = 0; c < spec.classes; ++c) {
      for (std::size_t i = 0; i < per_class; ++i) {
        FeatureRecord r;
        const double eps = rng.uniform(-spec.scale_spread, spec.scale_spread);
        r.features.resize(spec.d);
        for (std::size_t k = 0; k < spec.d; ++k)
          r.features[k] = templates[c][k] * (1.0 + eps) + spec.noise_sigma * rng.gaussian();
        const double u = rng.uniform() - 0.5;
        r.distance = spec.range_min + (static_cast<double>(c) + 0.5 + spec.jitter * u) * spec.bin_width;
        r.source_id = std::string("synth:") + tag + ":" + std::to_string(c) + ":" + std::to_string(i);
        ds.records.push_back(std::move(r));
      }
    }
  };
  SynthData out;
  fill(out.dict, spec.dict_per_class, 11, "dict");
  fill(out.train, spec.train_per_class, 12, "train");
  fill(out.test, spec.test_per_class, 13, "test");
  return out;
}

}  // namespace rbr
