#include <gtest/gtest.h>

#include <sstream>

#include "rbr/csen.hpp"
#include "rbr/synth.hpp"
#include "csen_fixtures.hpp"
#include "test_util.hpp"

using namespace rbr;
using namespace rbr::testing;

namespace {

// Straight-line evaluation of the 2-D stack from its parameter layout.
double oracle_forward_2d(const CsenModel& model, const Vector& input) {
  const GridLayout& g = model.layout;
  const std::size_t H = g.grid_rows, W = g.grid_cols;
  std::size_t li = 0;
  Vector z = input;
  if (is_compressive(model.mode)) {
    const LayerSpec& l = model.layers[li++];
    const std::size_t n = l.out.size(), m = l.in.size();
    z.assign(n, 0.0);
    for (std::size_t o = 0; o < n; ++o) {
      z[o] = model.params[l.bias_offset + o];
      for (std::size_t i = 0; i < m; ++i) z[o] += model.params[l.weight_offset + o * m + i] * input[i];
    }
  }
  ++li;  // reshape
  std::vector<std::vector<double>> grid(H, std::vector<double>(W, 0.0));
  for (std::size_t j = 0; j < z.size(); ++j) {
    const Cell c = column_to_cell(g, j);
    grid[c.row][c.col] = z[j];
  }
  const LayerSpec& c1 = model.layers[li++];
  const std::size_t F = c1.out.c, k = c1.kernel_h;
  const long pad = static_cast<long>(k - 1) / 2;
  std::vector<std::vector<std::vector<double>>> a1(H, std::vector<std::vector<double>>(W, std::vector<double>(F)));
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c)
      for (std::size_t f = 0; f < F; ++f) {
        double s = model.params[c1.bias_offset + f];
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) {
            const long rr = static_cast<long>(r + a) - pad, cc = static_cast<long>(c + b) - pad;
            if (rr < 0 || cc < 0 || rr >= static_cast<long>(H) || cc >= static_cast<long>(W)) continue;
            s += grid[rr][cc] * model.params[c1.weight_offset + (a * k + b) * F + f];
          }
        a1[r][c][f] = std::max(s, 0.0);
      }
  ++li;  // pool
  const std::size_t PH = H / g.block_rows, PW = W / g.block_cols;
  std::vector<std::vector<std::vector<double>>> a2(PH, std::vector<std::vector<double>>(PW, std::vector<double>(F)));
  for (std::size_t r = 0; r < PH; ++r)
    for (std::size_t c = 0; c < PW; ++c)
      for (std::size_t f = 0; f < F; ++f) {
        double mx = -1e300;
        for (std::size_t a = 0; a < g.block_rows; ++a)
          for (std::size_t b = 0; b < g.block_cols; ++b) mx = std::max(mx, a1[r * g.block_rows + a][c * g.block_cols + b][f]);
        a2[r][c][f] = mx;
      }
  const LayerSpec& c2 = model.layers[li++];
  Vector flat;
  for (std::size_t r = 0; r < PH; ++r)
    for (std::size_t c = 0; c < PW; ++c) {
      double s = model.params[c2.bias_offset];
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
          const long rr = static_cast<long>(r + a) - pad, cc = static_cast<long>(c + b) - pad;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(PH) || cc >= static_cast<long>(PW)) continue;
          for (std::size_t f = 0; f < F; ++f) s += a2[rr][cc][f] * model.params[c2.weight_offset + (a * k + b) * F + f];
        }
      flat.push_back(std::max(s, 0.0));
    }
  ++li;  // flatten
  const LayerSpec& d = model.layers[li];
  double logit = model.params[d.bias_offset];
  for (std::size_t i = 0; i < flat.size(); ++i) logit += flat[i] * model.params[d.weight_offset + i];
  return std::log1p(std::exp(logit));
}

}  // namespace

TEST(Architecture, ParameterCounts) {
  EXPECT_EQ(expected_param_count(ModelMode::Csen, 512, 1200, 60), 3326u);
  EXPECT_EQ(expected_param_count(ModelMode::Csen1D, 512, 1200, 60), 3326u);
  EXPECT_EQ(expected_param_count(ModelMode::ClCsen, 512, 1200, 60), 618926u);
  EXPECT_EQ(expected_param_count(ModelMode::ClCsen, 256, 1200, 60), 311726u);
  EXPECT_EQ(expected_param_count(ModelMode::ClCsen, 1024, 1200, 60), 1233326u);
}

TEST(Architecture, FullSizeShapeChain) {
  const GridLayout g = make_layout(60, 20);
  DenoiserMap dm;
  dm.B = Matrix(1200, 512);
  for (ModelMode mode : {ModelMode::Csen, ModelMode::ClCsen, ModelMode::Csen1D, ModelMode::ClCsen1D}) {
    const CsenModel model = build_model(mode, g, 512, &dm, 1);
    EXPECT_EQ(model.param_count(), expected_param_count(mode, 512, 1200, 60)) << to_string(mode);
  }
  const CsenModel model = build_model(ModelMode::Csen, g, 512, nullptr, 1);
  ASSERT_EQ(model.layers.size(), 6u);
  EXPECT_EQ(model.layers[1].out, (TensorShape{80, 15, 64}));
  EXPECT_EQ(model.layers[2].out, (TensorShape{20, 3, 64}));
  EXPECT_EQ(model.layers[3].out, (TensorShape{20, 3, 1}));
  EXPECT_EQ(model.layers[4].out, (TensorShape{60, 1, 1}));
  EXPECT_EQ(model.layers[5].out, (TensorShape{1, 1, 1}));
  const CsenModel one_d = build_model(ModelMode::Csen1D, g, 512, nullptr, 1);
  EXPECT_EQ(one_d.layers[1].out, (TensorShape{60, 1, 64}));
}

TEST(Architecture, Errors) {
  const GridLayout g = make_layout(60, 20);
  EXPECT_THROW(build_model(ModelMode::ClCsen, g, 512, nullptr, 1), Error);
  GridLayout bad = g;
  bad.block_rows = 3;
  EXPECT_THROW(build_model(ModelMode::Csen, bad, 512, nullptr, 1), Error);
  const CsenModel model = build_model(ModelMode::Csen, g, 512, nullptr, 1);
  EXPECT_THROW(forward(model, Vector(10, 0.0)), Error);
  EXPECT_EQ(parse_model_mode("cl-csen-1d"), ModelMode::ClCsen1D);
  EXPECT_THROW(parse_model_mode("csen2"), Error);
}

TEST(Forward, ZeroNetworkIsLnTwo) {
  const SmallWorld w = small_world(1);
  for (ModelMode mode : {ModelMode::Csen, ModelMode::ClCsen, ModelMode::Csen1D, ModelMode::ClCsen1D}) {
    CsenModel model = build_model(mode, w.bundle, 3, small_arch());
    std::fill(model.params.begin(), model.params.end(), 0.0);
    for (const auto& r : w.data.test.records) EXPECT_DOUBLE_EQ(predict(model, w.bundle, r.features), std::log(2.0));
  }
}

TEST(Forward, MatchesStraightLineOracle) {
  const SmallWorld w = small_world(2);
  for (ModelMode mode : {ModelMode::Csen, ModelMode::ClCsen}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      CsenModel model = build_model(mode, w.bundle, seed, small_arch());
      randomize(model, 10 + seed);
      for (const auto& r : w.data.test.records) {
        const Vector x = model_input(model, w.bundle, r.features);
        EXPECT_NEAR(forward(model, x), oracle_forward_2d(model, x), 1e-12);
      }
    }
  }
}

TEST(Forward, PositiveAndScaleInvariant) {
  const SmallWorld w = small_world(3);
  CsenModel model = build_model(ModelMode::ClCsen, w.bundle, 4, small_arch());
  randomize(model, 4);
  for (const auto& r : w.data.test.records) {
    Vector f = r.features;
    EXPECT_GT(predict(model, w.bundle, f), 0.0);
    // scaling about the PCA mean leaves the normalized query unchanged
    for (std::size_t k = 0; k < f.size(); ++k) f[k] = w.bundle.dict.feature_mean[k] + 2.5 * (f[k] - w.bundle.dict.feature_mean[k]);
    EXPECT_NEAR(predict(model, w.bundle, f), predict(model, w.bundle, r.features), 1e-9);
  }
}

TEST(Forward, BatchEqualsPerSample) {
  const SmallWorld w = small_world(4);
  CsenModel model = build_model(ModelMode::Csen, w.bundle, 5, small_arch());
  randomize(model, 5);
  const Vector batch = predict_batch(model, w.bundle, w.data.test);
  for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_EQ(batch[i], predict(model, w.bundle, w.data.test.records[i].features));
}

TEST(Gradients, SmoothL1) {
  EXPECT_DOUBLE_EQ(smooth_l1(0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(-3.0), 2.5);
  EXPECT_DOUBLE_EQ(smooth_l1(1.0), 0.5);
  const double xs[] = {-2.3, -0.7, 0.0, 0.4, 1.8};
  const double pred[] = {1.0, 2.0, 5.0};
  const double target[] = {1.5, 0.0, 5.25};
  EXPECT_DOUBLE_EQ(smooth_l1_sum(pred, target), 0.125 + 1.5 + 0.03125);
  for (double x : xs) {
    const double h = 1e-6;
    EXPECT_NEAR((smooth_l1(x + h) - smooth_l1(x - h)) / (2 * h), smooth_l1_grad(x), 1e-8);
  }
}

TEST(Gradients, SoftplusHead) {
  for (double z : {-40.0, -3.0, 0.0, 2.0, 40.0}) {
    const double h = 1e-6;
    EXPECT_NEAR((softplus(z + h) - softplus(z - h)) / (2 * h), sigmoid(z), 1e-8);
  }
  EXPECT_DOUBLE_EQ(softplus(0.0), std::log(2.0));
  EXPECT_GT(softplus(-30.0), 0.0);
  EXPECT_EQ(softplus(800.0), 800.0);
}

TEST(Gradients, FiniteDifferencesAllModes) {
  const SmallWorld w = small_world(5);
  for (ModelMode mode : {ModelMode::Csen, ModelMode::ClCsen, ModelMode::Csen1D, ModelMode::ClCsen1D}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      CsenModel model = build_model(mode, w.bundle, seed, small_arch());
      randomize(model, 100 + seed);
      const auto& r = w.data.train.records[seed % w.data.train.size()];
      const Vector x = model_input(model, w.bundle, r.features);
      // labels on both sides of the prediction exercise both smooth-ℓ1 branches
      const double pred = forward(model, x);
      for (double label : {pred + 0.3, pred - 4.0}) EXPECT_LT(gradient_error(model, x, label), 1e-4) << to_string(mode) << " seed " << seed;
    }
  }
}

TEST(Gradients, InputScaleAndAccumulation) {
  const SmallWorld w = small_world(6);
  CsenModel model = build_model(ModelMode::Csen, w.bundle, 1, small_arch());
  randomize(model, 7);
  model.input_scale = 3.0;
  const Vector x = model_input(model, w.bundle, w.data.train.records[0].features);
  EXPECT_LT(gradient_error(model, x, 1.0), 1e-4);
  ForwardCache cache;
  forward(model, x, cache);
  Vector once(model.params.size(), 0.0), twice(model.params.size(), 0.0);
  backward(model, cache, 0.5, once);
  backward(model, cache, 0.5, twice);
  backward(model, cache, 0.5, twice);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(twice[i], 2.0 * once[i]);
}

TEST(Training, ZeroLearningRateKeepsParameters) {
  const SmallWorld w = small_world(7);
  const CsenModel model = build_model(ModelMode::Csen, w.bundle, 2, small_arch());
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 0.0;
  cfg.max_reinit = 0;
  const TrainResult res = train(model, w.bundle, w.data.train, w.data.test, cfg);
  EXPECT_EQ(res.best_model.params, model.params);
  EXPECT_EQ(res.history.size(), 2u);
  EXPECT_EQ(res.history[0].val_loss, res.history[1].val_loss);
  EXPECT_EQ(res.best_epoch, 1u);
}

TEST(Training, MemorizesTinySet) {
  const SmallWorld w = small_world(8);
  ArchOptions arch = small_arch();
  arch.filters = 4;
  const CsenModel model = build_model(ModelMode::ClCsen, w.bundle, 3, arch);
  FeatureDataset tiny = w.data.train;
  tiny.records.resize(4);
  tiny.records.push_back(w.data.train.records.back());
  TrainConfig cfg;
  cfg.epochs = 400;
  cfg.batch_size = 5;
  cfg.lr = 1e-2;
  cfg.normalize_input = true;
  cfg.init_output_bias = true;
  cfg.max_restarts = 4;
  const TrainResult res = train(model, w.bundle, tiny, tiny, cfg);
  EXPECT_LT(res.history.back().val_loss, 0.05 * res.history.front().val_loss + 1e-3);
  EXPECT_LT(res.history[res.best_epoch - 1].val_loss, 0.02);
}

TEST(Training, DeterministicAndRoundTrips) {
  const SmallWorld w = small_world(9);
  const CsenModel model = build_model(ModelMode::Csen, w.bundle, 4, small_arch());
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 11;
  cfg.normalize_input = true;
  cfg.init_output_bias = true;
  const TrainResult a = train(model, w.bundle, w.data.train, w.data.test, cfg);
  const TrainResult b = train(model, w.bundle, w.data.train, w.data.test, cfg);
  EXPECT_EQ(a.best_model.params, b.best_model.params);
  EXPECT_EQ(history_csv(a.history), history_csv(b.history));
  EXPECT_NE(a.best_model.input_scale, 1.0);

  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  save_model(a.best_model, ss);
  const std::string bytes = ss.str();
  const CsenModel r = load_model(ss);
  EXPECT_EQ(r.params, a.best_model.params);
  EXPECT_EQ(r.input_scale, a.best_model.input_scale);
  EXPECT_EQ(r.mode, a.best_model.mode);
  EXPECT_EQ(r.layout, a.best_model.layout);
  EXPECT_EQ(r.reshape_perm, a.best_model.reshape_perm);
  for (const auto& rec : w.data.test.records)
    EXPECT_EQ(predict(r, w.bundle, rec.features), predict(a.best_model, w.bundle, rec.features));
  std::stringstream again(std::ios::in | std::ios::out | std::ios::binary);
  save_model(r, again);
  EXPECT_EQ(again.str(), bytes);

  std::stringstream bad("RBM2xxxxxxxx");
  EXPECT_THROW(load_model(bad), Error);
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_model(cut), Error);
}

TEST(Training, QuantizedLabels) {
  TrainConfig cfg;
  EXPECT_EQ(training_label(7.3, cfg), 7.3);
  cfg.label_quantized = true;
  EXPECT_EQ(training_label(7.3, cfg), 7.0);
  EXPECT_EQ(training_label(0.5, cfg), 1.0);
}

TEST(Training, RejectsBadInput) {
  const SmallWorld w = small_world(10);
  const CsenModel model = build_model(ModelMode::Csen, w.bundle, 4, small_arch());
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(train(model, w.bundle, w.data.train, w.data.test, cfg), Error);
  cfg.epochs = 1;
  FeatureDataset empty = w.data.test;
  empty.records.clear();
  EXPECT_THROW(train(model, w.bundle, w.data.train, empty, cfg), Error);
  PreparedSet ts = prepare_set(model, w.bundle, w.data.train, cfg);
  const PreparedSet vs = prepare_set(model, w.bundle, w.data.test, cfg);
  ts.labels[3] = std::nan("");
  cfg.max_reinit = 0;
  try {
    train(model, ts, vs, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}
