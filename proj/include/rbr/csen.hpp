#pragma once

// Compact convolutional support-estimation regressors.
//
//   CSEN        x̃ (n) → Reshape H×W → Conv 5×5×64 ReLU → MaxPool h×w
//               → Conv 5×5×1 ReLU → Flatten C → Dense 1 SoftPlus
//   CL-CSEN     y (m) → ProxyAffine m→n (initialized to B) → CSEN stack
//   *-1D        same chain on the length-n signal with 25-tap convolutions
//               and pooling windows of P samples
//
// Activations are stored H×W×C (channel last, row-major). A 1-D signal of
// length L is the H=L, W=1 case, so a single convolution / pooling kernel
// serves both variants.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "rbr/binio.hpp"
#include "rbr/dataio.hpp"
#include "rbr/dictionary.hpp"
#include "rbr/error.hpp"
#include "rbr/numlin.hpp"
#include "rbr/rng.hpp"

namespace rbr {

enum class LayerKind : std::uint32_t { ProxyAffine, Reshape, Conv2D, Conv1D, MaxPool2D, MaxPool1D, Flatten, Dense };
enum class Activation : std::uint32_t { None, ReLU, SoftPlus };
enum class ModelMode : std::uint32_t { Csen, ClCsen, Csen1D, ClCsen1D };

inline const char* to_string(ModelMode mode) {
  switch (mode) {
    case ModelMode::Csen: return "csen";
    case ModelMode::ClCsen: return "cl-csen";
    case ModelMode::Csen1D: return "csen-1d";
    case ModelMode::ClCsen1D: return "cl-csen-1d";
  }
  return "?";
}

inline ModelMode parse_model_mode(const std::string& name) {
  if (name == "csen") return ModelMode::Csen;
  if (name == "cl-csen") return ModelMode::ClCsen;
  if (name == "csen-1d") return ModelMode::Csen1D;
  if (name == "cl-csen-1d") return ModelMode::ClCsen1D;
  throw Error(ErrorCode::Config, "unknown model mode '" + name + "'");
}

inline bool is_compressive(ModelMode mode) { return mode == ModelMode::ClCsen || mode == ModelMode::ClCsen1D; }
inline bool is_one_dimensional(ModelMode mode) { return mode == ModelMode::Csen1D || mode == ModelMode::ClCsen1D; }

struct TensorShape {
  std::size_t h = 0, w = 0, c = 0;
  std::size_t size() const noexcept { return h * w * c; }
  bool operator==(const TensorShape&) const = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::Flatten;
  Activation activation = Activation::None;
  TensorShape in;
  TensorShape out;
  std::size_t kernel_h = 0;  // convolution kernel or pooling window
  std::size_t kernel_w = 0;
  std::size_t weight_offset = 0;  // into CsenModel::params
  std::size_t weight_count = 0;
  std::size_t bias_offset = 0;
  std::size_t bias_count = 0;

  std::size_t param_count() const noexcept { return weight_count + bias_count; }
};

struct CsenModel {
  ModelMode mode = ModelMode::Csen;
  std::vector<LayerSpec> layers;
  Vector params;
  GridLayout layout;
  std::uint64_t rng_seed = 0;
  double input_scale = 1.0;  // multiplies the network input before the first layer
  std::vector<std::size_t> reshape_perm;  // dictionary column → grid cell (2-D modes)

  std::size_t input_size() const { return layers.front().in.size(); }
  std::size_t param_count() const noexcept { return params.size(); }
};

/// Width/filter knobs so tests can build small instances of the same stack.
struct ArchOptions {
  std::size_t filters = 64;
  std::size_t kernel_2d = 5;
  std::size_t kernel_1d = 25;
};

struct ForwardCache {
  std::vector<Vector> acts;  // acts[0] = input, acts[l + 1] = output of layer l
  std::vector<std::vector<std::uint32_t>> argmax;
  double logit = 0.0;  // pre-SoftPlus output
};

// ----------------------------------------------------------------------
// Scalar pieces
// ----------------------------------------------------------------------

inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double smooth_l1(double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; }

inline double smooth_l1_grad(double x) {
  if (std::abs(x) < 1.0) return x;
  return x > 0.0 ? 1.0 : -1.0;
}

/// Batch loss: sum of smooth-ℓ1 over the batch.
inline double smooth_l1_sum(std::span<const double> predicted, std::span<const double> target) {
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) s += smooth_l1(predicted[i] - target[i]);
  return s;
}

// ----------------------------------------------------------------------
// Architecture
// ----------------------------------------------------------------------

namespace detail {

inline void push_layer(CsenModel& model, LayerSpec spec, std::size_t weights, std::size_t biases) {
  spec.weight_offset = model.params.size();
  spec.weight_count = weights;
  spec.bias_offset = spec.weight_offset + weights;
  spec.bias_count = biases;
  model.params.resize(model.params.size() + weights + biases, 0.0);
  if (!model.layers.empty() && model.layers.back().out.size() != spec.in.size())
    throw Error(ErrorCode::ShapeMismatch, "layer input does not match previous output");
  model.layers.push_back(spec);
}

inline void glorot_uniform(CsenModel& model, const LayerSpec& l, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (std::size_t i = 0; i < l.weight_count; ++i) model.params[l.weight_offset + i] = rng.uniform(-limit, limit);
}

}  // namespace detail

/// Glorot-uniform weights and zero biases for every convolution and dense
/// layer; the proxy-affine layer is left untouched.
inline void reinitialize(CsenModel& model, std::uint64_t seed) {
  model.rng_seed = seed;
  Rng rng(derive_seed(seed, 100));
  for (const auto& l : model.layers) {
    std::size_t fan_in = 0, fan_out = 0;
    if (l.kind == LayerKind::Conv2D || l.kind == LayerKind::Conv1D) {
      fan_in = l.kernel_h * l.kernel_w * l.in.c;
      fan_out = l.kernel_h * l.kernel_w * l.out.c;
    } else if (l.kind == LayerKind::Dense) {
      fan_in = l.in.size();
      fan_out = l.out.size();
    } else {
      continue;
    }
    detail::glorot_uniform(model, l, fan_in, fan_out, rng);
    std::fill_n(model.params.begin() + static_cast<std::ptrdiff_t>(l.bias_offset), l.bias_count, 0.0);
  }
}

/// Builds one of the four stacks for a dictionary of C classes × P atoms.
/// The proxy-affine weights of compressive modes start from B (pass the
/// denoiser), stored out×in so that the layer computes B·y.
inline CsenModel build_model(ModelMode mode, const GridLayout& layout, std::size_t m, const DenoiserMap* denoiser,
                             std::uint64_t seed, const ArchOptions& arch = {}) {
  const std::size_t n = layout.size();
  const std::size_t C = layout.classes;
  const std::size_t P = layout.per_class;
  if (n != C * P || layout.grid_rows % layout.block_rows != 0 || layout.grid_cols % layout.block_cols != 0 ||
      (layout.grid_rows / layout.block_rows) * (layout.grid_cols / layout.block_cols) != C)
    throw Error(ErrorCode::LayoutMismatch, "pooling windows do not tile the grid");

  CsenModel model;
  model.mode = mode;
  model.layout = layout;
  model.rng_seed = seed;
  const bool one_d = is_one_dimensional(mode);
  const std::size_t F = arch.filters;

  if (is_compressive(mode)) {
    if (!denoiser || denoiser->B.rows() != n || denoiser->B.cols() != m)
      throw Error(ErrorCode::ShapeMismatch, "compressive mode needs an n×m denoiser");
    LayerSpec s{LayerKind::ProxyAffine, Activation::None, {m, 1, 1}, {n, 1, 1}};
    detail::push_layer(model, s, n * m, n);
    std::copy(denoiser->B.data().begin(), denoiser->B.data().end(),
              model.params.begin() + static_cast<std::ptrdiff_t>(model.layers.back().weight_offset));
  }

  TensorShape cur{n, 1, 1};
  std::size_t kh = arch.kernel_1d, kw = 1, ph = P, pw = 1;
  if (!one_d) {
    const TensorShape grid{layout.grid_rows, layout.grid_cols, 1};
    detail::push_layer(model, {LayerKind::Reshape, Activation::None, cur, grid}, 0, 0);
    model.reshape_perm = layout_permutation(layout);
    cur = grid;
    kh = kw = arch.kernel_2d;
    ph = layout.block_rows;
    pw = layout.block_cols;
  }
  const LayerKind conv = one_d ? LayerKind::Conv1D : LayerKind::Conv2D;
  const LayerKind pool = one_d ? LayerKind::MaxPool1D : LayerKind::MaxPool2D;

  LayerSpec c1{conv, Activation::ReLU, cur, {cur.h, cur.w, F}, kh, kw};
  detail::push_layer(model, c1, kh * kw * F, F);
  cur = c1.out;

  LayerSpec p1{pool, Activation::None, cur, {cur.h / ph, cur.w / pw, F}, ph, pw};
  detail::push_layer(model, p1, 0, 0);
  cur = p1.out;

  LayerSpec c2{conv, Activation::ReLU, cur, {cur.h, cur.w, 1}, kh, kw};
  detail::push_layer(model, c2, kh * kw * F, 1);
  cur = c2.out;

  detail::push_layer(model, {LayerKind::Flatten, Activation::None, cur, {cur.size(), 1, 1}}, 0, 0);
  LayerSpec dense{LayerKind::Dense, Activation::SoftPlus, {cur.size(), 1, 1}, {1, 1, 1}};
  detail::push_layer(model, dense, cur.size(), 1);
  reinitialize(model, seed);
  return model;
}

inline CsenModel build_model(ModelMode mode, const DictionaryBundle& bundle, std::uint64_t seed,
                             const ArchOptions& arch = {}) {
  if (bundle.layout.size() != bundle.dict.n() || bundle.layout.per_class != bundle.dict.per_class)
    throw Error(ErrorCode::LayoutMismatch, "layout does not match dictionary");
  return build_model(mode, bundle.layout, bundle.dict.m(), &bundle.denoiser, seed, arch);
}

/// Closed-form trainable-parameter count of the stack built by build_model.
inline std::size_t expected_param_count(ModelMode mode, std::size_t m, std::size_t n, std::size_t classes,
                                        const ArchOptions& arch = {}) {
  const std::size_t taps = is_one_dimensional(mode) ? arch.kernel_1d : arch.kernel_2d * arch.kernel_2d;
  std::size_t count = taps * arch.filters + arch.filters + taps * arch.filters + 1 + classes + 1;
  if (is_compressive(mode)) count += m * n + n;
  return count;
}

// ----------------------------------------------------------------------
// Layer kernels
// ----------------------------------------------------------------------

namespace detail {

inline constexpr std::size_t kConvBlock = 16;

inline void conv_forward(const LayerSpec& l, const double* w, const double* b, const Vector& in, Vector& out) {
  const std::size_t H = l.in.h, W = l.in.w, Ci = l.in.c, Co = l.out.c;
  const std::size_t kh = l.kernel_h, kw = l.kernel_w;
  const std::ptrdiff_t pt = static_cast<std::ptrdiff_t>((kh - 1) / 2);
  const std::ptrdiff_t pl = static_cast<std::ptrdiff_t>((kw - 1) / 2);
  out.assign(H * W * Co, 0.0);
  // taps inside the image for the current output position: (input offset, weight offset)
  std::vector<std::pair<std::size_t, std::size_t>> taps;
  taps.reserve(kh * kw);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      taps.clear();
      for (std::size_t i = 0; i < kh; ++i) {
        const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r + i) - pt;
        if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t j = 0; j < kw; ++j) {
          const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c + j) - pl;
          if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(W)) continue;
          taps.emplace_back((static_cast<std::size_t>(rr) * W + static_cast<std::size_t>(cc)) * Ci, (i * kw + j) * Ci * Co);
        }
      }
      double* o = out.data() + (r * W + c) * Co;
      std::size_t co0 = 0;
      for (; co0 + kConvBlock <= Co; co0 += kConvBlock) {
        double acc[kConvBlock];
        for (std::size_t k = 0; k < kConvBlock; ++k) acc[k] = b[co0 + k];
        for (const auto& [xi, wi] : taps) {
          const double* x = in.data() + xi;
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            const double a = x[ci];
            const double* wr = w + wi + ci * Co + co0;
            for (std::size_t k = 0; k < kConvBlock; ++k) acc[k] += a * wr[k];
          }
        }
        for (std::size_t k = 0; k < kConvBlock; ++k) o[co0 + k] = acc[k];
      }
      for (std::size_t co = co0; co < Co; ++co) {
        double s = b[co];
        for (const auto& [xi, wi] : taps) {
          const double* x = in.data() + xi;
          const double* wt = w + wi + co;
          for (std::size_t ci = 0; ci < Ci; ++ci) s += x[ci] * wt[ci * Co];
        }
        o[co] = s;
      }
    }
  }
  if (l.activation == Activation::ReLU)
    for (double& v : out) v = v > 0.0 ? v : 0.0;
}

/// grad_out is with respect to the layer output; ReLU gating uses the stored output.
inline void conv_backward(const LayerSpec& l, const double* w, const Vector& in, const Vector& out,
                          const Vector& grad_out, double* dw, double* db, Vector* grad_in) {
  const std::size_t H = l.in.h, W = l.in.w, Ci = l.in.c, Co = l.out.c;
  const std::size_t kh = l.kernel_h, kw = l.kernel_w;
  const std::ptrdiff_t pt = static_cast<std::ptrdiff_t>((kh - 1) / 2);
  const std::ptrdiff_t pl = static_cast<std::ptrdiff_t>((kw - 1) / 2);
  if (grad_in) grad_in->assign(in.size(), 0.0);
  std::vector<double> g(Co);
  std::vector<std::size_t> nz;  // after max-pooling most output gradients are zero
  nz.reserve(Co);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      const std::size_t base = (r * W + c) * Co;
      std::uint64_t any = 0;
      for (std::size_t co = 0; co < Co; ++co) any |= std::bit_cast<std::uint64_t>(grad_out[base + co]);
      if (any == 0) continue;
      nz.clear();
      const bool relu = l.activation == Activation::ReLU;
      for (std::size_t co = 0; co < Co; ++co) {
        const double go = grad_out[base + co];
        if (go == 0.0) continue;
        g[co] = relu && !(out[base + co] > 0.0) ? 0.0 : go;
        if (g[co] != 0.0) nz.push_back(co);
      }
      if (nz.empty()) continue;
      for (std::size_t co : nz) db[co] += g[co];
      for (std::size_t i = 0; i < kh; ++i) {
        const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r + i) - pt;
        if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t j = 0; j < kw; ++j) {
          const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c + j) - pl;
          if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(W)) continue;
          const std::size_t in_base = (static_cast<std::size_t>(rr) * W + static_cast<std::size_t>(cc)) * Ci;
          const double* x = in.data() + in_base;
          const std::size_t w_base = (i * kw + j) * Ci * Co;
          if (Co == 1) {
            const double g0 = g[0];
            double* dwc = dw + w_base;
            for (std::size_t ci = 0; ci < Ci; ++ci) dwc[ci] += x[ci] * g0;
            if (grad_in) {
              double* gi = grad_in->data() + in_base;
              const double* wc = w + w_base;
              for (std::size_t ci = 0; ci < Ci; ++ci) gi[ci] += wc[ci] * g0;
            }
            continue;
          }
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            double* dwrow = dw + w_base + ci * Co;
            const double a = x[ci];
            if (a != 0.0)
              for (std::size_t co : nz) dwrow[co] += a * g[co];
            if (grad_in) {
              const double* wrow = w + w_base + ci * Co;
              double s = 0.0;
              for (std::size_t co : nz) s += wrow[co] * g[co];
              (*grad_in)[in_base + ci] += s;
            }
          }
        }
      }
    }
  }
}

inline void pool_forward(const LayerSpec& l, const Vector& in, Vector& out, std::vector<std::uint32_t>& argmax) {
  const std::size_t W = l.in.w, C = l.in.c;
  const std::size_t Ho = l.out.h, Wo = l.out.w;
  const std::size_t ph = l.kernel_h, pw = l.kernel_w;
  out.assign(Ho * Wo * C, 0.0);
  argmax.assign(out.size(), 0);
  for (std::size_t r = 0; r < Ho; ++r)
    for (std::size_t c = 0; c < Wo; ++c)
      for (std::size_t ch = 0; ch < C; ++ch) {
        std::size_t best = ((r * ph) * W + c * pw) * C + ch;
        for (std::size_t i = 0; i < ph; ++i)
          for (std::size_t j = 0; j < pw; ++j) {
            const std::size_t idx = ((r * ph + i) * W + (c * pw + j)) * C + ch;
            if (in[idx] > in[best]) best = idx;  // strict: first occurrence wins ties
          }
        const std::size_t o = (r * Wo + c) * C + ch;
        out[o] = in[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
}

}  // namespace detail

// ----------------------------------------------------------------------
// Forward / backward
// ----------------------------------------------------------------------

inline double forward(const CsenModel& model, std::span<const double> input, ForwardCache& cache) {
  if (input.size() != model.input_size())
    throw Error(ErrorCode::ShapeMismatch, "model expects input length " + std::to_string(model.input_size()) +
                                              ", got " + std::to_string(input.size()));
  const std::size_t L = model.layers.size();
  cache.acts.resize(L + 1);
  cache.argmax.resize(L);
  cache.acts[0].assign(input.begin(), input.end());
  if (model.input_scale != 1.0)
    for (double& v : cache.acts[0]) v *= model.input_scale;
  const double* p = model.params.data();
  for (std::size_t li = 0; li < L; ++li) {
    const LayerSpec& l = model.layers[li];
    const Vector& in = cache.acts[li];
    Vector& out = cache.acts[li + 1];
    switch (l.kind) {
      case LayerKind::ProxyAffine:
      case LayerKind::Dense: {
        const std::size_t ni = l.in.size(), no = l.out.size();
        out.assign(no, 0.0);
        const double* w = p + l.weight_offset;
        const double* b = p + l.bias_offset;
        if (l.kind == LayerKind::ProxyAffine) {  // weights out×in
          for (std::size_t o = 0; o < no; ++o) {
            double s = b[o];
            const double* wr = w + o * ni;
            for (std::size_t i = 0; i < ni; ++i) s += wr[i] * in[i];
            out[o] = s;
          }
        } else {  // weights in×out
          for (std::size_t o = 0; o < no; ++o) out[o] = b[o];
          for (std::size_t i = 0; i < ni; ++i)
            for (std::size_t o = 0; o < no; ++o) out[o] += in[i] * w[i * no + o];
        }
        if (l.activation == Activation::SoftPlus) {
          cache.logit = out[0];
          for (double& v : out) v = softplus(v);
        } else if (l.activation == Activation::ReLU) {
          for (double& v : out) v = v > 0.0 ? v : 0.0;
        }
        break;
      }
      case LayerKind::Reshape:
        out.assign(in.size(), 0.0);
        for (std::size_t j = 0; j < in.size(); ++j) out[model.reshape_perm[j]] = in[j];
        break;
      case LayerKind::Conv2D:
      case LayerKind::Conv1D:
        detail::conv_forward(l, p + l.weight_offset, p + l.bias_offset, in, out);
        break;
      case LayerKind::MaxPool2D:
      case LayerKind::MaxPool1D:
        detail::pool_forward(l, in, out, cache.argmax[li]);
        break;
      case LayerKind::Flatten:
        out = in;
        break;
    }
  }
  return cache.acts[L][0];
}

inline double forward(const CsenModel& model, std::span<const double> input) {
  ForwardCache cache;
  return forward(model, input, cache);
}

/// Accumulates d(loss)/d(params) into grads (same length as params).
inline void backward(const CsenModel& model, const ForwardCache& cache, double dloss_dpred, Vector& grads) {
  if (grads.size() != model.params.size()) grads.assign(model.params.size(), 0.0);
  if (dloss_dpred == 0.0) return;
  const double* p = model.params.data();
  double* gp = grads.data();
  Vector grad = {dloss_dpred};
  Vector grad_in;
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const LayerSpec& l = model.layers[li];
    const Vector& in = cache.acts[li];
    const Vector& out = cache.acts[li + 1];
    // a layer's input gradient is needed only if some earlier layer has parameters
    bool need_input_grad = false;
    for (std::size_t k = 0; k < li; ++k) need_input_grad = need_input_grad || model.layers[k].param_count() > 0;
    switch (l.kind) {
      case LayerKind::ProxyAffine:
      case LayerKind::Dense: {
        const std::size_t ni = l.in.size(), no = l.out.size();
        Vector g(no);
        for (std::size_t o = 0; o < no; ++o) {
          double gate = 1.0;
          if (l.activation == Activation::SoftPlus) gate = sigmoid(no == 1 ? cache.logit : std::log(std::expm1(out[o])));
          if (l.activation == Activation::ReLU) gate = out[o] > 0.0 ? 1.0 : 0.0;
          g[o] = grad[o] * gate;
        }
        double* dw = gp + l.weight_offset;
        double* db = gp + l.bias_offset;
        const double* w = p + l.weight_offset;
        for (std::size_t o = 0; o < no; ++o) db[o] += g[o];
        grad_in.assign(need_input_grad ? ni : 0, 0.0);
        if (l.kind == LayerKind::ProxyAffine) {
          for (std::size_t o = 0; o < no; ++o) {
            if (g[o] == 0.0) continue;
            double* dwr = dw + o * ni;
            for (std::size_t i = 0; i < ni; ++i) dwr[i] += g[o] * in[i];
            if (need_input_grad)
              for (std::size_t i = 0; i < ni; ++i) grad_in[i] += g[o] * w[o * ni + i];
          }
        } else {
          for (std::size_t i = 0; i < ni; ++i)
            for (std::size_t o = 0; o < no; ++o) {
              dw[i * no + o] += in[i] * g[o];
              if (need_input_grad) grad_in[i] += w[i * no + o] * g[o];
            }
        }
        break;
      }
      case LayerKind::Reshape:
        grad_in.assign(in.size(), 0.0);
        for (std::size_t j = 0; j < in.size(); ++j) grad_in[j] = grad[model.reshape_perm[j]];
        break;
      case LayerKind::Conv2D:
      case LayerKind::Conv1D:
        detail::conv_backward(l, p + l.weight_offset, in, out, grad, gp + l.weight_offset, gp + l.bias_offset,
                              need_input_grad ? &grad_in : nullptr);
        break;
      case LayerKind::MaxPool2D:
      case LayerKind::MaxPool1D: {
        grad_in.assign(in.size(), 0.0);
        const auto& am = cache.argmax[li];
        for (std::size_t o = 0; o < grad.size(); ++o) grad_in[am[o]] += grad[o];
        break;
      }
      case LayerKind::Flatten:
        grad_in = grad;
        break;
    }
    if (!need_input_grad) break;
    std::swap(grad, grad_in);
  }
}

// ----------------------------------------------------------------------
// Inputs and prediction
// ----------------------------------------------------------------------

/// The network input for one raw feature: the LMMSE proxy for CSEN modes,
/// the normalized compressed query for compressive modes.
inline Vector model_input(const CsenModel& model, const DictionaryBundle& bundle, std::span<const double> feature) {
  if (is_compressive(model.mode)) return compress_query(bundle.dict, feature);
  return proxy(bundle.denoiser, bundle.dict, feature);
}

inline double predict(const CsenModel& model, const DictionaryBundle& bundle, std::span<const double> feature) {
  return forward(model, model_input(model, bundle, feature));
}

inline Vector predict_batch(const CsenModel& model, const DictionaryBundle& bundle, const FeatureDataset& ds) {
  Vector out;
  out.reserve(ds.size());
  ForwardCache cache;
  for (const auto& r : ds.records) out.push_back(forward(model, model_input(model, bundle, r.features), cache));
  return out;
}

// ----------------------------------------------------------------------
// Training
// ----------------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool label_quantized = false;
  bool normalize_input = false;  // scale the proxy so the training set has max |value| = 1
  std::size_t max_reinit = 8;     // redraws of an initialization whose last ReLU layer is silent
  bool init_output_bias = false;  // start the SoftPlus head at the mean training label
  std::size_t max_restarts = 0;   // fresh draws after the last ReLU layer collapses mid-training
  double collapse_fraction = 0.01;  // active fraction of the last ReLU layer below which a run has collapsed
  double proxy_lr_scale = 1.0;      // step-size multiplier for the trainable proxy map of CL modes
  double range_min = 0.5;
  double range_max = 60.5;
  double bin_width = 1.0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per-sample smooth-ℓ1 over the epoch
  double val_loss = 0.0;    // mean per-sample smooth-ℓ1 after the epoch
};

struct TrainResult {
  CsenModel best_model;
  std::size_t best_epoch = 0;
  std::vector<EpochStats> history;
};

class Adam {
 public:
  Adam(std::size_t n, const TrainConfig& cfg) : m_(n, 0.0), v_(n, 0.0), rate_(n, cfg.lr), cfg_(cfg) {}

  /// Scales the step size of parameters [first, first + count).
  void scale_rate(std::size_t first, std::size_t count, double factor) {
    for (std::size_t i = first; i < first + count; ++i) rate_[i] = cfg_.lr * factor;
  }

  void step(Vector& params, const Vector& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] -= rate_[i] * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }

 private:
  Vector m_, v_, rate_;
  TrainConfig cfg_;
  std::size_t t_ = 0;
};

inline double training_label(double distance, const TrainConfig& cfg) {
  if (!cfg.label_quantized) return distance;
  return bin_midpoint(quantize_distance(distance, cfg.range_min, cfg.range_max, cfg.bin_width), cfg.range_min,
                      cfg.bin_width);
}

struct PreparedSet {
  std::vector<Vector> inputs;
  Vector labels;
};

inline PreparedSet prepare_set(const CsenModel& model, const DictionaryBundle& bundle, const FeatureDataset& ds,
                               const TrainConfig& cfg) {
  PreparedSet s;
  s.inputs.reserve(ds.size());
  for (const auto& r : ds.records) {
    s.inputs.push_back(model_input(model, bundle, r.features));
    s.labels.push_back(training_label(r.distance, cfg));
  }
  return s;
}

inline double mean_loss(const CsenModel& model, const PreparedSet& set) {
  ForwardCache cache;
  double s = 0.0;
  for (std::size_t i = 0; i < set.inputs.size(); ++i) s += smooth_l1(forward(model, set.inputs[i], cache) - set.labels[i]);
  return s / static_cast<double>(std::max<std::size_t>(set.inputs.size(), 1));
}

/// Fraction of nonzero outputs of the last ReLU layer over the first `probe`
/// inputs of the set; 1 when the model has no ReLU layer.
inline double active_fraction(const CsenModel& model, const PreparedSet& set, std::size_t probe = 256) {
  std::size_t last_relu = model.layers.size();
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (model.layers[i].activation == Activation::ReLU) last_relu = i;
  if (last_relu == model.layers.size()) return 1.0;
  ForwardCache cache;
  std::size_t active = 0, total = 0;
  for (std::size_t i = 0; i < std::min(probe, set.inputs.size()); ++i) {
    forward(model, set.inputs[i], cache);
    for (double v : cache.acts[last_relu + 1]) active += v != 0.0;
    total += cache.acts[last_relu + 1].size();
  }
  return total == 0 ? 1.0 : static_cast<double>(active) / static_cast<double>(total);
}

/// True when the last ReLU layer outputs zero for every probed training input,
/// which leaves only the output bias trainable.
inline bool is_dead(const CsenModel& model, const PreparedSet& set, std::size_t probe = 256) {
  return active_fraction(model, set, probe) == 0.0;
}

namespace detail {

/// Proxy scale normalization, dead-start redraws and output-bias placement.
inline CsenModel prepare_start(const CsenModel& initial, const PreparedSet& train_set, const TrainConfig& cfg,
                               std::uint64_t seed) {
  CsenModel model = initial;
  if (seed != initial.rng_seed) reinitialize(model, seed);
  if (cfg.normalize_input) {
    double peak = 0.0;
    const LayerSpec& first = model.layers.front();
    if (first.kind == LayerKind::ProxyAffine) {
      ForwardCache cache;
      CsenModel probe = model;
      probe.layers.resize(1);
      for (const auto& x : train_set.inputs) {
        forward(probe, x, cache);
        peak = std::max(peak, max_abs(cache.acts[1]));
      }
      if (peak > 0.0)
        for (std::size_t i = 0; i < first.param_count(); ++i) model.params[first.weight_offset + i] /= peak;
    } else {
      for (const auto& x : train_set.inputs) peak = std::max(peak, max_abs(x));
      if (peak > 0.0) model.input_scale = initial.input_scale / peak;
    }
  }
  for (std::size_t attempt = 1; attempt <= cfg.max_reinit && is_dead(model, train_set); ++attempt)
    reinitialize(model, derive_seed(seed, 1000 + attempt));
  if (cfg.init_output_bias) {
    double mean = 0.0;
    for (double v : train_set.labels) mean += v;
    mean /= static_cast<double>(train_set.labels.size());
    const LayerSpec& head = model.layers.back();
    if (head.activation == Activation::SoftPlus && mean > 0.0)
      model.params[head.bias_offset] = mean > 30.0 ? mean : std::log(std::expm1(mean));
  }
  return model;
}

}  // namespace detail

/// Adam on the summed smooth-ℓ1 batch loss. The returned model is the
/// epoch checkpoint with the lowest validation loss (earliest on ties).
/// When cfg.max_restarts > 0, a run whose last ReLU layer goes (nearly) silent is
/// restarted from a fresh draw; the history then covers the final attempt.
inline TrainResult train(const CsenModel& initial, const PreparedSet& train_set, const PreparedSet& val_set,
                         const TrainConfig& cfg) {
  if (train_set.inputs.empty() || val_set.inputs.empty())
    throw Error(ErrorCode::EmptyInput, "training and validation sets must be non-empty");
  if (cfg.epochs == 0 || cfg.batch_size == 0) throw Error(ErrorCode::Config, "epochs and batch size must be ≥ 1");

  for (std::size_t restart = 0;; ++restart) {
    const std::uint64_t seed = restart == 0 ? initial.rng_seed : derive_seed(initial.rng_seed, 2000 + restart);
    CsenModel model = detail::prepare_start(initial, train_set, cfg, seed);
    TrainResult result;
    Adam adam(model.params.size(), cfg);
    for (const auto& l : model.layers)
      if (l.kind == LayerKind::ProxyAffine) adam.scale_rate(l.weight_offset, l.param_count(), cfg.proxy_lr_scale);
    Vector grads(model.params.size(), 0.0);
    ForwardCache cache;
    std::vector<std::size_t> order(train_set.inputs.size());
    double best_val = std::numeric_limits<double>::infinity();
    bool collapsed = false;

    for (std::size_t epoch = 1; epoch <= cfg.epochs && !collapsed; ++epoch) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng rng(derive_seed(cfg.seed, restart == 0 ? epoch : epoch + 1000 * restart));
      rng.shuffle(order);
      double epoch_loss = 0.0;
      std::size_t batch_index = 0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
        std::fill(grads.begin(), grads.end(), 0.0);
        const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
        double batch_loss = 0.0;
        for (std::size_t k = start; k < stop; ++k) {
          const std::size_t idx = order[k];
          const double pred = forward(model, train_set.inputs[idx], cache);
          const double err = pred - train_set.labels[idx];
          batch_loss += smooth_l1(err);
          backward(model, cache, smooth_l1_grad(err), grads);
        }
        if (!std::isfinite(batch_loss) || !all_finite(grads))
          throw Error(ErrorCode::NonFiniteLoss,
                      "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index));
        epoch_loss += batch_loss;
        adam.step(model.params, grads);
      }
      EpochStats stats{epoch, epoch_loss / static_cast<double>(order.size()), mean_loss(model, val_set)};
      if (!std::isfinite(stats.val_loss))
        throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", validation");
      result.history.push_back(stats);
      if (stats.val_loss < best_val) {
        best_val = stats.val_loss;
        result.best_epoch = epoch;
        result.best_model = model;
      }
      collapsed = restart < cfg.max_restarts && active_fraction(model, train_set, 64) < cfg.collapse_fraction;
    }
    if (!collapsed) return result;
  }
}

inline TrainResult train(const CsenModel& initial, const DictionaryBundle& bundle, const FeatureDataset& train_ds,
                         const FeatureDataset& val_ds, const TrainConfig& cfg) {
  return train(initial, prepare_set(initial, bundle, train_ds, cfg), prepare_set(initial, bundle, val_ds, cfg), cfg);
}

inline std::string history_csv(const std::vector<EpochStats>& history) {
  std::string s = "epoch,train_loss,val_loss\n";
  char buf[96];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss);
    s += buf;
  }
  return s;
}

// ----------------------------------------------------------------------
// RBM1 model files
// ----------------------------------------------------------------------

inline void save_model(const CsenModel& model, std::ostream& os) {
  binio::put_magic(os, "RBM1");
  binio::put_u32(os, static_cast<std::uint32_t>(model.mode));
  binio::put_u32(os, static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& l : model.layers) {
    binio::put_u32(os, static_cast<std::uint32_t>(l.kind));
    binio::put_u32(os, static_cast<std::uint32_t>(l.activation));
    for (std::size_t v : {l.in.h, l.in.w, l.in.c, l.out.h, l.out.w, l.out.c, l.kernel_h, l.kernel_w})
      binio::put_u32(os, static_cast<std::uint32_t>(v));
  }
  const auto& g = model.layout;
  for (std::size_t v : {g.grid_rows, g.grid_cols, g.block_rows, g.block_cols, g.blocks_per_row, g.classes, g.per_class})
    binio::put_u32(os, static_cast<std::uint32_t>(v));
  binio::put_u64(os, model.rng_seed);
  binio::put_f64(os, model.input_scale);
  binio::put_u64(os, model.params.size());
  for (double v : model.params) binio::put_f64(os, v);
}

inline void save_model(const CsenModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  save_model(model, os);
  if (!os) throw Error(ErrorCode::Io, "write failed for '" + path + "'");
}

inline CsenModel load_model(std::istream& is, const std::string& source = "<stream>") {
  binio::Reader in(is, source);
  in.expect_magic("RBM1");
  CsenModel model;
  const std::uint32_t mode = in.u32("mode");
  if (mode > static_cast<std::uint32_t>(ModelMode::ClCsen1D)) throw Error(ErrorCode::BadMagic, source + ": bad mode tag");
  model.mode = static_cast<ModelMode>(mode);
  const std::uint32_t count = in.u32("layer count");
  std::size_t offset = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    LayerSpec l;
    const std::uint32_t kind = in.u32("layer kind");
    const std::uint32_t act = in.u32("activation");
    if (kind > static_cast<std::uint32_t>(LayerKind::Dense) || act > static_cast<std::uint32_t>(Activation::SoftPlus))
      throw Error(ErrorCode::BadMagic, source + ": bad layer tag");
    l.kind = static_cast<LayerKind>(kind);
    l.activation = static_cast<Activation>(act);
    l.in = {in.u32("shape"), in.u32("shape"), in.u32("shape")};
    l.out = {in.u32("shape"), in.u32("shape"), in.u32("shape")};
    l.kernel_h = in.u32("kernel");
    l.kernel_w = in.u32("kernel");
    switch (l.kind) {
      case LayerKind::ProxyAffine:
      case LayerKind::Dense: l.weight_count = l.in.size() * l.out.size(); l.bias_count = l.out.size(); break;
      case LayerKind::Conv2D:
      case LayerKind::Conv1D: l.weight_count = l.kernel_h * l.kernel_w * l.in.c * l.out.c; l.bias_count = l.out.c; break;
      default: break;
    }
    l.weight_offset = offset;
    l.bias_offset = offset + l.weight_count;
    offset += l.param_count();
    model.layers.push_back(l);
  }
  auto& g = model.layout;
  g.grid_rows = in.u32("layout");
  g.grid_cols = in.u32("layout");
  g.block_rows = in.u32("layout");
  g.block_cols = in.u32("layout");
  g.blocks_per_row = in.u32("layout");
  g.classes = in.u32("layout");
  g.per_class = in.u32("layout");
  model.rng_seed = in.u64("seed");
  model.input_scale = in.f64("input scale");
  const std::uint64_t n_params = in.u64("parameter count");
  if (n_params != offset) throw Error(ErrorCode::ShapeMismatch, source + ": parameter count disagrees with layers");
  model.params.resize(offset);
  for (double& v : model.params) v = in.f64("parameters");
  if (model.layers.empty()) throw Error(ErrorCode::ShapeMismatch, source + ": model has no layers");
  if (!is_one_dimensional(model.mode)) model.reshape_perm = layout_permutation(model.layout);
  return model;
}

inline CsenModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open model file '" + path + "'");
  return load_model(is, path);
}

}  // namespace rbr
