// Copyright 2026 The psyframe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psyframe/common.hpp"
#include "psyframe/features.hpp"
#include "psyframe/synth.hpp"

namespace psyframe {

// ---------------------------------------------------------------------------
// Configuration and parameters
// ---------------------------------------------------------------------------

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t n_layers = 2;
  std::size_t n_channel_tokens = kNumChannels;  ///< plus one summary token
  std::size_t token_dim = slot::kPerChannel;
  std::size_t n_classes = kNumClasses;
  std::size_t d_ff = 128;
  double dropout = 0.0;

  std::size_t n_tokens() const { return n_channel_tokens + 1; }
  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, "ModelConfig: d_model must be divisible by n_heads");
    require(n_classes == kNumClasses, "ModelConfig: n_classes must be 5");
    require(n_channel_tokens == kNumChannels && token_dim == slot::kPerChannel,
            "ModelConfig: token layout must match psyframe-feat-v1 (14 x 13)");
    require(n_layers >= 1 && d_ff >= 1, "ModelConfig: need at least one layer and a non-empty feed-forward");
    require(dropout == 0.0, "ModelConfig: dropout is not supported");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// A named, shaped, row-major array of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    data.assign(n, fill);
  }
  std::size_t size() const { return data.size(); }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }
  bool operator==(const Tensor&) const = default;
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
  bool operator==(const LayerParams&) const = default;
};

/// All model parameters. The same type doubles as the gradient container and
/// as Adam's moment buffers. `input_shift`/`input_scale` standardize the
/// log-compressed feature vector; they are fitted on training data and are
/// not optimized.
struct Weights {
  ModelConfig cfg;
  Tensor input_shift, input_scale;
  Tensor proj_w, proj_b;
  Tensor channel_embed;
  Tensor summary;
  std::vector<LayerParams> layers;
  Tensor lnf_gain, lnf_bias;
  Tensor head_w, head_b;

  bool operator==(const Weights&) const = default;
};

/// Visits every trainable tensor in a fixed order as f(name, tensor).
template <typename W, typename F>
  requires std::same_as<std::remove_const_t<W>, Weights>
void visit_params(W& w, F&& f) {
  f("proj_w", w.proj_w);
  f("proj_b", w.proj_b);
  f("channel_embed", w.channel_embed);
  f("summary", w.summary);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& L = w.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    f(p + "ln1_gain", L.ln1_gain);
    f(p + "ln1_bias", L.ln1_bias);
    f(p + "wq", L.wq);
    f(p + "bq", L.bq);
    f(p + "wk", L.wk);
    f(p + "bk", L.bk);
    f(p + "wv", L.wv);
    f(p + "bv", L.bv);
    f(p + "wo", L.wo);
    f(p + "bo", L.bo);
    f(p + "ln2_gain", L.ln2_gain);
    f(p + "ln2_bias", L.ln2_bias);
    f(p + "w1", L.w1);
    f(p + "b1", L.b1);
    f(p + "w2", L.w2);
    f(p + "b2", L.b2);
  }
  f("lnf_gain", w.lnf_gain);
  f("lnf_bias", w.lnf_bias);
  f("head_w", w.head_w);
  f("head_b", w.head_b);
}

/// Trainable tensors followed by the two input-normalization arrays.
template <typename W, typename F>
  requires std::same_as<std::remove_const_t<W>, Weights>
void visit_all_arrays(W& w, F&& f) {
  f("input_shift", w.input_shift);
  f("input_scale", w.input_scale);
  visit_params(w, f);
}

/// Zero-filled weights of the right shapes (LN gains included, i.e. also zero).
inline Weights zero_weights(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t D = cfg.d_model, F = cfg.d_ff;
  Weights w;
  w.cfg = cfg;
  w.input_shift = Tensor({kFeatureDim}, 0.0);
  w.input_scale = Tensor({kFeatureDim}, 1.0);
  w.proj_w = Tensor({cfg.token_dim, D});
  w.proj_b = Tensor({D});
  w.channel_embed = Tensor({cfg.n_channel_tokens, D});
  w.summary = Tensor({1, D});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerParams L;
    L.ln1_gain = Tensor({D});
    L.ln1_bias = Tensor({D});
    L.wq = Tensor({D, D});
    L.bq = Tensor({D});
    L.wk = Tensor({D, D});
    L.bk = Tensor({D});
    L.wv = Tensor({D, D});
    L.bv = Tensor({D});
    L.wo = Tensor({D, D});
    L.bo = Tensor({D});
    L.ln2_gain = Tensor({D});
    L.ln2_bias = Tensor({D});
    L.w1 = Tensor({D, F});
    L.b1 = Tensor({F});
    L.w2 = Tensor({F, D});
    L.b2 = Tensor({D});
    w.layers.push_back(std::move(L));
  }
  w.lnf_gain = Tensor({D});
  w.lnf_bias = Tensor({D});
  w.head_w = Tensor({D, cfg.n_classes});
  w.head_b = Tensor({cfg.n_classes});
  return w;
}

inline std::size_t parameter_count(const Weights& w) {
  std::size_t n = 0;
  visit_params(w, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

inline double glorot_bound(const Tensor& t) {
  const std::size_t fan_in = t.shape.size() == 2 ? t.shape[0] : 1;
  const std::size_t fan_out = t.shape.back();
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline bool is_matrix_param(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string base = dot == std::string::npos ? name : name.substr(dot + 1);
  return base == "proj_w" || base == "channel_embed" || base == "summary" || base == "wq" || base == "wk" ||
         base == "wv" || base == "wo" || base == "w1" || base == "w2" || base == "head_w";
}

inline bool is_gain_param(const std::string& name) { return name.ends_with("_gain"); }

/// Glorot-uniform matrices, zero biases, unit layer-norm gains.
inline Weights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  Weights w = zero_weights(cfg);
  SplitMix64 rng(mix_seed(seed, 0x1417));
  visit_params(w, [&](const std::string& name, Tensor& t) {
    if (is_gain_param(name)) {
      std::ranges::fill(t.data, 1.0);
    } else if (is_matrix_param(name)) {
      const double b = glorot_bound(t);
      for (double& v : t.data) v = rng.uniform(-b, b);
    }
  });
  return w;
}

// ---------------------------------------------------------------------------
// Dense helpers (row-major, small sizes)
// ---------------------------------------------------------------------------

namespace detail {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
  double* row(std::size_t i) { return a.data() + i * cols; }
  const double* row(std::size_t i) const { return a.data() + i * cols; }
};

// Y = X W + b, W is [in x out].
inline Mat linear(const Mat& x, const Tensor& w, const Tensor& b) {
  const std::size_t in = w.shape[0], out = w.shape[1];
  Mat y(x.rows, out);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double* yr = y.row(i);
    for (std::size_t o = 0; o < out; ++o) yr[o] = b.data[o];
    const double* xr = x.row(i);
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xr[k];
      const double* wr = w.ptr() + k * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wr[o];
    }
  }
  return y;
}

// Accumulates dW, db and returns dX for Y = X W + b.
inline Mat linear_backward(const Mat& x, const Tensor& w, const Mat& dy, Tensor& dw, Tensor& db) {
  const std::size_t in = w.shape[0], out = w.shape[1];
  Mat dx(x.rows, in);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* dyr = dy.row(i);
    const double* xr = x.row(i);
    double* dxr = dx.row(i);
    for (std::size_t o = 0; o < out; ++o) db.data[o] += dyr[o];
    for (std::size_t k = 0; k < in; ++k) {
      const double* wr = w.ptr() + k * out;
      double* dwr = dw.ptr() + k * out;
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        acc += dyr[o] * wr[o];
        dwr[o] += xr[k] * dyr[o];
      }
      dxr[k] = acc;
    }
  }
  return dx;
}

inline constexpr double kLayerNormEps = 1e-5;

struct LnCache {
  Mat xhat;
  std::vector<double> rstd;
};

inline Mat layer_norm(const Mat& x, const Tensor& g, const Tensor& b, LnCache& cache) {
  const std::size_t n = x.cols;
  Mat y(x.rows, n);
  cache.xhat = Mat(x.rows, n);
  cache.rstd.assign(x.rows, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xr = x.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd[i] = rstd;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (xr[j] - mean) * rstd;
      cache.xhat(i, j) = xh;
      y(i, j) = g.data[j] * xh + b.data[j];
    }
  }
  return y;
}

inline Mat layer_norm_backward(const Mat& dy, const Tensor& g, const LnCache& cache, Tensor& dg, Tensor& db) {
  const std::size_t n = dy.cols;
  Mat dx(dy.rows, n);
  std::vector<double> dxhat(n);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    double mean_d = 0.0, mean_dx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = cache.xhat(i, j);
      dg.data[j] += dy(i, j) * xh;
      db.data[j] += dy(i, j);
      dxhat[j] = dy(i, j) * g.data[j];
      mean_d += dxhat[j];
      mean_dx += dxhat[j] * xh;
    }
    mean_d /= static_cast<double>(n);
    mean_dx /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j)
      dx(i, j) = cache.rstd[i] * (dxhat[j] - mean_d - cache.xhat(i, j) * mean_dx);
  }
  return dx;
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

inline void add_into(Mat& dst, const Mat& src) {
  for (std::size_t i = 0; i < dst.a.size(); ++i) dst.a[i] += src.a[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

inline constexpr double kLogFloor = 1e-8;

/// Is slot s of a channel token a non-negative power-like quantity (band
/// power, variance, wavelet energy)? Those are log-compressed before use.
constexpr bool is_power_slot(std::size_t s) {
  return s < slot::kMean || s == slot::kVariance || s >= slot::kWavelet;
}

/// log-compress power slots; other slots pass through.
inline std::array<double, kFeatureDim> compress_features(const FeatureVector& f) {
  std::array<double, kFeatureDim> out{};
  for (std::size_t i = 0; i < kFeatureDim; ++i) {
    const double v = f.values[i];
    out[i] = is_power_slot(i % slot::kPerChannel) ? std::log(std::max(v, 0.0) + kLogFloor) : v;
  }
  return out;
}

struct ForwardCache {
  struct Layer {
    detail::Mat x_in;
    detail::LnCache ln1;
    detail::Mat h, q, k, v;
    std::vector<detail::Mat> probs;  // per head, [T x T]
    detail::Mat attn_cat;
    detail::Mat x_mid;
    detail::LnCache ln2;
    detail::Mat h2, pre, act;
  };
  detail::Mat u;  // normalized channel tokens [14 x 13]
  std::vector<Layer> layers;
  detail::Mat x_final;
  detail::LnCache lnf;
  detail::Mat z;  // [1 x D]
  std::array<double, kNumClasses> logits{};
};

inline void check_layout(const FeatureVector& f) {
  require(f.layout_id == kLayoutId,
          "feature layout mismatch: got '" + f.layout_id + "', expected '" + std::string(kLayoutId) + "'");
}

inline std::array<double, kNumClasses> forward(const Weights& w, const FeatureVector& f, ForwardCache* cache_out = nullptr) {
  using detail::Mat;
  check_layout(f);
  const auto& cfg = w.cfg;
  const std::size_t D = cfg.d_model, T = cfg.n_tokens(), H = cfg.n_heads, hd = cfg.head_dim();
  ForwardCache local;
  ForwardCache& c = cache_out ? *cache_out : local;
  c.layers.assign(cfg.n_layers, {});

  const auto compressed = compress_features(f);
  c.u = Mat(cfg.n_channel_tokens, cfg.token_dim);
  for (std::size_t i = 0; i < kFeatureDim; ++i)
    c.u.a[i] = (compressed[i] - w.input_shift.data[i]) / w.input_scale.data[i];

  const Mat proj = detail::linear(c.u, w.proj_w, w.proj_b);
  Mat x(T, D);
  for (std::size_t j = 0; j < D; ++j) x(0, j) = w.summary.data[j];
  for (std::size_t t = 0; t < cfg.n_channel_tokens; ++t)
    for (std::size_t j = 0; j < D; ++j) x(t + 1, j) = proj(t, j) + w.channel_embed.data[t * D + j];

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& L = w.layers[l];
    auto& lc = c.layers[l];
    lc.x_in = x;
    lc.h = detail::layer_norm(x, L.ln1_gain, L.ln1_bias, lc.ln1);
    lc.q = detail::linear(lc.h, L.wq, L.bq);
    lc.k = detail::linear(lc.h, L.wk, L.bk);
    lc.v = detail::linear(lc.h, L.wv, L.bv);
    lc.attn_cat = Mat(T, D);
    lc.probs.assign(H, Mat(T, T));
    for (std::size_t hh = 0; hh < H; ++hh) {
      const std::size_t off = hh * hd;
      Mat& P = lc.probs[hh];
      for (std::size_t i = 0; i < T; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < T; ++j) {
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e) s += lc.q(i, off + e) * lc.k(j, off + e);
          P(i, j) = s * inv_sqrt;
          mx = std::max(mx, P(i, j));
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          P(i, j) = std::exp(P(i, j) - mx);
          sum += P(i, j);
        }
        for (std::size_t j = 0; j < T; ++j) P(i, j) /= sum;
        for (std::size_t e = 0; e < hd; ++e) {
          double acc = 0.0;
          for (std::size_t j = 0; j < T; ++j) acc += P(i, j) * lc.v(j, off + e);
          lc.attn_cat(i, off + e) = acc;
        }
      }
    }
    const Mat attn_out = detail::linear(lc.attn_cat, L.wo, L.bo);
    detail::add_into(x, attn_out);
    lc.x_mid = x;
    lc.h2 = detail::layer_norm(x, L.ln2_gain, L.ln2_bias, lc.ln2);
    lc.pre = detail::linear(lc.h2, L.w1, L.b1);
    lc.act = lc.pre;
    for (double& v : lc.act.a) v = detail::gelu(v);
    const Mat ff = detail::linear(lc.act, L.w2, L.b2);
    detail::add_into(x, ff);
  }
  c.x_final = x;
  Mat summary(1, D);
  for (std::size_t j = 0; j < D; ++j) summary(0, j) = x(0, j);
  c.z = detail::layer_norm(summary, w.lnf_gain, w.lnf_bias, c.lnf);
  const Mat logits = detail::linear(c.z, w.head_w, w.head_b);
  for (std::size_t k = 0; k < kNumClasses; ++k) c.logits[k] = logits.a[k];
  return c.logits;
}

/// Backpropagates dlogits through a cached forward pass, accumulating into g.
inline void backward(const Weights& w, const ForwardCache& c, std::span<const double> dlogits, Weights& g) {
  using detail::Mat;
  const auto& cfg = w.cfg;
  const std::size_t D = cfg.d_model, T = cfg.n_tokens(), H = cfg.n_heads, hd = cfg.head_dim();

  Mat dlog(1, kNumClasses);
  std::copy(dlogits.begin(), dlogits.end(), dlog.a.begin());
  const Mat dz = detail::linear_backward(c.z, w.head_w, dlog, g.head_w, g.head_b);
  const Mat dsummary = detail::layer_norm_backward(dz, w.lnf_gain, c.lnf, g.lnf_gain, g.lnf_bias);
  Mat dx(T, D);
  for (std::size_t j = 0; j < D; ++j) dx(0, j) = dsummary(0, j);

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const auto& L = w.layers[li];
    auto& G = g.layers[li];
    const auto& lc = c.layers[li];

    // Feed-forward branch.
    Mat dact = detail::linear_backward(lc.act, L.w2, dx, G.w2, G.b2);
    for (std::size_t i = 0; i < dact.a.size(); ++i) dact.a[i] *= detail::gelu_grad(lc.pre.a[i]);
    const Mat dh2 = detail::linear_backward(lc.h2, L.w1, dact, G.w1, G.b1);
    detail::add_into(dx, detail::layer_norm_backward(dh2, L.ln2_gain, lc.ln2, G.ln2_gain, G.ln2_bias));

    // Attention branch.
    const Mat dcat = detail::linear_backward(lc.attn_cat, L.wo, dx, G.wo, G.bo);
    Mat dq(T, D), dk(T, D), dv(T, D);
    std::vector<double> dp(T);
    for (std::size_t hh = 0; hh < H; ++hh) {
      const std::size_t off = hh * hd;
      const Mat& P = lc.probs[hh];
      for (std::size_t i = 0; i < T; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e) s += dcat(i, off + e) * lc.v(j, off + e);
          dp[j] = s;
          dot += s * P(i, j);
          for (std::size_t e = 0; e < hd; ++e) dv(j, off + e) += P(i, j) * dcat(i, off + e);
        }
        for (std::size_t j = 0; j < T; ++j) {
          const double ds = P(i, j) * (dp[j] - dot) * inv_sqrt;
          for (std::size_t e = 0; e < hd; ++e) {
            dq(i, off + e) += ds * lc.k(j, off + e);
            dk(j, off + e) += ds * lc.q(i, off + e);
          }
        }
      }
    }
    Mat dh = detail::linear_backward(lc.h, L.wq, dq, G.wq, G.bq);
    detail::add_into(dh, detail::linear_backward(lc.h, L.wk, dk, G.wk, G.bk));
    detail::add_into(dh, detail::linear_backward(lc.h, L.wv, dv, G.wv, G.bv));
    detail::add_into(dx, detail::layer_norm_backward(dh, L.ln1_gain, lc.ln1, G.ln1_gain, G.ln1_bias));
  }

  for (std::size_t j = 0; j < D; ++j) g.summary.data[j] += dx(0, j);
  Mat dproj(cfg.n_channel_tokens, D);
  for (std::size_t t = 0; t < cfg.n_channel_tokens; ++t)
    for (std::size_t j = 0; j < D; ++j) {
      dproj(t, j) = dx(t + 1, j);
      g.channel_embed.data[t * D + j] += dx(t + 1, j);
    }
  detail::linear_backward(c.u, w.proj_w, dproj, g.proj_w, g.proj_b);
}

// ---------------------------------------------------------------------------
// Loss, posterior, gradients
// ---------------------------------------------------------------------------

struct Posterior {
  std::array<double, kNumClasses> probs{};

  std::size_t argmax() const { return static_cast<std::size_t>(std::ranges::max_element(probs) - probs.begin()); }
  static Posterior uniform() {
    Posterior p;
    p.probs.fill(1.0 / static_cast<double>(kNumClasses));
    return p;
  }
  bool operator==(const Posterior&) const = default;
};

inline double log_sum_exp(std::span<const double> x) {
  const double mx = *std::ranges::max_element(x);
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

inline Posterior softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  Posterior p;
  for (std::size_t k = 0; k < kNumClasses; ++k) p.probs[k] = std::exp(logits[k] - lse);
  return p;
}

/// -log softmax(logits)[label], via log-sum-exp.
inline double loss_ce(std::span<const double> logits, ClassLabel label) {
  for (double v : logits) require(std::isfinite(v), "loss_ce: non-finite logit");
  return log_sum_exp(logits) - logits[static_cast<std::size_t>(label)];
}

inline Posterior predict(const Weights& w, const FeatureVector& f) { return softmax(forward(w, f)); }

/// A training example. Background samples (no class present) are fitted
/// toward the uniform posterior; `label` is ignored for them.
struct Sample {
  FeatureVector features;
  ClassLabel label = ClassLabel::PullForward;
  bool background = false;
};

/// Cross-entropy against the uniform target: mean_k(-log softmax_k).
inline double loss_uniform(std::span<const double> logits) {
  for (double v : logits) require(std::isfinite(v), "loss_uniform: non-finite logit");
  double mean = 0.0;
  for (double v : logits) mean += v / static_cast<double>(logits.size());
  return log_sum_exp(logits) - mean;
}

inline double sample_loss(std::span<const double> logits, const Sample& s) {
  return s.background ? loss_uniform(logits) : loss_ce(logits, s.label);
}

struct GradResult {
  Weights grad;
  double loss = 0.0;  ///< mean over the batch
};

/// Analytic gradient of the mean cross-entropy over `batch`.
inline GradResult gradients(const Weights& w, std::span<const Sample> batch) {
  require(!batch.empty(), "gradients: empty batch");
  GradResult r{zero_weights(w.cfg), 0.0};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  ForwardCache cache;
  for (const auto& s : batch) {
    const auto logits = forward(w, s.features, &cache);
    r.loss += sample_loss(logits, s) * inv_n;
    auto p = softmax(logits).probs;
    if (s.background) {
      for (double& v : p) v -= 1.0 / static_cast<double>(kNumClasses);
    } else {
      p[static_cast<std::size_t>(s.label)] -= 1.0;
    }
    for (double& v : p) v *= inv_n;
    backward(w, cache, p, r.grad);
  }
  return r;
}

inline double batch_loss(const Weights& w, std::span<const Sample> batch) {
  double loss = 0.0;
  for (const auto& s : batch) loss += sample_loss(forward(w, s.features), s);
  return loss / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  Weights m, v;

  static AdamState for_weights(const Weights& w) { return {0, zero_weights(w.cfg), zero_weights(w.cfg)}; }
  bool operator==(const AdamState&) const = default;
};

/// Bias-corrected Adam update, in place.
inline void adam_update(Weights& w, const Weights& g, AdamState& s, const AdamParams& p = {}) {
  ++s.step;
  const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(s.step));
  std::vector<Tensor*> wt, gt, mt, vt;
  visit_params(w, [&](const std::string&, Tensor& t) { wt.push_back(&t); });
  visit_params(g, [&](const std::string&, const Tensor& t) { gt.push_back(const_cast<Tensor*>(&t)); });
  visit_params(s.m, [&](const std::string&, Tensor& t) { mt.push_back(&t); });
  visit_params(s.v, [&](const std::string&, Tensor& t) { vt.push_back(&t); });
  require(wt.size() == gt.size(), "adam_step: gradient structure mismatch");
  for (std::size_t i = 0; i < wt.size(); ++i) {
    require(wt[i]->shape == gt[i]->shape, "adam_step: gradient shape mismatch");
    auto& wd = wt[i]->data;
    const auto& gd = gt[i]->data;
    auto& md = mt[i]->data;
    auto& vd = vt[i]->data;
    for (std::size_t j = 0; j < wd.size(); ++j) {
      md[j] = p.beta1 * md[j] + (1.0 - p.beta1) * gd[j];
      vd[j] = p.beta2 * vd[j] + (1.0 - p.beta2) * gd[j] * gd[j];
      const double mhat = md[j] / bc1;
      const double vhat = vd[j] / bc2;
      wd[j] -= p.lr * mhat / (std::sqrt(vhat) + p.eps);
    }
  }
}

inline std::pair<Weights, AdamState> adam_step(Weights w, const Weights& g, AdamState s, const AdamParams& p = {}) {
  adam_update(w, g, s, p);
  return {std::move(w), std::move(s)};
}

// ---------------------------------------------------------------------------
// Evaluation and training
// ---------------------------------------------------------------------------

struct Evaluation {
  double accuracy = 0.0;
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};  ///< [true][predicted]
  std::size_t total = 0;
};

inline Evaluation evaluate_predictions(std::span<const ClassLabel> truth, std::span<const std::size_t> predicted) {
  require(!truth.empty(), "evaluate: empty dataset");
  require(truth.size() == predicted.size(), "evaluate: label/prediction count mismatch");
  Evaluation e;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    ++e.confusion[t][predicted[i]];
    correct += t == predicted[i];
  }
  e.total = truth.size();
  e.accuracy = static_cast<double>(correct) / static_cast<double>(e.total);
  return e;
}

inline std::vector<Sample> featurize(const Dataset& d) {
  std::vector<Sample> out;
  out.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto fv = preprocess_and_extract(d.windows[i]);
    fv.layout_id = d.layout_id;
    out.push_back({std::move(fv), d.labels[i]});
  }
  return out;
}

inline Evaluation evaluate(const Weights& w, std::span<const Sample> samples) {
  require(!samples.empty(), "evaluate: empty dataset");
  std::vector<ClassLabel> truth;
  std::vector<std::size_t> pred;
  for (const auto& s : samples) {
    truth.push_back(s.label);
    pred.push_back(predict(w, s.features).argmax());
  }
  return evaluate_predictions(truth, pred);
}

inline Evaluation evaluate(const Weights& w, const Dataset& d) {
  require(!d.empty(), "evaluate: empty dataset");
  require(d.layout_id == kLayoutId, "evaluate: dataset layout '" + d.layout_id + "' does not match model layout");
  return evaluate(w, featurize(d));
}

/// Fits the per-slot shift/scale of the log-compressed inputs.
inline void fit_input_norm(Weights& w, std::span<const Sample> train) {
  require(!train.empty(), "fit_input_norm: empty training set");
  std::vector<double> mean(kFeatureDim, 0.0), var(kFeatureDim, 0.0);
  std::vector<std::array<double, kFeatureDim>> comp;
  comp.reserve(train.size());
  for (const auto& s : train) comp.push_back(compress_features(s.features));
  const double n = static_cast<double>(train.size());
  for (const auto& c : comp)
    for (std::size_t i = 0; i < kFeatureDim; ++i) mean[i] += c[i] / n;
  for (const auto& c : comp)
    for (std::size_t i = 0; i < kFeatureDim; ++i) var[i] += (c[i] - mean[i]) * (c[i] - mean[i]) / n;
  for (std::size_t i = 0; i < kFeatureDim; ++i) {
    w.input_shift.data[i] = mean[i];
    const double sd = std::sqrt(var[i]);
    w.input_scale.data[i] = sd > 1e-9 ? sd : 1.0;
  }
}

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  AdamParams adam{};
  /// Background windows added to the training set, as a fraction of its size.
  /// They teach the model to stay near uniform when no class is present.
  double background_fraction = 0.2;
};

inline std::vector<Sample> background_samples(std::size_t n, std::uint64_t seed, const SynthParams& p = {}) {
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s{preprocess_and_extract(synth_noise_window(mix_seed(seed, 0xB6, i), p)), ClassLabel::PullForward, true};
    out.push_back(std::move(s));
  }
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainReport {
  double initial_val_accuracy = 0.0;
  std::vector<EpochRecord> epochs;
  Evaluation final_eval;

  double final_val_accuracy() const { return epochs.empty() ? initial_val_accuracy : epochs.back().val_accuracy; }
  bool operator==(const TrainReport& o) const {
    return initial_val_accuracy == o.initial_val_accuracy && epochs == o.epochs &&
           final_eval.confusion == o.final_eval.confusion;
  }
};

/// Mini-batch Adam on pre-extracted samples. The shuffle order of every epoch
/// is a function of (seed, epoch) only, so runs are bit-reproducible.
inline std::pair<Weights, TrainReport> train(std::span<const Sample> train_set, std::span<const Sample> val_set,
                                             const ModelConfig& cfg, const TrainOptions& opt) {
  require(!train_set.empty() && !val_set.empty(), "train: empty train or validation set");
  require(opt.epochs >= 1 && opt.batch_size >= 1, "train: epochs and batch_size must be >= 1");
  for (const auto& s : train_set) check_layout(s.features);
  for (const auto& s : val_set) check_layout(s.features);

  Weights w = init_weights(cfg, opt.seed);
  fit_input_norm(w, train_set);
  AdamState state = AdamState::for_weights(w);
  TrainReport report;
  report.initial_val_accuracy = evaluate(w, val_set).accuracy;

  std::vector<std::size_t> order(train_set.size());
  std::vector<Sample> batch;
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng(mix_seed(opt.seed, 0xE90C, epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + opt.batch_size); ++i)
        batch.push_back(train_set[order[i]]);
      auto [grad, loss] = gradients(w, batch);
      require(std::isfinite(loss), "train: loss diverged");
      adam_update(w, grad, state, opt.adam);
      loss_sum += loss;
      ++n_batches;
    }
    report.epochs.push_back({epoch, loss_sum / static_cast<double>(n_batches), evaluate(w, val_set).accuracy});
  }
  report.final_eval = evaluate(w, val_set);
  return {std::move(w), std::move(report)};
}

inline std::pair<Weights, TrainReport> train(const Dataset& d_train, const Dataset& d_val, const ModelConfig& cfg,
                                             const TrainOptions& opt) {
  require(d_train.layout_id == d_val.layout_id, "train: train/val layout mismatch");
  require(d_train.layout_id == kLayoutId, "train: dataset layout '" + d_train.layout_id + "' is not supported");
  require(opt.background_fraction >= 0.0, "train: background_fraction must be >= 0");
  auto tr = featurize(d_train);
  const auto n_bg = static_cast<std::size_t>(std::round(opt.background_fraction * static_cast<double>(tr.size())));
  auto bg = background_samples(n_bg, opt.seed);
  tr.insert(tr.end(), std::make_move_iterator(bg.begin()), std::make_move_iterator(bg.end()));
  const auto va = featurize(d_val);
  return train(tr, va, cfg, opt);
}

}  // namespace psyframe
