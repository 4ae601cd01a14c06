#pragma once

// Character-level CNN: embedding -> three valid 1-D convolutions (ReLU) ->
// global max pool -> dense (ReLU) -> dropout -> scalar logit. Forward and
// backward passes are written out by hand on top of Eigen GEMMs; a training
// step is deterministic for a given seed.

#include <Eigen/Core>

#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "urlguard/char_encoder.hpp"
#include "urlguard/error.hpp"
#include "urlguard/metrics.hpp"
#include "urlguard/rng.hpp"

namespace urlguard::cnn {

struct CnnConfig {
  std::size_t embed_dim = 128;
  std::array<std::size_t, 3> conv_filters{64, 128, 256};
  std::array<std::size_t, 3> kernel_sizes{3, 4, 5};
  std::size_t dense_hidden = 128;
  double dropout_rate = 0.5;
  std::size_t seq_len = kSeqLen;
  std::size_t vocab_size = kEmbeddingRows;

  bool operator==(const CnnConfig&) const = default;

  std::size_t conv_in_channels(std::size_t layer) const {
    return layer == 0 ? embed_dim : conv_filters[layer - 1];
  }

  // Output length of conv layer `layer` (valid convolution, stride 1).
  std::size_t conv_out_len(std::size_t layer) const {
    std::size_t len = seq_len;
    for (std::size_t l = 0; l <= layer; ++l) len -= kernel_sizes[l] - 1;
    return len;
  }

  bool filters_increasing() const {
    return conv_filters[0] < conv_filters[1] && conv_filters[1] < conv_filters[2];
  }

  void validate() const {
    auto bad = [](const std::string& what) { fail(Errc::kShapeMismatch, what); };
    if (embed_dim == 0 || dense_hidden == 0 || vocab_size == 0) bad("zero-sized layer");
    if (vocab_size > 256) bad("vocabulary larger than a byte index");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) bad("dropout rate must be in [0,1)");
    std::size_t len = seq_len;
    for (std::size_t l = 0; l < 3; ++l) {
      if (conv_filters[l] == 0 || kernel_sizes[l] == 0) bad("zero-sized convolution");
      if (len < kernel_sizes[l]) bad("sequence too short for the convolution stack");
      len -= kernel_sizes[l] - 1;
    }
  }
};

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
struct CnnParams {
  CnnConfig config;
  Mat<T> embedding;              // vocab_size x embed_dim
  std::array<Mat<T>, 3> conv_w;  // (kernel * c_in) x c_out, window-major
  std::array<Vec<T>, 3> conv_b;
  Mat<T> dense_w;  // conv_filters[2] x dense_hidden
  Vec<T> dense_b;
  Vec<T> out_w;  // dense_hidden
  Vec<T> out_b;  // one element

  static CnnParams zeros(const CnnConfig& cfg) {
    cfg.validate();
    CnnParams p;
    p.config = cfg;
    p.embedding = Mat<T>::Zero(cfg.vocab_size, cfg.embed_dim);
    for (std::size_t l = 0; l < 3; ++l) {
      p.conv_w[l] = Mat<T>::Zero(cfg.kernel_sizes[l] * cfg.conv_in_channels(l),
                                 cfg.conv_filters[l]);
      p.conv_b[l] = Vec<T>::Zero(cfg.conv_filters[l]);
    }
    p.dense_w = Mat<T>::Zero(cfg.conv_filters[2], cfg.dense_hidden);
    p.dense_b = Vec<T>::Zero(cfg.dense_hidden);
    p.out_w = Vec<T>::Zero(cfg.dense_hidden);
    p.out_b = Vec<T>::Zero(1);
    return p;
  }

  // Glorot-uniform weights, zero biases, zero embedding row for padding.
  static CnnParams glorot(const CnnConfig& cfg, std::uint64_t seed) {
    CnnParams p = zeros(cfg);
    Rng rng(seed);
    auto fill = [&rng](auto& m, double fan_in, double fan_out) {
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
      }
    };
    fill(p.embedding, static_cast<double>(cfg.vocab_size),
         static_cast<double>(cfg.embed_dim));
    p.embedding.row(kPadIndex).setZero();
    for (std::size_t l = 0; l < 3; ++l) {
      const auto k = static_cast<double>(cfg.kernel_sizes[l]);
      fill(p.conv_w[l], k * static_cast<double>(cfg.conv_in_channels(l)),
           k * static_cast<double>(cfg.conv_filters[l]));
    }
    fill(p.dense_w, static_cast<double>(cfg.conv_filters[2]),
         static_cast<double>(cfg.dense_hidden));
    fill(p.out_w, static_cast<double>(cfg.dense_hidden), 1.0);
    return p;
  }

  // Visits every tensor in a fixed order as (name, flat data).
  template <class F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&n](std::string_view, auto data) { n += data.size(); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&ok](std::string_view, auto data) {
      for (const auto& x : data) ok = ok && std::isfinite(x);
    });
    return ok;
  }

  template <class U>
  CnnParams<U> cast() const {
    CnnParams<U> out;
    out.config = config;
    out.embedding = embedding.template cast<U>();
    for (std::size_t l = 0; l < 3; ++l) {
      out.conv_w[l] = conv_w[l].template cast<U>();
      out.conv_b[l] = conv_b[l].template cast<U>();
    }
    out.dense_w = dense_w.template cast<U>();
    out.dense_b = dense_b.template cast<U>();
    out.out_w = out_w.template cast<U>();
    out.out_b = out_b.template cast<U>();
    return out;
  }

  bool operator==(const CnnParams& o) const {
    bool eq = config == o.config;
    auto same = [&eq](const auto& a, const auto& b) {
      eq = eq && a.rows() == b.rows() && a.cols() == b.cols() && a == b;
    };
    same(embedding, o.embedding);
    for (std::size_t l = 0; l < 3; ++l) {
      same(conv_w[l], o.conv_w[l]);
      same(conv_b[l], o.conv_b[l]);
    }
    same(dense_w, o.dense_w);
    same(dense_b, o.dense_b);
    same(out_w, o.out_w);
    same(out_b, o.out_b);
    return eq;
  }

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    auto span_of = [](auto& m) {
      return std::span(m.data(), static_cast<std::size_t>(m.size()));
    };
    static constexpr std::array<std::string_view, 3> kConvW = {
        "conv1.weight", "conv2.weight", "conv3.weight"};
    static constexpr std::array<std::string_view, 3> kConvB = {
        "conv1.bias", "conv2.bias", "conv3.bias"};
    f(std::string_view("embedding"), span_of(self.embedding));
    for (std::size_t l = 0; l < 3; ++l) {
      f(kConvW[l], span_of(self.conv_w[l]));
      f(kConvB[l], span_of(self.conv_b[l]));
    }
    f(std::string_view("dense.weight"), span_of(self.dense_w));
    f(std::string_view("dense.bias"), span_of(self.dense_b));
    f(std::string_view("out.weight"), span_of(self.out_w));
    f(std::string_view("out.bias"), span_of(self.out_b));
  }
};

// Row-major block of `count` sequences of `seq_len` vocabulary indices.
struct SequenceBatch {
  std::span<const std::uint8_t> data;
  std::size_t seq_len = kSeqLen;

  std::size_t size() const { return seq_len == 0 ? 0 : data.size() / seq_len; }
  std::span<const std::uint8_t> row(std::size_t i) const {
    return data.subspan(i * seq_len, seq_len);
  }
};

template <class T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

// Numerically stable binary cross-entropy on a logit.
template <class T>
T bce_with_logits(T z, T y) {
  return std::log1p(std::exp(-std::abs(z))) + std::max(z, T(0)) - z * y;
}

// Intermediates of one example's forward pass.
template <class T>
struct ExampleCache {
  Mat<T> embedded;              // seq_len x embed_dim
  std::array<Mat<T>, 3> act;    // post-ReLU conv outputs
  Vec<T> pooled;
  std::vector<Eigen::Index> argmax;
  Vec<T> hidden_pre;
  Vec<T> hidden;                // post-ReLU, post-dropout
  Vec<T> dropout_scale;         // empty when dropout is off
  T logit = T(0);
};

template <class T>
struct ForwardResult {
  std::vector<T> logits;
  std::vector<ExampleCache<T>> cache;
};

namespace detail {

template <class T>
using WindowMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

// Row t of the window view is the k consecutive input rows starting at t,
// flattened; the row-major layout makes this im2col free.
template <class T>
WindowMap<T> windows(const Mat<T>& in, std::size_t kernel) {
  const Eigen::Index cin = in.cols();
  const Eigen::Index tout = in.rows() - static_cast<Eigen::Index>(kernel) + 1;
  return WindowMap<T>(in.data(), tout, static_cast<Eigen::Index>(kernel) * cin,
                      Eigen::OuterStride<>(cin));
}

template <class T>
void conv_relu(const Mat<T>& in, const Mat<T>& w, const Vec<T>& b,
               std::size_t kernel, Mat<T>& out) {
  out.noalias() = windows(in, kernel) * w;
  out.rowwise() += b.transpose();
  out = out.cwiseMax(T(0));
}

inline void check_batch(const CnnConfig& cfg, const SequenceBatch& batch) {
  if (batch.seq_len != cfg.seq_len || batch.data.size() % cfg.seq_len != 0) {
    fail(Errc::kShapeMismatch, "sequence length " + std::to_string(batch.seq_len) +
                                   " does not match model seq_len " +
                                   std::to_string(cfg.seq_len));
  }
  for (auto idx : batch.data) {
    if (idx >= cfg.vocab_size) fail(Errc::kShapeMismatch, "vocabulary index out of range");
  }
}

template <class T>
T forward_example(const CnnParams<T>& p, std::span<const std::uint8_t> seq,
                  bool train_mode, std::uint64_t dropout_seed, ExampleCache<T>& c) {
  const CnnConfig& cfg = p.config;
  c.embedded.resize(static_cast<Eigen::Index>(cfg.seq_len),
                    static_cast<Eigen::Index>(cfg.embed_dim));
  for (std::size_t t = 0; t < seq.size(); ++t) {
    c.embedded.row(static_cast<Eigen::Index>(t)) = p.embedding.row(seq[t]);
  }
  const Mat<T>* in = &c.embedded;
  for (std::size_t l = 0; l < 3; ++l) {
    conv_relu(*in, p.conv_w[l], p.conv_b[l], cfg.kernel_sizes[l], c.act[l]);
    in = &c.act[l];
  }

  const Mat<T>& top = c.act[2];
  const Eigen::Index channels = top.cols();
  c.pooled = top.row(0).transpose();
  c.argmax.assign(static_cast<std::size_t>(channels), 0);
  for (Eigen::Index t = 1; t < top.rows(); ++t) {
    const T* row = top.data() + t * channels;
    for (Eigen::Index ch = 0; ch < channels; ++ch) {
      if (row[ch] > c.pooled[ch]) {
        c.pooled[ch] = row[ch];
        c.argmax[static_cast<std::size_t>(ch)] = t;
      }
    }
  }

  c.hidden_pre.noalias() = p.dense_w.transpose() * c.pooled;
  c.hidden_pre += p.dense_b;
  c.hidden = c.hidden_pre.cwiseMax(T(0));
  if (train_mode && cfg.dropout_rate > 0.0) {
    Rng rng(dropout_seed);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - cfg.dropout_rate));
    c.dropout_scale.resize(c.hidden.size());
    for (Eigen::Index j = 0; j < c.hidden.size(); ++j) {
      c.dropout_scale[j] = rng.uniform() >= cfg.dropout_rate ? keep_scale : T(0);
    }
    c.hidden = c.hidden.cwiseProduct(c.dropout_scale);
  } else {
    c.dropout_scale.resize(0);
  }
  c.logit = c.hidden.dot(p.out_w) + p.out_b[0];
  return c.logit;
}

// Accumulates d(loss)/d(params) into `g` given d(loss)/d(logit).
template <class T>
void backward_example(const CnnParams<T>& p, std::span<const std::uint8_t> seq,
                      const ExampleCache<T>& c, T dlogit, CnnParams<T>& g,
                      std::array<Mat<T>, 3>& dact) {
  const CnnConfig& cfg = p.config;

  g.out_w += dlogit * c.hidden;
  g.out_b[0] += dlogit;
  Vec<T> dhidden = dlogit * p.out_w;
  if (c.dropout_scale.size() > 0) dhidden = dhidden.cwiseProduct(c.dropout_scale);
  for (Eigen::Index j = 0; j < dhidden.size(); ++j) {
    if (!(c.hidden_pre[j] > T(0))) dhidden[j] = T(0);
  }
  g.dense_w.noalias() += c.pooled * dhidden.transpose();
  g.dense_b += dhidden;
  const Vec<T> dpooled = p.dense_w * dhidden;

  // Max pool + last conv: only the argmax row of each channel carries
  // gradient, so this layer is handled sparsely.
  const std::size_t k3 = cfg.kernel_sizes[2];
  const Mat<T>& in3 = c.act[1];
  const Eigen::Index cin3 = in3.cols();
  const Eigen::Index width3 = static_cast<Eigen::Index>(k3) * cin3;
  Mat<T>& din3 = dact[1];
  din3.setZero(in3.rows(), cin3);
  for (Eigen::Index ch = 0; ch < dpooled.size(); ++ch) {
    const Eigen::Index t = c.argmax[static_cast<std::size_t>(ch)];
    const T grad = dpooled[ch];
    if (grad == T(0) || !(c.act[2](t, ch) > T(0))) continue;
    const T* window = in3.data() + t * cin3;
    T* dwindow = din3.data() + t * cin3;
    for (Eigen::Index r = 0; r < width3; ++r) {
      g.conv_w[2](r, ch) += grad * window[r];
      dwindow[r] += grad * p.conv_w[2](r, ch);
    }
    g.conv_b[2][ch] += grad;
  }

  // Dense backward through conv2 and conv1.
  for (int l = 1; l >= 0; --l) {
    const auto ul = static_cast<std::size_t>(l);
    const Mat<T>& in = l == 0 ? c.embedded : c.act[ul - 1];
    Mat<T>& dz = dact[ul];
    dz = (c.act[ul].array() > T(0)).select(dz, T(0));
    const std::size_t k = cfg.kernel_sizes[ul];
    g.conv_w[ul].noalias() += windows(in, k).transpose() * dz;
    g.conv_b[ul] += dz.colwise().sum().transpose();

    Mat<T>& din = l == 0 ? dact[2] : dact[ul - 1];  // dact[2] is scratch here
    din.setZero(in.rows(), in.cols());
    const Eigen::Index cin = in.cols();
    const Eigen::Index tout = dz.rows();
    for (std::size_t kk = 0; kk < k; ++kk) {
      din.middleRows(static_cast<Eigen::Index>(kk), tout).noalias() +=
          dz * p.conv_w[ul]
                   .middleRows(static_cast<Eigen::Index>(kk) * cin, cin)
                   .transpose();
    }
  }
  const Mat<T>& dembedded = dact[2];
  for (std::size_t t = 0; t < seq.size(); ++t) {
    g.embedding.row(seq[t]) += dembedded.row(static_cast<Eigen::Index>(t));
  }
}

inline std::uint64_t example_seed(std::uint64_t seed, std::size_t index) {
  return mix_seed(seed, index);
}

}  // namespace detail

template <class T>
ForwardResult<T> forward(const CnnParams<T>& params, const SequenceBatch& batch,
                         bool train_mode, std::uint64_t seed) {
  detail::check_batch(params.config, batch);
  ForwardResult<T> out;
  out.cache.resize(batch.size());
  out.logits.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.logits[i] = detail::forward_example(params, batch.row(i), train_mode,
                                            detail::example_seed(seed, i), out.cache[i]);
  }
  return out;
}

// Logits with dropout off; no cache is retained.
template <class T>
std::vector<T> logits(const CnnParams<T>& params, const SequenceBatch& batch) {
  detail::check_batch(params.config, batch);
  std::vector<T> out(batch.size());
  ExampleCache<T> cache;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out[i] = detail::forward_example(params, batch.row(i), false, 0, cache);
  }
  return out;
}

template <class T>
std::vector<T> predict_proba(const CnnParams<T>& params, const SequenceBatch& batch) {
  std::vector<T> out = logits(params, batch);
  for (auto& z : out) z = sigmoid(z);
  return out;
}

template <class T>
struct LossAndGrads {
  T loss = T(0);
  CnnParams<T> grads;
  std::vector<T> logits;
};

// Mean BCE-with-logits over the batch, dropout active, and its gradient.
template <class T>
LossAndGrads<T> loss_and_grads(const CnnParams<T>& params, const SequenceBatch& batch,
                               Labels labels, std::uint64_t seed) {
  detail::check_batch(params.config, batch);
  if (labels.size() != batch.size()) {
    fail(Errc::kShapeMismatch, "labels and batch differ in length");
  }
  LossAndGrads<T> out;
  out.grads = CnnParams<T>::zeros(params.config);
  out.logits.resize(batch.size());
  if (batch.size() == 0) return out;
  const T inv_n = T(1) / static_cast<T>(batch.size());
  ExampleCache<T> cache;
  std::array<Mat<T>, 3> scratch;
  T total = T(0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const T z = detail::forward_example(params, batch.row(i), true,
                                        detail::example_seed(seed, i), cache);
    const T y = labels[i] ? T(1) : T(0);
    out.logits[i] = z;
    total += bce_with_logits(z, y);
    detail::backward_example(params, batch.row(i), cache, (sigmoid(z) - y) * inv_n,
                             out.grads, scratch);
  }
  out.loss = total * inv_n;
  return out;
}

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update; `step` is the 1-based step count.
template <class T>
void adam_update(std::span<T> params, std::span<const T> grads, std::span<T> m,
                 std::span<T> v, std::uint64_t step, const AdamHyper& h) {
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * g;
    const double vi = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double update = h.lr * (mi / c1) / (std::sqrt(vi / c2) + h.eps);
    params[i] = static_cast<T>(static_cast<double>(params[i]) - update);
  }
}

template <class T>
struct AdamState {
  CnnParams<T> m;
  CnnParams<T> v;
  std::uint64_t step = 0;
  AdamHyper hyper;

  static AdamState init(const CnnParams<T>& params, AdamHyper hyper = {}) {
    return {CnnParams<T>::zeros(params.config), CnnParams<T>::zeros(params.config), 0,
            hyper};
  }
};

template <class T>
void adam_step(CnnParams<T>& params, const CnnParams<T>& grads, AdamState<T>& state) {
  if (!(grads.config == params.config) || !(state.m.config == params.config)) {
    fail(Errc::kShapeMismatch, "Adam state does not match the parameters");
  }
  ++state.step;
  std::vector<std::span<T>> p, m, v;
  std::vector<std::span<const T>> g;
  params.for_each_tensor([&](std::string_view, std::span<T> d) { p.push_back(d); });
  state.m.for_each_tensor([&](std::string_view, std::span<T> d) { m.push_back(d); });
  state.v.for_each_tensor([&](std::string_view, std::span<T> d) { v.push_back(d); });
  grads.for_each_tensor([&](std::string_view, std::span<const T> d) { g.push_back(d); });
  for (std::size_t i = 0; i < p.size(); ++i) {
    adam_update<T>(p[i], g[i], m[i], v[i], state.step, state.hyper);
  }
}

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t max_epochs = 6;
  std::size_t patience = 1;
  double min_improvement = 1e-5;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

// Tracks the best validation metric; reports when training should stop.
class EarlyStopper {
 public:
  EarlyStopper(std::size_t patience, double min_improvement)
      : patience_(patience), min_improvement_(min_improvement) {}

  // Returns true when this epoch improved on the best so far.
  bool observe(double metric) {
    ++epoch_;
    if (best_epoch_ == 0 || metric > best_ + min_improvement_) {
      best_ = metric;
      best_epoch_ = epoch_;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return best_epoch_ != 0 && stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  double min_improvement_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_auc = 0.0;  // from the epoch's training-mode logits
  double val_auc = 0.0;
  bool improved = false;
  double seconds = 0.0;
};

template <class T>
struct TrainResult {
  CnnParams<T> best_params;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

template <class T>
TrainResult<T> train(const SequenceBatch& train_x, Labels train_y,
                     const SequenceBatch& val_x, Labels val_y,
                     const TrainConfig& cfg, const CnnConfig& cnn_cfg,
                     const EpochCallback& on_epoch = {}) {
  cnn_cfg.validate();
  if (cfg.batch_size == 0 || cfg.max_epochs == 0) {
    fail(Errc::kInvalidArgument, "batch_size and max_epochs must be >= 1");
  }
  if (train_x.size() == 0 || train_x.size() != train_y.size()) {
    fail(Errc::kEmptyTraining, "training set empty or mislabelled");
  }
  if (val_x.size() != val_y.size()) fail(Errc::kShapeMismatch, "validation labels");
  {
    const auto [pos, neg] = urlguard::detail::class_counts(val_y);
    if (pos == 0 || neg == 0) {
      fail(Errc::kDegenerateValidation, "validation set has a single class");
    }
  }

  CnnParams<T> params = CnnParams<T>::glorot(cnn_cfg, mix_seed(cfg.seed, 0));
  AdamState<T> adam = AdamState<T>::init(params, AdamHyper{cfg.learning_rate});
  Rng shuffle_rng(mix_seed(cfg.seed, 1));
  const std::uint64_t dropout_seed = mix_seed(cfg.seed, 2);

  TrainResult<T> result;
  result.best_params = params;
  EarlyStopper stopper(cfg.patience, cfg.min_improvement);
  std::vector<std::size_t> order(train_x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::uint8_t> batch_data;
  std::vector<std::uint8_t> batch_labels;
  std::vector<double> epoch_logits(train_x.size());
  std::uint64_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch_data.clear();
      batch_labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        const auto row = train_x.row(order[i]);
        batch_data.insert(batch_data.end(), row.begin(), row.end());
        batch_labels.push_back(train_y[order[i]]);
      }
      const SequenceBatch batch{batch_data, cnn_cfg.seq_len};
      auto lg = loss_and_grads(params, batch, batch_labels, mix_seed(dropout_seed, step++));
      loss_sum += static_cast<double>(lg.loss) * static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        epoch_logits[order[i]] = static_cast<double>(lg.logits[i - start]);
      }
      adam_step(params, lg.grads, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    const auto [tpos, tneg] = urlguard::detail::class_counts(train_y);
    rec.train_auc = (tpos && tneg) ? roc_auc(epoch_logits, train_y)
                                   : std::numeric_limits<double>::quiet_NaN();
    const std::vector<T> val_logits = logits(params, val_x);
    const std::vector<double> val_scores(val_logits.begin(), val_logits.end());
    rec.val_auc = roc_auc(val_scores, val_y);
    rec.improved = stopper.observe(rec.val_auc);
    if (rec.improved) {
      result.best_params = params;
      result.best_epoch = epoch;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stopper.should_stop()) break;
  }
  return result;
}

}  // namespace urlguard::cnn
