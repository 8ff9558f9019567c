#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sasatr/error.hpp"
#include "sasatr/nn/layers.hpp"
#include "sasatr/nn/tensor.hpp"
#include "sasatr/representations.hpp"
#include "sasatr/rng.hpp"

namespace sasatr::nn {

/// One convolution of the per-representation path.
struct ConvSpec {
  const char* name;
  std::size_t filters;
  std::size_t kernel;
};

/// Path layout: conv1 -> relu -> pool -> (conv2a || conv2b) -> add -> relu ->
/// pool -> (conv3a || conv3b) -> add -> relu -> flatten.
inline constexpr std::array<ConvSpec, 5> kPathConvs{{
    {"conv1", 8, 8},
    {"conv2a", 10, 6},
    {"conv2b", 10, 1},
    {"conv3a", 12, 6},
    {"conv3b", 12, 1},
}};
inline constexpr std::size_t kPool = 4;
inline constexpr std::size_t kTapChannels = 12;
inline constexpr std::size_t kParamsPerPath = 2 * kPathConvs.size();

constexpr std::size_t conv_input_channels(std::size_t conv_index) {
  switch (conv_index) {
    case 0: return 1;
    case 1:
    case 2: return kPathConvs[0].filters;
    default: return kPathConvs[1].filters;
  }
}

/// Convolution parameter count of one path; independent of the input size.
constexpr std::size_t path_parameter_count() {
  std::size_t n = 0;
  for (std::size_t i = 0; i < kPathConvs.size(); ++i) {
    const auto& c = kPathConvs[i];
    n += c.kernel * c.kernel * conv_input_channels(i) * c.filters + c.filters;
  }
  return n;
}

static_assert(path_parameter_count() == 7964);

/// Spatial side of the tap (last conv block) for a square input.
constexpr std::size_t tap_side(std::size_t input_side) { return input_side / kPool / kPool; }

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Activations of one path kept for the backward pass.
template <class T>
struct PathCache {
  Tensor<T> input;
  Tensor<T> conv1;  // pre-activation
  Tensor<T> pool1;
  Tensor<T> sum2;   // pre-activation
  Tensor<T> pool2;
  Tensor<T> sum3;   // pre-activation
  Tensor<T> tap;    // relu(sum3)
};

template <class T>
struct ForwardCache {
  std::vector<PathCache<T>> paths;
  std::vector<std::size_t> widths;
  Tensor<T> features;  // concatenation
  Tensor<T> dropout_scale;
  Tensor<T> dropped;
  Tensor<T> logits;
  Tensor<T> scores;
};

/// Multi-path classifier: one convolutional path per representation, then
/// concatenate -> dropout -> dense(1) -> sigmoid.
template <class T>
class Model {
 public:
  Model() = default;

  /// Glorot-uniform weights, zero biases.
  Model(ReprSet reprs, std::size_t input_side, double dropout_rate, std::uint64_t seed)
      : reprs_(std::move(reprs)), input_side_(input_side), dropout_rate_(static_cast<float>(dropout_rate)) {
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidParameter("dropout rate must lie in [0, 1)");
    if (tap_side(input_side) == 0)
      throw ShapeError("input side " + std::to_string(input_side) + " is too small for two pools of 4");
    auto rng = Rng::derive(seed, "init");
    for (std::size_t p = 0; p < reprs_.size(); ++p) {
      for (std::size_t i = 0; i < kPathConvs.size(); ++i) {
        const auto& c = kPathConvs[i];
        const std::size_t cin = conv_input_channels(i);
        const double fan_in = static_cast<double>(c.kernel * c.kernel * cin);
        const double fan_out = static_cast<double>(c.kernel * c.kernel * c.filters);
        add_param(prefix(p) + c.name + "/kernel", {c.kernel, c.kernel, cin, c.filters}, fan_in, fan_out, rng);
        add_param(prefix(p) + c.name + "/bias", {c.filters}, 0, 0, rng);
      }
    }
    const std::size_t F = feature_width();
    add_param("head/dense/kernel", {F, 1}, static_cast<double>(F), 1.0, rng);
    add_param("head/dense/bias", {1}, 0, 0, rng);
  }

  /// Rebuilds a model from named tensors (deserialization).
  Model(ReprSet reprs, double dropout_rate, std::vector<Param<T>> params)
      : reprs_(std::move(reprs)), dropout_rate_(static_cast<float>(dropout_rate)), params_(std::move(params)) {
    if (params_.size() != reprs_.size() * kParamsPerPath + 2)
      throw ShapeError("parameter count does not match the representation set");
    for (std::size_t p = 0; p < reprs_.size(); ++p)
      for (std::size_t i = 0; i < kPathConvs.size(); ++i) {
        const auto& c = kPathConvs[i];
        check_param(p * kParamsPerPath + 2 * i, prefix(p) + c.name + "/kernel",
                    {c.kernel, c.kernel, conv_input_channels(i), c.filters});
        check_param(p * kParamsPerPath + 2 * i + 1, prefix(p) + c.name + "/bias", {c.filters});
      }
    const auto& dense = params_[params_.size() - 2];
    if (dense.value.rank() != 2 || dense.value.dim(0) % reprs_.size() != 0)
      throw ShapeError("dense kernel shape inconsistent with path count");
    const std::size_t per_path = dense.value.dim(0) / reprs_.size();
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(per_path / kTapChannels))));
    if (side * side * kTapChannels != per_path) throw ShapeError("dense kernel width is not a square tap");
    input_side_ = side * kPool * kPool;
    check_param(params_.size() - 2, "head/dense/kernel", {feature_width(), 1});
    check_param(params_.size() - 1, "head/dense/bias", {1});
    for (auto& prm : params_) prm.grad = Tensor<T>(prm.value.shape());
  }

  template <class U>
  Model<U> cast() const {
    std::vector<Param<U>> ps;
    for (const auto& p : params_) ps.push_back({p.name, p.value.template cast<U>(), Tensor<U>(p.value.shape())});
    return Model<U>(reprs_, dropout_rate_, std::move(ps));
  }

  const ReprSet& reprs() const noexcept { return reprs_; }
  std::size_t paths() const noexcept { return reprs_.size(); }
  std::size_t input_side() const noexcept { return input_side_; }
  double dropout_rate() const noexcept { return dropout_rate_; }
  float dropout_rate_f() const noexcept { return dropout_rate_; }
  void set_dropout_rate(double r) {
    if (!(r >= 0.0 && r < 1.0)) throw InvalidParameter("dropout rate must lie in [0, 1)");
    dropout_rate_ = static_cast<float>(r);
  }

  std::size_t path_width() const noexcept {
    const std::size_t s = tap_side(input_side_);
    return s * s * kTapChannels;
  }
  std::size_t feature_width() const noexcept { return path_width() * reprs_.size(); }

  std::vector<Param<T>>& params() noexcept { return params_; }
  const std::vector<Param<T>>& params() const noexcept { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  const Param<T>& conv_param(std::size_t path, std::size_t conv, bool bias) const {
    return params_.at(path * kParamsPerPath + 2 * conv + (bias ? 1 : 0));
  }
  Param<T>& conv_param(std::size_t path, std::size_t conv, bool bias) {
    return params_.at(path * kParamsPerPath + 2 * conv + (bias ? 1 : 0));
  }
  const Param<T>& dense_kernel() const { return params_[params_.size() - 2]; }
  Param<T>& dense_kernel() { return params_[params_.size() - 2]; }
  const Param<T>& dense_bias() const { return params_.back(); }
  Param<T>& dense_bias() { return params_.back(); }

  const Param<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

  /// Forward through one path up to the tap (post-ReLU second add).
  PathCache<T> path_forward(std::size_t path, const Tensor<T>& input) const {
    if (input.rank() != 4 || input.dim(3) != 1)
      throw ShapeError("path input must be (B,H,W,1), got " + to_string(input.shape()));
    const std::string where = prefix(path);
    PathCache<T> c;
    c.input = input;
    c.conv1 = conv2d_forward(input, kernel(path, 0), bias(path, 0));
    check(c.conv1, where + "conv1");
    c.pool1 = avgpool_forward(relu_forward(c.conv1), kPool);
    c.sum2 = add_forward(conv2d_forward(c.pool1, kernel(path, 1), bias(path, 1)),
                         conv2d_forward(c.pool1, kernel(path, 2), bias(path, 2)));
    check(c.sum2, where + "add2");
    c.pool2 = avgpool_forward(relu_forward(c.sum2), kPool);
    c.sum3 = add_forward(conv2d_forward(c.pool2, kernel(path, 3), bias(path, 3)),
                         conv2d_forward(c.pool2, kernel(path, 4), bias(path, 4)));
    check(c.sum3, where + "add3");
    c.tap = relu_forward(c.sum3);
    return c;
  }

  /// Full forward. `inputs[i]` feeds path i; all must share the batch size.
  ForwardCache<T> forward(const std::vector<Tensor<T>>& inputs, Mode mode, Rng* rng = nullptr) const {
    if (inputs.size() != reprs_.size())
      throw ShapeError("model has " + std::to_string(reprs_.size()) + " paths but got " +
                       std::to_string(inputs.size()) + " inputs");
    ForwardCache<T> c;
    std::vector<Tensor<T>> flat;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
      if (inputs[p].dim(0) != inputs[0].dim(0)) throw ShapeError("batch size differs across representations");
      c.paths.push_back(path_forward(p, inputs[p]));
      flat.push_back(flatten(c.paths.back().tap));
      c.widths.push_back(flat.back().dim(1));
    }
    c.features = concatenate(flat);
    if (c.features.dim(1) != feature_width())
      throw ShapeError("concatenated width " + std::to_string(c.features.dim(1)) + " does not match dense input " +
                       std::to_string(feature_width()));
    auto d = dropout_forward(c.features, dropout_rate_, mode, rng);
    c.dropped = std::move(d.output);
    c.dropout_scale = std::move(d.scale);
    c.logits = dense_forward(c.dropped, dense_kernel().value, dense_bias().value);
    check(c.logits, "head/dense");
    c.scores = Tensor<T>(c.logits.shape());
    for (std::size_t i = 0; i < c.logits.size(); ++i) c.scores[i] = sigmoid(c.logits[i]);
    return c;
  }

  /// Accumulates parameter gradients for dL/dlogits.
  void backward(const ForwardCache<T>& c, const Tensor<T>& grad_logits) {
    auto dg = dense_backward(grad_logits, c.dropped, dense_kernel().value);
    accumulate(dense_kernel().grad, dg.weights);
    accumulate(dense_bias().grad, dg.bias);
    const auto g_features = dropout_backward(dg.input, c.dropout_scale);
    const auto parts = split_features(g_features, c.widths);
    for (std::size_t p = 0; p < c.paths.size(); ++p) path_backward(p, c.paths[p], parts[p]);
  }

  /// Backward through one path given dL/dtap (flattened or shaped).
  void path_backward(std::size_t p, const PathCache<T>& c, const Tensor<T>& grad_tap) {
    const std::string where = prefix(p);
    auto g = relu_backward(grad_tap.reshaped(c.tap.shape()), c.sum3);
    auto g3a = conv2d_backward(g, c.pool2, kernel(p, 3));
    auto g3b = conv2d_backward(g, c.pool2, kernel(p, 4));
    accumulate_conv(p, 3, g3a);
    accumulate_conv(p, 4, g3b);
    auto g_pool2 = add_forward(g3a.input, g3b.input);
    auto g_relu2 = avgpool_backward(g_pool2, c.sum2.shape(), kPool);
    g = relu_backward(g_relu2, c.sum2);
    auto g2a = conv2d_backward(g, c.pool1, kernel(p, 1));
    auto g2b = conv2d_backward(g, c.pool1, kernel(p, 2));
    accumulate_conv(p, 1, g2a);
    accumulate_conv(p, 2, g2b);
    auto g_pool1 = add_forward(g2a.input, g2b.input);
    g = relu_backward(avgpool_backward(g_pool1, c.conv1.shape(), kPool), c.conv1);
    auto g1 = conv2d_backward(g, c.input, kernel(p, 0), false);
    accumulate_conv(p, 0, g1);
    for (const auto& prm : params_)
      if (prm.name.starts_with(where)) require_finite(prm.grad, "gradient of " + prm.name);
  }

  static std::string prefix(std::size_t path) { return "path" + std::to_string(path) + "/"; }

 private:
  const Tensor<T>& kernel(std::size_t p, std::size_t conv) const { return conv_param(p, conv, false).value; }
  const Tensor<T>& bias(std::size_t p, std::size_t conv) const { return conv_param(p, conv, true).value; }

  static void check(const Tensor<T>& t, const std::string& layer) { require_finite(t, layer); }

  static void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  void accumulate_conv(std::size_t p, std::size_t conv, const ConvGrads<T>& g) {
    accumulate(conv_param(p, conv, false).grad, g.kernel);
    accumulate(conv_param(p, conv, true).grad, g.bias);
  }

  void add_param(std::string name, Shape shape, double fan_in, double fan_out, Rng& rng) {
    Param<T> p{std::move(name), Tensor<T>(shape), Tensor<T>(shape)};
    if (fan_in > 0.0) {
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : p.value.values()) v = static_cast<T>(rng.uniform(-limit, limit));
    }
    params_.push_back(std::move(p));
  }

  void check_param(std::size_t index, const std::string& name, const Shape& shape) const {
    const auto& p = params_.at(index);
    if (p.name != name) throw ShapeError("expected parameter '" + name + "' at position " + std::to_string(index) +
                                         ", found '" + p.name + "'");
    require_shape(p.value, shape, name);
  }

  ReprSet reprs_;
  std::size_t input_side_ = 0;
  float dropout_rate_ = 0.0f;
  std::vector<Param<T>> params_;
};

/// Builds a model for `reprs` on square inputs of side `input_side`.
template <class T = float>
Model<T> build_model(const ReprSet& reprs, std::size_t input_side, double dropout_rate, std::uint64_t seed) {
  return Model<T>(reprs, input_side, dropout_rate, seed);
}

}  // namespace sasatr::nn
