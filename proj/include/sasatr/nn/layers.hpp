#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sasatr/error.hpp"
#include "sasatr/nn/tensor.hpp"
#include "sasatr/rng.hpp"

namespace sasatr::nn {

enum class Mode { train, eval };

// ---- convolution ------------------------------------------------------------

/// Leading zero padding for a stride-1 "same" convolution; the remaining
/// k-1-lead rows/cols are padded at the end.
constexpr std::size_t same_pad_lead(std::size_t k) { return (k - 1) / 2; }

/// Patch matrix of output rows [y0, y1) of one image for a "same"
/// convolution: row ((y-y0)*W + x) holds the kh x kw x Cin window around
/// (y, x), zeros outside the image.
template <class T>
void im2col(const T* img, std::size_t H, std::size_t W, std::size_t Cin, std::size_t KH, std::size_t KW,
            std::size_t y0, std::size_t y1, T* cols) {
  const auto ph = static_cast<std::ptrdiff_t>(same_pad_lead(KH));
  const auto pw = static_cast<std::ptrdiff_t>(same_pad_lead(KW));
  const std::size_t seg = KW * Cin;  // one kernel row of a patch
  const std::size_t row_len = KH * seg;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t ky = 0; ky < KH; ++ky) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - ph;
      const bool row_inside = iy >= 0 && iy < static_cast<std::ptrdiff_t>(H);
      const T* src_row = row_inside ? img + static_cast<std::size_t>(iy) * W * Cin : nullptr;
      for (std::size_t x = 0; x < W; ++x) {
        T* dst = cols + ((y - y0) * W + x) * row_len + ky * seg;
        if (!row_inside) {
          std::fill_n(dst, seg, T(0));
          continue;
        }
        const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(x) - pw;
        if (ix0 >= 0 && ix0 + static_cast<std::ptrdiff_t>(KW) <= static_cast<std::ptrdiff_t>(W)) {
          std::copy_n(src_row + static_cast<std::size_t>(ix0) * Cin, seg, dst);
          continue;
        }
        for (std::size_t kx = 0; kx < KW; ++kx) {
          const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W))
            std::fill_n(dst + kx * Cin, Cin, T(0));
          else
            std::copy_n(src_row + static_cast<std::size_t>(ix) * Cin, Cin, dst + kx * Cin);
        }
      }
    }
}

/// Adjoint of im2col: scatter-adds patch rows of output rows [y0, y1) back
/// onto the image.
template <class T>
void col2im_add(const T* cols, std::size_t H, std::size_t W, std::size_t Cin, std::size_t KH, std::size_t KW,
                std::size_t y0, std::size_t y1, T* img) {
  const auto ph = static_cast<std::ptrdiff_t>(same_pad_lead(KH));
  const auto pw = static_cast<std::ptrdiff_t>(same_pad_lead(KW));
  const std::size_t seg = KW * Cin;
  const std::size_t row_len = KH * seg;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t ky = 0; ky < KH; ++ky) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - ph;
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
      T* dst_row = img + static_cast<std::size_t>(iy) * W * Cin;
      for (std::size_t x = 0; x < W; ++x) {
        const T* src = cols + ((y - y0) * W + x) * row_len + ky * seg;
        const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(x) - pw;
        const std::size_t kx_lo = ix0 < 0 ? static_cast<std::size_t>(-ix0) : 0;
        const auto kx_hi = static_cast<std::size_t>(
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(KW), static_cast<std::ptrdiff_t>(W) - ix0));
        if (kx_lo >= kx_hi) continue;
        T* dst = dst_row + static_cast<std::size_t>(ix0 + static_cast<std::ptrdiff_t>(kx_lo)) * Cin;
        const T* s = src + kx_lo * Cin;
        const std::size_t n = (kx_hi - kx_lo) * Cin;
        for (std::size_t i = 0; i < n; ++i) dst[i] += s[i];
      }
    }
}

/// Output rows per im2col block, sized so a block of patches stays in cache.
inline std::size_t conv_row_block(std::size_t W, std::size_t K, std::size_t H) {
  constexpr std::size_t kTargetElements = 16384;
  return std::clamp<std::size_t>(kTargetElements / std::max<std::size_t>(W * K, 1), 1, H);
}

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// Stride-1 zero-padded "same" cross-correlation plus bias.
/// x: (B,H,W,Cin), kernel: (kh,kw,Cin,Cout), bias: (Cout) -> (B,H,W,Cout).
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  if (x.rank() != 4 || kernel.rank() != 4) throw ShapeError("conv2d expects rank-4 input and kernel");
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  const std::size_t KH = kernel.dim(0), KW = kernel.dim(1), Cout = kernel.dim(3);
  if (kernel.dim(2) != Cin)
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(Cin) + ", kernel expects " +
                     std::to_string(kernel.dim(2)));
  if (KH == 0 || KW == 0 || Cout == 0) throw ShapeError("conv2d kernel dimensions must be positive");
  if (bias.size() != Cout) throw ShapeError("conv2d bias length must equal output channels");

  const std::size_t HW = H * W, K = KH * KW * Cin;
  const auto idx = [](std::size_t n) { return static_cast<Eigen::Index>(n); };
  Tensor<T> out({B, H, W, Cout});
  ConstMatrixMap<T> km(kernel.data(), idx(K), idx(Cout));
  const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data(), idx(Cout));
  if (KH * KW == 1) {
    MatrixMap<T> om(out.data(), idx(B * HW), idx(Cout));
    om.noalias() = ConstMatrixMap<T>(x.data(), idx(B * HW), idx(Cin)) * km;
    om.rowwise() += bv;
    return out;
  }
  const std::size_t block = conv_row_block(W, K, H);
  std::vector<T> cols(block * W * K);
  for (std::size_t b = 0; b < B; ++b) {
    const T* img = x.data() + b * HW * Cin;
    for (std::size_t y0 = 0; y0 < H; y0 += block) {
      const std::size_t y1 = std::min(H, y0 + block);
      const std::size_t rows = (y1 - y0) * W;
      im2col(img, H, W, Cin, KH, KW, y0, y1, cols.data());
      MatrixMap<T> om(out.data() + (b * HW + y0 * W) * Cout, idx(rows), idx(Cout));
      om.noalias() = ConstMatrixMap<T>(cols.data(), idx(rows), idx(K)) * km;
      om.rowwise() += bv;
    }
  }
  return out;
}

template <class T>
struct ConvGrads {
  Tensor<T> input;  // empty when not requested
  Tensor<T> kernel;
  Tensor<T> bias;
};

/// Gradients of conv2d_forward. The input gradient is skipped when
/// `want_input_grad` is false (first layer of a path).
template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& kernel,
                             bool want_input_grad = true) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  const std::size_t KH = kernel.dim(0), KW = kernel.dim(1), Cout = kernel.dim(3);
  if (kernel.dim(2) != Cin) throw ShapeError("conv2d backward channel mismatch");
  require_shape(grad_out, {B, H, W, Cout}, "conv2d backward gradient");

  ConvGrads<T> g{want_input_grad ? Tensor<T>(x.shape()) : Tensor<T>(), Tensor<T>(kernel.shape()),
                 Tensor<T>({Cout})};
  const std::size_t HW = H * W, K = KH * KW * Cin;
  const auto idx = [](std::size_t n) { return static_cast<Eigen::Index>(n); };
  ConstMatrixMap<T> km(kernel.data(), idx(K), idx(Cout));
  MatrixMap<T> gk(g.kernel.data(), idx(K), idx(Cout));
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(g.bias.data(), idx(Cout));
  if (KH * KW == 1) {
    ConstMatrixMap<T> go(grad_out.data(), idx(B * HW), idx(Cout));
    ConstMatrixMap<T> xm(x.data(), idx(B * HW), idx(Cin));
    gk.noalias() += xm.transpose() * go;
    gb += go.colwise().sum();
    if (want_input_grad) MatrixMap<T>(g.input.data(), idx(B * HW), idx(Cin)).noalias() = go * km.transpose();
    return g;
  }
  const std::size_t block = conv_row_block(W, K, H);
  std::vector<T> cols(block * W * K);
  std::vector<T> dcols(want_input_grad ? block * W * K : 0);
  for (std::size_t b = 0; b < B; ++b) {
    const T* img = x.data() + b * HW * Cin;
    for (std::size_t y0 = 0; y0 < H; y0 += block) {
      const std::size_t y1 = std::min(H, y0 + block);
      const std::size_t rows = (y1 - y0) * W;
      im2col(img, H, W, Cin, KH, KW, y0, y1, cols.data());
      ConstMatrixMap<T> go(grad_out.data() + (b * HW + y0 * W) * Cout, idx(rows), idx(Cout));
      gk.noalias() += ConstMatrixMap<T>(cols.data(), idx(rows), idx(K)).transpose() * go;
      gb += go.colwise().sum();
      if (!want_input_grad) continue;
      MatrixMap<T>(dcols.data(), idx(rows), idx(K)).noalias() = go * km.transpose();
      col2im_add(dcols.data(), H, W, Cin, KH, KW, y0, y1, g.input.data() + b * HW * Cin);
    }
  }
  return g;
}

// ---- pooling ----------------------------------------------------------------

/// Non-overlapping p x p mean; trailing rows/cols beyond p*floor(n/p) are dropped.
template <class T>
Tensor<T> avgpool_forward(const Tensor<T>& x, std::size_t pool) {
  if (pool == 0) throw ShapeError("pool size must be >= 1");
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::size_t OH = H / pool, OW = W / pool;
  if (OH == 0 || OW == 0)
    throw ShapeError("average pool of " + std::to_string(pool) + " on " + std::to_string(H) + "x" +
                     std::to_string(W) + " input yields an empty output");
  Tensor<T> out({B, OH, OW, C});
  const T scale = T(1) / static_cast<T>(pool * pool);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        T* o = &out.at(b, oy, ox, 0);
        for (std::size_t dy = 0; dy < pool; ++dy)
          for (std::size_t dx = 0; dx < pool; ++dx) {
            const T* in = &x.at(b, oy * pool + dy, ox * pool + dx, 0);
            for (std::size_t c = 0; c < C; ++c) o[c] += in[c];
          }
        for (std::size_t c = 0; c < C; ++c) o[c] *= scale;
      }
  return out;
}

template <class T>
Tensor<T> avgpool_backward(const Tensor<T>& grad_out, const Shape& input_shape, std::size_t pool) {
  const std::size_t B = input_shape[0], H = input_shape[1], W = input_shape[2], C = input_shape[3];
  const std::size_t OH = H / pool, OW = W / pool;
  require_shape(grad_out, {B, OH, OW, C}, "average pool backward gradient");
  Tensor<T> g(input_shape);
  const T scale = T(1) / static_cast<T>(pool * pool);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const T* go = &grad_out.at(b, oy, ox, 0);
        for (std::size_t dy = 0; dy < pool; ++dy)
          for (std::size_t dx = 0; dx < pool; ++dx) {
            T* gi = &g.at(b, oy * pool + dy, ox * pool + dx, 0);
            for (std::size_t c = 0; c < C; ++c) gi[c] = go[c] * scale;
          }
      }
  return g;
}

// ---- elementwise ------------------------------------------------------------

template <class T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.values()) v = v > T(0) ? v : T(0);
  return y;
}

/// Subgradient 0 at 0.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& pre_activation) {
  require_shape(grad_out, pre_activation.shape(), "relu backward gradient");
  Tensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(pre_activation[i] > T(0))) g[i] = T(0);
  return g;
}

template <class T>
Tensor<T> add_forward(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(b, a.shape(), "add operand");
  Tensor<T> y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

template <class T>
Tensor<T> flatten(const Tensor<T>& x) {
  const std::size_t B = x.dim(0);
  return x.reshaped({B, B ? x.size() / B : 0});
}

/// Concatenation of (B, F_i) matrices along the feature axis.
template <class T>
Tensor<T> concatenate(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concatenate of nothing");
  const std::size_t B = parts.front().dim(0);
  std::size_t F = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != B) throw ShapeError("concatenate expects (B,F) matrices with equal batch");
    F += p.dim(1);
  }
  Tensor<T> out({B, F});
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t f = p.dim(1);
      std::copy_n(p.data() + b * f, f, out.data() + b * F + off);
      off += f;
    }
  }
  return out;
}

template <class T>
std::vector<Tensor<T>> split_features(const Tensor<T>& x, const std::vector<std::size_t>& widths) {
  const std::size_t B = x.dim(0), F = x.dim(1);
  std::vector<Tensor<T>> parts;
  std::size_t off = 0;
  for (std::size_t f : widths) {
    Tensor<T> p({B, f});
    for (std::size_t b = 0; b < B; ++b) std::copy_n(x.data() + b * F + off, f, p.data() + b * f);
    parts.push_back(std::move(p));
    off += f;
  }
  if (off != F) throw ShapeError("split widths do not cover the feature axis");
  return parts;
}

// ---- dropout ----------------------------------------------------------------

template <class T>
struct DropoutResult {
  Tensor<T> output;
  Tensor<T> scale;  // per-element multiplier applied (0 or 1/(1-rate)); empty in eval mode
};

/// Inverted dropout. Identity in eval mode and for rate 0.
template <class T>
DropoutResult<T> dropout_forward(const Tensor<T>& x, double rate, Mode mode, Rng* rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidParameter("dropout rate must lie in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return {x, Tensor<T>()};
  if (!rng) throw InvalidParameter("training-mode dropout needs a random stream");
  DropoutResult<T> r{x, Tensor<T>(x.shape())};
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T s = rng->uniform() < rate ? T(0) : keep_scale;
    r.scale[i] = s;
    r.output[i] = x[i] * s;
  }
  return r;
}

template <class T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const Tensor<T>& scale) {
  if (scale.size() == 0) return grad_out;
  Tensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= scale[i];
  return g;
}

// ---- dense ------------------------------------------------------------------

/// x: (B,F), weights: (F,O), bias: (O) -> (B,O).
template <class T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (x.rank() != 2 || weights.rank() != 2) throw ShapeError("dense expects (B,F) input and (F,O) weights");
  const std::size_t B = x.dim(0), F = x.dim(1), O = weights.dim(1);
  if (weights.dim(0) != F)
    throw ShapeError("dense feature mismatch: input has " + std::to_string(F) + ", weights expect " +
                     std::to_string(weights.dim(0)));
  if (bias.size() != O) throw ShapeError("dense bias length must equal output width");
  Tensor<T> y({B, O});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o) {
      T acc = bias[o];
      for (std::size_t f = 0; f < F; ++f) acc += x[b * F + f] * weights[f * O + o];
      y[b * O + o] = acc;
    }
  return y;
}

template <class T>
struct DenseGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <class T>
DenseGrads<T> dense_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& weights) {
  const std::size_t B = x.dim(0), F = x.dim(1), O = weights.dim(1);
  require_shape(grad_out, {B, O}, "dense backward gradient");
  DenseGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weights.shape()), Tensor<T>({O})};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o) {
      const T go = grad_out[b * O + o];
      g.bias[o] += go;
      for (std::size_t f = 0; f < F; ++f) {
        g.weights[f * O + o] += x[b * F + f] * go;
        g.input[b * F + f] += weights[f * O + o] * go;
      }
    }
  return g;
}

// ---- output -----------------------------------------------------------------

template <class T>
T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

inline constexpr double kProbClamp = 1e-7;

template <class T>
T clamp_probability(T p) {
  return std::clamp(p, static_cast<T>(kProbClamp), static_cast<T>(1.0 - kProbClamp));
}

/// Mean binary cross-entropy on clamped probabilities.
template <class T>
T bce_loss(const Tensor<T>& probs, const std::vector<T>& labels) {
  if (probs.size() != labels.size()) throw ShapeError("bce: probabilities and labels differ in length");
  T loss{};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const T p = clamp_probability(probs[i]);
    loss -= labels[i] * std::log(p) + (T(1) - labels[i]) * std::log(T(1) - p);
  }
  return loss / static_cast<T>(probs.size());
}

template <class T>
struct LossAndGrad {
  T loss{};
  Tensor<T> probs;
  Tensor<T> grad_logits;  // (p - y) / B
};

/// Fused sigmoid + BCE: loss on clamped probabilities, gradient w.r.t. the
/// logits.
template <class T>
LossAndGrad<T> sigmoid_bce(const Tensor<T>& logits, const std::vector<T>& labels) {
  if (logits.size() != labels.size()) throw ShapeError("bce: logits and labels differ in length");
  LossAndGrad<T> r{T{}, Tensor<T>(logits.shape()), Tensor<T>(logits.shape())};
  const auto B = static_cast<T>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const T p = sigmoid(logits[i]);
    r.probs[i] = p;
    r.grad_logits[i] = (p - labels[i]) / B;
  }
  r.loss = bce_loss(r.probs, labels);
  return r;
}

}  // namespace sasatr::nn
