#pragma once

// Small two-stage convolutional classifier over one-hot byte-class images:
//
//   conv3x3(6->8) ReLU maxpool2 -> conv3x3(8->16) ReLU maxpool2
//     -> dense(16*(S/4)^2 -> 64) ReLU -> dense(64 -> 2) -> softmax
//
// Convolutions are stride 1 with zero "same" padding. S is the input side,
// 64 for order-6 images; smaller multiples of 4 are accepted so gradient
// checks can run on a reduced model. All arithmetic is double precision.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "detail/error.hpp"
#include "detail/random.hpp"
#include "labels.hpp"
#include "render.hpp"
#include "tensor.hpp"

namespace msquid::cnn {

inline constexpr std::size_t kInputChannels = kClassCount;
inline constexpr std::size_t kConv1Filters = 8;
inline constexpr std::size_t kConv2Filters = 16;
inline constexpr std::size_t kHidden = 64;
inline constexpr std::size_t kOutputs = 2;
inline constexpr std::size_t kKernel = 3;
inline constexpr std::size_t kDefaultInputSide = 64;

enum class CnnErrc {
  WrongOrder,
  ShapeMismatch,
  TooFewSamples,
  NonFiniteLoss,
  InvalidConfig,
  BadMagic,
  VersionMismatch,
  SizeMismatch,
};
using CnnError = Error<CnnErrc>;

struct CnnModel {
  std::size_t input_side = kDefaultInputSide;
  std::uint64_t rng_seed = 0;
  std::vector<double> conv1_w, conv1_b;    // [8][6][3][3], [8]
  std::vector<double> conv2_w, conv2_b;    // [16][8][3][3], [16]
  std::vector<double> dense1_w, dense1_b;  // [64][flat], [64]
  std::vector<double> dense2_w, dense2_b;  // [2][64], [2]

  static std::size_t flat_size_for(std::size_t side) {
    return kConv2Filters * (side / 4) * (side / 4);
  }
  std::size_t flat_size() const { return flat_size_for(input_side); }

  /// Same shapes as a model of the given side, every parameter zero.
  static CnnModel zeros(std::size_t side = kDefaultInputSide) {
    if (side < 4 || side % 4 != 0) {
      throw CnnError(CnnErrc::ShapeMismatch, "input side must be a positive multiple of 4");
    }
    CnnModel m;
    m.input_side = side;
    m.conv1_w.assign(kConv1Filters * kInputChannels * kKernel * kKernel, 0.0);
    m.conv1_b.assign(kConv1Filters, 0.0);
    m.conv2_w.assign(kConv2Filters * kConv1Filters * kKernel * kKernel, 0.0);
    m.conv2_b.assign(kConv2Filters, 0.0);
    m.dense1_w.assign(kHidden * flat_size_for(side), 0.0);
    m.dense1_b.assign(kHidden, 0.0);
    m.dense2_w.assign(kOutputs * kHidden, 0.0);
    m.dense2_b.assign(kOutputs, 0.0);
    return m;
  }

  /// He-uniform weights (limit sqrt(6 / fan_in)), zero biases.
  static CnnModel init(std::uint64_t seed, std::size_t side = kDefaultInputSide) {
    CnnModel m = zeros(side);
    m.rng_seed = seed;
    Rng rng(seed);
    auto fill = [&](std::vector<double>& w, std::size_t fan_in) {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (double& v : w) v = rng.uniform(-limit, limit);
    };
    fill(m.conv1_w, kInputChannels * kKernel * kKernel);
    fill(m.conv2_w, kConv1Filters * kKernel * kKernel);
    fill(m.dense1_w, m.flat_size());
    fill(m.dense2_w, kHidden);
    return m;
  }

  // Fixed order: conv1.w conv1.b conv2.w conv2.b dense1.w dense1.b dense2.w dense2.b
  std::array<std::vector<double>*, 8> blocks() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &dense1_w, &dense1_b, &dense2_w, &dense2_b};
  }
  std::array<const std::vector<double>*, 8> blocks() const {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &dense1_w, &dense1_b, &dense2_w, &dense2_b};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* b : blocks()) n += b->size();
    return n;
  }

  bool all_finite() const {
    for (const auto* b : blocks()) {
      for (double v : *b) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

  /// Flat parameter access in block order.
  double& param(std::size_t i) {
    for (auto* b : blocks()) {
      if (i < b->size()) return (*b)[i];
      i -= b->size();
    }
    throw CnnError(CnnErrc::ShapeMismatch, "parameter index out of range");
  }
  double param(std::size_t i) const { return const_cast<CnnModel&>(*this).param(i); }

  void add_scaled(const CnnModel& other, double scale) {
    auto dst = blocks();
    auto src = other.blocks();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      auto& d = *dst[k];
      const auto& s = *src[k];
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
    }
  }

  void set_zero() {
    for (auto* b : blocks()) std::fill(b->begin(), b->end(), 0.0);
  }
};

/// One-hot channels in ByteClass order (Null .. Padding), shape [6, side, side].
inline Tensor encode_input(const VisImage& img, unsigned expected_order = kDefaultOrder) {
  if (img.order() != expected_order) {
    throw CnnError(CnnErrc::WrongOrder, "image order " + std::to_string(img.order()) +
                                            " does not match model order " +
                                            std::to_string(expected_order));
  }
  const std::size_t side = img.side();
  const std::size_t plane = side * side;
  Tensor t({kInputChannels, side, side});
  const auto& cells = img.cells();
  for (std::size_t i = 0; i < plane; ++i) {
    t.values[static_cast<std::size_t>(cells[i]) * plane + i] = 1.0;
  }
  return t;
}

using Probabilities = std::array<double, kOutputs>;  // {benign, malicious}

namespace detail {

inline void conv3x3_forward(const double* in, std::size_t channels, std::size_t side,
                            const double* w, const double* b, std::size_t filters, double* out) {
  const std::size_t plane = side * side;
  const auto s = static_cast<std::ptrdiff_t>(side);
  for (std::size_t o = 0; o < filters; ++o) {
    double* dst_plane = out + o * plane;
    std::fill(dst_plane, dst_plane + plane, b[o]);
    for (std::size_t c = 0; c < channels; ++c) {
      const double* src_plane = in + c * plane;
      for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
        for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
          const double wv = w[((o * channels + c) * 3 + static_cast<std::size_t>(ky)) * 3 +
                              static_cast<std::size_t>(kx)];
          const std::ptrdiff_t dy = ky - 1, dx = kx - 1;
          const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy), y1 = std::min(s, s - dy);
          const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min(s, s - dx);
          for (std::ptrdiff_t y = y0; y < y1; ++y) {
            const double* src = src_plane + (y + dy) * s + dx;
            double* dst = dst_plane + y * s;
            for (std::ptrdiff_t x = x0; x < x1; ++x) dst[x] += wv * src[x];
          }
        }
      }
    }
  }
}

// Accumulates weight and bias gradients; writes the input gradient when
// d_in is non-null.
inline void conv3x3_backward(const double* in, std::size_t channels, std::size_t side,
                             const double* w, std::size_t filters, const double* d_out,
                             double* d_w, double* d_b, double* d_in) {
  const std::size_t plane = side * side;
  const auto s = static_cast<std::ptrdiff_t>(side);
  if (d_in) std::fill(d_in, d_in + channels * plane, 0.0);
  for (std::size_t o = 0; o < filters; ++o) {
    const double* g_plane = d_out + o * plane;
    double bsum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) bsum += g_plane[i];
    d_b[o] += bsum;
    for (std::size_t c = 0; c < channels; ++c) {
      const double* src_plane = in + c * plane;
      for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
        for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
          const std::size_t wi = ((o * channels + c) * 3 + static_cast<std::size_t>(ky)) * 3 +
                                 static_cast<std::size_t>(kx);
          const std::ptrdiff_t dy = ky - 1, dx = kx - 1;
          const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy), y1 = std::min(s, s - dy);
          const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min(s, s - dx);
          double acc = 0.0;
          for (std::ptrdiff_t y = y0; y < y1; ++y) {
            const double* src = src_plane + (y + dy) * s + dx;
            const double* g = g_plane + y * s;
            for (std::ptrdiff_t x = x0; x < x1; ++x) acc += g[x] * src[x];
          }
          d_w[wi] += acc;
          if (d_in) {
            const double wv = w[wi];
            double* din_plane = d_in + c * plane;
            for (std::ptrdiff_t y = y0; y < y1; ++y) {
              double* dst = din_plane + (y + dy) * s + dx;
              const double* g = g_plane + y * s;
              for (std::ptrdiff_t x = x0; x < x1; ++x) dst[x] += wv * g[x];
            }
          }
        }
      }
    }
  }
}

// Input-sparse variants for the first layer, whose one-hot input is 5/6
// zeros: work scales with the number of non-zero input values.
inline void conv3x3_forward_sparse(const double* in, std::size_t channels, std::size_t side,
                                   const double* w, const double* b, std::size_t filters,
                                   double* out) {
  const std::size_t plane = side * side;
  const auto s = static_cast<std::ptrdiff_t>(side);
  for (std::size_t o = 0; o < filters; ++o) std::fill(out + o * plane, out + (o + 1) * plane, b[o]);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::ptrdiff_t iy = 0; iy < s; ++iy) {
      for (std::ptrdiff_t ix = 0; ix < s; ++ix) {
        const double v = in[c * plane + static_cast<std::size_t>(iy * s + ix)];
        if (v == 0.0) continue;
        for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t y = iy - (ky - 1);
          if (y < 0 || y >= s) continue;
          for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t x = ix - (kx - 1);
            if (x < 0 || x >= s) continue;
            const std::size_t pos = static_cast<std::size_t>(y * s + x);
            const std::size_t wk = (c * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx);
            for (std::size_t o = 0; o < filters; ++o) {
              out[o * plane + pos] += w[o * channels * 9 + wk] * v;
            }
          }
        }
      }
    }
  }
}

inline void conv3x3_backward_weights_sparse(const double* in, std::size_t channels,
                                            std::size_t side, std::size_t filters,
                                            const double* d_out, double* d_w, double* d_b) {
  const std::size_t plane = side * side;
  const auto s = static_cast<std::ptrdiff_t>(side);
  for (std::size_t o = 0; o < filters; ++o) {
    double bsum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) bsum += d_out[o * plane + i];
    d_b[o] += bsum;
  }
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::ptrdiff_t iy = 0; iy < s; ++iy) {
      for (std::ptrdiff_t ix = 0; ix < s; ++ix) {
        const double v = in[c * plane + static_cast<std::size_t>(iy * s + ix)];
        if (v == 0.0) continue;
        for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t y = iy - (ky - 1);
          if (y < 0 || y >= s) continue;
          for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t x = ix - (kx - 1);
            if (x < 0 || x >= s) continue;
            const std::size_t pos = static_cast<std::size_t>(y * s + x);
            const std::size_t wk = (c * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx);
            for (std::size_t o = 0; o < filters; ++o) {
              d_w[o * channels * 9 + wk] += d_out[o * plane + pos] * v;
            }
          }
        }
      }
    }
  }
}

// ReLU followed by 2x2 max-pool. arg receives the flat index into `in` of
// each window's maximum (first one on ties).
inline void relu_maxpool_forward(const double* in, std::size_t channels, std::size_t side,
                                 double* out, std::uint32_t* arg) {
  const std::size_t half = side / 2;
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t base = c * side * side;
    for (std::size_t py = 0; py < half; ++py) {
      for (std::size_t px = 0; px < half; ++px) {
        const std::size_t i0 = base + (2 * py) * side + 2 * px;
        const std::size_t cand[4] = {i0, i0 + 1, i0 + side, i0 + side + 1};
        std::size_t best = cand[0];
        double best_v = std::max(0.0, in[best]);
        for (int k = 1; k < 4; ++k) {
          const double v = std::max(0.0, in[cand[k]]);
          if (v > best_v) {
            best_v = v;
            best = cand[k];
          }
        }
        const std::size_t o = (c * half + py) * half + px;
        out[o] = best_v;
        arg[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

inline void relu_maxpool_backward(const double* pre, const std::uint32_t* arg, std::size_t pooled,
                                  const double* d_out, double* d_in, std::size_t in_size) {
  std::fill(d_in, d_in + in_size, 0.0);
  for (std::size_t o = 0; o < pooled; ++o) {
    if (pre[arg[o]] > 0.0) d_in[arg[o]] += d_out[o];
  }
}

}  // namespace detail

// Activations of one forward pass, reused across samples to avoid
// reallocation during training.
struct Workspace {
  std::size_t side = 0;
  std::vector<double> a1, p1, a2, p2, h1;
  std::vector<std::uint32_t> p1_arg, p2_arg;
  std::array<double, kOutputs> logits{};
  Probabilities probs{};
  // backward scratch
  std::vector<double> d_a1, d_p1, d_a2, d_p2, d_h1;

  void reserve(std::size_t s) {
    if (side == s) return;
    side = s;
    const std::size_t half = s / 2, quarter = s / 4;
    a1.assign(kConv1Filters * s * s, 0.0);
    d_a1.assign(a1.size(), 0.0);
    p1.assign(kConv1Filters * half * half, 0.0);
    d_p1.assign(p1.size(), 0.0);
    p1_arg.assign(p1.size(), 0);
    a2.assign(kConv2Filters * half * half, 0.0);
    d_a2.assign(a2.size(), 0.0);
    p2.assign(kConv2Filters * quarter * quarter, 0.0);
    d_p2.assign(p2.size(), 0.0);
    p2_arg.assign(p2.size(), 0);
    h1.assign(kHidden, 0.0);
    d_h1.assign(kHidden, 0.0);
  }
};

inline Probabilities softmax(const std::array<double, kOutputs>& z) {
  const double m = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
  const double sum = e0 + e1;
  return {e0 / sum, e1 / sum};
}

inline void check_input(const CnnModel& model, const Tensor& x) {
  const std::size_t s = model.input_side;
  if (x.shape != std::vector<std::size_t>{kInputChannels, s, s} ||
      x.values.size() != kInputChannels * s * s) {
    throw CnnError(CnnErrc::ShapeMismatch, "input tensor shape does not match [6, " +
                                               std::to_string(s) + ", " + std::to_string(s) + "]");
  }
}

inline const Probabilities& forward(const CnnModel& model, const Tensor& x, Workspace& ws) {
  check_input(model, x);
  const std::size_t s = model.input_side, half = s / 2;
  ws.reserve(s);
  detail::conv3x3_forward_sparse(x.values.data(), kInputChannels, s, model.conv1_w.data(),
                                 model.conv1_b.data(), kConv1Filters, ws.a1.data());
  detail::relu_maxpool_forward(ws.a1.data(), kConv1Filters, s, ws.p1.data(), ws.p1_arg.data());
  detail::conv3x3_forward(ws.p1.data(), kConv1Filters, half, model.conv2_w.data(),
                          model.conv2_b.data(), kConv2Filters, ws.a2.data());
  detail::relu_maxpool_forward(ws.a2.data(), kConv2Filters, half, ws.p2.data(), ws.p2_arg.data());

  const std::size_t flat = ws.p2.size();
  for (std::size_t j = 0; j < kHidden; ++j) {
    const double* row = model.dense1_w.data() + j * flat;
    double acc = 0.0;
    for (std::size_t i = 0; i < flat; ++i) acc += row[i] * ws.p2[i];
    ws.h1[j] = model.dense1_b[j] + acc;
  }
  for (std::size_t k = 0; k < kOutputs; ++k) {
    double acc = model.dense2_b[k];
    for (std::size_t j = 0; j < kHidden; ++j) {
      acc += model.dense2_w[k * kHidden + j] * std::max(0.0, ws.h1[j]);
    }
    ws.logits[k] = acc;
  }
  ws.probs = softmax(ws.logits);
  return ws.probs;
}

inline Probabilities forward(const CnnModel& model, const Tensor& x) {
  Workspace ws;
  return forward(model, x, ws);
}

inline constexpr double kMinProbability = 1e-12;

/// Cross-entropy: -ln p(true class), with p clipped below at 1e-12.
inline double loss(const Probabilities& p, Label label) {
  return -std::log(std::max(p[static_cast<std::size_t>(label)], kMinProbability));
}

/// Forward + backward for one sample. Gradients are added into `grad`
/// (which must have the model's shapes); returns the sample loss.
inline double accumulate_gradient(const CnnModel& model, const Tensor& x, Label label,
                                  Workspace& ws, CnnModel& grad) {
  const Probabilities& p = forward(model, x, ws);
  const double sample_loss = loss(p, label);
  const std::size_t s = model.input_side, half = s / 2;
  const std::size_t flat = ws.p2.size();

  std::array<double, kOutputs> dz{p[0], p[1]};
  dz[static_cast<std::size_t>(label)] -= 1.0;

  for (std::size_t j = 0; j < kHidden; ++j) ws.d_h1[j] = 0.0;
  for (std::size_t k = 0; k < kOutputs; ++k) {
    grad.dense2_b[k] += dz[k];
    for (std::size_t j = 0; j < kHidden; ++j) {
      grad.dense2_w[k * kHidden + j] += dz[k] * std::max(0.0, ws.h1[j]);
      ws.d_h1[j] += model.dense2_w[k * kHidden + j] * dz[k];
    }
  }
  std::fill(ws.d_p2.begin(), ws.d_p2.end(), 0.0);
  for (std::size_t j = 0; j < kHidden; ++j) {
    if (!(ws.h1[j] > 0.0)) continue;  // ReLU gate closed: no gradient flows
    const double g = ws.d_h1[j];
    grad.dense1_b[j] += g;
    double* grow = grad.dense1_w.data() + j * flat;
    const double* wrow = model.dense1_w.data() + j * flat;
    for (std::size_t i = 0; i < flat; ++i) {
      grow[i] += g * ws.p2[i];
      ws.d_p2[i] += wrow[i] * g;
    }
  }
  detail::relu_maxpool_backward(ws.a2.data(), ws.p2_arg.data(), ws.p2.size(), ws.d_p2.data(),
                                ws.d_a2.data(), ws.a2.size());
  detail::conv3x3_backward(ws.p1.data(), kConv1Filters, half, model.conv2_w.data(), kConv2Filters,
                           ws.d_a2.data(), grad.conv2_w.data(), grad.conv2_b.data(),
                           ws.d_p1.data());
  detail::relu_maxpool_backward(ws.a1.data(), ws.p1_arg.data(), ws.p1.size(), ws.d_p1.data(),
                                ws.d_a1.data(), ws.a1.size());
  detail::conv3x3_backward_weights_sparse(x.values.data(), kInputChannels, s, kConv1Filters,
                                          ws.d_a1.data(), grad.conv1_w.data(), grad.conv1_b.data());
  return sample_loss;
}

/// Analytic gradient of loss(forward(model, x), label) w.r.t. every parameter.
inline CnnModel backward(const CnnModel& model, const Tensor& x, Label label) {
  CnnModel grad = CnnModel::zeros(model.input_side);
  Workspace ws;
  accumulate_gradient(model, x, label, ws, grad);
  return grad;
}

struct Classification {
  Label label = Label::Benign;
  double p_malicious = 0.0;
};

/// Malicious iff p_malicious >= threshold (inclusive).
inline Classification classify_probability(double p_malicious, double threshold = 0.5) {
  return {p_malicious >= threshold ? Label::Malicious : Label::Benign, p_malicious};
}

inline Classification classify(const CnnModel& model, const VisImage& img,
                                double threshold = 0.5) {
  const unsigned order = static_cast<unsigned>(std::countr_zero(model.input_side));
  const auto p = forward(model, encode_input(img, order));
  return classify_probability(p[1], threshold);
}

}  // namespace msquid::cnn
