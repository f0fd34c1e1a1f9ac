#include "ldct/layers.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#include "gemm.hpp"

namespace ldct {

namespace {

// Column buffers are capped at 4M scalars so whole-slice inference on large
// images proceeds in row strips instead of one huge matrix.
constexpr std::size_t kMaxColScalars = 4u * 1024u * 1024u;

struct ConvDims {
  std::size_t batch, in_ch, h, w;
  std::size_t out_ch, kh, kw;
  std::size_t patch;  // in_ch * kh * kw
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& input, const Tensor<T>& kernels) {
  ConvDims d{};
  d.batch = input.batch();
  d.in_ch = input.channels();
  d.h = input.height();
  d.w = input.width();
  d.out_ch = kernels.batch();
  d.kh = kernels.height();
  d.kw = kernels.width();
  d.patch = kernels.channels() * d.kh * d.kw;
  if (d.kh % 2 == 0 || d.kw % 2 == 0 || d.kh == 0 || d.kw == 0) {
    throw ParameterError("conv2d kernel extents must be odd");
  }
  if (kernels.channels() != d.in_ch) {
    throw ShapeError("conv2d channel mismatch: input has " +
                     std::to_string(d.in_ch) + " channels, kernels expect " +
                     std::to_string(kernels.channels()));
  }
  return d;
}

std::size_t rows_per_strip(std::size_t patch, std::size_t w, std::size_t h) {
  const std::size_t rows = kMaxColScalars / (patch * w + 1);
  return std::min(h, std::max<std::size_t>(1, rows));
}

/// Lower output rows [y0, y1) of one image into col (patch x (y1-y0)*w).
/// Hand-rolled row loops: the segments are a few dozen scalars, where the
/// libc dispatch of std::copy/std::fill costs more than the copy itself.
template <typename T>
void im2col_rows(const T* in, std::size_t in_ch, std::size_t h, std::size_t w,
                 std::size_t kh, std::size_t kw, std::size_t y0, std::size_t y1,
                 T* col) {
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>((kh - 1) / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>((kw - 1) / 2);
  const std::size_t span = (y1 - y0) * w;
  const auto sw = static_cast<std::ptrdiff_t>(w);
  std::size_t r = 0;
  for (std::size_t ic = 0; ic < in_ch; ++ic) {
    const T* plane = in + ic * h * w;
    for (std::size_t ky = 0; ky < kh; ++ky) {
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
      for (std::size_t kx = 0; kx < kw; ++kx, ++r) {
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
        std::ptrdiff_t lo = dx < 0 ? -dx : 0;
        std::ptrdiff_t hi = sw - (dx > 0 ? dx : 0);
        lo = std::min(lo, sw);
        hi = std::max(hi, lo);
        T* __restrict dst = col + r * span;
        for (std::size_t y = y0; y < y1; ++y, dst += w) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            for (std::ptrdiff_t x = 0; x < sw; ++x) dst[x] = T{0};
            continue;
          }
          const T* __restrict src =
              plane + static_cast<std::size_t>(sy) * w + dx;
          for (std::ptrdiff_t x = 0; x < lo; ++x) dst[x] = T{0};
          for (std::ptrdiff_t x = lo; x < hi; ++x) dst[x] = src[x];
          for (std::ptrdiff_t x = hi; x < sw; ++x) dst[x] = T{0};
        }
      }
    }
  }
}

/// Scatter-add of col (patch x (y1-y0)*w) back onto the input gradient.
template <typename T>
void col2im_rows_add(const T* col, std::size_t in_ch, std::size_t h,
                     std::size_t w, std::size_t kh, std::size_t kw,
                     std::size_t y0, std::size_t y1, T* in_grad) {
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>((kh - 1) / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>((kw - 1) / 2);
  const std::size_t span = (y1 - y0) * w;
  std::size_t r = 0;
  for (std::size_t ic = 0; ic < in_ch; ++ic) {
    T* plane = in_grad + ic * h * w;
    for (std::size_t ky = 0; ky < kh; ++ky) {
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
      for (std::size_t kx = 0; kx < kw; ++kx, ++r) {
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
        std::ptrdiff_t lo = dx < 0 ? -dx : 0;
        std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(w) - (dx > 0 ? dx : 0);
        lo = std::min<std::ptrdiff_t>(lo, static_cast<std::ptrdiff_t>(w));
        hi = std::max(hi, lo);
        const T* __restrict src = col + r * span;
        for (std::size_t y = y0; y < y1; ++y, src += w) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* __restrict dst = plane + static_cast<std::size_t>(sy) * w + dx;
          for (std::ptrdiff_t x = lo; x < hi; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& scratch(int which) {
  thread_local std::vector<T> bufs[3];
  return bufs[which];
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernels,
                         const Tensor<T>* bias) {
  const ConvDims d = conv_dims(input, kernels);
  if (bias != nullptr && bias->size() != d.out_ch) {
    throw ShapeError("conv2d bias must hold one value per output channel");
  }

  Tensor<T> out(d.batch, d.out_ch, d.h, d.w);
  const std::size_t strip = rows_per_strip(d.patch, d.w, d.h);
  auto& col = scratch<T>(0);
  col.resize(d.patch * strip * d.w);

  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t y0 = 0; y0 < d.h; y0 += strip) {
      const std::size_t y1 = std::min(d.h, y0 + strip);
      const std::size_t span = (y1 - y0) * d.w;
      im2col_rows(input.plane(b, 0), d.in_ch, d.h, d.w, d.kh, d.kw, y0, y1,
                  col.data());
      for (std::size_t oc = 0; oc < d.out_ch; ++oc) {
        const T init = bias ? (*bias)[oc] : T{0};
        T* row = out.plane(b, oc) + y0 * d.w;
        std::fill(row, row + span, init);
      }
      detail::gemm_nn_add(d.out_ch, span, d.patch, kernels.data(), d.patch,
                          col.data(), span, out.plane(b, 0) + y0 * d.w,
                          d.h * d.w);
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& upstream_grad,
                             const Tensor<T>& cached_input,
                             const Tensor<T>& kernels, bool has_bias) {
  const ConvDims d = conv_dims(cached_input, kernels);
  const Shape4 expect{d.batch, d.out_ch, d.h, d.w};
  if (upstream_grad.shape() != expect) {
    throw ShapeError("conv2d_backward upstream shape " +
                     shape_to_string(upstream_grad.shape()) +
                     " does not match forward output " + shape_to_string(expect));
  }

  ConvGrads<T> g;
  g.input_grad = Tensor<T>(cached_input.shape());
  g.kernel_grad = Tensor<T>(kernels.shape());
  if (has_bias) g.bias_grad = Tensor<T>(1, d.out_ch, 1, 1);

  const std::size_t strip = rows_per_strip(d.patch, d.w, d.h);
  auto& col = scratch<T>(0);
  auto& dcol = scratch<T>(1);
  auto& wt = scratch<T>(2);
  col.resize(d.patch * strip * d.w);
  dcol.resize(d.patch * strip * d.w);
  wt.resize(d.patch * d.out_ch);
  detail::transpose(d.out_ch, d.patch, kernels.data(), wt.data());

  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t y0 = 0; y0 < d.h; y0 += strip) {
      const std::size_t y1 = std::min(d.h, y0 + strip);
      const std::size_t span = (y1 - y0) * d.w;
      const T* up = upstream_grad.plane(b, 0) + y0 * d.w;

      // d(input): W^T * dY, scattered back through the lowering.
      std::fill(dcol.begin(), dcol.begin() + d.patch * span, T{0});
      detail::gemm_nn_add(d.patch, span, d.out_ch, wt.data(), d.out_ch, up,
                          d.h * d.w, dcol.data(), span);
      col2im_rows_add(dcol.data(), d.in_ch, d.h, d.w, d.kh, d.kw, y0, y1,
                      g.input_grad.plane(b, 0));

      // d(kernels): dY * col^T, accumulated across strips and batch.
      im2col_rows(cached_input.plane(b, 0), d.in_ch, d.h, d.w, d.kh, d.kw, y0,
                  y1, col.data());
      detail::gemm_nt_add(d.out_ch, d.patch, span, up, d.h * d.w, col.data(),
                          span, g.kernel_grad.data(), d.patch);
    }
    if (has_bias) {
      for (std::size_t oc = 0; oc < d.out_ch; ++oc) {
        const T* up = upstream_grad.plane(b, oc);
        T lanes[8] = {};
        std::size_t i = 0;
        const std::size_t hw = d.h * d.w;
        for (; i + 8 <= hw; i += 8) {
          for (std::size_t li = 0; li < 8; ++li) lanes[li] += up[i + li];
        }
        T s = 0;
        for (std::size_t li = 0; li < 8; ++li) s += lanes[li];
        for (; i < hw; ++i) s += up[i];
        g.bias_grad[oc] += s;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out[i] = input[i] > T{0} ? input[i] : T{0};
  }
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& upstream_grad,
                        const Tensor<T>& cached_input) {
  check_same_shape(upstream_grad, cached_input, "relu_backward");
  Tensor<T> out(upstream_grad.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = cached_input[i] > T{0} ? upstream_grad[i] : T{0};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
BatchNormState<T>::BatchNormState(std::size_t channels)
    : gamma(Tensor<T>(1, channels, 1, 1, T{1}), "gamma", false),
      beta(Tensor<T>(1, channels, 1, 1, T{0}), "beta", false),
      running_mean(1, channels, 1, 1, T{0}),
      running_var(1, channels, 1, 1, T{1}) {}

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, BatchNormState<T>& state,
                            Mode mode) {
  const std::size_t c_count = input.channels();
  if (c_count != state.channels()) {
    throw ShapeError("batchnorm channel mismatch: input has " +
                     std::to_string(c_count) + ", state has " +
                     std::to_string(state.channels()));
  }
  const std::size_t batch = input.batch();
  const std::size_t hw = input.height() * input.width();
  const std::size_t n = batch * hw;
  Tensor<T> out(input.shape());

  if (mode == Mode::training) {
    state.cache.xhat = Tensor<T>(input.shape());
    state.cache.inv_std.assign(c_count, T{0});
    for (std::size_t c = 0; c < c_count; ++c) {
      double sum = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = input.plane(b, c);
        for (std::size_t i = 0; i < hw; ++i) sum += static_cast<double>(p[i]);
      }
      const double mean = sum / static_cast<double>(n);
      double var_sum = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = input.plane(b, c);
        for (std::size_t i = 0; i < hw; ++i) {
          const double dv = static_cast<double>(p[i]) - mean;
          var_sum += dv * dv;
        }
      }
      const double var = var_sum / static_cast<double>(n);
      const T inv_std =
          static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.epsilon)));
      state.cache.inv_std[c] = inv_std;

      const T gam = state.gamma.value[c];
      const T bet = state.beta.value[c];
      const T mean_t = static_cast<T>(mean);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = input.plane(b, c);
        T* xh = state.cache.xhat.plane(b, c);
        T* o = out.plane(b, c);
        for (std::size_t i = 0; i < hw; ++i) {
          const T x = (p[i] - mean_t) * inv_std;
          xh[i] = x;
          o[i] = gam * x + bet;
        }
      }

      const T m = state.momentum;
      state.running_mean[c] = m * state.running_mean[c] + (T{1} - m) * mean_t;
      state.running_var[c] =
          m * state.running_var[c] + (T{1} - m) * static_cast<T>(var);
    }
    state.stats_ready = true;
    state.cache.valid = true;
  } else {
    if (!state.stats_ready) {
      throw ContractError(
          "batchnorm inference requested before any training-mode update "
          "initialized the running statistics");
    }
    for (std::size_t c = 0; c < c_count; ++c) {
      const T inv_std = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(state.running_var[c]) +
                          static_cast<double>(state.epsilon)));
      const T gam = state.gamma.value[c];
      const T bet = state.beta.value[c];
      const T mean_t = state.running_mean[c];
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = input.plane(b, c);
        T* o = out.plane(b, c);
        for (std::size_t i = 0; i < hw; ++i) {
          o[i] = gam * (p[i] - mean_t) * inv_std + bet;
        }
      }
    }
    state.cache.valid = false;
  }
  return out;
}

template <typename T>
BnGrads<T> batchnorm_backward(const Tensor<T>& upstream_grad,
                              const BatchNormState<T>& state) {
  if (!state.cache.valid) {
    throw ContractError(
        "batchnorm_backward requires the cache of a training-mode forward");
  }
  check_same_shape(upstream_grad, state.cache.xhat, "batchnorm_backward");

  const std::size_t c_count = state.channels();
  const std::size_t batch = upstream_grad.batch();
  const std::size_t hw = upstream_grad.height() * upstream_grad.width();
  const double n = static_cast<double>(batch * hw);

  BnGrads<T> g;
  g.input_grad = Tensor<T>(upstream_grad.shape());
  g.gamma_grad = Tensor<T>(1, c_count, 1, 1);
  g.beta_grad = Tensor<T>(1, c_count, 1, 1);

  for (std::size_t c = 0; c < c_count; ++c) {
    double s1 = 0.0;  // sum dy
    double s2 = 0.0;  // sum dy * xhat
    for (std::size_t b = 0; b < batch; ++b) {
      const T* dy = upstream_grad.plane(b, c);
      const T* xh = state.cache.xhat.plane(b, c);
      for (std::size_t i = 0; i < hw; ++i) {
        s1 += static_cast<double>(dy[i]);
        s2 += static_cast<double>(dy[i]) * static_cast<double>(xh[i]);
      }
    }
    g.beta_grad[c] = static_cast<T>(s1);
    g.gamma_grad[c] = static_cast<T>(s2);

    const T k = state.gamma.value[c] * state.cache.inv_std[c];
    const T mean_dy = static_cast<T>(s1 / n);
    const T mean_dyxh = static_cast<T>(s2 / n);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* dy = upstream_grad.plane(b, c);
      const T* xh = state.cache.xhat.plane(b, c);
      T* dx = g.input_grad.plane(b, c);
      for (std::size_t i = 0; i < hw; ++i) {
        dx[i] = k * (dy[i] - mean_dy - xh[i] * mean_dyxh);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights,
                         const Tensor<T>* bias) {
  const std::size_t batch = input.batch();
  const std::size_t features = batch == 0 ? 0 : input.size() / batch;
  const std::size_t out_f = weights.batch();
  const std::size_t in_f = weights.channels();
  if (features != in_f) {
    throw ShapeError("linear feature mismatch: input provides " +
                     std::to_string(features) + ", weights expect " +
                     std::to_string(in_f));
  }
  if (bias != nullptr && bias->size() != out_f) {
    throw ShapeError("linear bias must hold one value per output feature");
  }

  Tensor<T> out(batch, out_f, 1, 1);
  for (std::size_t b = 0; b < batch; ++b) {
    T* row = out.plane(b, 0);
    for (std::size_t o = 0; o < out_f; ++o) row[o] = bias ? (*bias)[o] : T{0};
  }
  detail::gemm_nt_add(batch, out_f, in_f, input.data(), in_f, weights.data(),
                      in_f, out.data(), out_f);
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& upstream_grad,
                               const Tensor<T>& cached_input,
                               const Tensor<T>& weights, bool has_bias) {
  const std::size_t batch = cached_input.batch();
  const std::size_t in_f = weights.channels();
  const std::size_t out_f = weights.batch();
  const Shape4 expect{batch, out_f, 1, 1};
  if (upstream_grad.shape() != expect) {
    throw ShapeError("linear_backward upstream shape " +
                     shape_to_string(upstream_grad.shape()) +
                     " does not match forward output " + shape_to_string(expect));
  }
  if (batch == 0 || cached_input.size() / batch != in_f) {
    throw ShapeError("linear_backward cached input does not match weights");
  }

  LinearGrads<T> g;
  g.weight_grad = Tensor<T>(weights.shape());
  if (has_bias) g.bias_grad = Tensor<T>(1, out_f, 1, 1);

  // d(input) = dY * W
  Tensor<T> dx(batch, in_f, 1, 1);
  detail::gemm_nn_add(batch, in_f, out_f, upstream_grad.data(), out_f,
                      weights.data(), in_f, dx.data(), in_f);
  g.input_grad = dx.reshaped(cached_input.shape());

  // d(W) = dY^T * X
  auto& upt = scratch<T>(2);
  upt.resize(batch * out_f);
  detail::transpose(batch, out_f, upstream_grad.data(), upt.data());
  detail::gemm_nn_add(out_f, in_f, batch, upt.data(), batch,
                      cached_input.data(), in_f, g.weight_grad.data(), in_f);

  if (has_bias) {
    for (std::size_t o = 0; o < out_f; ++o) {
      T s = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        s += upstream_grad.data()[b * out_f + o];
      }
      g.bias_grad[o] = s;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// L2 loss

template <typename T>
LossResult<T> l2_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  check_same_shape(prediction, target, "l2_loss");
  const std::size_t batch = prediction.batch();
  if (batch == 0) {
    throw ParameterError("l2_loss requires a non-empty batch");
  }

  LossResult<T> r;
  r.prediction_grad = Tensor<T>(prediction.shape());
  const T inv_batch = T{1} / static_cast<T>(batch);
  double acc = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double diff = static_cast<double>(prediction[i]) -
                        static_cast<double>(target[i]);
    acc += diff * diff;
    r.prediction_grad[i] = (prediction[i] - target[i]) * inv_batch;
  }
  r.loss = acc / (2.0 * static_cast<double>(batch));
  return r;
}

// ---------------------------------------------------------------------------
// Xavier initialization

template <typename T>
Tensor<T> xavier_init(const Shape4& shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) {
    throw ParameterError("xavier_init requires fan_in > 0");
  }
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<T>(rng.uniform(-bound, bound));
  }
  return t;
}

// ---------------------------------------------------------------------------

#define LDCT_INSTANTIATE_LAYERS(T)                                             \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&,     \
                                       const Tensor<T>*);                      \
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, \
                                           const Tensor<T>&, bool);            \
  template Tensor<T> relu_forward<T>(const Tensor<T>&);                        \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);     \
  template struct BatchNormState<T>;                                           \
  template Tensor<T> batchnorm_forward<T>(const Tensor<T>&,                    \
                                          BatchNormState<T>&, Mode);           \
  template BnGrads<T> batchnorm_backward<T>(const Tensor<T>&,                  \
                                            const BatchNormState<T>&);         \
  template Tensor<T> linear_forward<T>(const Tensor<T>&, const Tensor<T>&,     \
                                       const Tensor<T>*);                      \
  template LinearGrads<T> linear_backward<T>(const Tensor<T>&,                 \
                                             const Tensor<T>&,                 \
                                             const Tensor<T>&, bool);          \
  template LossResult<T> l2_loss<T>(const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> xavier_init<T>(const Shape4&, std::size_t, Rng&);

LDCT_INSTANTIATE_LAYERS(float)
LDCT_INSTANTIATE_LAYERS(double)

#undef LDCT_INSTANTIATE_LAYERS

}  // namespace ldct
