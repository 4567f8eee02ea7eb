/* Copyright (c) 2026 The WaveFlow Engine Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

// Raw convolution kernels shared by the eager evaluator, the autodiff tape and
// the row-incremental synthesis engine.

#include <algorithm>
#include <cstddef>
#include <cstdint>

#include "waveflow/tensor.hpp"

namespace waveflow {

/// Dilated 2-D convolution that is causal over height and centered over width.
/// Output row i reads input rows i - m*dilation_h for m in [0, kernel_h); the
/// top is zero padded by (kernel_h - 1) * dilation_h rows. Width is zero padded
/// by (kernel_w - 1) / 2 * dilation_w on both sides. Spatial size is preserved.
struct ConvGeometry {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t dilation_h = 1;
  std::size_t dilation_w = 1;

  std::ptrdiff_t row_offset(std::size_t a) const {
    return -static_cast<std::ptrdiff_t>((kernel_h - 1 - a) * dilation_h);
  }
  std::ptrdiff_t col_offset(std::size_t b) const {
    return (static_cast<std::ptrdiff_t>(b) - static_cast<std::ptrdiff_t>((kernel_w - 1) / 2)) *
           static_cast<std::ptrdiff_t>(dilation_w);
  }
};

inline const ConvGeometry kPointwise{};

/// Transposed 2-D convolution (fractionally strided), PyTorch conventions:
/// out[i*stride - pad + a] += in[i] * w[a], output cropped to
/// (n - 1) * stride - 2 * pad + kernel.
struct TransposedConvGeometry {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
};

namespace kernels {

namespace detail {
// Column range [j0, j1) of output positions whose source column j + off is in [0, width).
inline std::pair<std::size_t, std::size_t> valid_cols(std::size_t width, std::ptrdiff_t off) {
  const auto w = static_cast<std::ptrdiff_t>(width);
  const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -off);
  const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(w, w - off);
  if (j1 <= j0) return {0, 0};
  return {static_cast<std::size_t>(j0), static_cast<std::size_t>(j1)};
}
}  // namespace detail

template <class T>
void check_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvGeometry& g) {
  if (x.rank() != 3) throw ValidationError("conv2d: input must be [C,H,W], got " + shape_string(x.shape()));
  if (w.rank() != 4 || w.dim(1) != x.dim(0) || w.dim(2) != g.kernel_h || w.dim(3) != g.kernel_w)
    throw ValidationError("conv2d: filter " + shape_string(w.shape()) + " incompatible with input " +
                          shape_string(x.shape()));
  if (b.size() != w.dim(0)) throw ValidationError("conv2d: bias size mismatch");
  if (g.kernel_w % 2 == 0) throw ValidationError("conv2d: width kernel must be odd");
}

/// out = conv(x, w) + b, out shaped [Co, H, W].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvGeometry& g) {
  check_conv2d(x, w, b, g);
  const std::size_t ci_n = x.dim(0), H = x.dim(1), W = x.dim(2), co_n = w.dim(0);
  Tensor<T> out({co_n, H, W});
  for (std::size_t co = 0; co < co_n; ++co) {
    T* oc = out.data() + co * H * W;
    std::fill(oc, oc + H * W, b[co]);
    for (std::size_t ci = 0; ci < ci_n; ++ci) {
      const T* xc = x.data() + ci * H * W;
      for (std::size_t a = 0; a < g.kernel_h; ++a) {
        const std::ptrdiff_t roff = g.row_offset(a);
        const std::size_t i0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -roff));
        for (std::size_t bb = 0; bb < g.kernel_w; ++bb) {
          const std::ptrdiff_t coff = g.col_offset(bb);
          const auto [j0, j1] = detail::valid_cols(W, coff);
          const T wv = w[((co * ci_n + ci) * g.kernel_h + a) * g.kernel_w + bb];
          for (std::size_t i = i0; i < H; ++i) {
            T* o = oc + i * W;
            const T* s = xc + static_cast<std::ptrdiff_t>(i) * static_cast<std::ptrdiff_t>(W) +
                         roff * static_cast<std::ptrdiff_t>(W) + coff;
            for (std::size_t j = j0; j < j1; ++j) o[j] += wv * s[j];
          }
        }
      }
    }
  }
  return out;
}

/// Accumulates the input, filter and bias gradients of conv2d. Any of the
/// output pointers may be null to skip that gradient.
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& g, const Tensor<T>& dout,
                     Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const std::size_t ci_n = x.dim(0), H = x.dim(1), W = x.dim(2), co_n = w.dim(0);
  for (std::size_t co = 0; co < co_n; ++co) {
    const T* gc = dout.data() + co * H * W;
    if (db) {
      T s{0};
      for (std::size_t k = 0; k < H * W; ++k) s += gc[k];
      (*db)[co] += s;
    }
    for (std::size_t ci = 0; ci < ci_n; ++ci) {
      const T* xc = x.data() + ci * H * W;
      T* dxc = dx ? dx->data() + ci * H * W : nullptr;
      for (std::size_t a = 0; a < g.kernel_h; ++a) {
        const std::ptrdiff_t roff = g.row_offset(a);
        const std::size_t i0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -roff));
        for (std::size_t bb = 0; bb < g.kernel_w; ++bb) {
          const std::ptrdiff_t coff = g.col_offset(bb);
          const auto [j0, j1] = detail::valid_cols(W, coff);
          const std::size_t widx = ((co * ci_n + ci) * g.kernel_h + a) * g.kernel_w + bb;
          const T wv = w[widx];
          T acc{0};
          for (std::size_t i = i0; i < H; ++i) {
            const T* go = gc + i * W;
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) * static_cast<std::ptrdiff_t>(W) +
                                       roff * static_cast<std::ptrdiff_t>(W) + coff;
            if (dw) {
              const T* s = xc + src;
              for (std::size_t j = j0; j < j1; ++j) acc += go[j] * s[j];
            }
            if (dxc) {
              T* d = dxc + src;
              for (std::size_t j = j0; j < j1; ++j) d[j] += wv * go[j];
            }
          }
          if (dw) (*dw)[widx] += acc;
        }
      }
    }
  }
}

/// Computes a single output row of conv2d from explicit input rows.
/// `taps[a]` points at the [Ci x W] block of input row i + row_offset(a), or is
/// null when that row lies in the zero padding. `bias_row` is [Co x W] and is
/// copied into `out` first (it already contains per-element additive terms).
template <class T>
void conv2d_row(const T* const* taps, std::size_t ci_n, std::size_t co_n, std::size_t W, const Tensor<T>& w,
                const ConvGeometry& g, const T* bias_row, T* out) {
  std::copy(bias_row, bias_row + co_n * W, out);
  for (std::size_t co = 0; co < co_n; ++co) {
    T* o = out + co * W;
    for (std::size_t ci = 0; ci < ci_n; ++ci) {
      for (std::size_t a = 0; a < g.kernel_h; ++a) {
        if (!taps[a]) continue;
        const T* s0 = taps[a] + ci * W;
        for (std::size_t bb = 0; bb < g.kernel_w; ++bb) {
          const std::ptrdiff_t coff = g.col_offset(bb);
          const auto [j0, j1] = detail::valid_cols(W, coff);
          const T wv = w[((co * ci_n + ci) * g.kernel_h + a) * g.kernel_w + bb];
          const T* s = s0 + coff;
          for (std::size_t j = j0; j < j1; ++j) o[j] += wv * s[j];
        }
      }
    }
  }
}

inline std::size_t transposed_out(std::size_t n, std::size_t stride, std::size_t pad, std::size_t k) {
  const std::ptrdiff_t v = static_cast<std::ptrdiff_t>((n - 1) * stride + k) - 2 * static_cast<std::ptrdiff_t>(pad);
  if (n == 0 || v <= 0) throw ValidationError("transposed conv: empty output");
  return static_cast<std::size_t>(v);
}

/// x [Ci, H, W], w [Ci, Co, KH, KW], b [Co].
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           const TransposedConvGeometry& g) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(0) != x.dim(0) || b.size() != w.dim(1))
    throw ValidationError("conv_transpose2d: incompatible shapes " + shape_string(x.shape()) + " and " +
                          shape_string(w.shape()));
  const std::size_t ci_n = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t co_n = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const std::size_t Ho = transposed_out(H, g.stride_h, g.pad_h, KH);
  const std::size_t Wo = transposed_out(W, g.stride_w, g.pad_w, KW);
  Tensor<T> out({co_n, Ho, Wo});
  for (std::size_t co = 0; co < co_n; ++co)
    std::fill(out.data() + co * Ho * Wo, out.data() + (co + 1) * Ho * Wo, b[co]);
  for (std::size_t ci = 0; ci < ci_n; ++ci)
    for (std::size_t co = 0; co < co_n; ++co)
      for (std::size_t a = 0; a < KH; ++a)
        for (std::size_t bb = 0; bb < KW; ++bb) {
          const T wv = w[((ci * co_n + co) * KH + a) * KW + bb];
          for (std::size_t i = 0; i < H; ++i) {
            const std::ptrdiff_t oi = static_cast<std::ptrdiff_t>(i * g.stride_h + a) -
                                      static_cast<std::ptrdiff_t>(g.pad_h);
            if (oi < 0 || oi >= static_cast<std::ptrdiff_t>(Ho)) continue;
            for (std::size_t j = 0; j < W; ++j) {
              const std::ptrdiff_t oj = static_cast<std::ptrdiff_t>(j * g.stride_w + bb) -
                                        static_cast<std::ptrdiff_t>(g.pad_w);
              if (oj < 0 || oj >= static_cast<std::ptrdiff_t>(Wo)) continue;
              out.at(co, static_cast<std::size_t>(oi), static_cast<std::size_t>(oj)) += wv * x.at(ci, i, j);
            }
          }
        }
  return out;
}

template <class T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& w, const TransposedConvGeometry& g,
                               const Tensor<T>& dout, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const std::size_t ci_n = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t co_n = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const std::size_t Ho = dout.dim(1), Wo = dout.dim(2);
  if (db)
    for (std::size_t co = 0; co < co_n; ++co) {
      T s{0};
      for (std::size_t k = 0; k < Ho * Wo; ++k) s += dout[co * Ho * Wo + k];
      (*db)[co] += s;
    }
  for (std::size_t ci = 0; ci < ci_n; ++ci)
    for (std::size_t co = 0; co < co_n; ++co)
      for (std::size_t a = 0; a < KH; ++a)
        for (std::size_t bb = 0; bb < KW; ++bb) {
          const std::size_t widx = ((ci * co_n + co) * KH + a) * KW + bb;
          const T wv = w[widx];
          T acc{0};
          for (std::size_t i = 0; i < H; ++i) {
            const std::ptrdiff_t oi = static_cast<std::ptrdiff_t>(i * g.stride_h + a) -
                                      static_cast<std::ptrdiff_t>(g.pad_h);
            if (oi < 0 || oi >= static_cast<std::ptrdiff_t>(Ho)) continue;
            for (std::size_t j = 0; j < W; ++j) {
              const std::ptrdiff_t oj = static_cast<std::ptrdiff_t>(j * g.stride_w + bb) -
                                        static_cast<std::ptrdiff_t>(g.pad_w);
              if (oj < 0 || oj >= static_cast<std::ptrdiff_t>(Wo)) continue;
              const T go = dout.at(co, static_cast<std::size_t>(oi), static_cast<std::size_t>(oj));
              acc += go * x.at(ci, i, j);
              if (dx) dx->at(ci, i, j) += wv * go;
            }
          }
          if (dw) (*dw)[widx] += acc;
        }
}

/// w[o] = g[o] * v[o] / ||v[o]|| where o indexes the leading axis.
template <class T>
Tensor<T> weight_norm(const Tensor<T>& v, const Tensor<T>& g) {
  const std::size_t outs = v.dim(0);
  if (g.size() != outs) throw ValidationError("weight_norm: magnitude size mismatch");
  const std::size_t per = v.size() / outs;
  Tensor<T> w(v.shape());
  for (std::size_t o = 0; o < outs; ++o) {
    T n2{0};
    for (std::size_t k = 0; k < per; ++k) n2 += v[o * per + k] * v[o * per + k];
    if (!(n2 > T{0})) throw NumericalError("weight_norm: zero direction norm in output channel " + std::to_string(o));
    const T scale = g[o] / std::sqrt(n2);
    for (std::size_t k = 0; k < per; ++k) w[o * per + k] = scale * v[o * per + k];
  }
  return w;
}

template <class T>
void weight_norm_backward(const Tensor<T>& v, const Tensor<T>& g, const Tensor<T>& dw, Tensor<T>* dv, Tensor<T>* dg) {
  const std::size_t outs = v.dim(0);
  const std::size_t per = v.size() / outs;
  for (std::size_t o = 0; o < outs; ++o) {
    T n2{0}, dot{0};
    for (std::size_t k = 0; k < per; ++k) {
      n2 += v[o * per + k] * v[o * per + k];
      dot += v[o * per + k] * dw[o * per + k];
    }
    const T n = std::sqrt(n2);
    // dot is v.dw; the unit-direction projection is dot / n.
    if (dg) (*dg)[o] += dot / n;
    if (dv) {
      const T s = g[o] / n;
      const T proj = dot / n2;
      for (std::size_t k = 0; k < per; ++k) (*dv)[o * per + k] += s * (dw[o * per + k] - proj * v[o * per + k]);
    }
  }
}

}  // namespace kernels
}  // namespace waveflow
