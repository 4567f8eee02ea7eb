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

// Reverse-mode differentiation over the small primitive set the flow needs.
//
// Two backends expose the same operation names so model code is written once:
//   Eager<T>  evaluates immediately on Tensor<T> values (inference).
//   Tape<T>   records every primitive with its saved inputs and replays the
//             records in exact reverse order on backward() (training).

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "waveflow/kernels.hpp"
#include "waveflow/tensor.hpp"

namespace waveflow {

namespace elementwise {

template <class T>
T sigmoid(T x) {
  return x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}

template <class T>
Tensor<T> map(const Tensor<T>& a, auto&& f) {
  Tensor<T> out(a.shape());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = f(a[k]);
  return out;
}

template <class T>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, auto&& f, const char* what) {
  if (a.shape() != b.shape())
    throw ValidationError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = f(a[k], b[k]);
  return out;
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t start, std::size_t count) {
  if (a.rank() != 3 || start + count > a.dim(0)) throw ValidationError("slice_channels: out of range");
  const std::size_t plane = a.dim(1) * a.dim(2);
  Tensor<T> out({count, a.dim(1), a.dim(2)});
  std::copy(a.data() + start * plane, a.data() + (start + count) * plane, out.data());
  return out;
}

// Moves every row down by one, dropping the last row and zero-filling row 0.
template <class T>
Tensor<T> shift_down(const Tensor<T>& a) {
  const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  Tensor<T> out(a.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 1; i < H; ++i)
      std::copy(a.data() + (c * H + i - 1) * W, a.data() + (c * H + i) * W, out.data() + (c * H + i) * W);
  return out;
}

// Output row row_map[i] receives input row i, for every channel.
template <class T>
Tensor<T> permute_rows(const Tensor<T>& a, const std::vector<std::size_t>& row_map) {
  const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (row_map.size() != H)
    throw ValidationError("permute_rows: permutation of size " + std::to_string(row_map.size()) +
                          " applied to height " + std::to_string(H));
  Tensor<T> out(a.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      std::copy(a.data() + (c * H + i) * W, a.data() + (c * H + i + 1) * W, out.data() + (c * H + row_map[i]) * W);
  return out;
}

// [1, T, F] time-major features -> [F, h, w] grid with column-major squeeze:
// out[f][i][j] = in[0][j*h + i][f]. Trailing time steps beyond h*w are dropped.
template <class T>
Tensor<T> time_to_grid(const Tensor<T>& a, std::size_t h, std::size_t w) {
  if (a.rank() != 3 || a.dim(0) != 1) throw ValidationError("time_to_grid: expected [1, T, F] input");
  const std::size_t Tn = a.dim(1), F = a.dim(2);
  if (Tn < h * w)
    throw ValidationError("conditioner covers " + std::to_string(Tn) + " samples but the grid needs " +
                          std::to_string(h * w));
  Tensor<T> out({F, h, w});
  for (std::size_t j = 0; j < w; ++j)
    for (std::size_t i = 0; i < h; ++i) {
      const T* src = a.data() + (j * h + i) * F;
      for (std::size_t f = 0; f < F; ++f) out.at(f, i, j) = src[f];
    }
  return out;
}

}  // namespace elementwise

/// Immediate evaluation backend.
template <class T>
struct Eager {
  using scalar = T;
  using value = Tensor<T>;

  value constant(Tensor<T> v) { return v; }
  value parameter(const std::string&, const Tensor<T>& v) { return v; }
  const Tensor<T>& value_of(const value& v) const { return v; }

  value conv2d(const value& x, const value& w, const value& b, const ConvGeometry& g) {
    return kernels::conv2d(x, w, b, g);
  }
  value conv_transpose2d(const value& x, const value& w, const value& b, const TransposedConvGeometry& g) {
    return kernels::conv_transpose2d(x, w, b, g);
  }
  value weight_norm(const value& v, const value& g) { return kernels::weight_norm(v, g); }
  value add(const value& a, const value& b) { return elementwise::zip(a, b, std::plus<>{}, "add"); }
  value sub(const value& a, const value& b) { return elementwise::zip(a, b, std::minus<>{}, "sub"); }
  value mul(const value& a, const value& b) { return elementwise::zip(a, b, std::multiplies<>{}, "mul"); }
  value scale(const value& a, T s) {
    return elementwise::map(a, [s](T v) { return v * s; });
  }
  value add_scalar(const value& a, T s) {
    return elementwise::map(a, [s](T v) { return v + s; });
  }
  value tanh(const value& a) {
    return elementwise::map(a, [](T v) { return std::tanh(v); });
  }
  value sigmoid(const value& a) {
    return elementwise::map(a, [](T v) { return elementwise::sigmoid(v); });
  }
  value exp(const value& a) {
    return elementwise::map(a, [](T v) { return std::exp(v); });
  }
  value leaky_relu(const value& a, T slope) {
    return elementwise::map(a, [slope](T v) { return v >= T{0} ? v : slope * v; });
  }
  value slice_channels(const value& a, std::size_t start, std::size_t count) {
    return elementwise::slice_channels(a, start, count);
  }
  value shift_down(const value& a) { return elementwise::shift_down(a); }
  value permute_rows(const value& a, const std::vector<std::size_t>& m) { return elementwise::permute_rows(a, m); }
  value time_to_grid(const value& a, std::size_t h, std::size_t w) { return elementwise::time_to_grid(a, h, w); }
  value sum(const value& a) {
    T s{0};
    for (T v : a.storage()) s += v;
    return value({1}, std::vector<T>{s});
  }
};

/// Parameter-name -> gradient map, same shapes as the parameters.
template <class T>
using Gradients = std::map<std::string, Tensor<T>>;

/// Recording backend. Values are handles into an append-only node list.
template <class T>
class Tape {
 public:
  using scalar = T;

  struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
  };
  using value = Var;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor<T> v) { return push_leaf(std::move(v), false); }

  /// Registers a trainable leaf. Names must be unique within a tape.
  Var parameter(const std::string& name, Tensor<T> v) {
    if (params_.count(name)) throw ValidationError("parameter registered twice: " + name);
    Var var = push_leaf(std::move(v), true);
    params_.emplace(name, var.id);
    return var;
  }

  const Tensor<T>& value_of(Var v) const { return nodes_.at(v.id).value; }

  /// Gradient accumulated at `v` by the last backward(); zeros if none reached it.
  Tensor<T> grad_of(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : Tensor<T>(n.value.shape());
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  /// Number of recorded primitive applications (leaves excluded).
  std::size_t op_count() const noexcept { return nodes_.size() - leaves_; }

  const char* op_name(std::size_t id) const { return nodes_.at(id).op; }

  /// Seeds d(root)/d(root) = 1 and visits nodes in exact reverse order.
  void backward(Var root) {
    Node& r = nodes_.at(root.id);
    if (r.value.size() != 1) throw ValidationError("backward: root must be a scalar");
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor<T>();
    }
    r.grad = Tensor<T>(r.value.shape(), T{1});
    r.has_grad = true;
    for (std::size_t id = root.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.back) continue;
      n.back(*this, id);
    }
  }

  Gradients<T> gradients() const {
    Gradients<T> out;
    for (const auto& [name, id] : params_) out.emplace(name, grad_of(Var{id}));
    return out;
  }

  // ---- primitives -------------------------------------------------------

  Var conv2d(Var x, Var w, Var b, const ConvGeometry& g) {
    return push_op("conv2d", kernels::conv2d(val(x), val(w), val(b), g), {x, w, b},
                   [x, w, b, g](Tape& t, std::size_t self) {
                     kernels::conv2d_backward(t.val(x), t.val(w), g, t.gout(self), t.slot(x), t.slot(w), t.slot(b));
                   });
  }

  Var conv_transpose2d(Var x, Var w, Var b, const TransposedConvGeometry& g) {
    return push_op("conv_transpose2d", kernels::conv_transpose2d(val(x), val(w), val(b), g), {x, w, b},
                   [x, w, b, g](Tape& t, std::size_t self) {
                     kernels::conv_transpose2d_backward(t.val(x), t.val(w), g, t.gout(self), t.slot(x), t.slot(w),
                                                        t.slot(b));
                   });
  }

  Var weight_norm(Var v, Var g) {
    return push_op("weight_norm", kernels::weight_norm(val(v), val(g)), {v, g}, [v, g](Tape& t, std::size_t self) {
      kernels::weight_norm_backward(t.val(v), t.val(g), t.gout(self), t.slot(v), t.slot(g));
    });
  }

  Var add(Var a, Var b) {
    return push_op("add", eager_.add(val(a), val(b)), {a, b}, [a, b](Tape& t, std::size_t self) {
      const Tensor<T>& go = t.gout(self);
      for (Var in : {a, b})
        if (Tensor<T>* d = t.slot(in))
          for (std::size_t k = 0; k < go.size(); ++k) (*d)[k] += go[k];
    });
  }

  Var sub(Var a, Var b) {
    return push_op("sub", eager_.sub(val(a), val(b)), {a, b}, [a, b](Tape& t, std::size_t self) {
      const Tensor<T>& go = t.gout(self);
      if (Tensor<T>* d = t.slot(a))
        for (std::size_t k = 0; k < go.size(); ++k) (*d)[k] += go[k];
      if (Tensor<T>* d = t.slot(b))
        for (std::size_t k = 0; k < go.size(); ++k) (*d)[k] -= go[k];
    });
  }

  Var mul(Var a, Var b) {
    return push_op("mul", eager_.mul(val(a), val(b)), {a, b}, [a, b](Tape& t, std::size_t self) {
      const Tensor<T>& go = t.gout(self);
      const Tensor<T>& av = t.val(a);
      const Tensor<T>& bv = t.val(b);
      if (Tensor<T>* d = t.slot(a))
        for (std::size_t k = 0; k < go.size(); ++k) (*d)[k] += go[k] * bv[k];
      if (Tensor<T>* d = t.slot(b))
        for (std::size_t k = 0; k < go.size(); ++k) (*d)[k] += go[k] * av[k];
    });
  }

  Var scale(Var a, T s) {
    return push_op("scale", eager_.scale(val(a), s), {a}, [a, s](Tape& t, std::size_t self) {
      const Tensor<T>& go = t.gout(self);
      if (Tensor<T>* d = t.slot(a))
        for (std::size_t k = 0; k < go.size(); ++k) (*d)[k] += s * go[k];
    });
  }

  Var add_scalar(Var a, T s) {
    return push_op("add_scalar", eager_.add_scalar(val(a), s), {a}, [a](Tape& t, std::size_t self) {
      const Tensor<T>& go = t.gout(self);
      if (Tensor<T>* d = t.slot(a))
        for (std::size_t k = 0; k < go.size(); ++k) (*d)[k] += go[k];
    });
  }

  // The unary non-linearities save their output and differentiate through it.
  Var tanh(Var a) {
    return push_op("tanh", eager_.tanh(val(a)), {a}, [a](Tape& t, std::size_t self) {
      const Tensor<T>& go = t.gout(self);
      const Tensor<T>& y = t.nodes_[self].value;
      if (Tensor<T>* d = t.slot(a))
        for (std::size_t k = 0; k < go.size(); ++k) (*d)[k] += go[k] * (T{1} - y[k] * y[k]);
    });
  }

  Var sigmoid(Var a) {
    return push_op("sigmoid", eager_.sigmoid(val(a)), {a}, [a](Tape& t, std::size_t self) {
      const Tensor<T>& go = t.gout(self);
      const Tensor<T>& y = t.nodes_[self].value;
      if (Tensor<T>* d = t.slot(a))
        for (std::size_t k = 0; k < go.size(); ++k) (*d)[k] += go[k] * y[k] * (T{1} - y[k]);
    });
  }

  Var exp(Var a) {
    return push_op("exp", eager_.exp(val(a)), {a}, [a](Tape& t, std::size_t self) {
      const Tensor<T>& go = t.gout(self);
      const Tensor<T>& y = t.nodes_[self].value;
      if (Tensor<T>* d = t.slot(a))
        for (std::size_t k = 0; k < go.size(); ++k) (*d)[k] += go[k] * y[k];
    });
  }

  Var leaky_relu(Var a, T slope) {
    return push_op("leaky_relu", eager_.leaky_relu(val(a), slope), {a}, [a, slope](Tape& t, std::size_t self) {
      const Tensor<T>& go = t.gout(self);
      const Tensor<T>& x = t.val(a);
      if (Tensor<T>* d = t.slot(a))
        for (std::size_t k = 0; k < go.size(); ++k) (*d)[k] += x[k] >= T{0} ? go[k] : slope * go[k];
    });
  }

  Var slice_channels(Var a, std::size_t start, std::size_t count) {
    return push_op("slice_channels", eager_.slice_channels(val(a), start, count), {a},
                   [a, start](Tape& t, std::size_t self) {
                     const Tensor<T>& go = t.gout(self);
                     if (Tensor<T>* d = t.slot(a)) {
                       const std::size_t off = start * d->dim(1) * d->dim(2);
                       for (std::size_t k = 0; k < go.size(); ++k) (*d)[off + k] += go[k];
                     }
                   });
  }

  Var shift_down(Var a) {
    return push_op("shift_down", eager_.shift_down(val(a)), {a}, [a](Tape& t, std::size_t self) {
      const Tensor<T>& go = t.gout(self);
      if (Tensor<T>* d = t.slot(a)) {
        const std::size_t C = go.dim(0), H = go.dim(1), W = go.dim(2);
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 1; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) d->at(c, i - 1, j) += go.at(c, i, j);
      }
    });
  }

  Var permute_rows(Var a, const std::vector<std::size_t>& row_map) {
    return push_op("permute_rows", eager_.permute_rows(val(a), row_map), {a},
                   [a, row_map](Tape& t, std::size_t self) {
                     const Tensor<T>& go = t.gout(self);
                     if (Tensor<T>* d = t.slot(a)) {
                       const std::size_t C = go.dim(0), H = go.dim(1), W = go.dim(2);
                       for (std::size_t c = 0; c < C; ++c)
                         for (std::size_t i = 0; i < H; ++i)
                           for (std::size_t j = 0; j < W; ++j) d->at(c, i, j) += go.at(c, row_map[i], j);
                     }
                   });
  }

  Var time_to_grid(Var a, std::size_t h, std::size_t w) {
    return push_op("time_to_grid", eager_.time_to_grid(val(a), h, w), {a}, [a, h, w](Tape& t, std::size_t self) {
      const Tensor<T>& go = t.gout(self);
      if (Tensor<T>* d = t.slot(a)) {
        const std::size_t F = go.dim(0);
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t i = 0; i < h; ++i)
            for (std::size_t f = 0; f < F; ++f) (*d)[(j * h + i) * F + f] += go.at(f, i, j);
      }
    });
  }

  Var sum(Var a) {
    return push_op("sum", eager_.sum(val(a)), {a}, [a](Tape& t, std::size_t self) {
      const T go = t.gout(self)[0];
      if (Tensor<T>* d = t.slot(a))
        for (std::size_t k = 0; k < d->size(); ++k) (*d)[k] += go;
    });
  }

 private:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    bool has_grad = false;
    Backward back;
    const char* op = "leaf";
  };

  Var push_leaf(Tensor<T> v, bool needs_grad) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    ++leaves_;
    return Var{nodes_.size() - 1};
  }

  Var push_op(const char* op, Tensor<T> out, std::initializer_list<Var> inputs, Backward back) {
    const std::size_t id = nodes_.size();
    if (!out.all_finite())
      throw NumericalError(std::string("non-finite value produced by ") + op + " at tape node " + std::to_string(id));
    Node n;
    n.value = std::move(out);
    n.op = op;
    for (Var in : inputs) n.needs_grad = n.needs_grad || nodes_.at(in.id).needs_grad;
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{id};
  }

  const Tensor<T>& val(Var v) const { return nodes_.at(v.id).value; }
  const Tensor<T>& gout(std::size_t self) const { return nodes_[self].grad; }

  // Gradient accumulator of an input, allocated on first use; null when the
  // input does not lead to any parameter.
  Tensor<T>* slot(Var v) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return nullptr;
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape());
      n.has_grad = true;
    }
    return &n.grad;
  }

  std::vector<Node> nodes_;
  std::size_t leaves_ = 0;
  std::map<std::string, std::size_t> params_;
  Eager<T> eager_;
};

}  // namespace waveflow
