#pragma once

#include "medimp/numerics/graph.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace medimp::ops {

using Triple = std::array<std::size_t, 3>;  // (z, y, x)

namespace detail {

template <std::floating_point T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <std::floating_point T>
void require_rank(const char* op, const Tensor<T>& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

template <std::floating_point T, typename F>
Var<T> unary(const char* name, Var<T> x, F f, std::function<T(T, T)> df) {
  // df(x, y) is the local derivative given input x and output y.
  return x.graph()->record(
      name, {x},
      [f](const TensorRefs<T>& in) {
        Tensor<T> out(in[0]->shape());
        const auto& a = *in[0];
        for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
        return out;
      },
      [df](const TensorRefs<T>& in, const Tensor<T>& out, const Tensor<T>& g,
           const std::vector<Tensor<T>*>& gi) {
        if (!gi[0]) return;
        const auto& a = *in[0];
        auto& ga = *gi[0];
        for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[i] * df(a[i], out[i]);
      });
}

}  // namespace detail

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same("add", a.value(), b.value());
  return a.graph()->record(
      "add", {a, b},
      [](const TensorRefs<T>& in) {
        Tensor<T> out = *in[0];
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += (*in[1])[i];
        return out;
      },
      [](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
         const std::vector<Tensor<T>*>& gi) {
        for (auto* t : gi) {
          if (!t) continue;
          for (std::size_t i = 0; i < g.numel(); ++i) (*t)[i] += g[i];
        }
      });
}

template <std::floating_point T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same("sub", a.value(), b.value());
  return a.graph()->record(
      "sub", {a, b},
      [](const TensorRefs<T>& in) {
        Tensor<T> out = *in[0];
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= (*in[1])[i];
        return out;
      },
      [](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
         const std::vector<Tensor<T>*>& gi) {
        if (gi[0])
          for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i];
        if (gi[1])
          for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i] -= g[i];
      });
}

template <std::floating_point T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same("mul", a.value(), b.value());
  return a.graph()->record(
      "mul", {a, b},
      [](const TensorRefs<T>& in) {
        Tensor<T> out = *in[0];
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= (*in[1])[i];
        return out;
      },
      [](const TensorRefs<T>& in, const Tensor<T>&, const Tensor<T>& g,
         const std::vector<Tensor<T>*>& gi) {
        if (gi[0])
          for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i] * (*in[1])[i];
        if (gi[1])
          for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i] += g[i] * (*in[0])[i];
      });
}

/// x + b where b broadcasts along the last axis.
template <std::floating_point T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  const std::size_t m = x.value().shape().back();
  if (b.value().numel() != m) {
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match last axis of " +
                     shape_str(x.shape()));
  }
  return x.graph()->record(
      "add_bias", {x, b},
      [m](const TensorRefs<T>& in) {
        Tensor<T> out = *in[0];
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += (*in[1])[i % m];
        return out;
      },
      [m](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
          const std::vector<Tensor<T>*>& gi) {
        if (gi[0])
          for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i];
        if (gi[1])
          for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i % m] += g[i];
      });
}

/// x (C×...) + b (C): one bias per leading-axis channel.
template <std::floating_point T>
Var<T> add_channel_bias(Var<T> x, Var<T> b) {
  const std::size_t c = x.value().dim(0);
  if (b.value().numel() != c) {
    throw ShapeError("add_channel_bias: bias " + shape_str(b.shape()) +
                     " does not match channels of " + shape_str(x.shape()));
  }
  const std::size_t inner = x.value().numel() / c;
  return x.graph()->record(
      "add_channel_bias", {x, b},
      [inner](const TensorRefs<T>& in) {
        Tensor<T> out = *in[0];
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += (*in[1])[i / inner];
        return out;
      },
      [inner](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
              const std::vector<Tensor<T>*>& gi) {
        if (gi[0])
          for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i];
        if (gi[1])
          for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i / inner] += g[i];
      });
}

template <std::floating_point T>
Var<T> scale(Var<T> x, T c) {
  return x.graph()->record(
      "scale", {x},
      [c](const TensorRefs<T>& in) {
        Tensor<T> out = *in[0];
        for (auto& v : out.data()) v *= c;
        return out;
      },
      [c](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
          const std::vector<Tensor<T>*>& gi) {
        if (gi[0])
          for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += c * g[i];
      });
}

/// x · s for a single-element s.
template <std::floating_point T>
Var<T> mul_scalar(Var<T> x, Var<T> s) {
  if (s.value().numel() != 1) throw ShapeError("mul_scalar: scale must be a scalar, got " +
                                               shape_str(s.shape()));
  return x.graph()->record(
      "mul_scalar", {x, s},
      [](const TensorRefs<T>& in) {
        Tensor<T> out = *in[0];
        const T k = (*in[1])[0];
        for (auto& v : out.data()) v *= k;
        return out;
      },
      [](const TensorRefs<T>& in, const Tensor<T>&, const Tensor<T>& g,
         const std::vector<Tensor<T>*>& gi) {
        const T k = (*in[1])[0];
        if (gi[0])
          for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += k * g[i];
        if (gi[1]) {
          T acc{0};
          for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * (*in[0])[i];
          (*gi[1])[0] += acc;
        }
      });
}

template <std::floating_point T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_rank("matmul", a.value(), 2);
  detail::require_rank("matmul", b.value(), 2);
  const std::size_t n = a.value().dim(0), k = a.value().dim(1), m = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " · " +
                     shape_str(b.shape()));
  }
  return a.graph()->record(
      "matmul", {a, b},
      [n, k, m](const TensorRefs<T>& in) {
        Tensor<T> out(Shape{n, m});
        medimp::detail::gemm_nn(n, k, m, in[0]->data().data(), in[1]->data().data(),
                                out.data().data());
        return out;
      },
      [n, k, m](const TensorRefs<T>& in, const Tensor<T>&, const Tensor<T>& g,
                const std::vector<Tensor<T>*>& gi) {
        if (gi[0])  // dA = G · Bᵀ
          medimp::detail::gemm_nt(n, m, k, g.data().data(), in[1]->data().data(),
                                  gi[0]->data().data());
        if (gi[1])  // dB = Aᵀ · G
          medimp::detail::gemm_tn(k, n, m, in[0]->data().data(), g.data().data(),
                                  gi[1]->data().data());
      });
}

template <std::floating_point T>
Var<T> transpose(Var<T> a) {
  detail::require_rank("transpose", a.value(), 2);
  const std::size_t n = a.value().dim(0), m = a.value().dim(1);
  return a.graph()->record(
      "transpose", {a},
      [n, m](const TensorRefs<T>& in) {
        Tensor<T> out(Shape{m, n});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) out(j, i) = (*in[0])(i, j);
        return out;
      },
      [n, m](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
             const std::vector<Tensor<T>*>& gi) {
        if (!gi[0]) return;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) (*gi[0])(i, j) += g(j, i);
      });
}

template <std::floating_point T>
Var<T> relu(Var<T> x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T{0} ? v : T{0}; },
      [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

/// tanh approximation of GELU.
template <std::floating_point T>
Var<T> gelu(Var<T> x) {
  static constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  static constexpr T kA = T(0.044715);
  return detail::unary<T>(
      "gelu", x,
      [](T v) { return T(0.5) * v * (T{1} + std::tanh(kC * (v + kA * v * v * v))); },
      [](T v, T) {
        const T u = kC * (v + kA * v * v * v);
        const T t = std::tanh(u);
        const T du = kC * (T{1} + T{3} * kA * v * v);
        return T(0.5) * (T{1} + t) + T(0.5) * v * (T{1} - t * t) * du;
      });
}

template <std::floating_point T>
Var<T> exp(Var<T> x) {
  return detail::unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <std::floating_point T>
Var<T> log(Var<T> x) {
  return detail::unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

template <std::floating_point T>
Var<T> sigmoid(Var<T> x) {
  return detail::unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

/// log(1 + e^x), evaluated without overflow.
template <std::floating_point T>
Var<T> softplus(Var<T> x) {
  return detail::unary<T>(
      "softplus", x,
      [](T v) { return v > T{0} ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](T v, T) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      });
}

/// min(x, c); the gradient is zero where the clamp is active.
template <std::floating_point T>
Var<T> clamp_max(Var<T> x, T c) {
  return detail::unary<T>(
      "clamp_max", x, [c](T v) { return v > c ? c : v; },
      [c](T v, T) { return v > c ? T{0} : T{1}; });
}

template <std::floating_point T>
Var<T> sum(Var<T> x) {
  return x.graph()->record(
      "sum", {x},
      [](const TensorRefs<T>& in) {
        T acc{0};
        for (auto v : in[0]->data()) acc += v;
        return Tensor<T>::scalar(acc);
      },
      [](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
         const std::vector<Tensor<T>*>& gi) {
        if (!gi[0]) return;
        for (auto& v : gi[0]->data()) v += g[0];
      });
}

template <std::floating_point T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().numel()));
}

/// Column means of an n×m matrix, as a 1×m row.
template <std::floating_point T>
Var<T> mean_rows(Var<T> x) {
  detail::require_rank("mean_rows", x.value(), 2);
  const std::size_t n = x.value().dim(0), m = x.value().dim(1);
  return x.graph()->record(
      "mean_rows", {x},
      [n, m](const TensorRefs<T>& in) {
        Tensor<T> out(Shape{1, m});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) out[j] += (*in[0])(i, j);
        for (auto& v : out.data()) v /= static_cast<T>(n);
        return out;
      },
      [n, m](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
             const std::vector<Tensor<T>*>& gi) {
        if (!gi[0]) return;
        const T inv = T{1} / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) (*gi[0])(i, j) += g[j] * inv;
      });
}

template <std::floating_point T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (shape_numel(shape) != x.value().numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return x.graph()->record(
      "reshape", {x}, [shape](const TensorRefs<T>& in) { return in[0]->reshaped(shape); },
      [](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
         const std::vector<Tensor<T>*>& gi) {
        if (!gi[0]) return;
        for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i];
      });
}

/// Rows [begin, end) of an n×m matrix.
template <std::floating_point T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t end) {
  detail::require_rank("slice_rows", x.value(), 2);
  const std::size_t m = x.value().dim(1);
  if (begin >= end || end > x.value().dim(0)) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(x.shape()));
  }
  return x.graph()->record(
      "slice_rows", {x},
      [begin, end, m](const TensorRefs<T>& in) {
        const auto src = in[0]->data();
        std::vector<T> d(src.begin() + begin * m, src.begin() + end * m);
        return Tensor<T>(Shape{end - begin, m}, std::move(d));
      },
      [begin, m](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
                 const std::vector<Tensor<T>*>& gi) {
        if (!gi[0]) return;
        for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[begin * m + i] += g[i];
      });
}

/// Columns [begin, end) of an n×m matrix.
template <std::floating_point T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end) {
  detail::require_rank("slice_cols", x.value(), 2);
  const std::size_t n = x.value().dim(0), m = x.value().dim(1);
  if (begin >= end || end > m) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  return x.graph()->record(
      "slice_cols", {x},
      [n, w, begin](const TensorRefs<T>& in) {
        Tensor<T> out(Shape{n, w});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) out(i, j) = (*in[0])(i, begin + j);
        return out;
      },
      [n, w, begin](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
                    const std::vector<Tensor<T>*>& gi) {
        if (!gi[0]) return;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) (*gi[0])(i, begin + j) += g(i, j);
      });
}

template <std::floating_point T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t m = parts[0].value().shape().back();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require_rank("concat_rows", p.value(), 2);
    if (p.value().dim(1) != m) {
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    rows += p.value().dim(0);
  }
  return parts[0].graph()->record(
      "concat_rows", parts,
      [rows, m](const TensorRefs<T>& in) {
        std::vector<T> d;
        d.reserve(rows * m);
        for (const auto* t : in) d.insert(d.end(), t->data().begin(), t->data().end());
        return Tensor<T>(Shape{rows, m}, std::move(d));
      },
      [](const TensorRefs<T>& in, const Tensor<T>&, const Tensor<T>& g,
         const std::vector<Tensor<T>*>& gi) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const std::size_t len = in[k]->numel();
          if (gi[k])
            for (std::size_t i = 0; i < len; ++i) (*gi[k])[i] += g[off + i];
          off += len;
        }
      });
}

template <std::floating_point T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts[0].value().dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank("concat_cols", p.value(), 2);
    if (p.value().dim(0) != n) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    widths.push_back(p.value().dim(1));
    total += widths.back();
  }
  return parts[0].graph()->record(
      "concat_cols", parts,
      [n, widths, total](const TensorRefs<T>& in) {
        Tensor<T> out(Shape{n, total});
        std::size_t off = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) out(i, off + j) = (*in[k])(i, j);
          off += widths[k];
        }
        return out;
      },
      [n, widths](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
                  const std::vector<Tensor<T>*>& gi) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < gi.size(); ++k) {
          if (gi[k])
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j) (*gi[k])(i, j) += g(i, off + j);
          off += widths[k];
        }
      });
}

/// Row lookup: out[i] = table[ids[i]].
template <std::floating_point T>
Var<T> gather_rows(Var<T> table, std::vector<std::size_t> ids) {
  detail::require_rank("gather_rows", table.value(), 2);
  const std::size_t v = table.value().dim(0), m = table.value().dim(1);
  for (auto id : ids) {
    if (id >= v) throw ShapeError("gather_rows: id " + std::to_string(id) + " out of range for " +
                                  shape_str(table.shape()));
  }
  if (ids.empty()) throw ShapeError("gather_rows: empty id list");
  return table.graph()->record(
      "gather_rows", {table},
      [ids, m](const TensorRefs<T>& in) {
        Tensor<T> out(Shape{ids.size(), m});
        for (std::size_t i = 0; i < ids.size(); ++i)
          for (std::size_t j = 0; j < m; ++j) out(i, j) = (*in[0])(ids[i], j);
        return out;
      },
      [ids, m](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
               const std::vector<Tensor<T>*>& gi) {
        if (!gi[0]) return;
        for (std::size_t i = 0; i < ids.size(); ++i)
          for (std::size_t j = 0; j < m; ++j) (*gi[0])(ids[i], j) += g(i, j);
      });
}

/// Main diagonal of a square matrix, as shape [n].
template <std::floating_point T>
Var<T> diagonal(Var<T> x) {
  detail::require_rank("diagonal", x.value(), 2);
  const std::size_t n = x.value().dim(0);
  if (x.value().dim(1) != n) throw ShapeError("diagonal: matrix not square " + shape_str(x.shape()));
  return x.graph()->record(
      "diagonal", {x},
      [n](const TensorRefs<T>& in) {
        Tensor<T> out(Shape{n});
        for (std::size_t i = 0; i < n; ++i) out[i] = (*in[0])(i, i);
        return out;
      },
      [n](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
          const std::vector<Tensor<T>*>& gi) {
        if (!gi[0]) return;
        for (std::size_t i = 0; i < n; ++i) (*gi[0])(i, i) += g[i];
      });
}

namespace detail {

struct ConvGeometry {
  std::size_t cin, cout;
  Triple in, k, stride, pad, out;
  [[nodiscard]] std::size_t patch() const { return cin * k[0] * k[1] * k[2]; }
  [[nodiscard]] std::size_t positions() const { return out[0] * out[1] * out[2]; }
};

template <std::floating_point T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& w, Triple stride, Triple pad) {
  if (x.rank() != 4 || w.rank() != 5 || w.dim(1) != x.dim(0)) {
    throw ShapeError("conv3d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                     shape_str(w.shape()));
  }
  ConvGeometry g{};
  g.cin = x.dim(0);
  g.cout = w.dim(0);
  g.stride = stride;
  g.pad = pad;
  for (int a = 0; a < 3; ++a) {
    g.in[a] = x.dim(a + 1);
    g.k[a] = w.dim(a + 2);
    if (stride[a] == 0) throw ShapeError("conv3d: stride must be positive");
    if (g.k[a] > g.in[a] + 2 * pad[a]) {
      throw ShapeError("conv3d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                       shape_str(x.shape()));
    }
    g.out[a] = (g.in[a] + 2 * pad[a] - g.k[a]) / stride[a] + 1;
  }
  return g;
}

// cols is patch() × positions().
template <std::floating_point T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t P = g.positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t kz = 0; kz < g.k[0]; ++kz)
      for (std::size_t ky = 0; ky < g.k[1]; ++ky)
        for (std::size_t kx = 0; kx < g.k[2]; ++kx, ++row) {
          T* dst = cols + row * P;
          std::size_t p = 0;
          for (std::size_t oz = 0; oz < g.out[0]; ++oz) {
            const long iz = static_cast<long>(oz * g.stride[0] + kz) - static_cast<long>(g.pad[0]);
            for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
              const long iy = static_cast<long>(oy * g.stride[1] + ky) - static_cast<long>(g.pad[1]);
              const bool zy_ok = iz >= 0 && iz < static_cast<long>(g.in[0]) && iy >= 0 &&
                                 iy < static_cast<long>(g.in[1]);
              const T* src = x + (c * g.in[0] + (zy_ok ? iz : 0)) * g.in[1] * g.in[2] +
                             (zy_ok ? iy : 0) * g.in[2];
              for (std::size_t ox = 0; ox < g.out[2]; ++ox, ++p) {
                const long ix = static_cast<long>(ox * g.stride[2] + kx) - static_cast<long>(g.pad[2]);
                dst[p] = (zy_ok && ix >= 0 && ix < static_cast<long>(g.in[2])) ? src[ix] : T{0};
              }
            }
          }
        }
}

template <std::floating_point T>
void col2im(const ConvGeometry& g, const T* cols, T* dx) {
  const std::size_t P = g.positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t kz = 0; kz < g.k[0]; ++kz)
      for (std::size_t ky = 0; ky < g.k[1]; ++ky)
        for (std::size_t kx = 0; kx < g.k[2]; ++kx, ++row) {
          const T* src = cols + row * P;
          std::size_t p = 0;
          for (std::size_t oz = 0; oz < g.out[0]; ++oz) {
            const long iz = static_cast<long>(oz * g.stride[0] + kz) - static_cast<long>(g.pad[0]);
            for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
              const long iy = static_cast<long>(oy * g.stride[1] + ky) - static_cast<long>(g.pad[1]);
              const bool zy_ok = iz >= 0 && iz < static_cast<long>(g.in[0]) && iy >= 0 &&
                                 iy < static_cast<long>(g.in[1]);
              if (!zy_ok) {
                p += g.out[2];
                continue;
              }
              T* dst = dx + (c * g.in[0] + iz) * g.in[1] * g.in[2] + iy * g.in[2];
              for (std::size_t ox = 0; ox < g.out[2]; ++ox, ++p) {
                const long ix = static_cast<long>(ox * g.stride[2] + kx) - static_cast<long>(g.pad[2]);
                if (ix >= 0 && ix < static_cast<long>(g.in[2])) dst[ix] += src[p];
              }
            }
          }
        }
}

}  // namespace detail

/// 3D cross-correlation. input C_in×Dz×Dy×Dx, kernel C_out×C_in×kz×ky×kx.
template <std::floating_point T>
Var<T> conv3d(Var<T> x, Var<T> w, Triple stride = {1, 1, 1}, Triple pad = {0, 0, 0}) {
  const auto geo = detail::conv_geometry(x.value(), w.value(), stride, pad);
  return x.graph()->record(
      "conv3d", {x, w},
      [geo](const TensorRefs<T>& in) {
        std::vector<T> cols(geo.patch() * geo.positions());
        detail::im2col(geo, in[0]->data().data(), cols.data());
        Tensor<T> out(Shape{geo.cout, geo.out[0], geo.out[1], geo.out[2]});
        medimp::detail::gemm_nn(geo.cout, geo.patch(), geo.positions(), in[1]->data().data(),
                                cols.data(), out.data().data());
        return out;
      },
      [geo](const TensorRefs<T>& in, const Tensor<T>&, const Tensor<T>& g,
            const std::vector<Tensor<T>*>& gi) {
        const std::size_t K = geo.patch(), P = geo.positions();
        if (gi[1]) {
          std::vector<T> cols(K * P);
          detail::im2col(geo, in[0]->data().data(), cols.data());
          medimp::detail::gemm_nt(geo.cout, P, K, g.data().data(), cols.data(),
                                  gi[1]->data().data());
        }
        if (gi[0]) {
          std::vector<T> dcols(K * P, T{0});
          medimp::detail::gemm_tn(K, geo.cout, P, in[1]->data().data(), g.data().data(),
                                  dcols.data());
          detail::col2im(geo, dcols.data(), gi[0]->data().data());
        }
      });
}

/// Non-overlapping average pooling over the three spatial axes of C×Dz×Dy×Dx.
template <std::floating_point T>
Var<T> avg_pool3d(Var<T> x, std::size_t k) {
  detail::require_rank("avg_pool3d", x.value(), 4);
  const Shape in = x.value().shape();
  if (k == 0 || in[1] % k || in[2] % k || in[3] % k) {
    throw ShapeError("avg_pool3d: window " + std::to_string(k) + " does not tile " +
                     shape_str(in));
  }
  const Shape out{in[0], in[1] / k, in[2] / k, in[3] / k};
  const T inv = T{1} / static_cast<T>(k * k * k);
  auto src_index = [in](std::size_t c, std::size_t z, std::size_t y, std::size_t xx) {
    return ((c * in[1] + z) * in[2] + y) * in[3] + xx;
  };
  return x.graph()->record(
      "avg_pool3d", {x},
      [out, k, inv, src_index](const TensorRefs<T>& inputs) {
        Tensor<T> o(out);
        std::size_t idx = 0;
        for (std::size_t c = 0; c < out[0]; ++c)
          for (std::size_t z = 0; z < out[1]; ++z)
            for (std::size_t y = 0; y < out[2]; ++y)
              for (std::size_t xx = 0; xx < out[3]; ++xx, ++idx) {
                T acc{0};
                for (std::size_t a = 0; a < k; ++a)
                  for (std::size_t b = 0; b < k; ++b)
                    for (std::size_t d = 0; d < k; ++d)
                      acc += (*inputs[0])[src_index(c, z * k + a, y * k + b, xx * k + d)];
                o[idx] = acc * inv;
              }
        return o;
      },
      [out, k, inv, src_index](const TensorRefs<T>&, const Tensor<T>&, const Tensor<T>& g,
                               const std::vector<Tensor<T>*>& gi) {
        if (!gi[0]) return;
        std::size_t idx = 0;
        for (std::size_t c = 0; c < out[0]; ++c)
          for (std::size_t z = 0; z < out[1]; ++z)
            for (std::size_t y = 0; y < out[2]; ++y)
              for (std::size_t xx = 0; xx < out[3]; ++xx, ++idx)
                for (std::size_t a = 0; a < k; ++a)
                  for (std::size_t b = 0; b < k; ++b)
                    for (std::size_t d = 0; d < k; ++d)
                      (*gi[0])[src_index(c, z * k + a, y * k + b, xx * k + d)] += g[idx] * inv;
      });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Last-axis standardization followed by gain and bias.
template <std::floating_point T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(kLayerNormEps)) {
  const std::size_t d = x.value().shape().back();
  if (gain.value().numel() != d || bias.value().numel() != d) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " do not match last axis of " +
                     shape_str(x.shape()));
  }
  if (!(eps > T{0})) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t rows = x.value().numel() / d;
  return x.graph()->record(
      "layer_norm", {x, gain, bias},
      [d, rows, eps](const TensorRefs<T>& in) {
        Tensor<T> out(in[0]->shape());
        const auto& a = *in[0];
        for (std::size_t r = 0; r < rows; ++r) {
          const T* row = a.data().data() + r * d;
          T mu{0};
          for (std::size_t j = 0; j < d; ++j) mu += row[j];
          mu /= static_cast<T>(d);
          T var{0};
          for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
          var /= static_cast<T>(d);
          const T inv = T{1} / std::sqrt(var + eps);
          for (std::size_t j = 0; j < d; ++j)
            out[r * d + j] = (row[j] - mu) * inv * (*in[1])[j] + (*in[2])[j];
        }
        return out;
      },
      [d, rows, eps](const TensorRefs<T>& in, const Tensor<T>&, const Tensor<T>& g,
                     const std::vector<Tensor<T>*>& gi) {
        const auto& a = *in[0];
        std::vector<T> xhat(d), dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* row = a.data().data() + r * d;
          T mu{0};
          for (std::size_t j = 0; j < d; ++j) mu += row[j];
          mu /= static_cast<T>(d);
          T var{0};
          for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
          var /= static_cast<T>(d);
          const T inv = T{1} / std::sqrt(var + eps);
          T m1{0}, m2{0};
          for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (row[j] - mu) * inv;
            const T gj = g[r * d + j];
            if (gi[1]) (*gi[1])[j] += gj * xhat[j];
            if (gi[2]) (*gi[2])[j] += gj;
            dxhat[j] = gj * (*in[1])[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xhat[j];
          }
          if (!gi[0]) continue;
          m1 /= static_cast<T>(d);
          m2 /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j)
            (*gi[0])[r * d + j] += inv * (dxhat[j] - m1 - xhat[j] * m2);
        }
      });
}

/// Row-wise softmax with max subtraction. When `column_mask` is given, columns
/// whose mask entry is false get probability exactly zero and receive no gradient.
template <std::floating_point T>
Var<T> softmax_rows(Var<T> x, std::vector<bool> column_mask = {}) {
  detail::require_rank("softmax_rows", x.value(), 2);
  const std::size_t n = x.value().dim(0), m = x.value().dim(1);
  if (!column_mask.empty()) {
    if (column_mask.size() != m) {
      throw ShapeError("softmax_rows: mask length " + std::to_string(column_mask.size()) +
                       " does not match " + shape_str(x.shape()));
    }
    if (std::none_of(column_mask.begin(), column_mask.end(), [](bool b) { return b; })) {
      throw std::invalid_argument("softmax_rows: every position is masked");
    }
  } else {
    column_mask.assign(m, true);
  }
  return x.graph()->record(
      "softmax_rows", {x},
      [n, m, column_mask](const TensorRefs<T>& in) {
        Tensor<T> out(Shape{n, m});
        for (std::size_t i = 0; i < n; ++i) {
          T mx = -std::numeric_limits<T>::infinity();
          for (std::size_t j = 0; j < m; ++j)
            if (column_mask[j]) mx = std::max(mx, (*in[0])(i, j));
          T z{0};
          for (std::size_t j = 0; j < m; ++j) {
            const T e = column_mask[j] ? std::exp((*in[0])(i, j) - mx) : T{0};
            out(i, j) = e;
            z += e;
          }
          for (std::size_t j = 0; j < m; ++j) out(i, j) /= z;
        }
        return out;
      },
      [n, m](const TensorRefs<T>&, const Tensor<T>& y, const Tensor<T>& g,
             const std::vector<Tensor<T>*>& gi) {
        if (!gi[0]) return;
        for (std::size_t i = 0; i < n; ++i) {
          T dot{0};
          for (std::size_t j = 0; j < m; ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < m; ++j) (*gi[0])(i, j) += y(i, j) * (g(i, j) - dot);
        }
      });
}

template <std::floating_point T>
Var<T> log_softmax_rows(Var<T> x) {
  detail::require_rank("log_softmax_rows", x.value(), 2);
  const std::size_t n = x.value().dim(0), m = x.value().dim(1);
  return x.graph()->record(
      "log_softmax_rows", {x},
      [n, m](const TensorRefs<T>& in) {
        Tensor<T> out(Shape{n, m});
        for (std::size_t i = 0; i < n; ++i) {
          T mx = (*in[0])(i, 0);
          for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, (*in[0])(i, j));
          T z{0};
          for (std::size_t j = 0; j < m; ++j) z += std::exp((*in[0])(i, j) - mx);
          const T lz = mx + std::log(z);
          for (std::size_t j = 0; j < m; ++j) out(i, j) = (*in[0])(i, j) - lz;
        }
        return out;
      },
      [n, m](const TensorRefs<T>&, const Tensor<T>& y, const Tensor<T>& g,
             const std::vector<Tensor<T>*>& gi) {
        if (!gi[0]) return;
        for (std::size_t i = 0; i < n; ++i) {
          T gs{0};
          for (std::size_t j = 0; j < m; ++j) gs += g(i, j);
          for (std::size_t j = 0; j < m; ++j)
            (*gi[0])(i, j) += g(i, j) - std::exp(y(i, j)) * gs;
        }
      });
}

/// Divides each row by its Euclidean norm, guarded by eps inside the root.
template <std::floating_point T>
Var<T> row_normalize(Var<T> x, T eps = T(1e-12)) {
  detail::require_rank("row_normalize", x.value(), 2);
  const std::size_t n = x.value().dim(0), m = x.value().dim(1);
  auto norms = [n, m, eps](const Tensor<T>& a) {
    std::vector<T> r(n);
    for (std::size_t i = 0; i < n; ++i) {
      T s{0};
      for (std::size_t j = 0; j < m; ++j) s += a(i, j) * a(i, j);
      r[i] = std::sqrt(s + eps);
    }
    return r;
  };
  return x.graph()->record(
      "row_normalize", {x},
      [n, m, norms](const TensorRefs<T>& in) {
        const auto r = norms(*in[0]);
        Tensor<T> out(Shape{n, m});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) out(i, j) = (*in[0])(i, j) / r[i];
        return out;
      },
      [n, m, norms](const TensorRefs<T>& in, const Tensor<T>&, const Tensor<T>& g,
                    const std::vector<Tensor<T>*>& gi) {
        if (!gi[0]) return;
        const auto& a = *in[0];
        const auto r = norms(a);
        for (std::size_t i = 0; i < n; ++i) {
          T dot{0};
          for (std::size_t j = 0; j < m; ++j) dot += a(i, j) * g(i, j);
          const T r3 = r[i] * r[i] * r[i];
          for (std::size_t j = 0; j < m; ++j)
            (*gi[0])(i, j) += g(i, j) / r[i] - a(i, j) * dot / r3;
        }
      });
}

/// y = x·W + b for x n×in, W in×out, b out.
template <std::floating_point T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_bias(matmul(x, w), b);
}

}  // namespace medimp::ops
