#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "skt/nn/tensor.hpp"

// Differentiable primitives. Vectors are rank-1 tensors; where an op works on
// matrices a rank-1 input of length n is treated as a single row [1 x n].

namespace skt::nn {

using Mask = std::vector<std::uint8_t>;

namespace detail {

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) {
    throw std::invalid_argument(std::string(op) + ": " + what);
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), op, "shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename T>
std::pair<std::size_t, std::size_t> matrix_dims(const Tensor<T>& t) {
  require(t.rank() == 1 || t.rank() == 2, "matrix", "expected rank 1 or 2, got " + to_string(t.shape()));
  return {t.rows(), t.cols()};
}

// Elementwise unary op given f(x) and f'(x) expressed through (x, y).
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& a, F f, D df) {
  std::vector<T> out(a.numel());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = f(in[i]);
  }
  return record<T>(a.shape(), std::move(out), {a}, [df](Node<T>& self) {
    T* ga = grad_of(self, 0);
    if (!ga) return;
    const auto& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      ga[i] += self.grad[i] * df(x[i], self.value[i]);
    }
  });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::record<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (T* g = detail::grad_of(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::record<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (T* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::record<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (T* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

// y = scale * a + shift
template <typename T>
Tensor<T> affine(const Tensor<T>& a, T scale, T shift = T(0)) {
  return detail::unary(
      a, [=](T x) { return scale * x + shift; }, [=](T, T) { return scale; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return affine(a, s);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

// Natural log with inputs floored at the smallest normal value, so that
// probabilities which underflowed to zero give a large finite penalty.
template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return std::log(std::max(x, std::numeric_limits<T>::min())); },
      [](T x, T) { return x > std::numeric_limits<T>::min() ? T(1) / x : T(0); });
}

// tanh approximation of GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T c = T(0.7978845608028654);
  constexpr T k = T(0.044715);
  return detail::unary(
      a,
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); },
      [](T x, T) {
        const T u = c * (x + k * x * x * x);
        const T th = std::tanh(u);
        return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * c * (T(1) + T(3) * k * x * x);
      });
}

// M [r x c] + v [c] broadcast over rows.
template <typename T>
Tensor<T> add_row(const Tensor<T>& m, const Tensor<T>& v) {
  const auto [r, c] = detail::matrix_dims(m);
  detail::require(v.numel() == c, "add_row", "bias length " + std::to_string(v.numel()) + " != " + std::to_string(c));
  std::vector<T> out(m.data().begin(), m.data().end());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += v.data()[j];
  return detail::record<T>(m.shape(), std::move(out), {m, v}, [r, c](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (T* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

// Scales row i of M [r x c] by v[i].
template <typename T>
Tensor<T> mul_col(const Tensor<T>& m, const Tensor<T>& v) {
  const auto [r, c] = detail::matrix_dims(m);
  detail::require(v.numel() == r, "mul_col", "scale length " + std::to_string(v.numel()) + " != " + std::to_string(r));
  std::vector<T> out(m.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.data()[i * c + j] * v.data()[i];
  return detail::record<T>(m.shape(), std::move(out), {m, v}, [r, c](Node<T>& self) {
    const auto& mv = self.inputs[0]->value;
    const auto& vv = self.inputs[1]->value;
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * vv[i];
    }
    if (T* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < r; ++i) {
        T acc = 0;
        for (std::size_t j = 0; j < c; ++j) acc += self.grad[i * c + j] * mv[i * c + j];
        g[i] += acc;
      }
    }
  });
}

// A [n x k] * B [k x m]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto [n, k] = detail::matrix_dims(a);
  const auto [k2, m] = detail::matrix_dims(b);
  detail::require(k == k2, "matmul", "inner dims " + to_string(a.shape()) + " x " + to_string(b.shape()));
  std::vector<T> out(n * m, T(0));
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = A[i * k + p];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * B[p * m + j];
    }
  return detail::record<T>({n, m}, std::move(out), {a, b}, [n, k, m](Node<T>& self) {
    const T* A = self.inputs[0]->value.data();
    const T* B = self.inputs[1]->value.data();
    const T* G = self.grad.data();
    if (T* ga = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T acc = 0;
          for (std::size_t j = 0; j < m; ++j) acc += G[i * m + j] * B[p * m + j];
          ga[i * k + p] += acc;
        }
    }
    if (T* gb = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = A[i * k + p];
          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * G[i * m + j];
        }
    }
  });
}

// A [n x k] * B^T where B is [m x k]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  const auto [n, k] = detail::matrix_dims(a);
  const auto [m, k2] = detail::matrix_dims(b);
  detail::require(k == k2, "matmul_nt", "inner dims " + to_string(a.shape()) + " x " + to_string(b.shape()) + "^T");
  std::vector<T> out(n * m);
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
      out[i * m + j] = acc;
    }
  return detail::record<T>({n, m}, std::move(out), {a, b}, [n, k, m](Node<T>& self) {
    const T* A = self.inputs[0]->value.data();
    const T* B = self.inputs[1]->value.data();
    const T* G = self.grad.data();
    if (T* ga = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const T g = G[i * m + j];
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += g * B[j * k + p];
        }
    }
    if (T* gb = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const T g = G[i * m + j];
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += g * A[i * k + p];
        }
    }
  });
}

// M [r x c] * v [c] -> [r]
template <typename T>
Tensor<T> matvec(const Tensor<T>& m, const Tensor<T>& v) {
  const auto [r, c] = detail::matrix_dims(m);
  detail::require(v.rank() == 1 && v.numel() == c, "matvec", to_string(m.shape()) + " x " + to_string(v.shape()));
  std::vector<T> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < c; ++j) acc += m.data()[i * c + j] * v.data()[j];
    out[i] = acc;
  }
  return detail::record<T>({r}, std::move(out), {m, v}, [r, c](Node<T>& self) {
    const auto& mv = self.inputs[0]->value;
    const auto& vv = self.inputs[1]->value;
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i] * vv[j];
    }
    if (T* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i] * mv[i * c + j];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(numel_of(shape) == a.numel(), "reshape", to_string(a.shape()) + " -> " + to_string(shape));
  return detail::record<T>(std::move(shape), a.to_vector(), {a}, [](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& m) {
  const auto [r, c] = detail::matrix_dims(m);
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = m.data()[i * c + j];
  return detail::record<T>({c, r}, std::move(out), {m}, [r, c](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    }
  });
}

// Column-wise concatenation. All parts share a row count; if every part is a
// vector the result is a vector.
template <typename T>
Tensor<T> hcat(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "hcat", "no inputs");
  const std::size_t r = parts[0].rows();
  bool all_vectors = true;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == r, "hcat", "row count mismatch");
    all_vectors = all_vectors && p.rank() == 1;
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<T> out(r * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto d = parts[k].data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + off + j] = d[i * widths[k] + j];
    off += widths[k];
  }
  Shape shape = all_vectors ? Shape{total} : Shape{r, total};
  return detail::record_many<T>(std::move(shape), std::move(out), parts, [r, total, widths](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (T* g = detail::grad_of(self, k)) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

// Row-wise concatenation; vectors count as single rows.
template <typename T>
Tensor<T> vcat(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "vcat", "no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == c, "vcat", "column count mismatch");
    total += p.rows();
  }
  std::vector<T> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return detail::record_many<T>({total, c}, std::move(out), parts, [](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      const std::size_t n = self.inputs[k]->value.size();
      if (T* g = detail::grad_of(self, k)) {
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& m, std::size_t start, std::size_t len) {
  const auto [r, c] = detail::matrix_dims(m);
  detail::require(start + len <= c, "slice_cols", "range out of bounds");
  std::vector<T> out(r * len);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < len; ++j) out[i * len + j] = m.data()[i * c + start + j];
  Shape shape = m.rank() == 1 ? Shape{len} : Shape{r, len};
  return detail::record<T>(std::move(shape), std::move(out), {m}, [r, c, start, len](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < len; ++j) g[i * c + start + j] += self.grad[i * len + j];
    }
  });
}

// Rows picked by index; a negative index yields a zero row with no gradient.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& m, const std::vector<std::ptrdiff_t>& idx) {
  const auto [r, c] = detail::matrix_dims(m);
  std::vector<T> out(idx.size() * c, T(0));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0) continue;
    detail::require(static_cast<std::size_t>(idx[i]) < r, "gather_rows",
                    "row " + std::to_string(idx[i]) + " out of " + std::to_string(r));
    std::copy_n(m.data().begin() + idx[i] * c, c, out.begin() + i * c);
  }
  return detail::record<T>({idx.size(), c}, std::move(out), {m}, [idx, c](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
      }
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& m, std::size_t start, std::size_t len) {
  detail::require(start + len <= m.rows(), "slice_rows", "range out of bounds");
  std::vector<std::ptrdiff_t> idx(len);
  std::iota(idx.begin(), idx.end(), static_cast<std::ptrdiff_t>(start));
  return gather_rows(m, idx);
}

// Row i of a matrix as a vector.
template <typename T>
Tensor<T> row(const Tensor<T>& m, std::size_t i) {
  return reshape(gather_rows(m, {static_cast<std::ptrdiff_t>(i)}), {m.cols()});
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T x : a.data()) acc += x;
  return detail::record<T>({}, {acc}, {a}, [](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += self.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  detail::require(a.numel() > 0, "mean", "empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// Average of the rows of M [r x c] -> [c].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& m) {
  const auto [r, c] = detail::matrix_dims(m);
  detail::require(r > 0, "mean_rows", "no rows");
  std::vector<T> out(c, T(0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += m.data()[i * c + j];
  const T inv = T(1) / static_cast<T>(r);
  for (auto& x : out) x *= inv;
  return detail::record<T>({c}, std::move(out), {m}, [r, c, inv](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
    }
  });
}

template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  return sum(mul(a, b));
}

// Row-wise softmax. `mask` (same element count, optional) marks usable
// entries; masked logits get an additive -1e9 and their output is forced to
// exactly zero. Every row needs at least one usable entry.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits, const Mask& mask = {}) {
  const auto [r, c] = detail::matrix_dims(logits);
  detail::require(mask.empty() || mask.size() == logits.numel(), "softmax", "mask size mismatch");
  std::vector<T> out(r * c);
  const auto x = logits.data();
  for (std::size_t i = 0; i < r; ++i) {
    bool any = false;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      const bool on = mask.empty() || mask[i * c + j];
      any = any || on;
      const T v = on ? x[i * c + j] : x[i * c + j] - T(1e9);
      mx = std::max(mx, v);
    }
    detail::require(any, "softmax", "row " + std::to_string(i) + " has no unmasked entry");
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const bool on = mask.empty() || mask[i * c + j];
      const T v = on ? x[i * c + j] : x[i * c + j] - T(1e9);
      out[i * c + j] = on ? std::exp(v - mx) : T(0);
      z += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return detail::record<T>(logits.shape(), std::move(out), {logits}, [r, c](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      const auto& y = self.value;
      for (std::size_t i = 0; i < r; ++i) {
        T s = 0;
        for (std::size_t j = 0; j < c; ++j) s += self.grad[i * c + j] * y[i * c + j];
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[i * c + j] * (self.grad[i * c + j] - s);
      }
    }
  });
}

// Per-row layer normalization with learned gain and bias of length c.
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& m, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  const auto [r, c] = detail::matrix_dims(m);
  detail::require(gain.numel() == c && bias.numel() == c, "layer_norm", "parameter width mismatch");
  std::vector<T> out(r * c);
  std::vector<T> xhat(r * c);
  std::vector<T> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += m.data()[i * c + j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T d = m.data()[i * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (m.data()[i * c + j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gain.data()[j] + bias.data()[j];
    }
  }
  return detail::record<T>(m.shape(), std::move(out), {m, gain, bias},
                           [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                             const auto& gv = self.inputs[1]->value;
                             T* gx = detail::grad_of(self, 0);
                             T* gg = detail::grad_of(self, 1);
                             T* gb = detail::grad_of(self, 2);
                             for (std::size_t i = 0; i < r; ++i) {
                               T s1 = 0;
                               T s2 = 0;
                               for (std::size_t j = 0; j < c; ++j) {
                                 const T dy = self.grad[i * c + j];
                                 if (gg) gg[j] += dy * xhat[i * c + j];
                                 if (gb) gb[j] += dy;
                                 const T dxh = dy * gv[j];
                                 s1 += dxh;
                                 s2 += dxh * xhat[i * c + j];
                               }
                               if (!gx) continue;
                               const T n = static_cast<T>(c);
                               for (std::size_t j = 0; j < c; ++j) {
                                 const T dxh = self.grad[i * c + j] * gv[j];
                                 gx[i * c + j] += inv_std[i] * (dxh - s1 / n - xhat[i * c + j] * s2 / n);
                               }
                             }
                           });
}

// P [n x S] -> [n x V]: out[i][ids[s]] += P[i][s].
template <typename T>
Tensor<T> scatter_cols(const Tensor<T>& p, const std::vector<std::size_t>& ids, std::size_t vocab) {
  const auto [n, s] = detail::matrix_dims(p);
  detail::require(ids.size() == s, "scatter_cols", "id count " + std::to_string(ids.size()) + " != " + std::to_string(s));
  for (auto id : ids) detail::require(id < vocab, "scatter_cols", "id " + std::to_string(id) + " out of vocabulary");
  std::vector<T> out(n * vocab, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < s; ++k) out[i * vocab + ids[k]] += p.data()[i * s + k];
  Shape shape = p.rank() == 1 ? Shape{vocab} : Shape{n, vocab};
  return detail::record<T>(std::move(shape), std::move(out), {p}, [n, s, vocab, ids](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < s; ++k) g[i * s + k] += self.grad[i * vocab + ids[k]];
    }
  });
}

// Forward value is `hard`; the gradient passes to `soft` unchanged.
template <typename T>
Tensor<T> straight_through(std::vector<T> hard, const Tensor<T>& soft) {
  detail::require(hard.size() == soft.numel(), "straight_through", "size mismatch");
  return detail::record<T>(soft.shape(), std::move(hard), {soft}, [](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

// out[p] = sum_l w[l] * M[table[p * L + l]] for L = w.numel(); negative table
// entries contribute nothing. Used to blend token rows of several sentences.
template <typename T>
Tensor<T> weighted_row_mix(const Tensor<T>& m, const Tensor<T>& w, const std::vector<std::ptrdiff_t>& table,
                           std::size_t out_rows) {
  const auto [r, c] = detail::matrix_dims(m);
  const std::size_t L = w.numel();
  detail::require(table.size() == out_rows * L, "weighted_row_mix", "table must be [out_rows x L]");
  std::vector<T> out(out_rows * c, T(0));
  for (std::size_t p = 0; p < out_rows; ++p)
    for (std::size_t l = 0; l < L; ++l) {
      const auto src = table[p * L + l];
      if (src < 0) continue;
      detail::require(static_cast<std::size_t>(src) < r, "weighted_row_mix", "row index out of range");
      const T wl = w.data()[l];
      for (std::size_t j = 0; j < c; ++j) out[p * c + j] += wl * m.data()[src * c + j];
    }
  return detail::record<T>({out_rows, c}, std::move(out), {m, w}, [c, L, out_rows, table](Node<T>& self) {
    const auto& mv = self.inputs[0]->value;
    const auto& wv = self.inputs[1]->value;
    T* gm = detail::grad_of(self, 0);
    T* gw = detail::grad_of(self, 1);
    for (std::size_t p = 0; p < out_rows; ++p)
      for (std::size_t l = 0; l < L; ++l) {
        const auto src = table[p * L + l];
        if (src < 0) continue;
        T acc = 0;
        for (std::size_t j = 0; j < c; ++j) {
          const T g = self.grad[p * c + j];
          if (gm) gm[src * c + j] += g * wv[l];
          acc += g * mv[src * c + j];
        }
        if (gw) gw[l] += acc;
      }
  });
}

}  // namespace skt::nn
