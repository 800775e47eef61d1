#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "silt/error.hpp"
#include "silt/rng.hpp"
#include "silt/tensor.hpp"

namespace silt {

namespace detail {

template <class T>
using NodeP = std::shared_ptr<Node<T>>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

inline void require_rank_at_least(const Shape& s, std::size_t r, const char* op) {
  if (s.size() < r) {
    throw ShapeError(std::string(op) + ": expected rank >= " + std::to_string(r) + ", got " + to_string(s));
  }
}

/// Shape of a mask over `seq` where `seq` is [..., L, D] and the mask is [..., L].
inline Shape row_mask_shape(const Shape& seq) { return Shape(seq.begin(), seq.end() - 1); }

/// Mask shape for logits [..., m, n] is [..., n].
inline Shape key_mask_shape(const Shape& logits) {
  Shape s(logits.begin(), logits.end() - 2);
  s.push_back(logits.back());
  return s;
}

// C = A[m,k] * B[k,n]  (accumulate adds into C instead of overwriting)
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  std::vector<accum_t<T>> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), accum_t<T>{0});
    for (std::size_t p = 0; p < k; ++p) {
      const accum_t<T> av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<T>(accumulate ? crow[j] + row[j] : row[j]);
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
template <class T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      accum_t<T> s = 0;
      for (std::size_t j = 0; j < n; ++j) s += static_cast<accum_t<T>>(arow[j]) * brow[j];
      c[i * k + p] = static_cast<T>(c[i * k + p] + s);
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <class T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<accum_t<T>> row(n);
  for (std::size_t p = 0; p < k; ++p) {
    std::fill(row.begin(), row.end(), accum_t<T>{0});
    for (std::size_t i = 0; i < m; ++i) {
      const accum_t<T> av = a[i * k + p];
      const T* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
    T* crow = c + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<T>(crow[j] + row[j]);
  }
}

template <class T, class Fwd, class Bwd>
BasicTensor<T> unary(const BasicTensor<T>& x, Fwd fwd, Bwd dfdx, const char* op) {
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
  return BasicTensor<T>::from_op(
      x.shape(), std::move(out), {x.node_ptr()},
      [dfdx](Node<T>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        T* g = px.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * dfdx(px.data[i], self.data[i]);
      },
      op);
}

template <class T, class Fwd, class Da, class Db>
BasicTensor<T> binary(const BasicTensor<T>& a, const BasicTensor<T>& b, Fwd fwd, Da dfda, Db dfdb, const char* op) {
  require_same_shape(a.shape(), b.shape(), op);
  std::vector<T> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i], bd[i]);
  return BasicTensor<T>::from_op(
      a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
      [dfda, dfdb](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          T* g = pa.grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * dfda(pa.data[i], pb.data[i]);
        }
        if (pb.requires_grad) {
          T* g = pb.grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * dfdb(pa.data[i], pb.data[i]);
        }
      },
      op);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T{1}; }, [](T, T) { return T{1}; }, "add");
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T{1}; }, [](T, T) { return T{-1}; }, "sub");
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; }, "mul");
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T c) {
  return detail::unary(
      x, [c](T v) { return v * c; }, [c](T, T) { return c; }, "scale");
}

// d|x|/dx taken as 0 at x == 0.
template <class T>
BasicTensor<T> abs(const BasicTensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::abs(v); }, [](T v, T) { return v > 0 ? T{1} : (v < 0 ? T{-1} : T{0}); }, "abs");
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > 0 ? v : T{0}; }, [](T v, T) { return v > 0 ? T{1} : T{0}; }, "relu");
}

/// x [..., n] + bias [n]
template <class T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  detail::require_rank_at_least(x.shape(), 1, "add_bias");
  const std::size_t n = x.dim(-1);
  if (bias.shape() != Shape{n}) {
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match last dim of " + to_string(x.shape()));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % n];
  return BasicTensor<T>::from_op(
      x.shape(), std::move(out), {x.node_ptr(), bias.node_ptr()},
      [n](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pb = *self.parents[1];
        if (px.requires_grad) {
          T* g = px.grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
          std::vector<accum_t<T>> acc(n, 0);
          for (std::size_t i = 0; i < self.grad.size(); ++i) acc[i % n] += self.grad[i];
          T* g = pb.grad_buffer();
          for (std::size_t j = 0; j < n; ++j) g[j] = static_cast<T>(g[j] + acc[j]);
        }
      },
      "add_bias");
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  accum_t<T> s = 0;
  for (T v : x.data()) s += v;
  return BasicTensor<T>::from_op(
      {1}, {static_cast<T>(s)}, {x.node_ptr()},
      [](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        T* g = px.grad_buffer();
        for (std::size_t i = 0; i < px.data.size(); ++i) g[i] += self.grad[0];
      },
      "sum");
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product a[..., m, k] x b[..., k, n] with numpy-style
/// broadcasting of the leading (batch) dimensions.
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2 || as[as.size() - 1] != bs[bs.size() - 2]) {
    throw ShapeError("matmul: incompatible shapes " + to_string(as) + " x " + to_string(bs));
  }
  const std::size_t m = as[as.size() - 2], k = as.back(), n = bs.back();
  const std::size_t ra = as.size() - 2, rb = bs.size() - 2, r = std::max(ra, rb);
  Shape batch(r), abatch(r, 1), bbatch(r, 1);
  for (std::size_t i = 0; i < ra; ++i) abatch[r - ra + i] = as[i];
  for (std::size_t i = 0; i < rb; ++i) bbatch[r - rb + i] = bs[i];
  for (std::size_t i = 0; i < r; ++i) {
    if (abatch[i] != bbatch[i] && abatch[i] != 1 && bbatch[i] != 1) {
      throw ShapeError("matmul: batch dimensions not broadcastable " + to_string(as) + " x " + to_string(bs));
    }
    batch[i] = std::max(abatch[i], bbatch[i]);
  }
  const std::size_t nb = numel(batch);
  // Matrix index of a / b for every output batch element.
  std::vector<std::size_t> aidx(nb), bidx(nb);
  for (std::size_t ob = 0; ob < nb; ++ob) {
    std::size_t rem = ob, ai = 0, bi = 0, astride = 1, bstride = 1;
    for (std::size_t d = r; d-- > 0;) {
      const std::size_t coord = rem % batch[d];
      rem /= batch[d];
      if (abatch[d] != 1) ai += coord * astride;
      if (bbatch[d] != 1) bi += coord * bstride;
      astride *= abatch[d];
      bstride *= bbatch[d];
    }
    aidx[ob] = ai;
    bidx[ob] = bi;
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(nb * m * n);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t ob = 0; ob < nb; ++ob) {
    detail::gemm_nn(ad.data() + aidx[ob] * m * k, bd.data() + bidx[ob] * k * n, out.data() + ob * m * n, m, k, n, false);
  }
  return BasicTensor<T>::from_op(
      std::move(out_shape), std::move(out), {a.node_ptr(), b.node_ptr()},
      [aidx = std::move(aidx), bidx = std::move(bidx), m, k, n](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const T* g = self.grad.data();
        if (pa.requires_grad) {
          T* ga = pa.grad_buffer();
          for (std::size_t ob = 0; ob < aidx.size(); ++ob) {
            detail::gemm_nt_acc(g + ob * m * n, pb.data.data() + bidx[ob] * k * n, ga + aidx[ob] * m * k, m, n, k);
          }
        }
        if (pb.requires_grad) {
          T* gb = pb.grad_buffer();
          for (std::size_t ob = 0; ob < bidx.size(); ++ob) {
            detail::gemm_tn_acc(pa.data.data() + aidx[ob] * m * k, g + ob * m * n, gb + bidx[ob] * k * n, m, k, n);
          }
        }
      },
      "matmul");
}

/// Swaps the last two dimensions.
template <class T>
BasicTensor<T> transpose_last(const BasicTensor<T>& x) {
  detail::require_rank_at_least(x.shape(), 2, "transpose_last");
  Shape s = x.shape();
  const std::size_t rows = s[s.size() - 2], cols = s.back();
  const std::size_t nb = x.numel() / (rows * cols);
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out[b * rows * cols + j * rows + i] = xd[b * rows * cols + i * cols + j];
  return BasicTensor<T>::from_op(
      std::move(s), std::move(out), {x.node_ptr()},
      [nb, rows, cols](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        T* g = px.grad_buffer();
        for (std::size_t b = 0; b < nb; ++b)
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
              g[b * rows * cols + i * cols + j] += self.grad[b * rows * cols + j * rows + i];
      },
      "transpose_last");
}

/// x[..., in] * weight[in, out] + bias[out]
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  return add_bias(matmul(x, weight), bias);
}

// ---------------------------------------------------------------------------
// Shape manipulation

/// Concatenates along the last dimension; leading dimensions must agree.
template <class T>
BasicTensor<T> concat_last(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_rank_at_least(a.shape(), 1, "concat_last");
  const Shape lead_a(a.shape().begin(), a.shape().end() - 1);
  const Shape lead_b(b.shape().begin(), b.shape().end() - 1);
  if (lead_a != lead_b) {
    throw ShapeError("concat_last: leading dims differ " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const std::size_t na = a.dim(-1), nbw = b.dim(-1), rows = numel(lead_a);
  Shape s = lead_a;
  s.push_back(na + nbw);
  std::vector<T> out(rows * (na + nbw));
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(ad.data() + r * na, na, out.data() + r * (na + nbw));
    std::copy_n(bd.data() + r * nbw, nbw, out.data() + r * (na + nbw) + na);
  }
  return BasicTensor<T>::from_op(
      std::move(s), std::move(out), {a.node_ptr(), b.node_ptr()},
      [rows, na, nbw](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const std::size_t w = na + nbw;
        if (pa.requires_grad) {
          T* g = pa.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < na; ++j) g[r * na + j] += self.grad[r * w + j];
        }
        if (pb.requires_grad) {
          T* g = pb.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < nbw; ++j) g[r * nbw + j] += self.grad[r * w + na + j];
        }
      },
      "concat_last");
}

/// Columns [start, start+len) of the last dimension.
template <class T>
BasicTensor<T> slice_last(const BasicTensor<T>& x, std::size_t start, std::size_t len) {
  detail::require_rank_at_least(x.shape(), 1, "slice_last");
  const std::size_t w = x.dim(-1);
  if (start + len > w || len == 0) {
    throw ShapeError("slice_last: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") outside last dim of " + to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / w;
  Shape s = x.shape();
  s.back() = len;
  std::vector<T> out(rows * len);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xd.data() + r * w + start, len, out.data() + r * len);
  return BasicTensor<T>::from_op(
      std::move(s), std::move(out), {x.node_ptr()},
      [rows, w, start, len](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        T* g = px.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < len; ++j) g[r * w + start + j] += self.grad[r * len + j];
      },
      "slice_last");
}

/// Picks row `pos` of x[..., L, D], giving [..., D].
template <class T>
BasicTensor<T> select_position(const BasicTensor<T>& x, std::size_t pos) {
  detail::require_rank_at_least(x.shape(), 2, "select_position");
  const std::size_t len = x.dim(-2), w = x.dim(-1);
  if (pos >= len) throw ShapeError("select_position: position out of range for " + to_string(x.shape()));
  const std::size_t nb = x.numel() / (len * w);
  Shape s(x.shape().begin(), x.shape().end() - 2);
  s.push_back(w);
  std::vector<T> out(nb * w);
  auto xd = x.data();
  for (std::size_t b = 0; b < nb; ++b) std::copy_n(xd.data() + (b * len + pos) * w, w, out.data() + b * w);
  return BasicTensor<T>::from_op(
      std::move(s), std::move(out), {x.node_ptr()},
      [nb, len, w, pos](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        T* g = px.grad_buffer();
        for (std::size_t b = 0; b < nb; ++b)
          for (std::size_t j = 0; j < w; ++j) g[(b * len + pos) * w + j] += self.grad[b * w + j];
      },
      "select_position");
}

// ---------------------------------------------------------------------------
// Masking and pooling

/// Zeroes the rows of x[..., L, D] whose mask[..., L] entry is 0.
template <class T>
BasicTensor<T> mask_rows(const BasicTensor<T>& x, const BasicTensor<T>& mask) {
  detail::require_rank_at_least(x.shape(), 2, "mask_rows");
  detail::require_same_shape(mask.shape(), detail::row_mask_shape(x.shape()), "mask_rows");
  const std::size_t w = x.dim(-1);
  std::vector<T> out(x.data().begin(), x.data().end());
  std::vector<T> keep(mask.data().begin(), mask.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep[i / w] != T{0} ? out[i] : T{0};
  return BasicTensor<T>::from_op(
      x.shape(), std::move(out), {x.node_ptr()},
      [w, keep = std::move(keep)](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        T* g = px.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          if (keep[i / w] != T{0}) g[i] += self.grad[i];
      },
      "mask_rows");
}

/// Additive bias applied to masked keys before exponentiation.
inline constexpr double kMaskedLogit = -1e9;

/// Softmax over the last dim of logits[..., m, n] restricted to keys with
/// key_mask[..., n] == 1. Masked columns are exactly 0; a row with every key
/// masked is all zeros. Rank-1 logits take a rank-1 mask.
template <class T>
BasicTensor<T> masked_softmax(const BasicTensor<T>& logits, const BasicTensor<T>& key_mask) {
  detail::require_rank_at_least(logits.shape(), 1, "masked_softmax");
  const bool vector_case = logits.rank() == 1;
  const Shape expect = vector_case ? logits.shape() : detail::key_mask_shape(logits.shape());
  if (key_mask.shape() != expect) {
    throw ShapeError("masked_softmax: mask " + to_string(key_mask.shape()) + " does not fit logits " +
                     to_string(logits.shape()) + " (expected " + to_string(expect) + ")");
  }
  const std::size_t n = logits.dim(-1);
  const std::size_t m = vector_case ? 1 : logits.dim(-2);
  const std::size_t nb = logits.numel() / (m * n);
  auto ld = logits.data();
  auto md = key_mask.data();
  std::vector<T> out(logits.numel());
  std::vector<accum_t<T>> z(n);
  for (std::size_t b = 0; b < nb; ++b) {
    const T* mrow = md.data() + b * n;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t off = (b * m + i) * n;
      accum_t<T> mx = -std::numeric_limits<accum_t<T>>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        z[j] = static_cast<accum_t<T>>(ld[off + j]) + (mrow[j] != T{0} ? 0.0 : kMaskedLogit);
        mx = std::max(mx, z[j]);
      }
      accum_t<T> total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        z[j] = std::exp(z[j] - mx);
        total += z[j];
      }
      for (std::size_t j = 0; j < n; ++j) out[off + j] = mrow[j] != T{0} ? static_cast<T>(z[j] / total) : T{0};
    }
  }
  return BasicTensor<T>::from_op(
      logits.shape(), std::move(out), {logits.node_ptr()},
      [n](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        T* g = px.grad_buffer();
        const std::size_t rows = self.data.size() / n;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* y = self.data.data() + r * n;
          const T* gy = self.grad.data() + r * n;
          accum_t<T> dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += static_cast<accum_t<T>>(gy[j]) * y[j];
          for (std::size_t j = 0; j < n; ++j) g[r * n + j] = static_cast<T>(g[r * n + j] + y[j] * (gy[j] - dot));
        }
      },
      "masked_softmax");
}

/// Per-feature max over unmasked positions: seq[..., L, D], mask[..., L] -> [..., D].
template <class T>
BasicTensor<T> masked_max_pool(const BasicTensor<T>& seq, const BasicTensor<T>& mask) {
  detail::require_rank_at_least(seq.shape(), 2, "masked_max_pool");
  detail::require_same_shape(mask.shape(), detail::row_mask_shape(seq.shape()), "masked_max_pool");
  const std::size_t len = seq.dim(-2), w = seq.dim(-1), nb = seq.numel() / (len * w);
  Shape s(seq.shape().begin(), seq.shape().end() - 2);
  s.push_back(w);
  auto sd = seq.data();
  auto md = mask.data();
  std::vector<T> out(nb * w);
  std::vector<std::size_t> arg(nb * w);
  for (std::size_t b = 0; b < nb; ++b) {
    bool any = false;
    for (std::size_t l = 0; l < len; ++l) any = any || md[b * len + l] != T{0};
    if (!any) throw EmptySequenceError("masked_max_pool: item " + std::to_string(b) + " has no unmasked position");
    for (std::size_t d = 0; d < w; ++d) {
      T best = -std::numeric_limits<T>::infinity();
      std::size_t at = 0;
      for (std::size_t l = 0; l < len; ++l) {
        if (md[b * len + l] == T{0}) continue;
        const T v = sd[(b * len + l) * w + d];
        if (v > best) {
          best = v;
          at = l;
        }
      }
      out[b * w + d] = best;
      arg[b * w + d] = (b * len + at) * w + d;
    }
  }
  return BasicTensor<T>::from_op(
      std::move(s), std::move(out), {seq.node_ptr()},
      [arg = std::move(arg)](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        T* g = px.grad_buffer();
        for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
      },
      "masked_max_pool");
}

/// Mean over unmasked positions: seq[..., L, D], mask[..., L] -> [..., D].
template <class T>
BasicTensor<T> masked_mean_pool(const BasicTensor<T>& seq, const BasicTensor<T>& mask) {
  detail::require_rank_at_least(seq.shape(), 2, "masked_mean_pool");
  detail::require_same_shape(mask.shape(), detail::row_mask_shape(seq.shape()), "masked_mean_pool");
  const std::size_t len = seq.dim(-2), w = seq.dim(-1), nb = seq.numel() / (len * w);
  Shape s(seq.shape().begin(), seq.shape().end() - 2);
  s.push_back(w);
  auto sd = seq.data();
  std::vector<T> keep(mask.data().begin(), mask.data().end());
  std::vector<T> out(nb * w);
  std::vector<T> inv_count(nb);
  std::vector<accum_t<T>> acc(w);
  for (std::size_t b = 0; b < nb; ++b) {
    std::size_t count = 0;
    std::fill(acc.begin(), acc.end(), accum_t<T>{0});
    for (std::size_t l = 0; l < len; ++l) {
      if (keep[b * len + l] == T{0}) continue;
      ++count;
      for (std::size_t d = 0; d < w; ++d) acc[d] += sd[(b * len + l) * w + d];
    }
    if (count == 0) throw EmptySequenceError("masked_mean_pool: item " + std::to_string(b) + " has no unmasked position");
    for (std::size_t d = 0; d < w; ++d) out[b * w + d] = static_cast<T>(acc[d] / static_cast<accum_t<T>>(count));
    inv_count[b] = static_cast<T>(1.0 / static_cast<double>(count));
  }
  return BasicTensor<T>::from_op(
      std::move(s), std::move(out), {seq.node_ptr()},
      [len, w, keep = std::move(keep), inv_count = std::move(inv_count)](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        T* g = px.grad_buffer();
        for (std::size_t b = 0; b < inv_count.size(); ++b)
          for (std::size_t l = 0; l < len; ++l) {
            if (keep[b * len + l] == T{0}) continue;
            for (std::size_t d = 0; d < w; ++d) g[(b * len + l) * w + d] += self.grad[b * w + d] * inv_count[b];
          }
      },
      "masked_mean_pool");
}

// ---------------------------------------------------------------------------
// Regularization and normalization

/// Inverted dropout. With training == false (or rate == 0) the input handle
/// itself is returned.
template <class T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, RngState& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> factor(x.numel());
  for (auto& f : factor) f = rng.uniform() < rate ? T{0} : keep_scale;
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * factor[i];
  return BasicTensor<T>::from_op(
      x.shape(), std::move(out), {x.node_ptr()},
      [factor = std::move(factor)](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        T* g = px.grad_buffer();
        for (std::size_t i = 0; i < factor.size(); ++i) g[i] += self.grad[i] * factor[i];
      },
      "dropout");
}

/// Layer normalization over the last dimension with learned gain and bias.
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias,
                          double eps = 1e-5) {
  detail::require_rank_at_least(x.shape(), 1, "layer_norm");
  const std::size_t w = x.dim(-1), rows = x.numel() / w;
  if (gain.shape() != Shape{w} || bias.shape() != Shape{w}) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(w) + "]");
  }
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * w;
    accum_t<T> mean = 0, var = 0;
    for (std::size_t j = 0; j < w; ++j) mean += row[j];
    mean /= static_cast<accum_t<T>>(w);
    for (std::size_t j = 0; j < w; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<accum_t<T>>(w);
    const accum_t<T> inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<T>(inv);
    for (std::size_t j = 0; j < w; ++j) {
      const accum_t<T> h = (row[j] - mean) * inv;
      xhat[r * w + j] = static_cast<T>(h);
      out[r * w + j] = static_cast<T>(h * gd[j] + bd[j]);
    }
  }
  return BasicTensor<T>::from_op(
      x.shape(), std::move(out), {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [w, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const T* gy = self.grad.data();
        if (pg.requires_grad || pb.requires_grad) {
          std::vector<accum_t<T>> dg(w, 0), db(w, 0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) {
              dg[j] += static_cast<accum_t<T>>(gy[r * w + j]) * xhat[r * w + j];
              db[j] += gy[r * w + j];
            }
          if (pg.requires_grad) {
            T* g = pg.grad_buffer();
            for (std::size_t j = 0; j < w; ++j) g[j] = static_cast<T>(g[j] + dg[j]);
          }
          if (pb.requires_grad) {
            T* g = pb.grad_buffer();
            for (std::size_t j = 0; j < w; ++j) g[j] = static_cast<T>(g[j] + db[j]);
          }
        }
        if (px.requires_grad) {
          T* g = px.grad_buffer();
          const T* gain_d = pg.data.data();
          for (std::size_t r = 0; r < rows; ++r) {
            accum_t<T> mean_d = 0, mean_dx = 0;
            for (std::size_t j = 0; j < w; ++j) {
              const accum_t<T> dh = static_cast<accum_t<T>>(gy[r * w + j]) * gain_d[j];
              mean_d += dh;
              mean_dx += dh * xhat[r * w + j];
            }
            mean_d /= static_cast<accum_t<T>>(w);
            mean_dx /= static_cast<accum_t<T>>(w);
            for (std::size_t j = 0; j < w; ++j) {
              const accum_t<T> dh = static_cast<accum_t<T>>(gy[r * w + j]) * gain_d[j];
              g[r * w + j] = static_cast<T>(g[r * w + j] + inv_std[r] * (dh - mean_d - xhat[r * w + j] * mean_dx));
            }
          }
        }
      },
      "layer_norm");
}

// ---------------------------------------------------------------------------
// Loss

/// Mean cross-entropy of logits[B, C] against class indices, stabilized by
/// max subtraction.
template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> gold) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [B, C], got " + to_string(logits.shape()));
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (gold.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(gold.size()) + " labels for " + std::to_string(rows) + " rows");
  }
  if (rows == 0) throw ShapeError("cross_entropy: empty batch");
  for (std::size_t r = 0; r < rows; ++r) {
    if (gold[r] < 0 || static_cast<std::size_t>(gold[r]) >= classes) {
      throw LabelError("cross_entropy: label " + std::to_string(gold[r]) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  auto ld = logits.data();
  std::vector<T> probs(logits.numel());
  accum_t<T> total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = ld.data() + r * classes;
    accum_t<T> mx = *std::max_element(row, row + classes);
    accum_t<T> z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const accum_t<T> lse = mx + std::log(z);
    total += lse - row[gold[r]];
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = static_cast<T>(std::exp(row[c] - lse));
  }
  const auto loss = static_cast<T>(total / static_cast<accum_t<T>>(rows));
  std::vector<int> labels(gold.begin(), gold.end());
  return BasicTensor<T>::from_op(
      {1}, {loss}, {logits.node_ptr()},
      [classes, probs = std::move(probs), labels = std::move(labels)](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        T* g = px.grad_buffer();
        const accum_t<T> scale = static_cast<accum_t<T>>(self.grad[0]) / static_cast<accum_t<T>>(labels.size());
        for (std::size_t r = 0; r < labels.size(); ++r)
          for (std::size_t c = 0; c < classes; ++c) {
            const accum_t<T> target = static_cast<int>(c) == labels[r] ? 1.0 : 0.0;
            g[r * classes + c] = static_cast<T>(g[r * classes + c] + scale * (probs[r * classes + c] - target));
          }
      },
      "cross_entropy");
}

/// Single-example form: logits[C] and one class index.
template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, int gold) {
  if (logits.rank() != 1) return cross_entropy(logits, std::span<const int>(&gold, 1));
  const std::size_t classes = logits.dim(0);
  // [C] -> [1, C]
  BasicTensor<T> row = BasicTensor<T>::from_op(
      {1, classes}, std::vector<T>(logits.data().begin(), logits.data().end()), {logits.node_ptr()},
      [](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        T* g = px.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      },
      "as_row");
  return cross_entropy(row, std::span<const int>(&gold, 1));
}

/// Row-wise softmax of logits[B, C] without graph recording.
template <class T>
std::vector<double> softmax_rows(const BasicTensor<T>& logits) {
  const std::size_t classes = logits.dim(-1), rows = logits.numel() / classes;
  std::vector<double> out(logits.numel());
  auto ld = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, static_cast<double>(ld[r * classes + c]));
    double z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(ld[r * classes + c] - mx);
    for (std::size_t c = 0; c < classes; ++c) out[r * classes + c] = std::exp(ld[r * classes + c] - mx) / z;
  }
  return out;
}

}  // namespace silt
