#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "advlab/tensor/tensor.hpp"

namespace advlab {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// Eigen selects kernels and peels loops according to pointer alignment, so a
// product taken directly on tensor storage could round differently depending
// on where the allocator placed the buffer. Every product below runs on
// aligned copies, which makes results a function of the shapes alone.
template <typename T>
RowMatrix<T> aligned(const T* data, long rows, long cols) {
  return ConstMatMap<T>(data, rows, cols);
}

template <typename T>
void store(T* dst, const RowMatrix<T>& src) {
  std::copy(src.data(), src.data() + src.size(), dst);
}

template <typename T>
void store_add(T* dst, const RowMatrix<T>& src) {
  const T* s = src.data();
  for (long i = 0; i < src.size(); ++i) dst[i] += s[i];
}

// b broadcasts against a when b's shape is a suffix of a's shape.
inline bool is_suffix(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

inline void require_broadcastable(const char* op, const Shape& a, const Shape& b) {
  if (!is_suffix(a, b)) {
    throw DimensionError(std::string(op) + ": shapes " + to_string(a) + " and " +
                         to_string(b) + " do not broadcast");
  }
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
  const long r = static_cast<long>(rank);
  if (axis < -r || axis >= r) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// Splits a shape around `axis` into (outer, axis length, inner) extents.
struct AxisExtents {
  std::size_t outer = 1, length = 1, inner = 1;
};

inline AxisExtents split_axis(const Shape& shape, std::size_t axis) {
  AxisExtents e;
  for (std::size_t i = 0; i < axis; ++i) e.outer *= shape[i];
  e.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) e.inner *= shape[i];
  return e;
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_broadcastable("add", a.shape(), b.shape());
  const std::size_t nb = b.size();
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % nb];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [nb](Node<T>& n) {
    accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
    accumulate_into(*n.parents[1], [&](std::vector<T>& g) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % nb] += n.grad[i];
    });
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_broadcastable("sub", a.shape(), b.shape());
  const std::size_t nb = b.size();
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i % nb];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [nb](Node<T>& n) {
    accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
    accumulate_into(*n.parents[1], [&](std::vector<T>& g) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % nb] -= n.grad[i];
    });
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_broadcastable("mul", a.shape(), b.shape());
  const std::size_t nb = b.size();
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i % nb];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [nb](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i % nb];
    });
    accumulate_into(*n.parents[1], [&](std::vector<T>& g) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % nb] += n.grad[i] * av[i];
    });
  });
}

/// scale * x + shift with scalar constants.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift = T(0)) {
  std::vector<T> out(x.values());
  for (T& v : out) v = scale * v + shift;
  return make_result<T>("affine", x.shape(), std::move(out), {x}, [scale](Node<T>& n) {
    accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * n.grad[i];
    });
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return affine(x, factor, T(0));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.values());
  for (T& v : out) v = v > T(0) ? v : T(0);
  return make_result<T>("relu", x.shape(), std::move(out), {x}, [](Node<T>& n) {
    const auto& xv = n.parents[0]->value;
    accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > T(0)) g[i] += n.grad[i];
    });
  });
}

// Exact (erf) form.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu_value(x[i]);
  return make_result<T>("gelu", x.shape(), std::move(out), {x}, [](Node<T>& n) {
    const auto& xv = n.parents[0]->value;
    accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * detail::gelu_derivative(xv[i]);
    });
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " +
                         to_string(shape));
  }
  return make_result<T>("reshape", std::move(shape), x.values(), {x}, [](Node<T>& n) {
    accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
  });
}

namespace detail {

// Gathers `src` (shape `in`) into permuted order: out dim i = in dim perm[i].
template <typename T>
void permute_copy(const std::vector<T>& src, const Shape& in,
                  const std::vector<std::size_t>& perm, std::vector<T>& dst, bool scatter_add) {
  const std::size_t r = in.size();
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  Shape out(r);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = in[perm[i]];
    step[i] = in_strides[perm[i]];
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  const std::size_t total = src.size();
  const std::size_t last = r - 1;
  for (std::size_t o = 0; o < total;) {
    // innermost run
    const std::size_t run = out[last];
    const std::size_t s = step[last];
    if (scatter_add) {
      for (std::size_t j = 0; j < run; ++j) dst[offset + j * s] += src[o + j];
    } else {
      for (std::size_t j = 0; j < run; ++j) dst[o + j] = src[offset + j * s];
    }
    o += run;
    for (std::size_t d = last; d-- > 0;) {
      offset += step[d];
      if (++idx[d] < out[d]) break;
      offset -= step[d] * out[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::vector<std::size_t> perm) {
  const Shape& in = x.shape();
  if (perm.size() != in.size()) throw DimensionError("permute: permutation rank mismatch");
  std::vector<bool> used(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || used[p]) throw DimensionError("permute: invalid permutation");
    used[p] = true;
  }
  Shape out_shape(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out_shape[i] = in[perm[i]];
  std::vector<T> out(x.size());
  detail::permute_copy(x.values(), in, perm, out, false);
  return make_result<T>("permute", std::move(out_shape), std::move(out), {x},
                        [perm, in](Node<T>& n) {
                          accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
                            // out[o] = in[offset(o)]  =>  g[offset(o)] += grad[o]
                            detail::permute_copy(n.grad, in, perm, g, true);
                          });
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t d0, std::size_t d1) {
  if (d0 >= x.rank() || d1 >= x.rank()) throw DimensionError("transpose: axis out of range");
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[d0], perm[d1]);
  return permute(x, std::move(perm));
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + to_string(x.shape()));
  return transpose(x, 0, 1);
}

/// Picks one index along `axis`, removing that axis.
template <typename T>
Tensor<T> select(const Tensor<T>& x, long axis, std::size_t index) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "select");
  const auto e = detail::split_axis(x.shape(), ax);
  if (index >= e.length) throw DimensionError("select: index out of range");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<long>(ax));
  if (out_shape.empty()) out_shape = {1};
  std::vector<T> out(e.outer * e.inner);
  for (std::size_t o = 0; o < e.outer; ++o)
    std::copy_n(x.values().begin() + static_cast<long>((o * e.length + index) * e.inner), e.inner,
                out.begin() + static_cast<long>(o * e.inner));
  return make_result<T>("select", std::move(out_shape), std::move(out), {x}, [e, index](Node<T>& n) {
    accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
      for (std::size_t o = 0; o < e.outer; ++o)
        for (std::size_t i = 0; i < e.inner; ++i)
          g[(o * e.length + index) * e.inner + i] += n.grad[o * e.inner + i];
    });
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, long axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t ax = detail::normalize_axis(axis, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  std::vector<std::size_t> lengths;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != parts[0].shape()[i]) {
        throw DimensionError("concat: shapes " + to_string(parts[0].shape()) + " and " +
                             to_string(s) + " differ off the concat axis");
      }
    }
    lengths.push_back(s[ax]);
    out_shape[ax] += s[ax];
  }
  const auto e = detail::split_axis(out_shape, ax);
  std::vector<T> out(numel(out_shape));
  std::size_t at = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t chunk = lengths[k] * e.inner;
    for (std::size_t o = 0; o < e.outer; ++o)
      std::copy_n(parts[k].values().begin() + static_cast<long>(o * chunk), chunk,
                  out.begin() + static_cast<long>(o * e.length * e.inner + at));
    at += chunk;
  }
  return make_result<T>("concat", out_shape, std::move(out), parts, [e, lengths](Node<T>& n) {
    std::size_t at = 0;
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      const std::size_t chunk = lengths[k] * e.inner;
      accumulate_into(*n.parents[k], [&](std::vector<T>& g) {
        for (std::size_t o = 0; o < e.outer; ++o)
          for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += n.grad[o * e.length * e.inner + at + i];
      });
      at += chunk;
    }
  });
}

/// Rows of `table` [V x D] gathered by index -> [n x D].
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::size_t> indices) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be 2-D");
  if (indices.empty()) throw InputError("embedding_lookup: no indices");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<T> out(idx.size() * width);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= vocab) {
      throw InputError("embedding_lookup: index " + std::to_string(idx[r]) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(table.values().begin() + static_cast<long>(idx[r] * width), width,
                out.begin() + static_cast<long>(r * width));
  }
  return make_result<T>("embedding_lookup", Shape{idx.size(), width}, std::move(out), {table},
                        [idx, width](Node<T>& n) {
                          accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
                            for (std::size_t r = 0; r < idx.size(); ++r)
                              for (std::size_t j = 0; j < width; ++j) g[idx[r] * width + j] += n.grad[r * width + j];
                          });
                        });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.values()) total += v;
  return make_result<T>("sum", Shape{1}, {total}, {x}, [](Node<T>& n) {
    accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
      for (T& v : g) v += n.grad[0];
    });
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.size());
  T total = T(0);
  for (T v : x.values()) total += v;
  return make_result<T>("mean", Shape{1}, {total * inv}, {x}, [inv](Node<T>& n) {
    accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
      for (T& v : g) v += n.grad[0] * inv;
    });
  });
}

/// Mean along one axis; the axis is removed from the result.
template <typename T>
Tensor<T> mean(const Tensor<T>& x, long axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "mean");
  const auto e = detail::split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<long>(ax));
  if (out_shape.empty()) out_shape = {1};
  const T inv = T(1) / static_cast<T>(e.length);
  std::vector<T> out(e.outer * e.inner, T(0));
  const auto& xv = x.values();
  for (std::size_t o = 0; o < e.outer; ++o)
    for (std::size_t l = 0; l < e.length; ++l)
      for (std::size_t i = 0; i < e.inner; ++i) out[o * e.inner + i] += xv[(o * e.length + l) * e.inner + i];
  for (T& v : out) v *= inv;
  return make_result<T>("mean_axis", std::move(out_shape), std::move(out), {x}, [e, inv](Node<T>& n) {
    accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
      for (std::size_t o = 0; o < e.outer; ++o)
        for (std::size_t l = 0; l < e.length; ++l)
          for (std::size_t i = 0; i < e.inner; ++i) g[(o * e.length + l) * e.inner + i] += n.grad[o * e.inner + i] * inv;
    });
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                         to_string(b.shape()));
  }
  const long m = static_cast<long>(a.dim(0)), k = static_cast<long>(a.dim(1)),
             n = static_cast<long>(b.dim(1));
  std::vector<T> out(static_cast<std::size_t>(m * n));
  {
    detail::RowMatrix<T> c = detail::aligned(a.values().data(), m, k) * detail::aligned(b.values().data(), k, n);
    detail::store(out.data(), c);
  }
  return make_result<T>("matmul", Shape{a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, n](Node<T>& node) {
    const auto dy = detail::aligned(node.grad.data(), m, n);
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    accumulate_into(pa, [&](std::vector<T>& g) {
      detail::RowMatrix<T> c = dy * detail::aligned(pb.value.data(), k, n).transpose();
      detail::store_add(g.data(), c);
    });
    accumulate_into(pb, [&](std::vector<T>& g) {
      detail::RowMatrix<T> c = detail::aligned(pa.value.data(), m, k).transpose() * dy;
      detail::store_add(g.data(), c);
    });
  });
}

/// Batched product: [B x m x k] * [B x k x n] -> [B x m x n].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const std::size_t batch = a.dim(0);
  const long m = static_cast<long>(a.dim(1)), k = static_cast<long>(a.dim(2)),
             n = static_cast<long>(b.dim(2));
  const std::size_t sa = static_cast<std::size_t>(m * k), sb = static_cast<std::size_t>(k * n),
                    so = static_cast<std::size_t>(m * n);
  std::vector<T> out(batch * so);
  for (std::size_t i = 0; i < batch; ++i) {
    detail::RowMatrix<T> c =
        detail::aligned(a.values().data() + i * sa, m, k) * detail::aligned(b.values().data() + i * sb, k, n);
    detail::store(out.data() + i * so, c);
  }
  return make_result<T>("bmm", Shape{batch, a.dim(1), b.dim(2)}, std::move(out), {a, b},
                        [=](Node<T>& node) {
                          auto& pa = *node.parents[0];
                          auto& pb = *node.parents[1];
                          accumulate_into(pa, [&](std::vector<T>& g) {
                            for (std::size_t i = 0; i < batch; ++i) {
                              detail::RowMatrix<T> c = detail::aligned(node.grad.data() + i * so, m, n) *
                                                       detail::aligned(pb.value.data() + i * sb, k, n).transpose();
                              detail::store_add(g.data() + i * sa, c);
                            }
                          });
                          accumulate_into(pb, [&](std::vector<T>& g) {
                            for (std::size_t i = 0; i < batch; ++i) {
                              detail::RowMatrix<T> c = detail::aligned(pa.value.data() + i * sa, m, k).transpose() *
                                                       detail::aligned(node.grad.data() + i * so, m, n);
                              detail::store_add(g.data() + i * sb, c);
                            }
                          });
                        });
}

/// x[..., in] * weight[in x out] + bias[out].
///
/// The product is evaluated one sample (leading index) at a time so that a
/// sample's output does not depend on its position within the batch.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  if (bias.size() != weight.dim(1)) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  const long in = static_cast<long>(weight.dim(0)), out_dim = static_cast<long>(weight.dim(1));
  const std::size_t rows = x.size() / weight.dim(0);
  const std::size_t groups = x.rank() == 1 ? 1 : x.dim(0);
  const long g = static_cast<long>(rows / groups);
  const std::size_t xs = static_cast<std::size_t>(g * in), ys = static_cast<std::size_t>(g * out_dim);
  Shape out_shape = x.shape();
  out_shape.back() = weight.dim(1);

  std::vector<T> out(rows * weight.dim(1));
  {
    const auto w = detail::aligned(weight.values().data(), in, out_dim);
    const auto& bv = bias.values();
    for (std::size_t i = 0; i < groups; ++i) {
      detail::RowMatrix<T> y = detail::aligned(x.values().data() + i * xs, g, in) * w;
      T* dst = out.data() + i * ys;
      detail::store(dst, y);
      for (long r = 0; r < g; ++r)
        for (long j = 0; j < out_dim; ++j) dst[r * out_dim + j] += bv[static_cast<std::size_t>(j)];
    }
  }
  return make_result<T>("linear", std::move(out_shape), std::move(out), {x, weight, bias}, [=](Node<T>& node) {
    auto& px = *node.parents[0];
    auto& pw = *node.parents[1];
    auto& pb = *node.parents[2];
    accumulate_into(px, [&](std::vector<T>& gx) {
      const auto wt = detail::RowMatrix<T>(detail::aligned(pw.value.data(), in, out_dim).transpose());
      for (std::size_t i = 0; i < groups; ++i) {
        detail::RowMatrix<T> c = detail::aligned(node.grad.data() + i * ys, g, out_dim) * wt;
        detail::store_add(gx.data() + i * xs, c);
      }
    });
    accumulate_into(pw, [&](std::vector<T>& gw) {
      detail::RowMatrix<T> c = detail::aligned(px.value.data(), static_cast<long>(rows), in).transpose() *
                               detail::aligned(node.grad.data(), static_cast<long>(rows), out_dim);
      detail::store_add(gw.data(), c);
    });
    accumulate_into(pb, [&](std::vector<T>& gb) {
      for (std::size_t r = 0; r < rows; ++r)
        for (long j = 0; j < out_dim; ++j) gb[static_cast<std::size_t>(j)] += node.grad[r * static_cast<std::size_t>(out_dim) + static_cast<std::size_t>(j)];
    });
  });
}

// ---------------------------------------------------------------------------
// Normalization and losses

/// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, long axis = -1) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "softmax");
  const auto e = detail::split_axis(x.shape(), ax);
  const auto& xv = x.values();
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < e.outer; ++o) {
    for (std::size_t i = 0; i < e.inner; ++i) {
      const std::size_t base = o * e.length * e.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < e.length; ++l) mx = std::max(mx, xv[base + l * e.inner]);
      T total = T(0);
      for (std::size_t l = 0; l < e.length; ++l) {
        const T v = std::exp(xv[base + l * e.inner] - mx);
        out[base + l * e.inner] = v;
        total += v;
      }
      const T inv = T(1) / total;
      for (std::size_t l = 0; l < e.length; ++l) out[base + l * e.inner] *= inv;
    }
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [e](Node<T>& n) {
    accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
      const auto& y = n.value;
      for (std::size_t o = 0; o < e.outer; ++o) {
        for (std::size_t i = 0; i < e.inner; ++i) {
          const std::size_t base = o * e.length * e.inner + i;
          T dot = T(0);
          for (std::size_t l = 0; l < e.length; ++l) dot += n.grad[base + l * e.inner] * y[base + l * e.inner];
          for (std::size_t l = 0; l < e.length; ++l) {
            const std::size_t j = base + l * e.inner;
            g[j] += y[j] * (n.grad[j] - dot);
          }
        }
      }
    });
  });
}

/// Normalizes the last axis to zero mean and unit variance, then applies
/// gain and bias (both of last-axis length).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias length must equal last axis " + std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  const auto& xv = x.values();
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gain[j] + bias[j];
    }
  }
  return make_result<T>("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                        [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& n) {
                          const auto& gv = n.parents[1]->value;
                          accumulate_into(*n.parents[1], [&](std::vector<T>& g) {
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < d; ++j) g[j] += n.grad[r * d + j] * xhat[r * d + j];
                          });
                          accumulate_into(*n.parents[2], [&](std::vector<T>& g) {
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < d; ++j) g[j] += n.grad[r * d + j];
                          });
                          accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
                            const T inv_d = T(1) / static_cast<T>(d);
                            for (std::size_t r = 0; r < rows; ++r) {
                              T mean_dxh = T(0), mean_dxh_xh = T(0);
                              for (std::size_t j = 0; j < d; ++j) {
                                const T dxh = n.grad[r * d + j] * gv[j];
                                mean_dxh += dxh;
                                mean_dxh_xh += dxh * xhat[r * d + j];
                              }
                              mean_dxh *= inv_d;
                              mean_dxh_xh *= inv_d;
                              for (std::size_t j = 0; j < d; ++j) {
                                const T dxh = n.grad[r * d + j] * gv[j];
                                g[r * d + j] += inv_std[r] * (dxh - mean_dxh - xhat[r * d + j] * mean_dxh_xh);
                              }
                            }
                          });
                        });
}

namespace detail {

inline void check_labels(std::span<const std::size_t> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) {
    throw InputError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw InputError("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0," + std::to_string(classes) + ")");
    }
  }
}

}  // namespace detail

/// Per-row -log softmax(logits)[label], without recording on the tape.
template <typename T>
std::vector<T> cross_entropy_per_sample(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be N x K");
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  detail::check_labels(labels, rows, k);
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.values().data() + r * k;
    // log1p over the non-maximal terms keeps confident-sample losses that are
    // far below float epsilon from rounding to zero.
    const std::size_t top = static_cast<std::size_t>(std::max_element(z, z + k) - z);
    const T mx = z[top];
    T rest = T(0);
    for (std::size_t j = 0; j < k; ++j)
      if (j != top) rest += std::exp(z[j] - mx);
    out[r] = (mx - z[labels[r]]) + std::log1p(rest);
  }
  return out;
}

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  const auto per = cross_entropy_per_sample(logits, labels);
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  T total = T(0);
  for (T v : per) total += v;
  const T inv = T(1) / static_cast<T>(rows);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return make_result<T>("cross_entropy", Shape{1}, {total * inv}, {logits},
                        [rows, k, inv, lab = std::move(lab)](Node<T>& n) {
                          accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
                            const auto& zv = n.parents[0]->value;
                            const T scale = n.grad[0] * inv;
                            for (std::size_t r = 0; r < rows; ++r) {
                              const T* z = zv.data() + r * k;
                              const T mx = *std::max_element(z, z + k);
                              T total = T(0);
                              for (std::size_t j = 0; j < k; ++j) total += std::exp(z[j] - mx);
                              // The label entry p_y - 1 is formed as minus the
                              // other probabilities so it does not cancel to zero
                              // when p_y rounds to one.
                              T others = T(0);
                              for (std::size_t j = 0; j < k; ++j) {
                                if (j == lab[r]) continue;
                                const T p = std::exp(z[j] - mx) / total;
                                others += p;
                                g[r * k + j] += scale * p;
                              }
                              g[r * k + lab[r]] -= scale * others;
                            }
                          });
                        });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

namespace detail {

struct ConvGeometry {
  std::size_t n, c, h, w, f, kh, kw, stride, pad, ho, wo;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return ho * wo; }
};

// cols[(ci*kh + ky)*kw + kx][oy*wo + ox] = x[ci][oy*s + ky - p][ox*s + kx - p] (0 outside)
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((ci * g.kh + ky) * g.kw + kx) * g.positions();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.wo, T(0));
            continue;
          }
          const T* src = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((ci * g.kh + ky) * g.kw + kx) * g.positions();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = dx + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[oy * g.wo + ox];
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation of input [N x C x H x W] with kernel [F x C x kh x kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride = 1, std::size_t padding = 0) {
  if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1)) {
    throw DimensionError("conv2d: input " + to_string(input.shape()) + " incompatible with kernel " +
                         to_string(kernel.shape()));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  detail::ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2),
                         kernel.dim(3), stride, padding, 0, 0};
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw DimensionError("conv2d: kernel " + to_string(kernel.shape()) + " larger than padded input " +
                         to_string(input.shape()));
  }
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  const long f = static_cast<long>(g.f), p = static_cast<long>(g.patch()), q = static_cast<long>(g.positions());
  std::vector<T> out(g.n * g.f * g.positions());
  {
    detail::RowMatrix<T> cols(p, q), prod(f, q);
    const auto kmat = detail::aligned(kernel.values().data(), f, p);
    for (std::size_t i = 0; i < g.n; ++i) {
      detail::im2col(input.values().data() + i * g.c * g.h * g.w, g, cols.data());
      prod.noalias() = kmat * cols;
      detail::store(out.data() + i * g.f * g.positions(), prod);
    }
  }
  return make_result<T>("conv2d", Shape{g.n, g.f, g.ho, g.wo}, std::move(out), {input, kernel},
                        [g, f, p, q](Node<T>& node) {
                          auto& pin = *node.parents[0];
                          auto& pk = *node.parents[1];
                          const std::size_t in_stride = g.c * g.h * g.w, out_stride = g.f * g.positions();
                          detail::RowMatrix<T> cols(p, q);
                          if (pk.requires_grad) {
                            auto& gk = pk.ensure_grad();
                            detail::RowMatrix<T> dk(f, p);
                            for (std::size_t i = 0; i < g.n; ++i) {
                              detail::im2col(pin.value.data() + i * in_stride, g, cols.data());
                              dk.noalias() = detail::aligned(node.grad.data() + i * out_stride, f, q) * cols.transpose();
                              detail::store_add(gk.data(), dk);
                            }
                          }
                          if (pin.requires_grad) {
                            auto& gx = pin.ensure_grad();
                            const auto kt = detail::RowMatrix<T>(detail::aligned(pk.value.data(), f, p).transpose());
                            for (std::size_t i = 0; i < g.n; ++i) {
                              cols.noalias() = kt * detail::aligned(node.grad.data() + i * out_stride, f, q);
                              detail::col2im_add(cols.data(), g, gx.data() + i * in_stride);
                            }
                          }
                        });
}

/// Adds bias[F] to every spatial position of x [N x F x H x W].
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() != 4 || bias.size() != x.dim(1)) {
    throw DimensionError("add_channel_bias: bias of " + std::to_string(bias.size()) + " for input " +
                         to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), f = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(x.values());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < f; ++c)
      for (std::size_t j = 0; j < hw; ++j) out[(i * f + c) * hw + j] += bias[c];
  return make_result<T>("add_channel_bias", x.shape(), std::move(out), {x, bias}, [n, f, hw](Node<T>& node) {
    accumulate_into(*node.parents[0], [&](std::vector<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    });
    accumulate_into(*node.parents[1], [&](std::vector<T>& g) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < f; ++c)
          for (std::size_t j = 0; j < hw; ++j) g[c] += node.grad[(i * f + c) * hw + j];
    });
  });
}

/// Max pooling over kernel x kernel windows; ties resolve to the first
/// element in row-major window order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel = 2, std::size_t stride = 2) {
  if (x.rank() != 4) throw DimensionError("max_pool2d: expected N x C x H x W, got " + to_string(x.shape()));
  if (kernel == 0 || stride == 0 || x.dim(2) < kernel || x.dim(3) < kernel) {
    throw DimensionError("max_pool2d: window " + std::to_string(kernel) + " does not fit " + to_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  std::vector<T> out(planes * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  const auto& xv = x.values();
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = pl * h * w + oy * stride * w + ox * stride;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t j = pl * h * w + (oy * stride + ky) * w + ox * stride + kx;
            if (xv[j] > xv[best]) best = j;
          }
        const std::size_t o = (pl * ho + oy) * wo + ox;
        out[o] = xv[best];
        argmax[o] = best;
      }
  return make_result<T>("max_pool2d", Shape{x.dim(0), x.dim(1), ho, wo}, std::move(out), {x},
                        [argmax = std::move(argmax)](Node<T>& n) {
                          accumulate_into(*n.parents[0], [&](std::vector<T>& g) {
                            for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += n.grad[o];
                          });
                        });
}

}  // namespace advlab
