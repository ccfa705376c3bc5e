#pragma once

// Differentiable tensor operations. Shapes are validated eagerly; every op
// returns a fresh tensor (no aliasing views).

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "droppos/tensor.hpp"

namespace droppos {

/// GELU, tanh approximation:
///   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline constexpr double kGeluCoeff = 0.044715;
inline constexpr double kSqrt2OverPi = 0.7978845608028654;

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
Buffer<T>* grad_of(const std::shared_ptr<Node<T>>& p) {
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

// True when `suffix` equals the trailing dims of `full`.
inline bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

inline void check_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (!is_suffix(a, b)) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
  }
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

/// a + b, where b's shape equals a's shape or a trailing suffix of it.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_broadcast("add", a.shape(), b.shape());
  const std::size_t n = a.numel(), m = b.numel();
  Buffer<T> out(n);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] + bd[i % m];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [n, m](detail::Node<T>& self) {
    const auto& g = self.grad;
    if (auto* ga = detail::grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
    }
    if (auto* gb = detail::grad_of(self.parents[1])) {
      for (std::size_t i = 0; i < n; ++i) (*gb)[i % m] += g[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_broadcast("sub", a.shape(), b.shape());
  const std::size_t n = a.numel(), m = b.numel();
  Buffer<T> out(n);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] - bd[i % m];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [n, m](detail::Node<T>& self) {
    const auto& g = self.grad;
    if (auto* ga = detail::grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
    }
    if (auto* gb = detail::grad_of(self.parents[1])) {
      for (std::size_t i = 0; i < n; ++i) (*gb)[i % m] -= g[i];
    }
  });
}

/// Element-wise product with the same suffix broadcasting as add().
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_broadcast("mul", a.shape(), b.shape());
  const std::size_t n = a.numel(), m = b.numel();
  Buffer<T> out(n);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] * bd[i % m];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [n, m](detail::Node<T>& self) {
    const auto& g = self.grad;
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (auto* ga = detail::grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * bv[i % m];
    }
    if (auto* gb = detail::grad_of(self.parents[1])) {
      for (std::size_t i = 0; i < n; ++i) (*gb)[i % m] += g[i] * av[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Buffer<T> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * s;
  return make_result<T>(a.shape(), std::move(out), {a}, [s](detail::Node<T>& self) {
    if (auto* ga = detail::grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * s;
    }
  });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  const auto c = static_cast<T>(kSqrt2OverPi);
  const auto k = static_cast<T>(kGeluCoeff);
  Buffer<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xd[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v)));
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [c, k](detail::Node<T>& self) {
    auto* gx = detail::grad_of(self.parents[0]);
    if (!gx) return;
    const auto& xv = self.parents[0]->data;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const T v = xv[i];
      const T t = std::tanh(c * (v + k * v * v * v));
      const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * k * v * v);
      (*gx)[i] += self.grad[i] * d;
    }
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.data()) acc += v;
  return make_result<T>(Shape{}, {static_cast<T>(acc)}, {x}, [](detail::Node<T>& self) {
    if (auto* gx = detail::grad_of(self.parents[0])) {
      const T g = self.grad[0];
      for (auto& v : *gx) v += g;
    }
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------- shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return make_result<T>(std::move(shape), Buffer<T>(x.data().begin(), x.data().end()), {x}, [](detail::Node<T>& self) {
    if (auto* gx = detail::grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
    }
  });
}

/// out.shape[i] = x.shape[perm[i]].
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  if (perm.size() != r) throw ShapeError("permute: rank mismatch for " + shape_str(in));
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  std::vector<bool> used(r, false);
  for (std::size_t i = 0; i < r; ++i) {
    if (perm[i] >= r || used[perm[i]]) throw ShapeError("permute: invalid permutation");
    used[perm[i]] = true;
    out_shape[i] = in[perm[i]];
  }
  // Source offset for each destination element.
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[perm[i]];
    src[o] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Buffer<T> out(n);
  auto xd = x.data();
  for (std::size_t o = 0; o < n; ++o) out[o] = xd[src[o]];
  return make_result<T>(std::move(out_shape), std::move(out), {x},
                        [src = std::move(src)](detail::Node<T>& self) {
                          if (auto* gx = detail::grad_of(self.parents[0])) {
                            for (std::size_t o = 0; o < src.size(); ++o) (*gx)[src[o]] += self.grad[o];
                          }
                        });
}

/// Selects rows (first axis) by index. Ids may repeat; gradients scatter-add.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> ids) {
  if (x.rank() == 0) throw ShapeError("gather_rows on a scalar");
  const std::size_t rows = x.dim(0);
  const std::size_t width = rows ? x.numel() / rows : 0;
  Shape out_shape = x.shape();
  out_shape[0] = ids.size();
  Buffer<T> out(ids.size() * width);
  auto xd = x.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= rows) {
      throw ContractError("gather_rows: id " + std::to_string(ids[r]) + " out of range for " +
                          std::to_string(rows) + " rows");
    }
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(ids[r] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return make_result<T>(std::move(out_shape), std::move(out), {x},
                        [ids = std::vector<std::size_t>(ids.begin(), ids.end()), width](detail::Node<T>& self) {
                          auto* gx = detail::grad_of(self.parents[0]);
                          if (!gx) return;
                          for (std::size_t r = 0; r < ids.size(); ++r) {
                            for (std::size_t c = 0; c < width; ++c) (*gx)[ids[r] * width + c] += self.grad[r * width + c];
                          }
                        });
}

/// Concatenates along the first axis; trailing dims must agree.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  Buffer<T> out;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (p.rank() == 0 || t != tail) {
      throw ShapeError("concat_rows: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape = parts[0].shape();
  shape[0] = rows;
  return make_result<T>(std::move(shape), std::move(out), parts, [](detail::Node<T>& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->data.size();
      if (auto* gp = detail::grad_of(p)) {
        for (std::size_t i = 0; i < n; ++i) (*gp)[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

// ---------------------------------------------------------------- products

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  Buffer<T> out(static_cast<std::size_t>(m * n));
  detail::MatMap<T>(out.data(), m, n).noalias() =
      detail::ConstMatMap<T>(a.data().data(), m, k) * detail::ConstMatMap<T>(b.data().data(), k, n);
  return make_result<T>(Shape{a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, n](detail::Node<T>& self) {
    detail::ConstMatMap<T> g(self.grad.data(), m, n);
    if (auto* ga = detail::grad_of(self.parents[0])) {
      detail::MatMap<T>(ga->data(), m, k).noalias() +=
          g * detail::ConstMatMap<T>(self.parents[1]->data.data(), k, n).transpose();
    }
    if (auto* gb = detail::grad_of(self.parents[1])) {
      detail::MatMap<T>(gb->data(), k, n).noalias() +=
          detail::ConstMatMap<T>(self.parents[0]->data.data(), m, k).transpose() * g;
    }
  });
}

/// x[..., in] @ weight[in, out] + bias[out]. Leading dims are flattened.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() == 0 || weight.rank() != 2 || x.shape().back() != weight.dim(0) || bias.rank() != 1 ||
      bias.dim(0) != weight.dim(1)) {
    throw ShapeError("linear: x " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) + ", bias " +
                     shape_str(bias.shape()));
  }
  const auto in = static_cast<Eigen::Index>(weight.dim(0));
  const auto outd = static_cast<Eigen::Index>(weight.dim(1));
  const auto rows = static_cast<Eigen::Index>(x.numel() / weight.dim(0));
  Buffer<T> out(static_cast<std::size_t>(rows * outd));
  detail::MatMap<T> o(out.data(), rows, outd);
  o.noalias() = detail::ConstMatMap<T>(x.data().data(), rows, in) * detail::ConstMatMap<T>(weight.data().data(), in, outd);
  o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), outd);
  Shape shape = x.shape();
  shape.back() = weight.dim(1);
  return make_result<T>(std::move(shape), std::move(out), {x, weight, bias}, [rows, in, outd](detail::Node<T>& self) {
    detail::ConstMatMap<T> g(self.grad.data(), rows, outd);
    if (auto* gx = detail::grad_of(self.parents[0])) {
      detail::MatMap<T>(gx->data(), rows, in).noalias() +=
          g * detail::ConstMatMap<T>(self.parents[1]->data.data(), in, outd).transpose();
    }
    if (auto* gw = detail::grad_of(self.parents[1])) {
      detail::MatMap<T>(gw->data(), in, outd).noalias() +=
          detail::ConstMatMap<T>(self.parents[0]->data.data(), rows, in).transpose() * g;
    }
    if (auto* gb = detail::grad_of(self.parents[2])) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb->data(), outd) += g.colwise().sum();
    }
  });
}

/// Batched product of a[B, m, k] with b[B, k, n], or with b[B, n, k]
/// transposed when `transpose_b` is set.
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  const bool ok = a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                  (transpose_b ? a.dim(2) == b.dim(2) : a.dim(2) == b.dim(1));
  if (!ok) throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t batch = a.dim(0);
  const auto m = static_cast<Eigen::Index>(a.dim(1));
  const auto k = static_cast<Eigen::Index>(a.dim(2));
  const auto n = static_cast<Eigen::Index>(transpose_b ? b.dim(1) : b.dim(2));
  const std::size_t sa = a.numel() / batch, sb = b.numel() / batch, so = static_cast<std::size_t>(m * n);
  Buffer<T> out(batch * so);
  for (std::size_t i = 0; i < batch; ++i) {
    detail::ConstMatMap<T> am(a.data().data() + i * sa, m, k);
    detail::MatMap<T> om(out.data() + i * so, m, n);
    if (transpose_b) {
      om.noalias() = am * detail::ConstMatMap<T>(b.data().data() + i * sb, n, k).transpose();
    } else {
      om.noalias() = am * detail::ConstMatMap<T>(b.data().data() + i * sb, k, n);
    }
  }
  return make_result<T>(Shape{batch, a.dim(1), static_cast<std::size_t>(n)}, std::move(out), {a, b},
                        [=](detail::Node<T>& self) {
                          auto* ga = detail::grad_of(self.parents[0]);
                          auto* gb = detail::grad_of(self.parents[1]);
                          const T* ad = self.parents[0]->data.data();
                          const T* bd = self.parents[1]->data.data();
                          for (std::size_t i = 0; i < batch; ++i) {
                            detail::ConstMatMap<T> g(self.grad.data() + i * so, m, n);
                            if (transpose_b) {
                              detail::ConstMatMap<T> bm(bd + i * sb, n, k);
                              if (ga) detail::MatMap<T>(ga->data() + i * sa, m, k).noalias() += g * bm;
                              if (gb) {
                                detail::MatMap<T>(gb->data() + i * sb, n, k).noalias() +=
                                    g.transpose() * detail::ConstMatMap<T>(ad + i * sa, m, k);
                              }
                            } else {
                              detail::ConstMatMap<T> bm(bd + i * sb, k, n);
                              if (ga) detail::MatMap<T>(ga->data() + i * sa, m, k).noalias() += g * bm.transpose();
                              if (gb) {
                                detail::MatMap<T>(gb->data() + i * sb, k, n).noalias() +=
                                    detail::ConstMatMap<T>(ad + i * sa, m, k).transpose() * g;
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------- normalizers

namespace detail {

// Splits a shape around `axis` into (outer, len, inner) extents.
inline void axis_extents(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& len, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

/// Softmax along `axis` (default: last), max-subtracted.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank() || x.dim(axis) == 0) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  std::size_t outer, len, inner;
  detail::axis_extents(x.shape(), axis, outer, len, inner);
  Buffer<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      double z = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(xd[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      const T inv = static_cast<T>(1.0 / z);
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] *= inv;
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [outer, len, inner](detail::Node<T>& self) {
    auto* gx = detail::grad_of(self.parents[0]);
    if (!gx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0;
        for (std::size_t j = 0; j < len; ++j) dot += static_cast<double>(g[base + j * inner]) * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t i = base + j * inner;
          (*gx)[i] += y[i] * (g[i] - static_cast<T>(dot));
        }
      }
    }
  });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("softmax on a scalar");
  return softmax(x, x.rank() - 1);
}

/// log(softmax(x)) along the last axis, computed as x - max - log(sum(exp)).
template <class T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  if (x.rank() == 0 || x.shape().back() == 0) throw ShapeError("log_softmax: bad shape " + shape_str(x.shape()));
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.numel() / len;
  Buffer<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * len;
    const T mx = *std::max_element(row, row + len);
    double z = 0;
    for (std::size_t j = 0; j < len; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    const T lz = static_cast<T>(std::log(z));
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = row[j] - mx - lz;
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [rows, len](detail::Node<T>& self) {
    auto* gx = detail::grad_of(self.parents[0]);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0;
      for (std::size_t j = 0; j < len; ++j) gs += self.grad[r * len + j];
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t i = r * len + j;
        (*gx)[i] += self.grad[i] - std::exp(self.data[i]) * static_cast<T>(gs);
      }
    }
  });
}

/// Per-row normalization over the last axis, then gain * xhat + bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-6)) {
  if (x.rank() == 0 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.shape().back() ||
      bias.dim(0) != x.shape().back()) {
    throw ShapeError("layer_norm: x " + shape_str(x.shape()) + ", gain " + shape_str(gain.shape()) + ", bias " +
                     shape_str(bias.shape()));
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  Buffer<T> out(x.numel());
  Buffer<T> xhat(x.numel());
  Buffer<T> rstd(rows);
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * d;
    double mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
    rstd[r] = static_cast<T>(rs);
    for (std::size_t j = 0; j < d; ++j) {
      const auto h = static_cast<T>((row[j] - mu) * rs);
      xhat[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gain, bias},
                        [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node<T>& self) {
                          const auto& g = self.grad;
                          const auto& gainv = self.parents[1]->data;
                          auto* gx = detail::grad_of(self.parents[0]);
                          auto* gg = detail::grad_of(self.parents[1]);
                          auto* gb = detail::grad_of(self.parents[2]);
                          for (std::size_t r = 0; r < rows; ++r) {
                            double m1 = 0, m2 = 0;
                            for (std::size_t j = 0; j < d; ++j) {
                              const std::size_t i = r * d + j;
                              const double dh = static_cast<double>(g[i]) * gainv[j];
                              m1 += dh;
                              m2 += dh * xhat[i];
                              if (gg) (*gg)[j] += g[i] * xhat[i];
                              if (gb) (*gb)[j] += g[i];
                            }
                            if (!gx) continue;
                            m1 /= static_cast<double>(d);
                            m2 /= static_cast<double>(d);
                            for (std::size_t j = 0; j < d; ++j) {
                              const std::size_t i = r * d + j;
                              const double dh = static_cast<double>(g[i]) * gainv[j];
                              (*gx)[i] += static_cast<T>(rstd[r] * (dh - m1 - xhat[i] * m2));
                            }
                          }
                        });
}

}  // namespace droppos
