#pragma once

// Differentiable primitives recorded on a Tape.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include "avan/tape.hpp"

namespace avan {

namespace detail {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

inline void expect_shape(const std::string& op, const Shape& expected, const Shape& actual) {
  if (expected != actual) throw ShapeError(op, expected, actual);
}

inline void expect_rank(const std::string& op, std::size_t rank, const Shape& actual) {
  if (actual.size() != rank)
    throw ShapeError(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(actual));
}

template <typename T>
void same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape != b.tape) throw std::logic_error("operands recorded on different tapes");
}

struct ConvGeom {
  std::size_t n, c, h, w, o, k, stride, pad, ho, wo;
  std::size_t rows() const { return c * k * k; }
  std::size_t cols() const { return n * ho * wo; }
};

// col is [C*k*k, N*Ho*Wo] row-major.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::size_t p = g.ho * g.wo, ncols = g.cols();
  if (g.k == 1 && g.stride == 1 && g.pad == 0) {
    for (std::size_t c = 0; c < g.c; ++c)
      for (std::size_t n = 0; n < g.n; ++n) std::copy_n(x + (n * g.c + c) * p, p, col + c * ncols + n * p);
    return;
  }
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = col + ((c * g.k + ki) * g.k + kj) * ncols;
        // Output columns whose input column lies inside the image.
        const long off = long(kj) - long(g.pad);
        std::size_t ow_lo = 0, ow_hi = g.wo;
        while (ow_lo < g.wo && long(ow_lo * g.stride) + off < 0) ++ow_lo;
        while (ow_hi > ow_lo && long((ow_hi - 1) * g.stride) + off >= long(g.w)) --ow_hi;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* xs = x + (n * g.c + c) * g.h * g.w;
          T* dst = row + n * p;
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const long ih = long(oh * g.stride + ki) - long(g.pad);
            T* d = dst + oh * g.wo;
            if (ih < 0 || ih >= long(g.h)) {
              std::fill_n(d, g.wo, T{0});
              continue;
            }
            std::fill_n(d, ow_lo, T{0});
            const T* src = xs + ih * long(g.w) + off;
            if (g.stride == 1) {
              std::copy(src + ow_lo, src + ow_hi, d + ow_lo);
            } else {
              for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) d[ow] = src[ow * g.stride];
            }
            std::fill(d + ow_hi, d + g.wo, T{0});
          }
        }
      }
}

template <typename T>
void col2im(const T* col, const ConvGeom& g, T* dx) {
  const std::size_t p = g.ho * g.wo, ncols = g.cols();
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = col + ((c * g.k + ki) * g.k + kj) * ncols;
        for (std::size_t n = 0; n < g.n; ++n) {
          T* xs = dx + (n * g.c + c) * g.h * g.w;
          const T* src = row + n * p;
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const long ih = long(oh * g.stride + ki) - long(g.pad);
            if (ih < 0 || ih >= long(g.h)) continue;
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
              const long iw = long(ow * g.stride + kj) - long(g.pad);
              if (iw < 0 || iw >= long(g.w)) continue;
              xs[ih * long(g.w) + iw] += src[oh * g.wo + ow];
            }
          }
        }
      }
}

// Bilinear source coordinate with half-pixel centers, clamped to the grid.
struct Lerp {
  std::size_t i0, i1;
  double t;
};

inline std::vector<Lerp> lerp_table(std::size_t src, std::size_t dst) {
  std::vector<Lerp> out(dst);
  const double scale = double(src) / double(dst);
  for (std::size_t d = 0; d < dst; ++d) {
    double s = (double(d) + 0.5) * scale - 0.5;
    if (s < 0) s = 0;
    auto i0 = std::min<std::size_t>(std::size_t(s), src - 1);
    auto i1 = std::min<std::size_t>(i0 + 1, src - 1);
    out[d] = {i0, i1, s - double(i0)};
  }
  return out;
}

}  // namespace detail

// ---- elementwise ---------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  detail::expect_shape("add", a.shape(), b.shape());
  Tensor<T> y = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.tape->record("add", std::move(y), {a.id, b.id},
                        [ia = a.id, ib = b.id](Tape<T>& t, const Tensor<T>& g) {
                          t.accumulate(ia, g);
                          t.accumulate(ib, g);
                        });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  detail::expect_shape("sub", a.shape(), b.shape());
  Tensor<T> y = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return a.tape->record("sub", std::move(y), {a.id, b.id},
                        [ia = a.id, ib = b.id](Tape<T>& t, const Tensor<T>& g) {
                          t.accumulate(ia, g);
                          if (auto* gb = t.grad_if_needed(ib))
                            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                        });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  detail::expect_shape("mul", a.shape(), b.shape());
  Tensor<T> y = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return a.tape->record("mul", std::move(y), {a.id, b.id},
                        [ia = a.id, ib = b.id](Tape<T>& t, const Tensor<T>& g) {
                          const auto& av = t.value(Var<T>{&t, ia});
                          const auto& bv = t.value(Var<T>{&t, ib});
                          if (auto* ga = t.grad_if_needed(ia))
                            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
                          if (auto* gb = t.grad_if_needed(ib))
                            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
                        });
}

/// x[N,C,H,W] times m[N,1,H,W], the same mask applied to every channel.
template <typename T>
Var<T> mul_channels(Var<T> x, Var<T> m) {
  detail::same_tape(x, m);
  detail::expect_rank("mul_channels", 4, x.shape());
  const auto& xs = x.shape();
  detail::expect_shape("mul_channels", Shape{xs[0], 1, xs[2], xs[3]}, m.shape());
  const std::size_t n = xs[0], c = xs[1], p = xs[2] * xs[3];
  Tensor<T> y = x.value();
  const auto& mv = m.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t q = 0; q < p; ++q) y[(i * c + j) * p + q] *= mv[i * p + q];
  return x.tape->record(
      "mul_channels", std::move(y), {x.id, m.id},
      [ix = x.id, im = m.id, n, c, p](Tape<T>& t, const Tensor<T>& g) {
        const auto& xv = t.value(Var<T>{&t, ix});
        const auto& mv = t.value(Var<T>{&t, im});
        auto* gx = t.grad_if_needed(ix);
        auto* gm = t.grad_if_needed(im);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j)
            for (std::size_t q = 0; q < p; ++q) {
              const std::size_t k = (i * c + j) * p + q;
              if (gx) (*gx)[k] += g[k] * mv[i * p + q];
              if (gm) (*gm)[i * p + q] += g[k] * xv[k];
            }
      });
}

/// scale * x + shift
template <typename T>
Var<T> affine(Var<T> x, T scale, T shift) {
  Tensor<T> y = x.value();
  for (auto& v : y.vec()) v = scale * v + shift;
  return x.tape->record("affine", std::move(y), {x.id},
                        [ix = x.id, scale](Tape<T>& t, const Tensor<T>& g) {
                          if (auto* gx = t.grad_if_needed(ix))
                            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += scale * g[i];
                        });
}

template <typename T>
Var<T> scale(Var<T> x, T s) {
  return affine(x, s, T{0});
}

namespace detail {
template <typename T>
Var<T> rectify(Var<T> x, const char* name) {
  Tensor<T> y = x.value();
  for (auto& v : y.vec()) v = v <= T{0} ? T{0} : v;  // NaN passes through
  return x.tape->record(name, std::move(y), {x.id}, [ix = x.id](Tape<T>& t, const Tensor<T>& g) {
    const auto& xv = t.value(Var<T>{&t, ix});
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > T{0}) gx[i] += g[i];
  });
}
}  // namespace detail

template <typename T>
Var<T> relu(Var<T> x) {
  return detail::rectify(x, "relu");
}

/// Elementwise max(x, 0), as used by hinge losses.
template <typename T>
Var<T> hinge(Var<T> x) {
  return detail::rectify(x, "hinge");
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> y = x.value();
  for (auto& v : y.vec()) v = sigmoid_scalar(v);
  const std::size_t out = x.tape->size();
  return x.tape->record("sigmoid", std::move(y), {x.id},
                        [ix = x.id, out](Tape<T>& t, const Tensor<T>& g) {
                          const auto& yv = t.value(Var<T>{&t, out});
                          auto& gx = t.grad_buffer(ix);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gx[i] += g[i] * yv[i] * (T{1} - yv[i]);
                        });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  Tensor<T> y = x.value();
  for (auto& v : y.vec()) v = std::tanh(v);
  const std::size_t out = x.tape->size();
  return x.tape->record("tanh", std::move(y), {x.id},
                        [ix = x.id, out](Tape<T>& t, const Tensor<T>& g) {
                          const auto& yv = t.value(Var<T>{&t, out});
                          auto& gx = t.grad_buffer(ix);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gx[i] += g[i] * (T{1} - yv[i] * yv[i]);
                        });
}

// ---- layers --------------------------------------------------------------

/// x[N,in] * W[out,in]^T + b[out]. Pass no bias for a pure linear map.
template <typename T>
Var<T> dense(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b = std::nullopt) {
  detail::same_tape(x, w);
  detail::expect_rank("dense", 2, x.shape());
  detail::expect_rank("dense.weight", 2, w.shape());
  const std::size_t n = x.shape()[0], in = x.shape()[1], out = w.shape()[0];
  if (w.shape()[1] != in) throw ShapeError("dense", Shape{out, in}, w.shape());
  if (b) detail::expect_shape("dense.bias", Shape{out}, b->shape());
  Tensor<T> y(Shape{n, out});
  detail::MapR<T> Y(y.data(), n, out);
  detail::CMapR<T> X(x.value().data(), n, in);
  detail::CMapR<T> W(w.value().data(), out, in);
  Y.noalias() = X * W.transpose();
  if (b) {
    const auto& bv = b->value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out; ++j) y[i * out + j] += bv[j];
  }
  std::vector<std::size_t> ins{x.id, w.id};
  const long ib = b ? long(b->id) : -1;
  if (b) ins.push_back(b->id);
  return x.tape->record(
      "dense", std::move(y), std::move(ins),
      [ix = x.id, iw = w.id, ib, n, in, out](Tape<T>& t, const Tensor<T>& g) {
        detail::CMapR<T> G(g.data(), n, out);
        if (auto* gx = t.grad_if_needed(ix)) {
          detail::CMapR<T> W(t.value(Var<T>{&t, iw}).data(), out, in);
          detail::MapR<T>(gx->data(), n, in).noalias() += G * W;
        }
        if (auto* gw = t.grad_if_needed(iw)) {
          detail::CMapR<T> X(t.value(Var<T>{&t, ix}).data(), n, in);
          detail::MapR<T>(gw->data(), out, in).noalias() += G.transpose() * X;
        }
        if (ib >= 0)
          if (auto* gb = t.grad_if_needed(std::size_t(ib)))
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < out; ++j) (*gb)[j] += g[i * out + j];
      });
}

/// x[N,C,H,W] (*) w[O,C,k,k] with zero padding; output [N,O,Ho,Wo].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, std::size_t stride, std::size_t pad) {
  detail::same_tape(x, w);
  detail::expect_rank("conv2d", 4, x.shape());
  detail::expect_rank("conv2d.weight", 4, w.shape());
  if (stride != 1 && stride != 2) throw ShapeError("conv2d", "stride must be 1 or 2");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3])
    throw ShapeError("conv2d", Shape{ws[0], xs[1], ws[2], ws[2]}, ws);
  if (b) detail::expect_shape("conv2d.bias", Shape{ws[0]}, b->shape());
  detail::ConvGeom geo{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad, 0, 0};
  if (xs[2] + 2 * pad < geo.k || xs[3] + 2 * pad < geo.k)
    throw ShapeError("conv2d", "kernel larger than padded input " + shape_str(xs));
  geo.ho = (geo.h + 2 * pad - geo.k) / stride + 1;
  geo.wo = (geo.w + 2 * pad - geo.k) / stride + 1;
  const std::size_t p = geo.ho * geo.wo, ncols = geo.cols(), rows = geo.rows();

  auto col = std::make_shared<std::vector<T>>(rows * ncols);
  detail::im2col(x.value().data(), geo, col->data());
  detail::MatR<T> Y(geo.o, ncols);
  Y.noalias() = detail::CMapR<T>(w.value().data(), geo.o, rows) *
                detail::CMapR<T>(col->data(), rows, ncols);
  Tensor<T> y(Shape{geo.n, geo.o, geo.ho, geo.wo});
  for (std::size_t n = 0; n < geo.n; ++n)
    for (std::size_t o = 0; o < geo.o; ++o) {
      const T bias = b ? b->value()[o] : T{0};
      const T* src = Y.data() + o * ncols + n * p;
      T* dst = y.data() + (n * geo.o + o) * p;
      for (std::size_t q = 0; q < p; ++q) dst[q] = src[q] + bias;
    }

  std::vector<std::size_t> ins{x.id, w.id};
  const long ib = b ? long(b->id) : -1;
  if (b) ins.push_back(b->id);
  return x.tape->record(
      "conv2d", std::move(y), std::move(ins),
      [ix = x.id, iw = w.id, ib, geo, col](Tape<T>& t, const Tensor<T>& g) {
        const std::size_t p = geo.ho * geo.wo, ncols = geo.cols(), rows = geo.rows();
        detail::MatR<T> G(geo.o, ncols);
        for (std::size_t n = 0; n < geo.n; ++n)
          for (std::size_t o = 0; o < geo.o; ++o)
            std::copy_n(g.data() + (n * geo.o + o) * p, p, G.data() + o * ncols + n * p);
        if (ib >= 0)
          if (auto* gb = t.grad_if_needed(std::size_t(ib)))
            for (std::size_t o = 0; o < geo.o; ++o) (*gb)[o] += G.row(o).sum();
        auto* gw = t.grad_if_needed(iw);
        auto* gx = t.grad_if_needed(ix);
        if (gw)
          detail::MapR<T>(gw->data(), geo.o, rows).noalias() +=
              G * detail::CMapR<T>(col->data(), rows, ncols).transpose();
        if (gx) {
          detail::MatR<T> dcol(rows, ncols);
          dcol.noalias() =
              detail::CMapR<T>(t.value(Var<T>{&t, iw}).data(), geo.o, rows).transpose() * G;
          detail::col2im(dcol.data(), geo, gx->data());
        }
      });
}

/// Batch-norm state: affine parameters plus running statistics.
template <typename T>
struct BatchNorm {
  Param<T> gamma;
  Param<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  /// Weight kept on the old running estimate at each update.
  T momentum = T(0.9);
  T eps = T(1e-5);
  bool affine = true;

  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t features, bool with_affine = true)
      : gamma(name + ".gamma", Tensor<T>(Shape{features}, T{1})),
        beta(name + ".beta", Tensor<T>(Shape{features}, T{0})),
        running_mean(Shape{features}, T{0}),
        running_var(Shape{features}, T{1}),
        affine(with_affine) {}

  std::size_t features() const { return running_mean.size(); }
};

/// Normalizes per feature of x[N,F] or per channel of x[N,C,H,W]. Training
/// tapes use batch statistics; evaluation tapes use running statistics.
template <typename T>
Var<T> batch_norm(Var<T> x, BatchNorm<T>& bn) {
  Tape<T>& tape = *x.tape;
  const auto& xs = x.shape();
  if (xs.size() != 2 && xs.size() != 4)
    throw ShapeError("batch_norm", "expected rank 2 or 4, got " + shape_str(xs));
  const std::size_t n = xs[0], c = xs[1], s = xs.size() == 4 ? xs[2] * xs[3] : 1;
  if (c != bn.features()) throw ShapeError("batch_norm", Shape{n, bn.features()}, xs);
  const std::size_t m = n * s;
  const auto& xv = x.value();
  const bool training = tape.training();
  if (training && m < 2) throw ShapeError("batch_norm", "training needs at least 2 values per feature");

  auto xhat = std::make_shared<Tensor<T>>(xs);
  auto invstd = std::make_shared<std::vector<T>>(c);
  for (std::size_t j = 0; j < c; ++j) {
    T mean, var;
    if (training) {
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < s; ++q) acc += xv[(i * c + j) * s + q];
      mean = T(acc / double(m));
      double acc2 = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < s; ++q) {
          const double d = double(xv[(i * c + j) * s + q]) - double(mean);
          acc2 += d * d;
        }
      var = T(acc2 / double(m));
      if (tape.mode().update_running_stats) {
        bn.running_mean[j] = bn.momentum * bn.running_mean[j] + (T{1} - bn.momentum) * mean;
        const T unbiased = T(acc2 / double(m - 1));
        bn.running_var[j] = bn.momentum * bn.running_var[j] + (T{1} - bn.momentum) * unbiased;
      }
    } else {
      mean = bn.running_mean[j];
      var = bn.running_var[j];
    }
    const T is = T{1} / std::sqrt(var + bn.eps);
    (*invstd)[j] = is;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t q = 0; q < s; ++q) {
        const std::size_t k = (i * c + j) * s + q;
        (*xhat)[k] = (xv[k] - mean) * is;
      }
  }

  Tensor<T> y = *xhat;
  std::vector<std::size_t> ins{x.id};
  long ig = -1, ibeta = -1;
  if (bn.affine) {
    Var<T> gv = tape.param(bn.gamma);
    Var<T> bv = tape.param(bn.beta);
    ig = long(gv.id);
    ibeta = long(bv.id);
    ins.push_back(gv.id);
    ins.push_back(bv.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j)
        for (std::size_t q = 0; q < s; ++q) {
          const std::size_t k = (i * c + j) * s + q;
          y[k] = bn.gamma.value[j] * y[k] + bn.beta.value[j];
        }
  }

  return tape.record(
      "batch_norm", std::move(y), std::move(ins),
      [ix = x.id, ig, ibeta, xhat, invstd, n, c, s, m, training](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>* gam = ig >= 0 ? &t.value(Var<T>{&t, std::size_t(ig)}) : nullptr;
        Tensor<T>* gg = ig >= 0 ? t.grad_if_needed(std::size_t(ig)) : nullptr;
        Tensor<T>* gbeta = ibeta >= 0 ? t.grad_if_needed(std::size_t(ibeta)) : nullptr;
        Tensor<T>* gx = t.grad_if_needed(ix);
        for (std::size_t j = 0; j < c; ++j) {
          const T gamma = gam ? (*gam)[j] : T{1};
          double sum_g = 0, sum_gx = 0;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t q = 0; q < s; ++q) {
              const std::size_t k = (i * c + j) * s + q;
              sum_g += g[k];
              sum_gx += double(g[k]) * double((*xhat)[k]);
            }
          if (gg) (*gg)[j] += T(sum_gx);
          if (gbeta) (*gbeta)[j] += T(sum_g);
          if (!gx) continue;
          const T is = (*invstd)[j];
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t q = 0; q < s; ++q) {
              const std::size_t k = (i * c + j) * s + q;
              if (training) {
                (*gx)[k] += gamma * is *
                            (g[k] - T(sum_g / double(m)) - (*xhat)[k] * T(sum_gx / double(m)));
              } else {
                (*gx)[k] += gamma * is * g[k];
              }
            }
        }
      });
}

/// [N,C,H,W] -> [N,C]
template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  detail::expect_rank("global_avg_pool", 4, x.shape());
  const auto& xs = x.shape();
  const std::size_t nc = xs[0] * xs[1], p = xs[2] * xs[3];
  Tensor<T> y(Shape{xs[0], xs[1]});
  const auto& xv = x.value();
  for (std::size_t i = 0; i < nc; ++i) {
    T acc{0};
    for (std::size_t q = 0; q < p; ++q) acc += xv[i * p + q];
    y[i] = acc / T(p);
  }
  return x.tape->record("global_avg_pool", std::move(y), {x.id},
                        [ix = x.id, nc, p](Tape<T>& t, const Tensor<T>& g) {
                          auto& gx = t.grad_buffer(ix);
                          for (std::size_t i = 0; i < nc; ++i)
                            for (std::size_t q = 0; q < p; ++q) gx[i * p + q] += g[i] / T(p);
                        });
}

/// Mean over non-overlapping 2x2 blocks: [N,C,H,W] -> [N,C,H/2,W/2].
template <typename T>
Var<T> avg_pool2(Var<T> x) {
  detail::expect_rank("avg_pool2", 4, x.shape());
  const auto& xs = x.shape();
  if (xs[2] % 2 || xs[3] % 2) throw ShapeError("avg_pool2", "spatial dims must be even, got " + shape_str(xs));
  const std::size_t nc = xs[0] * xs[1], h = xs[2], w = xs[3], ho = h / 2, wo = w / 2;
  Tensor<T> y(Shape{xs[0], xs[1], ho, wo});
  const auto& xv = x.value();
  for (std::size_t i = 0; i < nc; ++i)
    for (std::size_t r = 0; r < ho; ++r)
      for (std::size_t c = 0; c < wo; ++c) {
        const T* a = xv.data() + (i * h + 2 * r) * w + 2 * c;
        y[(i * ho + r) * wo + c] = T(0.25) * (a[0] + a[1] + a[w] + a[w + 1]);
      }
  return x.tape->record("avg_pool2", std::move(y), {x.id},
                        [ix = x.id, nc, h, w, ho, wo](Tape<T>& t, const Tensor<T>& g) {
                          auto& gx = t.grad_buffer(ix);
                          for (std::size_t i = 0; i < nc; ++i)
                            for (std::size_t r = 0; r < ho; ++r)
                              for (std::size_t c = 0; c < wo; ++c) {
                                const T v = T(0.25) * g[(i * ho + r) * wo + c];
                                T* a = gx.data() + (i * h + 2 * r) * w + 2 * c;
                                a[0] += v;
                                a[1] += v;
                                a[w] += v;
                                a[w + 1] += v;
                              }
                        });
}

/// Bilinear resize of [N,C,h,w] to [N,C,H,W] with half-pixel centers.
template <typename T>
Var<T> upsample_bilinear(Var<T> x, std::size_t H, std::size_t W) {
  detail::expect_rank("upsample_bilinear", 4, x.shape());
  const auto& xs = x.shape();
  if (H == 0 || W == 0) throw ShapeError("upsample_bilinear", "empty target size");
  const std::size_t nc = xs[0] * xs[1], h = xs[2], w = xs[3];
  auto ry = detail::lerp_table(h, H);
  auto rx = detail::lerp_table(w, W);
  Tensor<T> y(Shape{xs[0], xs[1], H, W});
  const auto& xv = x.value();
  for (std::size_t i = 0; i < nc; ++i) {
    const T* src = xv.data() + i * h * w;
    T* dst = y.data() + i * H * W;
    for (std::size_t a = 0; a < H; ++a) {
      const auto& ly = ry[a];
      for (std::size_t b = 0; b < W; ++b) {
        const auto& lx = rx[b];
        const T ty = T(ly.t), tx = T(lx.t);
        const T top = src[ly.i0 * w + lx.i0] * (T{1} - tx) + src[ly.i0 * w + lx.i1] * tx;
        const T bot = src[ly.i1 * w + lx.i0] * (T{1} - tx) + src[ly.i1 * w + lx.i1] * tx;
        dst[a * W + b] = top * (T{1} - ty) + bot * ty;
      }
    }
  }
  return x.tape->record(
      "upsample_bilinear", std::move(y), {x.id},
      [ix = x.id, nc, h, w, H, W, ry, rx](Tape<T>& t, const Tensor<T>& g) {
        auto& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < nc; ++i) {
          T* dst = gx.data() + i * h * w;
          const T* src = g.data() + i * H * W;
          for (std::size_t a = 0; a < H; ++a) {
            const auto& ly = ry[a];
            for (std::size_t b = 0; b < W; ++b) {
              const auto& lx = rx[b];
              const T ty = T(ly.t), tx = T(lx.t), v = src[a * W + b];
              dst[ly.i0 * w + lx.i0] += v * (T{1} - ty) * (T{1} - tx);
              dst[ly.i0 * w + lx.i1] += v * (T{1} - ty) * tx;
              dst[ly.i1 * w + lx.i0] += v * ty * (T{1} - tx);
              dst[ly.i1 * w + lx.i1] += v * ty * tx;
            }
          }
        }
      });
}

// ---- shape ---------------------------------------------------------------

namespace detail {
inline void split_axis(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "no operands");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat", "axis out of range for " + shape_str(s0));
  Shape out = s0;
  out[axis] = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    Shape expect = s0;
    expect[axis] = p.shape().size() == s0.size() ? p.shape()[axis] : 0;
    detail::expect_shape("concat", expect, p.shape());
    out[axis] += p.shape()[axis];
    ids.push_back(p.id);
    widths.push_back(p.shape()[axis]);
  }
  std::size_t outer, inner;
  detail::split_axis(s0, axis, outer, inner);
  Tensor<T> y(out);
  const std::size_t total = out[axis];
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    const std::size_t span = widths[k] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * span, span, y.data() + (o * total + off) * inner);
    off += widths[k];
  }
  return parts[0].tape->record(
      "concat", std::move(y), ids, [ids, widths, outer, inner, total](Tape<T>& t, const Tensor<T>& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t span = widths[k] * inner;
          if (auto* gk = t.grad_if_needed(ids[k]))
            for (std::size_t o = 0; o < outer; ++o) {
              const T* src = g.data() + (o * total + off) * inner;
              T* dst = gk->data() + o * span;
              for (std::size_t q = 0; q < span; ++q) dst[q] += src[q];
            }
          off += widths[k];
        }
      });
}

/// Elements [begin, end) along axis.
template <typename T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& xs = x.shape();
  if (axis >= xs.size() || begin > end || end > xs[axis])
    throw ShapeError("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                  ") on axis " + std::to_string(axis) + " of " + shape_str(xs));
  std::size_t outer, inner;
  detail::split_axis(xs, axis, outer, inner);
  Shape out = xs;
  out[axis] = end - begin;
  const std::size_t total = xs[axis], span = (end - begin) * inner;
  Tensor<T> y(out);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + (o * total + begin) * inner, span, y.data() + o * span);
  return x.tape->record("slice", std::move(y), {x.id},
                        [ix = x.id, outer, inner, total, begin, span](Tape<T>& t, const Tensor<T>& g) {
                          auto& gx = t.grad_buffer(ix);
                          for (std::size_t o = 0; o < outer; ++o) {
                            T* dst = gx.data() + (o * total + begin) * inner;
                            const T* src = g.data() + o * span;
                            for (std::size_t q = 0; q < span; ++q) dst[q] += src[q];
                          }
                        });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  return x.tape->record("reshape", std::move(y), {x.id}, [ix = x.id](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

// ---- reductions ----------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> x) {
  T acc{0};
  for (T v : x.value().vec()) acc += v;
  return x.tape->record("sum", Tensor<T>::scalar(acc), {x.id},
                        [ix = x.id](Tape<T>& t, const Tensor<T>& g) {
                          auto& gx = t.grad_buffer(ix);
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
                        });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T{1} / T(x.value().size()));
}

/// Sum of squared differences to a fixed target.
template <typename T>
Var<T> sse(Var<T> x, const Tensor<T>& target) {
  detail::expect_shape("sse", x.shape(), target.shape());
  const auto& xv = x.value();
  T acc{0};
  for (std::size_t i = 0; i < xv.size(); ++i) acc += (xv[i] - target[i]) * (xv[i] - target[i]);
  return x.tape->record("sse", Tensor<T>::scalar(acc), {x.id},
                        [ix = x.id, target](Tape<T>& t, const Tensor<T>& g) {
                          const auto& xv = t.value(Var<T>{&t, ix});
                          auto& gx = t.grad_buffer(ix);
                          for (std::size_t i = 0; i < gx.size(); ++i)
                            gx[i] += T{2} * (xv[i] - target[i]) * g[0];
                        });
}

/// Sum of absolute values. Subgradient 0 at 0.
template <typename T>
Var<T> l1_norm(Var<T> x) {
  T acc{0};
  for (T v : x.value().vec()) acc += std::abs(v);
  return x.tape->record("l1_norm", Tensor<T>::scalar(acc), {x.id},
                        [ix = x.id](Tape<T>& t, const Tensor<T>& g) {
                          const auto& xv = t.value(Var<T>{&t, ix});
                          auto& gx = t.grad_buffer(ix);
                          for (std::size_t i = 0; i < gx.size(); ++i)
                            gx[i] += (xv[i] > T{0} ? g[0] : (xv[i] < T{0} ? -g[0] : T{0}));
                        });
}

/// Row-wise Euclidean distance of a[N,F] and b[N,F]; output [N].
/// The gradient at zero distance is taken as 0.
template <typename T>
Var<T> euclidean_rows(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  detail::expect_rank("euclidean_rows", 2, a.shape());
  detail::expect_shape("euclidean_rows", a.shape(), b.shape());
  const std::size_t n = a.shape()[0], f = a.shape()[1];
  Tensor<T> y(Shape{n});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n; ++i) {
    T acc{0};
    for (std::size_t j = 0; j < f; ++j) {
      const T d = av[i * f + j] - bv[i * f + j];
      acc += d * d;
    }
    y[i] = std::sqrt(acc);
  }
  const std::size_t out = a.tape->size();
  return a.tape->record(
      "euclidean_rows", std::move(y), {a.id, b.id},
      [ia = a.id, ib = b.id, out, n, f](Tape<T>& t, const Tensor<T>& g) {
        const auto& av = t.value(Var<T>{&t, ia});
        const auto& bv = t.value(Var<T>{&t, ib});
        const auto& yv = t.value(Var<T>{&t, out});
        auto* ga = t.grad_if_needed(ia);
        auto* gb = t.grad_if_needed(ib);
        for (std::size_t i = 0; i < n; ++i) {
          if (yv[i] == T{0}) continue;
          const T s = g[i] / yv[i];
          for (std::size_t j = 0; j < f; ++j) {
            const T d = (av[i * f + j] - bv[i * f + j]) * s;
            if (ga) (*ga)[i * f + j] += d;
            if (gb) (*gb)[i * f + j] -= d;
          }
        }
      });
}

}  // namespace avan
