#pragma once

// Image encoder, linear fMRI encoder, and the autoencoder used to initialize it.

#include <stdexcept>
#include <vector>

#include "avan/adam.hpp"
#include "avan/layers.hpp"

namespace avan {

template <typename T>
struct ImageEncoder {
  Backbone<T> backbone;
  Linear<T> fc;

  ImageEncoder() = default;
  ImageEncoder(const std::vector<std::size_t>& widths, std::size_t dim, Rng& rng)
      : backbone("image", widths, rng), fc("image.fc", widths.back(), dim, true, rng) {}

  /// Pre-pooling grid [N,C_f,H/32,W/32].
  Var<T> grid(Tape<T>& t, Var<T> images) { return backbone(t, images); }
  /// Pooled features [N,C_f] -> codes [N,D] in (-1,1).
  Var<T> head(Tape<T>& t, Var<T> pooled) { return tanh(fc(t, pooled)); }
  Var<T> operator()(Tape<T>& t, Var<T> images) { return head(t, global_avg_pool(grid(t, images))); }

  std::size_t dim() const { return fc.w.value.dim(0); }

  void visit(const ParamVisitor<T>& p, const BufferVisitor<T>& b = {}) {
    backbone.visit(p, b);
    fc.visit(p);
  }
};

/// code = W v, W of shape [D,V]. No bias, no nonlinearity.
template <typename T>
struct FmriEncoder {
  Param<T> w;

  FmriEncoder() = default;
  FmriEncoder(std::size_t voxels, std::size_t dim, Rng& rng)
      : w("fmri.w", init_uniform<T>({dim, voxels}, voxels, rng)) {}

  std::size_t voxels() const { return w.value.dim(1); }
  std::size_t dim() const { return w.value.dim(0); }

  /// [N,V] -> [N,D]
  Var<T> operator()(Tape<T>& t, Var<T> fmri) {
    const auto& s = fmri.shape();
    if (s.size() != 2 || s[1] != voxels()) throw ShapeError("encode_fmri", Shape{s.empty() ? 0 : s[0], voxels()}, s);
    return dense(fmri, t.param(w));
  }

  void visit(const ParamVisitor<T>& p) { p(w); }
};

/// coeff * sum |W|
template <typename T>
Var<T> l1_penalty(Var<T> w, T coeff) {
  if (coeff < T{0}) throw std::invalid_argument("l1 coefficient must be >= 0");
  return scale(l1_norm(w), coeff);
}

/// Linear autoencoder: encoder W_e [D,V], decoder W_d [V,D].
template <typename T>
struct Autoencoder {
  Param<T> we;
  Param<T> wd;

  Autoencoder() = default;
  Autoencoder(std::size_t voxels, std::size_t dim, Rng& rng)
      : we("ae.encoder", init_uniform<T>({dim, voxels}, voxels, rng)),
        wd("ae.decoder", init_uniform<T>({voxels, dim}, dim, rng)) {}

  std::size_t voxels() const { return we.value.dim(1); }
  std::size_t dim() const { return we.value.dim(0); }

  /// Mean squared reconstruction error (over samples and voxels) plus L1 on W_e.
  struct Loss {
    Var<T> mse;
    Var<T> total;
  };
  Loss loss(Tape<T>& t, Var<T> x, T l1_coeff) {
    Var<T> code = dense(x, t.param(we));
    Var<T> recon = dense(code, t.param(wd));
    Var<T> mse = scale(sse(recon, x.value()), T{1} / T(x.value().size()));
    return {mse, add(mse, l1_penalty(t.param(we), l1_coeff))};
  }
};

struct PretrainLog {
  std::vector<double> mse;    // per epoch, before the update
  std::vector<double> total;  // including the L1 term
};

/// Full-batch Adam on the autoencoder objective.
template <typename T>
Autoencoder<T> pretrain_autoencoder(const Tensor<T>& data, std::size_t dim, std::size_t epochs,
                                    T l1_coeff, AdamConfig adam, Rng& rng, PretrainLog* log = nullptr) {
  if (data.ndim() != 2 || data.dim(0) < 2)
    throw std::invalid_argument("autoencoder pretraining needs at least 2 samples");
  Autoencoder<T> ae(data.dim(1), dim, rng);
  AdamState<T> st;
  st.config = adam;
  for (std::size_t e = 0; e < epochs; ++e) {
    ae.we.zero_grad();
    ae.wd.zero_grad();
    Tape<T> tape(ForwardMode{true});
    auto l = ae.loss(tape, tape.constant(data), l1_coeff);
    if (log) {
      log->mse.push_back(double(l.mse.value().item()));
      log->total.push_back(double(l.total.value().item()));
    }
    tape.backward(l.total);
    adam_step<T>({&ae.we, &ae.wd}, st);
  }
  return ae;
}

/// Copies W_e into a fresh fMRI encoder.
template <typename T>
FmriEncoder<T> init_from_autoencoder(const Autoencoder<T>& ae, std::size_t expect_dim,
                                     std::size_t expect_voxels) {
  if (ae.dim() != expect_dim || ae.voxels() != expect_voxels)
    throw ShapeError("init_from_autoencoder", Shape{expect_dim, expect_voxels}, ae.we.value.shape());
  FmriEncoder<T> enc;
  enc.w = Param<T>("fmri.w", ae.we.value);
  return enc;
}

}  // namespace avan
