#pragma once

// Parameterized building blocks shared by the networks.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "avan/ops.hpp"
#include "avan/rng.hpp"

namespace avan {

template <typename T>
using ParamVisitor = std::function<void(Param<T>&)>;
/// Non-trainable state that still belongs in a checkpoint (BN statistics).
template <typename T>
using BufferVisitor = std::function<void(const std::string&, Tensor<T>&)>;

/// Uniform in +-1/sqrt(fan_in).
template <typename T>
Tensor<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(double(fan_in));
  for (auto& v : t.vec()) v = T(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
void visit_bn(BatchNorm<T>& bn, const ParamVisitor<T>& p, const BufferVisitor<T>& b) {
  if (bn.affine) {
    p(bn.gamma);
    p(bn.beta);
  }
  if (b) {
    b(bn.gamma.name.substr(0, bn.gamma.name.size() - 6) + ".running_mean", bn.running_mean);
    b(bn.gamma.name.substr(0, bn.gamma.name.size() - 6) + ".running_var", bn.running_var);
  }
}

template <typename T>
struct Conv {
  Param<T> w;
  std::optional<Param<T>> b;
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv() = default;
  Conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride_,
       bool bias, Rng& rng)
      : w(name + ".w", init_uniform<T>({out, in, k, k}, in * k * k, rng)),
        stride(stride_),
        pad(k / 2) {
    if (bias) b = Param<T>(name + ".b", init_uniform<T>({out}, in * k * k, rng));
  }

  Var<T> operator()(Tape<T>& t, Var<T> x) {
    std::optional<Var<T>> bv;
    if (b) bv = t.param(*b);
    return conv2d(x, t.param(w), bv, stride, pad);
  }

  void visit(const ParamVisitor<T>& p) {
    p(w);
    if (b) p(*b);
  }
};

template <typename T>
struct Linear {
  Param<T> w;
  std::optional<Param<T>> b;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, bool bias, Rng& rng)
      : w(name + ".w", init_uniform<T>({out, in}, in, rng)) {
    if (bias) b = Param<T>(name + ".b", init_uniform<T>({out}, in, rng));
  }

  Var<T> operator()(Tape<T>& t, Var<T> x) {
    std::optional<Var<T>> bv;
    if (b) bv = t.param(*b);
    return dense(x, t.param(w), bv);
  }

  void visit(const ParamVisitor<T>& p) {
    p(w);
    if (b) p(*b);
  }
};

/// conv3x3/2-BN-ReLU, conv3x3-BN, concatenated with the 2x2-averaged input,
/// then a 1x1 conv and ReLU. Halves the spatial size.
template <typename T>
struct ResidualBlock {
  Conv<T> c1, c2, c3;
  BatchNorm<T> bn1, bn2;

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : c1(name + ".conv1", in, out, 3, 2, false, rng),
        c2(name + ".conv2", out, out, 3, 1, false, rng),
        c3(name + ".conv3", out + in, out, 1, 1, true, rng),
        bn1(name + ".bn1", out),
        bn2(name + ".bn2", out) {}

  Var<T> operator()(Tape<T>& t, Var<T> x) {
    Var<T> y = relu(batch_norm(c1(t, x), bn1));
    y = batch_norm(c2(t, y), bn2);
    Var<T> skip = avg_pool2(x);
    return relu(c3(t, concat<T>({y, skip}, 1)));
  }

  void visit(const ParamVisitor<T>& p, const BufferVisitor<T>& b) {
    c1.visit(p);
    visit_bn(bn1, p, b);
    c2.visit(p);
    visit_bn(bn2, p, b);
    c3.visit(p);
  }
};

/// Stem conv3x3/2-BN-ReLU followed by four residual blocks: 32x downsampling.
template <typename T>
struct Backbone {
  Conv<T> stem;
  BatchNorm<T> stem_bn;
  std::vector<ResidualBlock<T>> blocks;

  Backbone() = default;
  Backbone(const std::string& name, const std::vector<std::size_t>& widths, Rng& rng)
      : stem(name + ".stem", 3, widths.at(0), 3, 2, false, rng), stem_bn(name + ".stem_bn", widths[0]) {
    if (widths.size() != 5) throw std::invalid_argument("backbone needs 5 widths");
    for (std::size_t i = 0; i < 4; ++i)
      blocks.emplace_back(name + ".block" + std::to_string(i + 1), widths[i], widths[i + 1], rng);
  }

  std::size_t out_channels() const { return blocks.back().c3.w.value.dim(0); }

  /// [N,3,H,W] -> [N,C_f,H/32,W/32]. H and W must be multiples of 32.
  Var<T> operator()(Tape<T>& t, Var<T> x) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] % 32 || s[3] % 32 || s[2] == 0 || s[3] == 0)
      throw ShapeError("backbone", "input must be [N,3,H,W] with H, W multiples of 32, got " +
                                       shape_str(s));
    Var<T> y = relu(batch_norm(stem(t, x), stem_bn));
    for (auto& b : blocks) y = b(t, y);
    return y;
  }

  void visit(const ParamVisitor<T>& p, const BufferVisitor<T>& b) {
    stem.visit(p);
    visit_bn(stem_bn, p, b);
    for (auto& blk : blocks) blk.visit(p, b);
  }
};

}  // namespace avan
