#pragma once

// Mask network and the complementary segmentation of an image.

#include <vector>

#include "avan/layers.hpp"

namespace avan {

template <typename T>
struct MaskNet {
  Backbone<T> backbone;
  Conv<T> head;

  MaskNet() = default;
  MaskNet(const std::vector<std::size_t>& widths, Rng& rng)
      : backbone("mask", widths, rng), head("mask.head", widths.back(), 1, 1, 1, true, rng) {
    head.b->value.fill(T{0});
  }

  /// alpha grid [N,1,H/32,W/32] with entries in (0,1).
  Var<T> operator()(Tape<T>& t, Var<T> images) { return sigmoid(head(t, backbone(t, images))); }

  void visit(const ParamVisitor<T>& p, const BufferVisitor<T>& b = {}) {
    backbone.visit(p, b);
    head.visit(p);
  }
};

/// 1 - alpha, elementwise.
template <typename T>
Var<T> complement(Var<T> alpha) {
  return affine(alpha, T{-1}, T{1});
}

/// Bilinear upsampling of a [N,1,h,w] grid to image size.
template <typename T>
Var<T> upsample_mask(Var<T> grid, std::size_t H, std::size_t W) {
  return upsample_bilinear(grid, H, W);
}

template <typename T>
struct Segmented {
  Var<T> attended;
  Var<T> neglected;
  Var<T> mask;  // [N,1,H,W]
};

/// attended = image * up(alpha), neglected = image * up(1 - alpha).
template <typename T>
Segmented<T> segment(Var<T> images, Var<T> alpha) {
  const auto& s = images.shape();
  detail::expect_rank("segment", 4, s);
  const auto& a = alpha.shape();
  if (a.size() != 4 || a[0] != s[0] || a[1] != 1 || a[2] * 32 != s[2] || a[3] * 32 != s[3])
    throw ShapeError("segment", Shape{s[0], 1, s[2] / 32, s[3] / 32}, a);
  Var<T> m = upsample_mask(alpha, s[2], s[3]);
  Var<T> mc = upsample_mask(complement(alpha), s[2], s[3]);
  return {mul_channels(images, m), mul_channels(images, mc), m};
}

}  // namespace avan
