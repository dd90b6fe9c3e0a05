#pragma once

// Test-time decoding: group attention from the mask network alone, and
// individual attention from a brain-activity vector via the relational map.

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "avan/relational.hpp"

namespace avan {

template <typename T>
struct GroupAttention {
  Tensor<T> alpha;      // [N,1,h,w]
  Tensor<T> mask;       // [N,1,H,W], upsampled alpha
  Tensor<T> attended;   // [N,3,H,W]
  Tensor<T> neglected;  // [N,3,H,W]
};

/// Mask-network segmentation in inference mode; no fMRI involved.
template <typename T>
GroupAttention<T> group_attention(Model<T>& m, const Tensor<T>& images) {
  Tape<T> t(ForwardMode{false});
  Var<T> x = t.constant(images, "images");
  Var<T> alpha = m.mask(t, x);
  auto seg = segment(x, alpha);
  return {alpha.value(), seg.mask.value(), seg.attended.value(), seg.neglected.value()};
}

/// Upsampled masks [N,1,c,c] for samples, computed in chunks.
template <typename T>
std::vector<Tensor<T>> group_masks(Model<T>& m, const std::vector<PairedSample>& samples, std::size_t chunk = 64) {
  std::vector<Tensor<T>> out;
  for (std::size_t b = 0; b < samples.size(); b += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(samples.size(), b + chunk); ++i) idx.push_back(i);
    auto batch = make_batch<T>(samples, idx);
    auto g = group_attention(m, batch.images);
    const std::size_t H = g.mask.dim(2), W = g.mask.dim(3);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Tensor<T> one(Shape{H, W});
      std::copy_n(g.mask.data() + k * H * W, H * W, one.data());
      out.push_back(std::move(one));
    }
  }
  return out;
}

/// Pre-pooling encoder features [N,C_f,floor(H/32),floor(W/32)]. Inputs whose
/// sides are not multiples of 32 are cropped to the top-left multiple.
template <typename T>
Tensor<T> feature_grid(Model<T>& m, const Tensor<T>& images) {
  detail::expect_rank("feature_grid", 4, images.shape());
  const std::size_t H = images.dim(2) / 32 * 32, W = images.dim(3) / 32 * 32;
  if (H == 0 || W == 0) throw ShapeError("feature_grid", "image smaller than one 32x32 cell: " + shape_str(images.shape()));
  Tensor<T> x = images;
  if (H != images.dim(2) || W != images.dim(3)) {
    const std::size_t N = images.dim(0), C = images.dim(1);
    x = Tensor<T>(Shape{N, C, H, W});
    for (std::size_t p = 0; p < N * C; ++p)
      for (std::size_t r = 0; r < H; ++r)
        std::copy_n(images.data() + (p * images.dim(2) + r) * images.dim(3), W, x.data() + (p * H + r) * W);
  }
  Tape<T> t(ForwardMode{false});
  return m.image.grid(t, t.constant(x)).value();
}

/// Image codes for every 3x3 window of one feature grid [C,h,w]: [h*w, D] in
/// row-major cell order. Border windows are padded and the average is taken
/// over the cells inside the grid, so a constant grid gives constant codes.
template <typename T>
Tensor<T> window_codes(Model<T>& m, const Tensor<T>& grid) {
  detail::expect_rank("window_codes", 3, grid.shape());
  const std::size_t C = grid.dim(0), h = grid.dim(1), w = grid.dim(2);
  Tensor<T> pooled(Shape{h * w, C});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < C; ++ch) {
        T acc{0};
        int n = 0;
        for (long dr = -1; dr <= 1; ++dr)
          for (long dc = -1; dc <= 1; ++dc) {
            const long rr = long(r) + dr, cc = long(c) + dc;
            if (rr < 0 || cc < 0 || rr >= long(h) || cc >= long(w)) continue;
            acc += grid[(ch * h + std::size_t(rr)) * w + std::size_t(cc)];
            ++n;
          }
        pooled[(r * w + c) * C + ch] = acc / T(n);
      }
  Tape<T> t(ForwardMode{false});
  return m.image.head(t, t.constant(pooled)).value();
}

/// f_rel of every window code against one fMRI vector: [h,w] in (-1,1).
template <typename T>
Tensor<T> relational_map_from_codes(Model<T>& m, const Tensor<T>& codes, std::size_t h, std::size_t w,
                                    const std::vector<float>& fmri) {
  if (codes.ndim() != 2 || codes.dim(0) != h * w) throw ShapeError("relational_map", Shape{h * w, m.spec.dim}, codes.shape());
  if (fmri.size() != m.spec.voxels) throw ShapeError("relational_map", Shape{m.spec.voxels}, Shape{fmri.size()});
  Tape<T> t(ForwardMode{false});
  Tensor<T> s(Shape{1, fmri.size()});
  for (std::size_t i = 0; i < fmri.size(); ++i) s[i] = T(fmri[i]);
  Var<T> vf = m.fmri(t, t.constant(s));
  Var<T> vfs = concat(std::vector<Var<T>>(h * w, vf), 0);
  Var<T> r = m.rel(t, concat<T>({t.constant(codes), vfs}, 1));
  return r.value().reshaped(Shape{h, w});
}

/// Sliding-window relational map of one image [3,H,W] (H, W multiples of 32).
template <typename T>
Tensor<T> relational_map(Model<T>& m, const Tensor<T>& image, const std::vector<float>& fmri) {
  detail::expect_rank("relational_map", 3, image.shape());
  if (image.dim(1) % 32 || image.dim(2) % 32)
    throw ShapeError("relational_map", "image sides must be multiples of 32, got " + shape_str(image.shape()));
  Tensor<T> grid = feature_grid(m, image.reshaped(Shape{1, image.dim(0), image.dim(1), image.dim(2)}));
  const std::size_t C = grid.dim(1), h = grid.dim(2), w = grid.dim(3);
  return relational_map_from_codes(m, window_codes(m, grid.reshaped(Shape{C, h, w})), h, w, fmri);
}

/// Upsampled relational map [H,W] rescaled for display or hit testing.
/// "clamp": negatives to 0. "minmax": negatives to 0, then min-max to [0,1]
/// (a constant map becomes 1 where positive, else 0).
template <typename T>
Tensor<T> individual_mask(const Tensor<T>& rmap, std::size_t H, std::size_t W, const std::string& mode) {
  if (mode != "clamp" && mode != "minmax") throw std::invalid_argument("unknown rmap rescale mode " + mode);
  if (rmap.ndim() != 2) throw ShapeError("individual_attention", Shape{0, 0}, rmap.shape());
  Tape<T> t(ForwardMode{false});
  Tensor<T> up = upsample_bilinear(t.constant(rmap.reshaped(Shape{1, 1, rmap.dim(0), rmap.dim(1)})), H, W).value();
  for (auto& v : up.vec()) v = std::max(v, T{0});
  if (mode == "minmax") {
    auto [lo, hi] = std::minmax_element(up.vec().begin(), up.vec().end());
    const T a = *lo, b = *hi;
    for (auto& v : up.vec()) v = b - a > T(1e-12) ? (v - a) / (b - a) : (b > T{0} ? T{1} : T{0});
  }
  return up.reshaped(Shape{H, W});
}

/// image [3,H,W] times the rescaled relational map, per channel.
template <typename T>
Tensor<T> individual_attention(const Tensor<T>& image, const Tensor<T>& rmap, const std::string& mode = "clamp") {
  detail::expect_rank("individual_attention", 3, image.shape());
  const std::size_t H = image.dim(1), W = image.dim(2);
  Tensor<T> mk = individual_mask(rmap, H, W, mode);
  Tensor<T> out = image;
  for (std::size_t c = 0; c < image.dim(0); ++c)
    for (std::size_t i = 0; i < H * W; ++i) out[c * H * W + i] *= mk[i];
  return out;
}

}  // namespace avan
