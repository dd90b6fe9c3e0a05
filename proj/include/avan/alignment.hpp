#pragma once

// Gaze cleaning, resampling across modalities, delay-aware pairing and
// gaze-centered cropping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "avan/io.hpp"

namespace avan {

struct Point {
  double x = 0;
  double y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Maximum duration of an invalid run that is bridged by interpolation.
inline constexpr std::int64_t kMaxBlinkGapMs = 300;
inline constexpr std::size_t kMedianWindow = 40;

/// A gaze recording. `cleaned` marks traces produced by clean_gaze, which
/// returns them unchanged when applied again.
struct GazeTrace {
  std::vector<GazeSample> samples;
  bool cleaned = false;

  friend bool operator==(const GazeTrace& a, const GazeTrace& b) {
    if (a.cleaned != b.cleaned || a.samples.size() != b.samples.size()) return false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      const auto &p = a.samples[i], &q = b.samples[i];
      if (p.t_ms != q.t_ms || p.valid != q.valid || p.x != q.x || p.y != q.y) return false;
    }
    return true;
  }
};

namespace detail {

inline double median_of(std::vector<double>& buf) {
  const std::size_t n = buf.size();
  const std::size_t mid = n / 2;
  std::nth_element(buf.begin(), buf.begin() + long(mid), buf.end());
  const double hi = buf[mid];
  if (n % 2) return hi;
  const double lo = *std::max_element(buf.begin(), buf.begin() + long(mid));
  return 0.5 * (lo + hi);
}

/// Median over [i - w/2, i + w - w/2) intersected with [begin, end).
inline void median_span(const std::vector<double>& in, std::vector<double>& out, std::size_t begin,
                        std::size_t end, std::size_t window) {
  std::vector<double> buf;
  buf.reserve(window);
  const std::size_t before = window / 2, after = window - before;
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t lo = i >= begin + before ? i - before : begin;
    const std::size_t hi = std::min(end, i + after);
    buf.assign(in.begin() + long(lo), in.begin() + long(hi));
    out[i] = median_of(buf);
  }
}

}  // namespace detail

/// (1) off-screen samples become invalid; (2) invalid runs lasting at most
/// 300 ms are linearly interpolated, longer runs and runs touching either end
/// of the recording stay invalid; (3) a 40-sample median filter runs over each
/// valid span, x and y independently, with shrunken windows at span edges.
inline GazeTrace clean_gaze(const GazeTrace& trace, double screen_w, double screen_h) {
  if (trace.cleaned) return trace;
  const auto& in = trace.samples;
  for (std::size_t i = 1; i < in.size(); ++i)
    if (in[i].t_ms <= in[i - 1].t_ms)
      throw std::invalid_argument("clean_gaze: timestamps not strictly increasing at sample " +
                                  std::to_string(i));
  GazeTrace out{in, true};
  auto& s = out.samples;
  for (auto& g : s)
    if (!(g.x >= 0 && g.x < screen_w && g.y >= 0 && g.y < screen_h)) g.valid = false;

  for (std::size_t i = 0; i < s.size();) {
    if (s[i].valid) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && !s[j].valid) ++j;
    if (i > 0 && j < s.size() && s[j].t_ms - s[i].t_ms <= kMaxBlinkGapMs) {
      const auto &a = s[i - 1], &b = s[j];
      for (std::size_t k = i; k < j; ++k) {
        const double f = double(s[k].t_ms - a.t_ms) / double(b.t_ms - a.t_ms);
        s[k].x = a.x + f * (b.x - a.x);
        s[k].y = a.y + f * (b.y - a.y);
        s[k].valid = true;
      }
    }
    i = j;
  }

  std::vector<double> xs(s.size()), ys(s.size()), mx(s.size()), my(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    xs[i] = s[i].x;
    ys[i] = s[i].y;
  }
  for (std::size_t i = 0; i < s.size();) {
    if (!s[i].valid) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && s[j].valid) ++j;
    detail::median_span(xs, mx, i, j, kMedianWindow);
    detail::median_span(ys, my, i, j, kMedianWindow);
    for (std::size_t k = i; k < j; ++k) {
      s[k].x = mx[k];
      s[k].y = my[k];
    }
    i = j;
  }
  return out;
}

/// Index range [first, second) of samples inside each frame interval
/// [i/fps, (i+1)/fps).
inline std::vector<std::pair<std::size_t, std::size_t>> frame_sample_ranges(
    const std::vector<GazeSample>& s, double fps, std::size_t n_frames) {
  if (fps <= 0) throw std::invalid_argument("fps must be > 0");
  std::vector<std::pair<std::size_t, std::size_t>> out(n_frames);
  std::size_t k = 0;
  for (std::size_t f = 0; f < n_frames; ++f) {
    const double lo = 1000.0 * double(f) / fps, hi = 1000.0 * double(f + 1) / fps;
    while (k < s.size() && double(s[k].t_ms) < lo) ++k;
    std::size_t e = k;
    while (e < s.size() && double(s[e].t_ms) < hi) ++e;
    out[f] = {k, e};
    k = e;
  }
  return out;
}

/// Per frame, the valid sample nearest the interval midpoint (earlier wins
/// ties); absent when the interval holds no valid sample.
inline std::vector<std::optional<Point>> gaze_to_frames(const std::vector<GazeSample>& s, double fps,
                                                        std::size_t n_frames) {
  auto ranges = frame_sample_ranges(s, fps, n_frames);
  std::vector<std::optional<Point>> out(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const double mid = 1000.0 * (double(f) + 0.5) / fps;
    double best = INFINITY;
    for (std::size_t k = ranges[f].first; k < ranges[f].second; ++k) {
      if (!s[k].valid) continue;
      const double d = std::abs(double(s[k].t_ms) - mid);
      if (d < best) {
        best = d;
        out[f] = Point{s[k].x, s[k].y};
      }
    }
  }
  return out;
}

// ---- fMRI ----------------------------------------------------------------------

/// Volumes sampled at t_k = k / rate_hz.
struct FmriSeries {
  double rate_hz = 0.5;
  std::size_t voxels = 0;
  std::vector<float> data;  // T x V, row-major

  std::size_t size() const { return voxels ? data.size() / voxels : 0; }
  const float* volume(std::size_t k) const { return data.data() + k * voxels; }
  double time(std::size_t k) const { return double(k) / rate_hz; }

  static FmriSeries from_matrix(const FmriMatrix& m, double rate) {
    return FmriSeries{rate, m.v, m.data};
  }
};

/// Linear interpolation at fractional index pos (clamped to the series).
inline void fmri_at_index(const FmriSeries& s, double pos, float* out) {
  const std::size_t n = s.size();
  if (pos <= 0) pos = 0;
  if (pos >= double(n - 1)) pos = double(n - 1);
  const auto j = std::size_t(std::floor(pos));
  const double f = pos - double(j);
  const float* a = s.volume(j);
  if (f == 0.0 || j + 1 >= n) {
    std::copy(a, a + s.voxels, out);
    return;
  }
  const float* b = s.volume(j + 1);
  for (std::size_t v = 0; v < s.voxels; ++v) out[v] = float((1.0 - f) * a[v] + f * b[v]);
}

/// Resamples onto k / target_hz for k = 0 .. floor(span * target_hz).
inline FmriSeries interpolate_fmri(const FmriSeries& s, double target_hz) {
  if (s.size() < 2) throw std::invalid_argument("interpolate_fmri needs at least 2 volumes");
  if (target_hz <= 0) throw std::invalid_argument("target rate must be > 0");
  const double span = double(s.size() - 1) / s.rate_hz;
  const auto count = std::size_t(std::floor(span * target_hz + 1e-9)) + 1;
  FmriSeries out{target_hz, s.voxels, std::vector<float>(count * s.voxels)};
  for (std::size_t k = 0; k < count; ++k) {
    const double pos = double(k) * s.rate_hz / target_hz;
    fmri_at_index(s, pos, out.data.data() + k * s.voxels);
  }
  return out;
}

// ---- pairing -------------------------------------------------------------------

struct PairedSample {
  Image8 image;
  std::vector<float> fmri;
  std::optional<Point> gaze_in_crop;
  std::size_t frame_index = 0;
  std::size_t subject = 0;
  std::size_t crop_x0 = 0;
  std::size_t crop_y0 = 0;
};

struct CropResult {
  Image8 image;
  Point gaze_in_crop;
  std::size_t x0 = 0;
  std::size_t y0 = 0;
};

/// Window of side crop centered on the point, translated to stay inside the frame.
inline std::pair<std::size_t, std::size_t> crop_origin(std::size_t frame_w, std::size_t frame_h, Point p,
                                                       std::size_t crop) {
  if (crop > frame_w || crop > frame_h)
    throw std::invalid_argument("crop " + std::to_string(crop) + " larger than frame " +
                                std::to_string(frame_w) + "x" + std::to_string(frame_h));
  auto place = [&](double c, std::size_t extent) {
    const double x0 = std::floor(c - double(crop) / 2.0 + 0.5);
    return std::size_t(std::clamp(x0, 0.0, double(extent - crop)));
  };
  return {place(p.x, frame_w), place(p.y, frame_h)};
}

inline CropResult crop_around(const Image8& frame, Point p, std::size_t crop) {
  auto [x0, y0] = crop_origin(frame.width, frame.height, p, crop);
  return {frame.crop(x0, y0, crop, crop), Point{p.x - double(x0), p.y - double(y0)}, x0, y0};
}

struct PairingReport {
  std::size_t emitted = 0;
  std::size_t skipped_no_gaze = 0;
  std::size_t skipped_out_of_range = 0;
  std::size_t skipped_stride = 0;
  std::size_t skipped() const { return skipped_no_gaze + skipped_out_of_range + skipped_stride; }
};

/// Index into the resampled fMRI series paired with frame i: the series is
/// read at time i / fps + delay.
inline double paired_fmri_position(std::size_t frame, double fps, double delay_s, double fmri_rate) {
  const double pos = (double(frame) / fps + delay_s) * fmri_rate;
  const double r = std::round(pos);
  return std::abs(pos - r) < 1e-9 ? r : pos;
}

/// Pairs frame i with the fMRI series at time i / fps + delay_s. Frames with
/// no gaze, or whose delayed time lies beyond the series, are skipped. Only
/// every stride-th frame is considered.
inline std::vector<PairedSample> pair_samples(std::size_t n_frames, double fps,
                                              const std::function<Image8(std::size_t)>& frame,
                                              const std::vector<std::optional<Point>>& gaze,
                                              const FmriSeries& fmri, double delay_s, std::size_t crop,
                                              std::size_t subject, PairingReport* report = nullptr,
                                              std::size_t stride = 1) {
  if (crop == 0 || crop % 32) throw std::invalid_argument("crop size must be a positive multiple of 32");
  if (delay_s < 0) throw std::invalid_argument("delay must be >= 0");
  if (gaze.size() < n_frames) throw std::invalid_argument("fewer gaze entries than frames");
  if (fmri.size() == 0) throw std::invalid_argument("empty fMRI series");
  PairingReport rep;
  std::vector<PairedSample> out;
  const double last = double(fmri.size() - 1);
  for (std::size_t i = 0; i < n_frames; ++i) {
    if (i % stride) {
      ++rep.skipped_stride;
      continue;
    }
    if (!gaze[i]) {
      ++rep.skipped_no_gaze;
      continue;
    }
    const double pos = paired_fmri_position(i, fps, delay_s, fmri.rate_hz);
    if (pos > last + 1e-9) {
      ++rep.skipped_out_of_range;
      continue;
    }
    PairedSample s;
    auto c = crop_around(frame(i), *gaze[i], crop);
    s.image = std::move(c.image);
    s.gaze_in_crop = c.gaze_in_crop;
    s.crop_x0 = c.x0;
    s.crop_y0 = c.y0;
    s.fmri.resize(fmri.voxels);
    fmri_at_index(fmri, pos, s.fmri.data());
    s.frame_index = i;
    s.subject = subject;
    out.push_back(std::move(s));
    ++rep.emitted;
  }
  if (report) *report = rep;
  return out;
}

/// First floor(fraction * n) samples (in time order) train, the rest test.
template <typename S>
std::pair<std::vector<S>, std::vector<S>> split_by_time(std::vector<S> samples, double fraction) {
  const auto n_train = std::size_t(std::floor(fraction * double(samples.size())));
  std::vector<S> test(std::make_move_iterator(samples.begin() + long(n_train)),
                      std::make_move_iterator(samples.end()));
  samples.resize(n_train);
  return {std::move(samples), std::move(test)};
}

}  // namespace avan
