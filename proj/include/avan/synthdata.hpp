#pragma once

// Synthetic benchmark: procedural movies with moving objects, gaze traces that
// follow a per-subject attention schedule, and BOLD-like voxel signals driven
// by planted spatial networks.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "avan/alignment.hpp"
#include "avan/config.hpp"
#include "avan/dataset.hpp"
#include "avan/io.hpp"
#include "avan/parallel.hpp"
#include "avan/rng.hpp"

namespace avan {

enum class ShapeKind : int { Disc = 0, Square = 1, Diamond = 2 };

struct ObjectSpec {
  ShapeKind shape = ShapeKind::Disc;
  std::array<double, 3> color{1, 1, 1};
  // x(t) and y(t) are each a two-term sum of sinusoids mapped into the frame.
  std::array<double, 2> fx{}, fy{};
  std::array<double, 4> phase{};
  double ax = 0.5, ay = 0.5;
};

struct Segment {
  double start_s = 0;
  std::size_t object = 0;
};

struct WorldParams {
  std::size_t width = 320;
  std::size_t height = 180;
  double fps = 25;
  double duration_s = 600;
  std::size_t objects = 3;
  double radius = 12;
  std::size_t subjects = 2;
  double segment_min_s = 2;
  double segment_max_s = 6;

  static WorldParams from_config(const RunConfig& c) {
    WorldParams p;
    p.width = std::size_t(c.gen_width);
    p.height = std::size_t(c.gen_height);
    p.fps = c.gen_fps;
    p.duration_s = c.gen_duration_s;
    p.objects = std::size_t(c.gen_objects);
    p.radius = c.gen_object_radius;
    p.subjects = std::size_t(c.gen_subjects);
    p.segment_min_s = c.gen_segment_min_s;
    p.segment_max_s = c.gen_segment_max_s;
    return p;
  }
};

struct World {
  WorldParams params;
  std::vector<ObjectSpec> objects;
  Image8 background;
  /// Per subject, segments sorted by start; the first starts at 0.
  std::vector<std::vector<Segment>> schedules;

  std::size_t frame_count() const { return std::size_t(std::floor(params.duration_s * params.fps + 1e-9)); }

  Point position(std::size_t k, double t) const {
    const auto& o = objects.at(k);
    const double m = params.radius + 2;
    auto unit = [&](double a, double f0, double f1, double p0, double p1) {
      return 0.5 + 0.5 * (a * std::sin(2 * M_PI * f0 * t + p0) + (1 - a) * std::sin(2 * M_PI * f1 * t + p1));
    };
    const double ux = unit(o.ax, o.fx[0], o.fx[1], o.phase[0], o.phase[1]);
    const double uy = unit(o.ay, o.fy[0], o.fy[1], o.phase[2], o.phase[3]);
    return {m + ux * (double(params.width) - 2 * m), m + uy * (double(params.height) - 2 * m)};
  }

  /// Index of the attended object for a subject at time t (clamped to t >= 0).
  std::size_t attended(std::size_t subject, double t) const {
    const auto& s = schedules.at(subject);
    std::size_t lo = 0, hi = s.size();
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (s[mid].start_s <= t) lo = mid;
      else hi = mid;
    }
    return s[lo].object;
  }
};

namespace detail {
inline const std::array<std::array<double, 3>, 6> kPalette{{{0.95, 0.15, 0.10},
                                                            {0.10, 0.85, 0.20},
                                                            {0.15, 0.30, 0.95},
                                                            {0.95, 0.90, 0.10},
                                                            {0.90, 0.20, 0.90},
                                                            {0.10, 0.90, 0.90}}};
}

inline World make_world(const WorldParams& p, std::uint64_t seed) {
  if (p.width == 0 || p.height == 0 || p.fps <= 0 || p.duration_s <= 0)
    throw std::invalid_argument("world needs positive frame size, fps and duration");
  if (2 * (p.radius + 2) >= double(std::min(p.width, p.height)))
    throw std::invalid_argument("object radius too large for the frame");
  Rng rng(derive_seed(seed, 1));
  World w;
  w.params = p;

  w.background = Image8(p.width, p.height);
  std::array<double, 3> base, fx, fy, px, py;
  for (std::size_t c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.35, 0.55);
    fx[c] = rng.uniform(20, 50);
    fy[c] = rng.uniform(15, 40);
    px[c] = rng.uniform(0, 6);
    py[c] = rng.uniform(0, 6);
  }
  for (std::size_t y = 0; y < p.height; ++y)
    for (std::size_t x = 0; x < p.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double v = base[c] + 0.08 * std::sin(double(x) / fx[c] + px[c]) * std::cos(double(y) / fy[c] + py[c]) +
                   rng.normal(0, 0.03);
        w.background.at(x, y, c) = std::uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255));
      }

  for (std::size_t k = 0; k < p.objects; ++k) {
    ObjectSpec o;
    o.shape = ShapeKind(k % 3);
    if (k < detail::kPalette.size()) {
      o.color = detail::kPalette[k];
    } else {
      for (auto& c : o.color) c = rng.uniform(0.1, 0.95);
    }
    for (auto& f : o.fx) f = rng.uniform(0.02, 0.06);
    for (auto& f : o.fy) f = rng.uniform(0.02, 0.06);
    for (auto& ph : o.phase) ph = rng.uniform(0, 2 * M_PI);
    o.ax = rng.uniform(0.3, 0.7);
    o.ay = rng.uniform(0.3, 0.7);
    w.objects.push_back(o);
  }

  for (std::size_t s = 0; s < p.subjects; ++s) {
    std::vector<Segment> seq;
    if (p.objects > 0) {
      double t = 0;
      std::size_t cur = p.objects;
      while (t < p.duration_s) {
        std::size_t next = std::size_t(rng.below(p.objects));
        while (p.objects > 1 && next == cur) next = std::size_t(rng.below(p.objects));
        seq.push_back({t, next});
        cur = next;
        t += rng.uniform(p.segment_min_s, p.segment_max_s);
      }
    }
    w.schedules.push_back(std::move(seq));
  }
  return w;
}

struct RenderedFrame {
  Image8 image;
  /// Per object, visible pixels (1 = covered), row-major width x height.
  std::vector<std::vector<std::uint8_t>> masks;
};

inline bool inside_shape(ShapeKind s, double dx, double dy, double r) {
  switch (s) {
    case ShapeKind::Disc:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::Square:
      return std::abs(dx) <= 0.886 * r && std::abs(dy) <= 0.886 * r;
    case ShapeKind::Diamond:
      return std::abs(dx) + std::abs(dy) <= 1.25 * r;
  }
  return false;
}

/// Static background plus objects painted in index order (later ones occlude).
inline RenderedFrame render_frame(const World& w, double t) {
  if (!(t >= 0 && t < w.params.duration_s))
    throw std::out_of_range("render_frame: t=" + std::to_string(t) + " outside [0, " +
                            std::to_string(w.params.duration_s) + ")");
  const std::size_t W = w.params.width, H = w.params.height;
  const double r = w.params.radius;
  RenderedFrame f{w.background, {}};
  std::vector<int> owner(W * H, -1);
  for (std::size_t k = 0; k < w.objects.size(); ++k) {
    const auto& o = w.objects[k];
    const Point c = w.position(k, t);
    const double reach = 1.25 * r + 1;
    const auto x0 = std::size_t(std::max(0.0, std::floor(c.x - reach)));
    const auto x1 = std::size_t(std::min(double(W), std::ceil(c.x + reach)));
    const auto y0 = std::size_t(std::max(0.0, std::floor(c.y - reach)));
    const auto y1 = std::size_t(std::min(double(H), std::ceil(c.y + reach)));
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) {
        const double dx = double(x) + 0.5 - c.x, dy = double(y) + 0.5 - c.y;
        if (!inside_shape(o.shape, dx, dy, r)) continue;
        const double tex = 0.85 + 0.15 * (std::sin((dx + dy) * 0.6) >= 0 ? 1.0 : -1.0);
        for (std::size_t ch = 0; ch < 3; ++ch)
          f.image.at(x, y, ch) = std::uint8_t(std::lround(std::clamp(o.color[ch] * tex, 0.0, 1.0) * 255));
        owner[y * W + x] = int(k);
      }
  }
  f.masks.assign(w.objects.size(), std::vector<std::uint8_t>(W * H, 0));
  for (std::size_t i = 0; i < W * H; ++i)
    if (owner[i] >= 0) f.masks[std::size_t(owner[i])][i] = 1;
  return f;
}

// ---- gaze ----------------------------------------------------------------------

struct GazeParams {
  double jitter_px = 4;
  double saccade_rate = 0.2;  // per second
  double saccade_ms = 250;
  double blink_rate = 0.1;  // per second
  double blink_min_ms = 100;
  double blink_max_ms = 500;
  double offscreen_rate = 0.02;  // per second
  double offscreen_ms = 300;
  /// Extra blinks as (start_ms, duration_ms).
  std::vector<std::pair<std::int64_t, std::int64_t>> blinks;

  static GazeParams from_config(const RunConfig& c) {
    GazeParams g;
    g.jitter_px = c.gen_jitter_px;
    g.saccade_rate = c.gen_saccade_rate;
    g.saccade_ms = c.gen_saccade_ms;
    g.blink_rate = c.gen_blink_rate;
    g.blink_min_ms = c.gen_blink_min_ms;
    g.blink_max_ms = c.gen_blink_max_ms;
    g.offscreen_rate = c.gen_offscreen_rate;
    g.offscreen_ms = c.gen_offscreen_ms;
    return g;
  }
};

/// 1000 Hz trace: the attended object's center plus Gaussian jitter, with
/// Poisson-timed saccades to a random other object, blinks (invalid samples)
/// and off-screen excursions.
inline std::vector<GazeSample> gen_gaze(const World& w, std::size_t subject, const GazeParams& p,
                                        std::uint64_t seed) {
  if (p.jitter_px < 0 || p.saccade_rate < 0 || p.blink_rate < 0 || p.offscreen_rate < 0)
    throw std::invalid_argument("gaze rates must be >= 0");
  if (w.objects.empty()) throw std::invalid_argument("gaze needs at least one object");
  Rng rng(seed);
  const auto n = std::size_t(std::floor(w.params.duration_s * 1000 + 1e-9));
  // Sample-level overrides: -1 none, -2 blink, -3 off-screen, k>=0 saccade
  // target. Blinks win over excursions, which win over saccades.
  std::vector<int> over(n, -1);
  auto rank = [](int code) { return code == -2 ? 3 : code == -3 ? 2 : code >= 0 ? 1 : 0; };
  auto paint = [&](double start_ms, double dur_ms, int code) {
    const auto a = std::size_t(std::max(0.0, std::floor(start_ms)));
    const auto b = std::size_t(std::min(double(n), std::floor(start_ms + dur_ms)));
    for (std::size_t i = a; i < b; ++i)
      if (rank(code) > rank(over[i])) over[i] = code;
  };
  auto poisson = [&](double rate, auto&& on_event) {
    if (rate <= 0) return;
    for (double t = rng.exponential(rate); t * 1000 < double(n); t += rng.exponential(rate)) on_event(t * 1000);
  };
  poisson(p.saccade_rate, [&](double ms) {
    const std::size_t cur = w.attended(subject, ms / 1000);
    if (w.objects.size() < 2) return;
    std::size_t k = std::size_t(rng.below(w.objects.size() - 1));
    if (k >= cur) ++k;
    paint(ms, p.saccade_ms, int(k));
  });
  poisson(p.offscreen_rate, [&](double ms) { paint(ms, p.offscreen_ms, -3); });
  poisson(p.blink_rate, [&](double ms) { paint(ms, rng.uniform(p.blink_min_ms, p.blink_max_ms), -2); });
  for (const auto& [start, dur] : p.blinks) paint(double(start), double(dur), -2);

  std::vector<GazeSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = double(i) / 1000;
    GazeSample& g = out[i];
    g.t_ms = std::int64_t(i);
    const int o = over[i];
    const double jx = p.jitter_px > 0 ? rng.normal(0, p.jitter_px) : 0.0;
    const double jy = p.jitter_px > 0 ? rng.normal(0, p.jitter_px) : 0.0;
    if (o == -2) {
      g.valid = false;
      continue;
    }
    if (o == -3) {
      g.x = -40;
      g.y = double(w.params.height) / 2;
      continue;
    }
    const std::size_t k = o >= 0 ? std::size_t(o) : w.attended(subject, t);
    const Point c = w.position(k, t);
    g.x = c.x + jx;
    g.y = c.y + jy;
  }
  return out;
}

// ---- haemodynamics -------------------------------------------------------------

struct HrfSpec {
  double peak_s = 5;
  double undershoot_s = 15;
  double ratio = 6;
  double dispersion = 1;
  double length_s = 32;
};

namespace detail {
inline double gamma_pdf(double t, double shape, double scale) {
  if (t <= 0) return 0;
  return std::exp((shape - 1) * std::log(t) - t / scale - std::lgamma(shape) - shape * std::log(scale));
}
}  // namespace detail

/// Double-gamma response at time t >= 0 seconds.
inline double hrf_value(const HrfSpec& h, double t) {
  const double d = h.dispersion;
  return detail::gamma_pdf(t, h.peak_s / d + 1, d) - detail::gamma_pdf(t, h.undershoot_s / d + 1, d) / h.ratio;
}

/// Kernel sampled at k * dt for k = 0 .. length / dt.
inline std::vector<double> hrf_kernel(const HrfSpec& h, double dt) {
  if (dt <= 0) throw std::invalid_argument("hrf_kernel: dt must be > 0");
  const auto n = std::size_t(std::floor(h.length_s / dt)) + 1;
  std::vector<double> k(n);
  for (std::size_t i = 0; i < n; ++i) k[i] = hrf_value(h, double(i) * dt);
  return k;
}

/// Delay in whole simulation samples.
inline std::size_t delay_samples(double delay_s, double hz) { return std::size_t(std::lround(delay_s * hz)); }

/// x delayed by `samples` steps (zeros shifted in).
inline std::vector<double> shift_series(const std::vector<double>& x, std::size_t samples) {
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = samples; i < x.size(); ++i) out[i] = x[i - samples];
  return out;
}

/// Causal convolution y[i] = dt * sum_j x[i-j] k[j], truncated to len(x).
inline std::vector<double> convolve_causal(const std::vector<double>& x, const std::vector<double>& k, double dt) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double acc = 0;
    const std::size_t jmax = std::min(i + 1, k.size());
    for (std::size_t j = 0; j < jmax; ++j) acc += x[i - j] * k[j];
    y[i] = acc * dt;
  }
  return y;
}

struct PlantedNetworks {
  std::size_t voxels = 0;
  std::vector<std::vector<double>> maps;  // G x V
};

/// G maps on disjoint random supports of round(fraction * V) voxels each, with
/// weights uniform in [0.5, 1.5]. Disjoint supports make them independent.
inline PlantedNetworks make_networks(std::size_t g, std::size_t v, double fraction, Rng& rng) {
  const auto support = std::size_t(std::lround(fraction * double(v)));
  if (support == 0 || g * support > v)
    throw std::invalid_argument("networks do not fit: " + std::to_string(g) + " x " + std::to_string(support) +
                                " voxels > " + std::to_string(v));
  std::vector<std::size_t> perm(v);
  for (std::size_t i = 0; i < v; ++i) perm[i] = i;
  for (std::size_t i = v - 1; i > 0; --i) std::swap(perm[i], perm[std::size_t(rng.below(i + 1))]);
  PlantedNetworks nets{v, std::vector<std::vector<double>>(g, std::vector<double>(v, 0.0))};
  for (std::size_t k = 0; k < g; ++k)
    for (std::size_t i = 0; i < support; ++i) nets.maps[k][perm[k * support + i]] = rng.uniform(0.5, 1.5);
  return nets;
}

struct BoldParams {
  double tr_s = 2;
  double delay_s = 2;
  double noise = 0.5;
  double spontaneous = 1;
  /// Simulation grid for drives and convolution.
  double sim_hz = 10;
  HrfSpec hrf;

  static BoldParams from_config(const RunConfig& c) {
    BoldParams b;
    b.tr_s = c.gen_tr_s;
    b.delay_s = c.gen_delay_s;
    b.noise = c.gen_noise;
    b.spontaneous = c.gen_spontaneous;
    b.hrf = HrfSpec{c.gen_hrf_peak, c.gen_hrf_undershoot, c.gen_hrf_ratio, c.gen_hrf_dispersion, 32};
    return b;
  }
};

/// Drive per network on the simulation grid. Network g < K is the indicator
/// that object g is attended; the rest follow slow AR(1) processes.
inline std::vector<std::vector<double>> network_drives(const World& w, std::size_t subject, std::size_t g,
                                                       double sim_hz, Rng& rng) {
  const auto n = std::size_t(std::floor(w.params.duration_s * sim_hz + 1e-9));
  std::vector<std::vector<double>> d(g, std::vector<double>(n, 0.0));
  const std::size_t driven = std::min(g, w.objects.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = w.attended(subject, double(i) / sim_hz);
    if (a < driven) d[a][i] = 1;
  }
  const double keep = std::exp(-1.0 / (20.0 * sim_hz));
  for (std::size_t k = driven; k < g; ++k) {
    double x = 0;
    for (std::size_t i = 0; i < n; ++i) {
      x = keep * x + rng.normal(0, 0.1);
      d[k][i] = x;
    }
  }
  return d;
}

/// Volumes before normalization, T x V (T = floor(duration / tr)).
inline std::vector<std::vector<double>> simulate_bold(const World& w, std::size_t subject, const PlantedNetworks& nets,
                                                      const BoldParams& p, std::uint64_t seed) {
  if (p.delay_s < 0) throw std::invalid_argument("delay must be >= 0");
  if (p.tr_s <= 0 || p.sim_hz <= 0) throw std::invalid_argument("tr and sim rate must be > 0");
  Rng rng(seed);
  const std::size_t g = nets.maps.size(), v = nets.voxels;
  auto drives = network_drives(w, subject, g, p.sim_hz, rng);
  const double dt = 1.0 / p.sim_hz;
  const auto kernel = hrf_kernel(p.hrf, dt);
  const auto shift = delay_samples(p.delay_s, p.sim_hz);
  const auto t_count = std::size_t(std::floor(w.params.duration_s / p.tr_s + 1e-9));
  const std::size_t driven = std::min(g, w.objects.size());

  std::vector<std::vector<double>> act(g, std::vector<double>(t_count));
  for (std::size_t k = 0; k < g; ++k) {
    auto a = convolve_causal(shift_series(drives[k], shift), kernel, dt);
    double mean = 0, sq = 0;
    for (std::size_t i = 0; i < t_count; ++i) {
      const auto idx = std::min(a.size() - 1, std::size_t(std::lround(double(i) * p.tr_s * p.sim_hz)));
      act[k][i] = a[idx];
      mean += a[idx];
    }
    mean /= double(t_count);
    for (double x : act[k]) sq += (x - mean) * (x - mean);
    const double sd = std::sqrt(sq / double(t_count));
    const double gain = (k >= driven ? p.spontaneous : 1.0) / (sd > 0 ? sd : 1.0);
    for (double& x : act[k]) x *= gain;
  }
  std::vector<std::vector<double>> vol(t_count, std::vector<double>(v, 0.0));
  for (std::size_t i = 0; i < t_count; ++i) {
    for (std::size_t k = 0; k < g; ++k)
      for (std::size_t j = 0; j < v; ++j) vol[i][j] += act[k][i] * nets.maps[k][j];
    if (p.noise > 0)
      for (std::size_t j = 0; j < v; ++j) vol[i][j] += rng.normal(0, p.noise);
  }
  return vol;
}

/// Per-column z-score (population std). Constant columns become 0.
inline void zscore_columns(std::vector<std::vector<double>>& m) {
  if (m.empty()) return;
  const std::size_t t = m.size(), v = m[0].size();
  for (std::size_t j = 0; j < v; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < t; ++i) mean += m[i][j];
    mean /= double(t);
    double sq = 0;
    for (std::size_t i = 0; i < t; ++i) sq += (m[i][j] - mean) * (m[i][j] - mean);
    const double sd = std::sqrt(sq / double(t));
    for (std::size_t i = 0; i < t; ++i) m[i][j] = sd > 0 ? (m[i][j] - mean) / sd : 0.0;
  }
}

/// z-scored series sampled at 1 / tr.
inline FmriSeries gen_fmri(const World& w, std::size_t subject, const PlantedNetworks& nets, const BoldParams& p,
                           std::uint64_t seed) {
  auto vol = simulate_bold(w, subject, nets, p, seed);
  zscore_columns(vol);
  FmriSeries s{1.0 / p.tr_s, nets.voxels, {}};
  s.data.reserve(vol.size() * nets.voxels);
  for (const auto& row : vol)
    for (double x : row) s.data.push_back(float(x));
  return s;
}

// ---- brain mask ----------------------------------------------------------------

/// V voxels of a cubic grid chosen closest to its center; the index order of
/// the returned cells defines voxel order.
struct BrainMask {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::vector<std::array<std::size_t, 3>> cells;
};

inline BrainMask make_brain_mask(std::size_t voxels) {
  std::size_t side = 1;
  while (side * side * side < 2 * voxels) ++side;
  const double c = (double(side) - 1) / 2;
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < side * side * side; ++i) {
    const double x = double(i % side) - c, y = double(i / side % side) - c, z = double(i / side / side) - c;
    order.push_back({x * x + 1.3 * y * y + 0.8 * z * z, i});
  }
  std::stable_sort(order.begin(), order.end(), [](auto& a, auto& b) { return a.first < b.first; });
  std::vector<std::size_t> pick;
  for (std::size_t i = 0; i < voxels; ++i) pick.push_back(order[i].second);
  std::sort(pick.begin(), pick.end());
  BrainMask m{{side, side, side}, {}};
  for (auto i : pick) m.cells.push_back({i % side, i / side % side, i / side / side});
  return m;
}

inline std::string brain_mask_text(const BrainMask& m) {
  std::ostringstream os;
  os << "dims " << m.dims[0] << ' ' << m.dims[1] << ' ' << m.dims[2] << '\n';
  for (const auto& c : m.cells) os << c[0] << ' ' << c[1] << ' ' << c[2] << '\n';
  return os.str();
}

inline BrainMask parse_brain_mask(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string tag;
  BrainMask m;
  if (!(in >> tag >> m.dims[0] >> m.dims[1] >> m.dims[2]) || tag != "dims")
    throw IoError(origin + ": expected 'dims X Y Z' header");
  std::array<std::size_t, 3> c;
  while (in >> c[0] >> c[1] >> c[2]) {
    for (std::size_t a = 0; a < 3; ++a)
      if (c[a] >= m.dims[a]) throw IoError(origin + ": voxel outside grid");
    m.cells.push_back(c);
  }
  if (!in.eof()) throw IoError(origin + ": malformed voxel line");
  return m;
}

// ---- dataset generation --------------------------------------------------------

/// Everything the generator knows and the model must not see.
struct GroundTruth {
  std::uint64_t seed = 0;
  RunConfig gen;  // only the gen.* keys are meaningful
  std::size_t driven_networks = 0;
  std::string masks_digest;
  std::vector<std::vector<Segment>> schedules;
  std::vector<std::vector<double>> maps;

  World world() const { return make_world(WorldParams::from_config(gen), seed); }

  std::string to_text() const {
    std::ostringstream os;
    os << "version = 1\n";
    os << "seed = " << seed << "\n";
    std::istringstream cfg(gen.to_text());
    for (std::string line; std::getline(cfg, line);)
      if (line.rfind("gen.", 0) == 0) os << line << "\n";
    os << "driven_networks = " << driven_networks << "\n";
    os << "masks_digest = " << masks_digest << "\n";
    for (std::size_t s = 0; s < schedules.size(); ++s) {
      os << "schedule." << s + 1 << " = ";
      for (std::size_t i = 0; i < schedules[s].size(); ++i)
        os << (i ? ";" : "") << detail::format_double(schedules[s][i].start_s) << ':' << schedules[s][i].object;
      os << "\n";
    }
    for (std::size_t g = 0; g < maps.size(); ++g) {
      os << "map." << g + 1 << " = ";
      for (std::size_t v = 0; v < maps[g].size(); ++v) os << (v ? "," : "") << detail::format_double(maps[g][v]);
      os << "\n";
    }
    return os.str();
  }

  static GroundTruth parse(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    auto kv = detail::parse_key_values(in, origin);
    GroundTruth g;
    auto need = [&](const std::string& k) -> const std::string& {
      auto it = kv.find(k);
      if (it == kv.end()) throw IoError(origin + ": missing key " + k);
      return it->second;
    };
    g.seed = std::uint64_t(detail::parse_int("seed", need("seed")));
    g.driven_networks = std::size_t(detail::parse_int("driven_networks", need("driven_networks")));
    g.masks_digest = need("masks_digest");
    for (const auto& [k, v] : kv)
      if (k.rfind("gen.", 0) == 0) g.gen.set(k, v);
    g.gen.validate();
    for (std::size_t s = 1; kv.count("schedule." + std::to_string(s)); ++s) {
      std::vector<Segment> seq;
      for (const auto& item : detail::split(kv["schedule." + std::to_string(s)], ';')) {
        const auto parts = detail::split(item, ':');
        if (parts.size() != 2) throw IoError(origin + ": malformed schedule entry " + item);
        seq.push_back({detail::parse_double("schedule", parts[0]), std::size_t(detail::parse_int("schedule", parts[1]))});
      }
      g.schedules.push_back(std::move(seq));
    }
    for (std::size_t m = 1; kv.count("map." + std::to_string(m)); ++m) {
      std::vector<double> row;
      for (const auto& x : detail::split(kv["map." + std::to_string(m)], ',')) row.push_back(detail::parse_double("map", x));
      g.maps.push_back(std::move(row));
    }
    return g;
  }

  static GroundTruth load(const std::string& path) { return parse(bin::slurp(path), path); }
};

namespace detail {
inline std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 0x100000001b3ull;
  return h;
}
}  // namespace detail

/// Writes frames, per-subject gaze and fMRI, brain mask, ground truth and
/// manifest under out_dir. The same config and seed give identical bytes.
inline Manifest generate_dataset(const RunConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  namespace fs = std::filesystem;
  cfg.validate();
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "frames", ec);
  if (ec) throw IoError("cannot create " + (root / "frames").string() + ": " + ec.message());

  const World w = make_world(WorldParams::from_config(cfg), seed);
  Manifest m;
  m.frame_count = w.frame_count();
  m.fps = cfg.gen_fps;
  m.frame_width = m.screen_width = w.params.width;
  m.frame_height = m.screen_height = w.params.height;
  m.fmri_rate_hz = 1.0 / cfg.gen_tr_s;
  m.voxels = std::size_t(cfg.gen_voxels);
  m.ground_truth = "ground_truth.txt";
  m.brain_mask = "brain_mask.txt";

  // Frames in chunks: render in parallel, write and digest in order.
  std::uint64_t digest = 0xcbf29ce484222325ull;
  const std::size_t chunk = 64;
  for (std::size_t b = 0; b < m.frame_count; b += chunk) {
    const std::size_t e = std::min(m.frame_count, b + chunk);
    std::vector<RenderedFrame> frames(e - b);
    parallel_for(e - b, [&](std::size_t i) { frames[i] = render_frame(w, double(b + i) / m.fps); });
    for (std::size_t i = 0; i < frames.size(); ++i) {
      write_ppm((root / m.frame_name(b + i)).string(), frames[i].image);
      for (const auto& mask : frames[i].masks) digest = detail::fnv1a(mask.data(), mask.size(), digest);
    }
  }

  Rng net_rng(derive_seed(seed, 2));
  const auto nets = make_networks(std::size_t(cfg.gen_networks), m.voxels, cfg.gen_map_fraction, net_rng);
  const auto gp = GazeParams::from_config(cfg);
  const auto bp = BoldParams::from_config(cfg);
  for (std::size_t s = 0; s < w.params.subjects; ++s) {
    char dir[32];
    std::snprintf(dir, sizeof dir, "sub-%02zu", s + 1);
    fs::create_directories(root / dir, ec);
    if (ec) throw IoError("cannot create " + (root / dir).string() + ": " + ec.message());
    SubjectFiles files{std::string(dir) + "/gaze.csv", std::string(dir) + "/fmri.avfm"};
    write_gaze_csv((root / files.gaze).string(), gen_gaze(w, s, gp, derive_seed(seed, 100 + s)));
    auto f = gen_fmri(w, s, nets, bp, derive_seed(seed, 200 + s));
    m.volumes = f.size();
    write_avfm((root / files.fmri).string(), FmriMatrix{f.size(), f.voxels, f.data});
    m.subjects.push_back(files);
  }

  bin::dump((root / m.brain_mask).string(), brain_mask_text(make_brain_mask(m.voxels)));
  GroundTruth gt;
  gt.seed = seed;
  gt.gen = cfg;
  gt.driven_networks = std::min(std::size_t(cfg.gen_networks), w.objects.size());
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(digest));
  gt.masks_digest = hex;
  gt.schedules = w.schedules;
  gt.maps = nets.maps;
  bin::dump((root / m.ground_truth).string(), gt.to_text());
  bin::dump((root / "manifest.txt").string(), m.to_text());
  return m;
}

}  // namespace avan
