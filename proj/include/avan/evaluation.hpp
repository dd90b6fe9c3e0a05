#pragma once

// Hit rate against gaze, relational statistics tables, delay sweeps, and
// brain-network extraction and matching.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "avan/alignment.hpp"
#include "avan/relational.hpp"
#include "avan/tensor.hpp"

namespace avan {

struct HitRate {
  std::size_t hits = 0;
  std::size_t total = 0;
  double rate = 0;
  double chance = 0;  // mean fraction of mask pixels at or above threshold
};

/// A sample is a hit when the mask value at the gaze pixel is >= threshold.
template <typename T>
HitRate hit_rate(const std::vector<Point>& gaze, const std::vector<Tensor<T>>& masks, double threshold) {
  if (gaze.empty()) throw std::invalid_argument("hit_rate: no samples");
  if (gaze.size() != masks.size()) throw std::invalid_argument("hit_rate: gaze and mask counts differ");
  HitRate h;
  double area = 0;
  for (std::size_t i = 0; i < gaze.size(); ++i) {
    const auto& m = masks[i];
    if (m.ndim() != 2) throw ShapeError("hit_rate", Shape{0, 0}, m.shape());
    const std::size_t H = m.dim(0), W = m.dim(1);
    const double fx = std::floor(gaze[i].x), fy = std::floor(gaze[i].y);
    if (!(fx >= 0 && fy >= 0 && fx < double(W) && fy < double(H)))
      throw std::out_of_range("hit_rate: gaze point outside the mask");
    if (double(m[std::size_t(fy) * W + std::size_t(fx)]) >= threshold) ++h.hits;
    std::size_t above = 0;
    for (const auto v : m.vec()) above += double(v) >= threshold;
    area += double(above) / double(H * W);
  }
  h.total = gaze.size();
  h.rate = double(h.hits) / double(h.total);
  h.chance = area / double(h.total);
  return h;
}

/// Gaze points (crop coordinates) of paired samples; every sample must have one.
inline std::vector<Point> gaze_points(const std::vector<PairedSample>& samples) {
  std::vector<Point> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.gaze_in_crop) throw std::invalid_argument("sample without gaze");
    out.push_back(*s.gaze_in_crop);
  }
  return out;
}

/// Table with Positive (r_af), Negative (r_nf) and Regularization columns, one
/// row per split. Regularization is the mean of r_anf and r_bf; both are also
/// reported separately.
struct StatsRow {
  std::string name;
  double positive = 0, negative = 0, regularization = 0;
  double r_anf = 0, r_bf = 0;
  std::size_t count = 0;
};

inline StatsRow stats_row(const std::string& name, const SplitStats& s) {
  return {name, s.r_af, s.r_nf, s.regularization(), s.r_anf, s.r_bf, s.count};
}

/// The training targets: 1 / -1 / 0.
inline StatsRow target_row() { return {"target", 1, -1, 0, 0, 0, 0}; }

inline std::string format_stats_table(const std::vector<StatsRow>& rows) {
  std::ostringstream os;
  os << "split,count,positive,negative,regularization,r_anf,r_bf\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.4f,%.4f,%.4f,%.4f,%.4f\n", r.name.c_str(), r.count, r.positive,
                  r.negative, r.regularization, r.r_anf, r.r_bf);
    os << buf;
  }
  return os.str();
}

struct SweepRow {
  double delay_s = 0;
  double hit_rate = 0;
  double chance = 0;
  double test_r_af = 0;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
};

/// Index of the best row by hit rate; ties keep the earlier (smaller) delay.
inline std::size_t best_delay(const std::vector<SweepRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("best_delay: empty sweep");
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].hit_rate > rows[best].hit_rate) best = i;
  return best;
}

inline std::string format_sweep(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "delay_s,hit_rate,chance,test_r_af,train_count,test_count\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%g,%.4f,%.4f,%.4f,%zu,%zu\n", r.delay_s, r.hit_rate, r.chance, r.test_r_af,
                  r.train_count, r.test_count);
    os << buf;
  }
  return os.str();
}

/// One row of the fMRI encoder weights read as a brain map.
struct BrainNetwork {
  std::size_t row = 0;             // row of W
  double activity = 0;             // mean |code| over the data, ranking key
  std::vector<double> weights;     // raw row
  std::vector<double> z;           // row z-scored across voxels
  std::vector<std::size_t> support;  // voxels with |z| >= threshold
  bool zero_variance = false;
};

/// Rows of W [D,V] as networks, ranked by mean |W v| over data [N,V] (most
/// active first; ties keep row order). Empty data keeps row order.
template <typename T>
std::vector<BrainNetwork> extract_networks(const Tensor<T>& w, const Tensor<T>& data, double z_threshold) {
  if (w.ndim() != 2) throw ShapeError("extract_networks", Shape{0, 0}, w.shape());
  const std::size_t D = w.dim(0), V = w.dim(1);
  if (data.size() && (data.ndim() != 2 || data.dim(1) != V))
    throw ShapeError("extract_networks", Shape{data.ndim() ? data.dim(0) : 0, V}, data.shape());
  std::vector<BrainNetwork> out(D);
  for (std::size_t d = 0; d < D; ++d) {
    auto& n = out[d];
    n.row = d;
    n.weights.assign(w.data() + d * V, w.data() + (d + 1) * V);
    const double mu = std::accumulate(n.weights.begin(), n.weights.end(), 0.0) / double(V);
    double var = 0;
    for (const auto x : n.weights) var += (x - mu) * (x - mu);
    const double sd = std::sqrt(var / double(V));
    n.zero_variance = !(sd > 0);
    n.z.assign(V, 0.0);
    if (!n.zero_variance)
      for (std::size_t v = 0; v < V; ++v) {
        n.z[v] = (n.weights[v] - mu) / sd;
        if (std::abs(n.z[v]) >= z_threshold) n.support.push_back(v);
      }
    if (data.size()) {
      const std::size_t N = data.dim(0);
      double acc = 0;
      for (std::size_t i = 0; i < N; ++i) {
        double c = 0;
        for (std::size_t v = 0; v < V; ++v) c += n.weights[v] * double(data[i * V + v]);
        acc += std::abs(c);
      }
      n.activity = acc / double(N);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.activity > b.activity; });
  return out;
}

/// Pearson correlation; nullopt when either side has zero variance.
inline std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("pearson: length mismatch");
  const double n = double(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0) || !(sbb > 0)) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

struct NetworkMatch {
  std::vector<std::vector<double>> corr;  // [network][template], 0 where undefined
  std::vector<std::vector<bool>> undefined;
  std::vector<std::size_t> best_network;  // per template, by |corr|
  std::vector<double> best_corr;          // signed
};

/// Correlates every network's weights with every template map.
inline NetworkMatch match_networks(const std::vector<BrainNetwork>& nets, const std::vector<std::vector<double>>& templates) {
  if (nets.empty()) throw std::invalid_argument("match_networks: no networks");
  NetworkMatch m;
  m.corr.assign(nets.size(), std::vector<double>(templates.size(), 0.0));
  m.undefined.assign(nets.size(), std::vector<bool>(templates.size(), false));
  for (std::size_t i = 0; i < nets.size(); ++i)
    for (std::size_t j = 0; j < templates.size(); ++j) {
      if (auto c = pearson(nets[i].weights, templates[j]))
        m.corr[i][j] = *c;
      else
        m.undefined[i][j] = true;
    }
  for (std::size_t j = 0; j < templates.size(); ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < nets.size(); ++i)
      if (std::abs(m.corr[i][j]) > std::abs(m.corr[best][j])) best = i;
    m.best_network.push_back(best);
    m.best_corr.push_back(m.corr[best][j]);
  }
  return m;
}

/// Templates whose best |corr| reaches the threshold.
inline std::size_t recovered_count(const NetworkMatch& m, double threshold) {
  return std::size_t(std::count_if(m.best_corr.begin(), m.best_corr.end(),
                                   [&](double c) { return std::abs(c) >= threshold; }));
}

inline std::string format_networks(const std::vector<BrainNetwork>& nets, const NetworkMatch* match) {
  std::ostringstream os;
  os << "rank,row,activity,support_size,zero_variance";
  const std::size_t nt = match ? match->best_corr.size() : 0;
  for (std::size_t j = 0; j < nt; ++j) os << ",corr_t" << j;
  os << "\n";
  char buf[128];
  for (std::size_t i = 0; i < nets.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6g,%zu,%d", i, nets[i].row, nets[i].activity, nets[i].support.size(),
                  int(nets[i].zero_variance));
    os << buf;
    for (std::size_t j = 0; j < nt; ++j) {
      std::snprintf(buf, sizeof buf, ",%.4f", match->corr[i][j]);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace avan
