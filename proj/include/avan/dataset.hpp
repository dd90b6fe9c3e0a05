#pragma once

// On-disk dataset layout: manifest, validation, and loading into paired samples.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "avan/alignment.hpp"
#include "avan/config.hpp"
#include "avan/io.hpp"

namespace avan {

struct SubjectFiles {
  std::string gaze;
  std::string fmri;
};

/// Paths are relative to the manifest's directory.
struct Manifest {
  static constexpr int kVersion = 1;
  std::string frames_dir = "frames";
  std::string frames_pattern = "frame_%06d.ppm";
  std::size_t frame_count = 0;
  double fps = 25;
  std::size_t frame_width = 0;
  std::size_t frame_height = 0;
  std::size_t screen_width = 0;
  std::size_t screen_height = 0;
  double fmri_rate_hz = 0.5;
  std::size_t voxels = 0;
  std::size_t volumes = 0;
  std::vector<SubjectFiles> subjects;
  std::string ground_truth;  // optional
  std::string brain_mask;    // optional

  std::string frame_name(std::size_t i) const {
    char buf[64];
    std::snprintf(buf, sizeof buf, frames_pattern.c_str(), int(i));
    return frames_dir + "/" + buf;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "version = " << kVersion << "\n";
    os << "frames.dir = " << frames_dir << "\n";
    os << "frames.pattern = " << frames_pattern << "\n";
    os << "frames.count = " << frame_count << "\n";
    os << "frames.fps = " << detail::format_double(fps) << "\n";
    os << "frames.width = " << frame_width << "\n";
    os << "frames.height = " << frame_height << "\n";
    os << "screen.width = " << screen_width << "\n";
    os << "screen.height = " << screen_height << "\n";
    os << "fmri.rate_hz = " << detail::format_double(fmri_rate_hz) << "\n";
    os << "fmri.voxels = " << voxels << "\n";
    os << "fmri.volumes = " << volumes << "\n";
    os << "subjects = " << subjects.size() << "\n";
    for (std::size_t s = 0; s < subjects.size(); ++s) {
      os << "subject." << s + 1 << ".gaze = " << subjects[s].gaze << "\n";
      os << "subject." << s + 1 << ".fmri = " << subjects[s].fmri << "\n";
    }
    if (!ground_truth.empty()) os << "ground_truth = " << ground_truth << "\n";
    if (!brain_mask.empty()) os << "brain_mask = " << brain_mask << "\n";
    return os.str();
  }

  /// Parses and checks keys; unknown or missing keys are errors.
  static Manifest parse(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    auto kv = detail::parse_key_values(in, origin);
    auto take = [&](const std::string& k) {
      auto it = kv.find(k);
      if (it == kv.end()) throw ValidationError(origin + ": missing manifest key '" + k + "'");
      std::string v = it->second;
      kv.erase(it);
      return v;
    };
    auto take_size = [&](const std::string& k) {
      const auto v = detail::parse_int(k, take(k));
      if (v < 0) throw ValidationError(origin + ": " + k + " must be >= 0");
      return std::size_t(v);
    };
    Manifest m;
    if (detail::parse_int("version", take("version")) != kVersion)
      throw ValidationError(origin + ": unsupported manifest version");
    m.frames_dir = take("frames.dir");
    m.frames_pattern = take("frames.pattern");
    if (std::count(m.frames_pattern.begin(), m.frames_pattern.end(), '%') != 1 ||
        m.frames_pattern.find('d') == std::string::npos || m.frames_pattern.find('/') != std::string::npos)
      throw ValidationError(origin + ": frames.pattern needs exactly one integer field like %06d");
    m.frame_count = take_size("frames.count");
    m.fps = detail::parse_double("frames.fps", take("frames.fps"));
    m.frame_width = take_size("frames.width");
    m.frame_height = take_size("frames.height");
    m.screen_width = take_size("screen.width");
    m.screen_height = take_size("screen.height");
    m.fmri_rate_hz = detail::parse_double("fmri.rate_hz", take("fmri.rate_hz"));
    m.voxels = take_size("fmri.voxels");
    m.volumes = take_size("fmri.volumes");
    const std::size_t n = take_size("subjects");
    for (std::size_t s = 1; s <= n; ++s) {
      const std::string p = "subject." + std::to_string(s) + ".";
      m.subjects.push_back({take(p + "gaze"), take(p + "fmri")});
    }
    if (kv.count("ground_truth")) m.ground_truth = take("ground_truth");
    if (kv.count("brain_mask")) m.brain_mask = take("brain_mask");
    if (!kv.empty()) throw ValidationError(origin + ": unknown manifest key '" + kv.begin()->first + "'");
    if (m.fps <= 0 || m.fmri_rate_hz <= 0) throw ValidationError(origin + ": rates must be > 0");
    if (n == 0) throw ValidationError(origin + ": no subjects");
    return m;
  }
};

/// A manifest together with the directory its paths resolve against.
struct Dataset {
  std::filesystem::path root;
  Manifest manifest;

  std::string path(const std::string& rel) const { return (root / rel).string(); }

  static Dataset open(const std::string& dir) {
    const auto root = std::filesystem::path(dir);
    const auto mpath = root / "manifest.txt";
    if (!std::filesystem::exists(mpath)) throw IoError("dataset manifest not found: " + mpath.string());
    return {root, Manifest::parse(bin::slurp(mpath.string()), mpath.string())};
  }

  /// Every referenced file exists and agrees with the declared counts and sizes.
  void validate() const {
    namespace fs = std::filesystem;
    const auto& m = manifest;
    for (std::size_t i = 0; i < m.frame_count; ++i) {
      const std::string p = path(m.frame_name(i));
      if (!fs::is_regular_file(p)) throw ValidationError("missing frame file " + p);
    }
    if (m.frame_count) {
      auto im = read_ppm(path(m.frame_name(0)));
      if (im.width != m.frame_width || im.height != m.frame_height)
        throw ValidationError("frame size " + std::to_string(im.width) + "x" + std::to_string(im.height) +
                              " differs from manifest");
    }
    for (std::size_t s = 0; s < m.subjects.size(); ++s) {
      const std::string g = path(m.subjects[s].gaze), f = path(m.subjects[s].fmri);
      if (!fs::is_regular_file(g)) throw ValidationError("missing gaze file " + g);
      if (!fs::is_regular_file(f)) throw ValidationError("missing fMRI file " + f);
      const auto [t, v] = peek_avfm(f);
      if (t != m.volumes || v != m.voxels)
        throw ValidationError(f + ": has " + std::to_string(t) + "x" + std::to_string(v) + ", manifest declares " +
                              std::to_string(m.volumes) + "x" + std::to_string(m.voxels));
    }
    for (const auto* opt : {&m.ground_truth, &m.brain_mask})
      if (!opt->empty() && !fs::is_regular_file(path(*opt)))
        throw ValidationError("missing file " + path(*opt));
  }

  Image8 frame(std::size_t i) const {
    if (i >= manifest.frame_count) throw std::out_of_range("frame " + std::to_string(i) + " not in dataset");
    return read_ppm(path(manifest.frame_name(i)));
  }

  std::vector<GazeSample> gaze(std::size_t subject) const {
    return read_gaze_csv(path(manifest.subjects.at(subject).gaze));
  }

  FmriSeries fmri(std::size_t subject) const {
    auto m = read_avfm(path(manifest.subjects.at(subject).fmri));
    return FmriSeries::from_matrix(m, manifest.fmri_rate_hz);
  }
};

struct LoadedPairs {
  std::vector<PairedSample> train;
  std::vector<PairedSample> test;
  std::vector<PairingReport> reports;  // per subject
};

/// Cleaned gaze for one subject, per frame.
inline std::vector<std::optional<Point>> frame_gaze(const Dataset& ds, std::size_t subject) {
  const auto& m = ds.manifest;
  auto cleaned = clean_gaze(GazeTrace{ds.gaze(subject), false}, double(m.screen_width), double(m.screen_height));
  return gaze_to_frames(cleaned.samples, m.fps, m.frame_count);
}

/// Full preprocessing for every subject, split 70/30 (configurable) by time
/// within each subject.
inline LoadedPairs load_pairs(const Dataset& ds, const RunConfig& cfg, double delay_s) {
  const auto& m = ds.manifest;
  LoadedPairs out;
  for (std::size_t s = 0; s < m.subjects.size(); ++s) {
    auto gaze = frame_gaze(ds, s);
    auto fmri = ds.fmri(s);
    if (fmri.voxels != m.voxels) throw ValidationError("voxel count mismatch in subject " + std::to_string(s + 1));
    auto fmri_up = interpolate_fmri(fmri, m.fps);
    PairingReport rep;
    auto pairs = pair_samples(
        m.frame_count, m.fps, [&](std::size_t i) { return ds.frame(i); }, gaze, fmri_up, delay_s,
        std::size_t(cfg.crop), s, &rep, std::size_t(cfg.frame_stride));
    auto [tr, te] = split_by_time(std::move(pairs), cfg.train_fraction);
    std::move(tr.begin(), tr.end(), std::back_inserter(out.train));
    std::move(te.begin(), te.end(), std::back_inserter(out.test));
    out.reports.push_back(rep);
  }
  return out;
}

/// Raw training-portion volumes of every subject, [N,V], for autoencoder
/// pretraining. Uses the first train_fraction of each subject's volumes.
inline Tensor<float> training_volumes(const Dataset& ds, const RunConfig& cfg) {
  std::vector<float> rows;
  std::size_t n = 0, v = ds.manifest.voxels;
  for (std::size_t s = 0; s < ds.manifest.subjects.size(); ++s) {
    auto f = ds.fmri(s);
    const auto keep = std::size_t(std::floor(cfg.train_fraction * double(f.size())));
    rows.insert(rows.end(), f.data.begin(), f.data.begin() + long(keep * v));
    n += keep;
  }
  Tensor<float> t(Shape{n, v});
  std::copy(rows.begin(), rows.end(), t.data());
  return t;
}

}  // namespace avan
