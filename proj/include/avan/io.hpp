#pragma once

// File formats: PPM frames, AVFM fMRI matrices, gaze CSV, AVCK checkpoints.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "avan/config.hpp"
#include "avan/tensor.hpp"

namespace avan {

/// Raised for unreadable/unwritable files and corrupt content.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit RGB image, interleaved, row-major.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Image8() = default;
  Image8(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
    return rgb[(y * width + x) * 3 + c];
  }

  /// Planar [3,H,W] tensor in [0,1].
  template <typename T>
  Tensor<T> to_tensor() const {
    Tensor<T> t(Shape{3, height, width});
    const std::size_t p = width * height;
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t c = 0; c < 3; ++c) t[c * p + i] = T(rgb[i * 3 + c]) / T(255);
    return t;
  }

  template <typename T>
  static Image8 from_tensor(const Tensor<T>& t) {
    if (t.ndim() != 3 || t.dim(0) != 3) throw ShapeError("Image8::from_tensor", Shape{3, 0, 0}, t.shape());
    Image8 im(t.dim(2), t.dim(1));
    const std::size_t p = im.width * im.height;
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        double v = std::round(double(t[c * p + i]) * 255.0);
        im.rgb[i * 3 + c] = std::uint8_t(std::clamp(v, 0.0, 255.0));
      }
    return im;
  }

  /// Sub-rectangle copy; the window must lie inside the image.
  Image8 crop(std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) const {
    if (x0 + w > width || y0 + h > height) throw std::out_of_range("crop window outside image");
    Image8 out(w, h);
    for (std::size_t y = 0; y < h; ++y)
      std::memcpy(&out.rgb[y * w * 3], &rgb[((y0 + y) * width + x0) * 3], w * 3);
    return out;
  }

  friend bool operator==(const Image8& a, const Image8& b) {
    return a.width == b.width && a.height == b.height && a.rgb == b.rgb;
  }
};

inline void write_ppm(const std::string& path, const Image8& im) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << im.width << ' ' << im.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(im.rgb.data()), std::streamsize(im.rgb.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline Image8 read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  auto token = [&]() {
    std::string tok;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) break;
        continue;
      }
      tok += ch;
    }
    return tok;
  };
  if (token() != "P6") throw IoError(path + ": not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxv = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxv = std::stoul(token());
  } catch (const std::exception&) {
    throw IoError(path + ": malformed PPM header");
  }
  if (maxv != 255 || w == 0 || h == 0) throw IoError(path + ": unsupported PPM header");
  Image8 im(w, h);
  in.read(reinterpret_cast<char*>(im.rgb.data()), std::streamsize(im.rgb.size()));
  if (in.gcount() != std::streamsize(im.rgb.size())) throw IoError(path + ": truncated PPM data");
  return im;
}

// ---- little-endian binary helpers -----------------------------------------

namespace bin {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& buf, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(buf, u);
}
inline void put_str(std::string& buf, const std::string& s) {
  put_u32(buf, std::uint32_t(s.size()));
  buf += s;
}

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() {
    const std::uint32_t u = u32();
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw IoError(origin_ + ": unexpected end of file");
  }
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void dump(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace bin

// ---- fMRI matrix -----------------------------------------------------------

/// T x V matrix of 32-bit floats: "AVFM", u32 version, u32 T, u32 V, data.
struct FmriMatrix {
  std::size_t t = 0;
  std::size_t v = 0;
  std::vector<float> data;

  const float* row(std::size_t i) const { return data.data() + i * v; }
};

inline constexpr std::uint32_t kAvfmVersion = 1;

inline void write_avfm(const std::string& path, const FmriMatrix& m) {
  if (m.data.size() != m.t * m.v) throw IoError("fMRI matrix data size mismatch");
  std::string buf = "AVFM";
  bin::put_u32(buf, kAvfmVersion);
  bin::put_u32(buf, std::uint32_t(m.t));
  bin::put_u32(buf, std::uint32_t(m.v));
  buf.reserve(buf.size() + m.data.size() * 4);
  for (float f : m.data) bin::put_f32(buf, f);
  bin::dump(path, buf);
}

inline FmriMatrix read_avfm(const std::string& path) {
  bin::Reader r(bin::slurp(path), path);
  if (r.raw(4) != "AVFM") throw IoError(path + ": bad magic, expected AVFM");
  if (const auto ver = r.u32(); ver != kAvfmVersion)
    throw IoError(path + ": unsupported AVFM version " + std::to_string(ver));
  FmriMatrix m;
  m.t = r.u32();
  m.v = r.u32();
  m.data.resize(m.t * m.v);
  for (auto& f : m.data) f = r.f32();
  if (!r.done()) throw IoError(path + ": trailing bytes after fMRI data");
  return m;
}

/// Header only: (T, V).
inline std::pair<std::size_t, std::size_t> peek_avfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string head(16, '\0');
  in.read(head.data(), 16);
  if (in.gcount() != 16) throw IoError(path + ": truncated header");
  bin::Reader r(head, path);
  if (r.raw(4) != "AVFM") throw IoError(path + ": bad magic, expected AVFM");
  r.u32();
  const std::size_t t = r.u32();
  const std::size_t v = r.u32();
  return {t, v};
}

// ---- gaze CSV --------------------------------------------------------------

struct GazeSample {
  std::int64_t t_ms = 0;
  double x = 0;
  double y = 0;
  bool valid = true;
};

inline void write_gaze_csv(const std::string& path, const std::vector<GazeSample>& g) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "t_ms,x_px,y_px,valid\n";
  char line[96];
  for (const auto& s : g) {
    std::snprintf(line, sizeof line, "%lld,%.3f,%.3f,%d\n", static_cast<long long>(s.t_ms), s.x, s.y,
                  s.valid ? 1 : 0);
    out << line;
  }
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<GazeSample> read_gaze_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "t_ms,x_px,y_px,valid")
    throw IoError(path + ": missing header t_ms,x_px,y_px,valid");
  std::vector<GazeSample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto f = detail::split(line, ',');
    if (f.size() != 4) throw IoError(path + ":" + std::to_string(lineno) + ": expected 4 fields");
    try {
      GazeSample s;
      s.t_ms = std::stoll(f[0]);
      s.x = std::stod(f[1]);
      s.y = std::stod(f[2]);
      s.valid = f[3] == "1" || f[3] == "true";
      out.push_back(s);
    } catch (const std::exception&) {
      throw IoError(path + ":" + std::to_string(lineno) + ": malformed gaze row");
    }
  }
  return out;
}

// ---- checkpoint ------------------------------------------------------------

/// Named float tensors plus string metadata. Entries are kept sorted by
/// name, so save -> load -> save reproduces the same bytes.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor<float>> tensors;

  static constexpr std::uint32_t kVersion = 1;

  std::string serialize() const {
    std::string buf = "AVCK";
    bin::put_u32(buf, kVersion);
    bin::put_u32(buf, std::uint32_t(meta.size()));
    for (const auto& [k, v] : meta) {
      bin::put_str(buf, k);
      bin::put_str(buf, v);
    }
    bin::put_u32(buf, std::uint32_t(tensors.size()));
    for (const auto& [name, t] : tensors) {
      bin::put_str(buf, name);
      bin::put_u32(buf, std::uint32_t(t.ndim()));
      for (auto d : t.shape()) bin::put_u64(buf, d);
      for (float f : t.vec()) bin::put_f32(buf, f);
    }
    return buf;
  }

  static Checkpoint deserialize(const std::string& bytes, const std::string& origin) {
    bin::Reader r(bytes, origin);
    if (r.raw(4) != "AVCK") throw IoError(origin + ": bad magic, expected AVCK");
    if (const auto ver = r.u32(); ver != kVersion)
      throw IoError(origin + ": unsupported checkpoint version " + std::to_string(ver));
    Checkpoint c;
    const auto nm = r.u32();
    for (std::uint32_t i = 0; i < nm; ++i) {
      std::string k = r.str();
      c.meta[k] = r.str();
    }
    const auto nt = r.u32();
    for (std::uint32_t i = 0; i < nt; ++i) {
      std::string name = r.str();
      Shape shape(r.u32());
      for (auto& d : shape) d = r.u64();
      Tensor<float> t(shape);
      for (auto& f : t.vec()) f = r.f32();
      c.tensors.emplace(std::move(name), std::move(t));
    }
    if (!r.done()) throw IoError(origin + ": trailing bytes in checkpoint");
    return c;
  }

  void save(const std::string& path) const { bin::dump(path, serialize()); }
  static Checkpoint load(const std::string& path) { return deserialize(bin::slurp(path), path); }

  const std::string& get_meta(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw IoError("checkpoint missing metadata '" + key + "'");
    return it->second;
  }
  const Tensor<float>& get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("checkpoint missing tensor '" + name + "'");
    return it->second;
  }
};

}  // namespace avan
