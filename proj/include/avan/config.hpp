#pragma once

// Run configuration: a flat key=value file. Unknown keys are rejected.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace avan {

/// Invalid user input (bad config, manifest, arguments). Maps to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

/// Parses "key = value" lines; '#' starts a comment. Duplicate keys are errors.
inline std::map<std::string, std::string> parse_key_values(std::istream& in,
                                                           const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second)
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
  }
  return kv;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key + ": not a number: '" + v + "'");
  }
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key + ": not an integer: '" + v + "'");
  }
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double d) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, r.ptr);
}

}  // namespace detail

struct RunConfig {
  std::uint64_t seed = 0;

  // optimizer
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t batch = 16;
  std::int64_t steps = 20000;
  std::int64_t log_every = 100;

  // objective
  double margin = 0.1;
  double l1 = 5e-6;
  /// The L1 coefficient is multiplied by l1_ref_voxels / V (0 disables).
  double l1_ref_voxels = 48637;
  /// "sum": original-image code is v_a + v_n; "encode": encode the crop itself.
  std::string anf_mode = "sum";
  bool rec_bn_affine = true;

  // architecture
  std::int64_t crop = 64;
  std::int64_t feature_dim = 64;
  std::vector<std::int64_t> widths{8, 16, 32, 64, 64};
  std::vector<std::int64_t> rel_hidden{256, 64};

  // data pipeline
  double delay_s = 2.0;
  double train_fraction = 0.7;
  std::int64_t frame_stride = 2;

  // autoencoder
  std::int64_t ae_epochs = 6000;
  double ae_lr = 1e-3;

  // evaluation
  double threshold = 0.5;
  double z_threshold = 3.0;
  /// Individual attention image: "clamp" negatives to 0, or "minmax" rescale.
  std::string rmap_rescale = "clamp";
  std::vector<double> sweep_delays{0, 2, 4, 6};
  std::int64_t sweep_steps = 3000;

  // synthetic generator
  double gen_duration_s = 600;
  double gen_fps = 25;
  std::int64_t gen_width = 320;
  std::int64_t gen_height = 180;
  std::int64_t gen_objects = 3;
  double gen_object_radius = 12;
  std::int64_t gen_subjects = 2;
  std::int64_t gen_voxels = 256;
  std::int64_t gen_networks = 8;
  double gen_map_fraction = 0.125;
  double gen_tr_s = 2.0;
  double gen_delay_s = 2.0;
  double gen_noise = 0.5;
  double gen_spontaneous = 1.0;
  double gen_hrf_peak = 5;
  double gen_hrf_undershoot = 15;
  double gen_hrf_ratio = 6;
  /// Gamma scale in seconds; shapes are peak / dispersion + 1.
  double gen_hrf_dispersion = 1;
  double gen_segment_min_s = 2;
  double gen_segment_max_s = 6;
  double gen_jitter_px = 4;
  double gen_saccade_rate = 0.2;
  double gen_saccade_ms = 250;
  double gen_blink_rate = 0.1;
  double gen_blink_min_ms = 100;
  double gen_blink_max_ms = 500;
  /// Off-screen excursions per second.
  double gen_offscreen_rate = 0.02;
  double gen_offscreen_ms = 300;

  struct Field {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
  };

  static const std::vector<Field>& fields();

  /// Applies key=value overrides; unknown keys and bad values throw.
  void apply(const std::map<std::string, std::string>& kv) {
    for (const auto& [k, v] : kv) {
      const Field* f = find(k);
      if (!f) throw ValidationError("unknown config key: " + k);
      f->set(*this, v);
    }
    validate();
  }

  /// Sets one key without cross-field validation (call validate() after).
  void set(const std::string& key, const std::string& value) {
    const Field* f = find(key);
    if (!f) throw ValidationError("unknown config key: " + key);
    f->set(*this, value);
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path);
    RunConfig c;
    c.apply(detail::parse_key_values(in, path));
    return c;
  }

  /// All keys, one per line in declaration order.
  std::string to_text() const {
    std::string out;
    for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
    return out;
  }

  static RunConfig from_text(const std::string& text) {
    std::istringstream in(text);
    RunConfig c;
    c.apply(detail::parse_key_values(in, "<embedded config>"));
    return c;
  }

  void validate() const {
    auto req = [](bool ok, const std::string& what) {
      if (!ok) throw ValidationError("invalid config: " + what);
    };
    req(lr >= 0, "lr must be >= 0");
    req(batch >= 2, "batch must be >= 2");
    req(steps >= 0, "steps must be >= 0");
    req(margin >= 0, "margin must be >= 0");
    req(l1 >= 0, "l1 must be >= 0");
    req(crop > 0 && crop % 32 == 0, "crop must be a positive multiple of 32");
    req(feature_dim > 0, "feature_dim must be > 0");
    req(widths.size() == 5, "widths needs 5 entries (stem + 4 blocks)");
    req(!rel_hidden.empty(), "rel_hidden needs at least one layer");
    req(anf_mode == "sum" || anf_mode == "encode", "anf_mode must be sum or encode");
    req(rmap_rescale == "clamp" || rmap_rescale == "minmax", "rmap_rescale must be clamp or minmax");
    req(delay_s >= 0, "delay_s must be >= 0");
    req(train_fraction > 0 && train_fraction < 1, "train_fraction must be in (0,1)");
    req(frame_stride >= 1, "frame_stride must be >= 1");
    req(gen_fps > 0 && gen_duration_s > 0, "gen duration and fps must be > 0");
    req(gen_width >= crop && gen_height >= crop, "frame must be at least crop size");
    req(gen_objects >= 0 && gen_subjects >= 1, "gen_objects >= 0 and gen_subjects >= 1");
    req(gen_networks >= 1 && gen_voxels >= gen_networks, "need 1 <= gen_networks <= gen_voxels");
    req(gen_map_fraction > 0 && gen_map_fraction <= 1, "gen_map_fraction must be in (0,1]");
    req(gen_tr_s > 0 && gen_delay_s >= 0 && gen_noise >= 0, "gen_tr_s > 0, gen_delay_s >= 0, gen_noise >= 0");
    req(gen_hrf_peak > 0 && gen_hrf_undershoot > 0 && gen_hrf_ratio > 0 && gen_hrf_dispersion > 0,
        "HRF parameters must be > 0");
    req(gen_segment_min_s > 0 && gen_segment_max_s >= gen_segment_min_s, "bad segment range");
    req(gen_saccade_rate >= 0 && gen_blink_rate >= 0 && gen_offscreen_rate >= 0, "rates must be >= 0");
    for (auto w : widths) req(w > 0, "widths must be > 0");
    for (auto h : rel_hidden) req(h > 0, "rel_hidden must be > 0");
    for (auto d : sweep_delays) req(d >= 0, "sweep delays must be >= 0");
  }

 private:
  static const Field* find(const std::string& key) {
    for (const auto& f : fields())
      if (f.key == key) return &f;
    return nullptr;
  }
};

namespace detail {

template <typename M>
RunConfig::Field make_field(const std::string& key, M RunConfig::*member) {
  RunConfig::Field f;
  f.key = key;
  using V = std::remove_reference_t<decltype(std::declval<RunConfig>().*member)>;
  f.set = [member, key](RunConfig& c, const std::string& v) {
    if constexpr (std::is_same_v<V, double>) {
      c.*member = parse_double(key, v);
    } else if constexpr (std::is_same_v<V, std::int64_t>) {
      c.*member = parse_int(key, v);
    } else if constexpr (std::is_same_v<V, std::uint64_t>) {
      const auto i = parse_int(key, v);
      if (i < 0) throw ValidationError("config key " + key + ": must be >= 0");
      c.*member = std::uint64_t(i);
    } else if constexpr (std::is_same_v<V, bool>) {
      if (v == "true" || v == "1") c.*member = true;
      else if (v == "false" || v == "0") c.*member = false;
      else throw ValidationError("config key " + key + ": expected true/false");
    } else if constexpr (std::is_same_v<V, std::string>) {
      c.*member = v;
    } else if constexpr (std::is_same_v<V, std::vector<std::int64_t>>) {
      V out;
      for (const auto& p : split(v, ',')) out.push_back(parse_int(key, p));
      c.*member = out;
    } else {
      V out;
      for (const auto& p : split(v, ',')) out.push_back(parse_double(key, p));
      c.*member = out;
    }
  };
  f.get = [member](const RunConfig& c) -> std::string {
    const V& v = c.*member;
    if constexpr (std::is_same_v<V, double>) {
      return format_double(v);
    } else if constexpr (std::is_same_v<V, bool>) {
      return v ? "true" : "false";
    } else if constexpr (std::is_same_v<V, std::string>) {
      return v;
    } else if constexpr (std::is_integral_v<V>) {
      return std::to_string(v);
    } else {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        if constexpr (std::is_same_v<typename V::value_type, double>) s += format_double(v[i]);
        else s += std::to_string(v[i]);
      }
      return s;
    }
  };
  return f;
}

}  // namespace detail

inline const std::vector<RunConfig::Field>& RunConfig::fields() {
  using detail::make_field;
  static const std::vector<Field> all = {
      make_field("seed", &RunConfig::seed),
      make_field("lr", &RunConfig::lr),
      make_field("beta1", &RunConfig::beta1),
      make_field("beta2", &RunConfig::beta2),
      make_field("adam_eps", &RunConfig::adam_eps),
      make_field("batch", &RunConfig::batch),
      make_field("steps", &RunConfig::steps),
      make_field("log_every", &RunConfig::log_every),
      make_field("margin", &RunConfig::margin),
      make_field("l1", &RunConfig::l1),
      make_field("l1_ref_voxels", &RunConfig::l1_ref_voxels),
      make_field("anf_mode", &RunConfig::anf_mode),
      make_field("rec_bn_affine", &RunConfig::rec_bn_affine),
      make_field("crop", &RunConfig::crop),
      make_field("feature_dim", &RunConfig::feature_dim),
      make_field("widths", &RunConfig::widths),
      make_field("rel_hidden", &RunConfig::rel_hidden),
      make_field("delay_s", &RunConfig::delay_s),
      make_field("train_fraction", &RunConfig::train_fraction),
      make_field("frame_stride", &RunConfig::frame_stride),
      make_field("ae_epochs", &RunConfig::ae_epochs),
      make_field("ae_lr", &RunConfig::ae_lr),
      make_field("threshold", &RunConfig::threshold),
      make_field("z_threshold", &RunConfig::z_threshold),
      make_field("rmap_rescale", &RunConfig::rmap_rescale),
      make_field("sweep_delays", &RunConfig::sweep_delays),
      make_field("sweep_steps", &RunConfig::sweep_steps),
      make_field("gen.duration_s", &RunConfig::gen_duration_s),
      make_field("gen.fps", &RunConfig::gen_fps),
      make_field("gen.width", &RunConfig::gen_width),
      make_field("gen.height", &RunConfig::gen_height),
      make_field("gen.objects", &RunConfig::gen_objects),
      make_field("gen.object_radius", &RunConfig::gen_object_radius),
      make_field("gen.subjects", &RunConfig::gen_subjects),
      make_field("gen.voxels", &RunConfig::gen_voxels),
      make_field("gen.networks", &RunConfig::gen_networks),
      make_field("gen.map_fraction", &RunConfig::gen_map_fraction),
      make_field("gen.tr_s", &RunConfig::gen_tr_s),
      make_field("gen.delay_s", &RunConfig::gen_delay_s),
      make_field("gen.noise", &RunConfig::gen_noise),
      make_field("gen.spontaneous", &RunConfig::gen_spontaneous),
      make_field("gen.hrf_peak", &RunConfig::gen_hrf_peak),
      make_field("gen.hrf_undershoot", &RunConfig::gen_hrf_undershoot),
      make_field("gen.hrf_ratio", &RunConfig::gen_hrf_ratio),
      make_field("gen.hrf_dispersion", &RunConfig::gen_hrf_dispersion),
      make_field("gen.segment_min_s", &RunConfig::gen_segment_min_s),
      make_field("gen.segment_max_s", &RunConfig::gen_segment_max_s),
      make_field("gen.jitter_px", &RunConfig::gen_jitter_px),
      make_field("gen.saccade_rate", &RunConfig::gen_saccade_rate),
      make_field("gen.saccade_ms", &RunConfig::gen_saccade_ms),
      make_field("gen.blink_rate", &RunConfig::gen_blink_rate),
      make_field("gen.blink_min_ms", &RunConfig::gen_blink_min_ms),
      make_field("gen.blink_max_ms", &RunConfig::gen_blink_max_ms),
      make_field("gen.offscreen_rate", &RunConfig::gen_offscreen_rate),
      make_field("gen.offscreen_ms", &RunConfig::gen_offscreen_ms),
  };
  return all;
}

}  // namespace avan
