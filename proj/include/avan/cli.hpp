#pragma once

// The `avan` command-line tool: gen, pretrain, train, infer, eval, sweep-delay.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "avan/pipeline.hpp"
#include "avan/synthdata.hpp"

namespace avan::cli {

enum ExitCode : int { kOk = 0, kRuntimeError = 1, kUsageError = 2 };

/// Bad arguments or inputs that fail validation before compute starts.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> set;  // key=value overrides
};

inline RunConfig load_config(const CommonOptions& o, const std::string& fallback_text = {}) {
  RunConfig c = !o.config_path.empty() ? RunConfig::from_file(o.config_path)
                : !fallback_text.empty() ? RunConfig::from_text(fallback_text)
                                         : RunConfig{};
  std::map<std::string, std::string> kv;
  for (const auto& s : o.set) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    kv[detail::trim(s.substr(0, eq))] = detail::trim(s.substr(eq + 1));
  }
  c.apply(kv);
  if (o.seed) c.seed = *o.seed;
  return c;
}

inline Dataset open_dataset(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw UsageError("dataset directory not found: " + dir);
  if (!std::filesystem::is_regular_file(std::filesystem::path(dir) / "manifest.txt"))
    throw UsageError("no manifest.txt in dataset directory " + dir);
  auto ds = Dataset::open(dir);
  ds.validate();
  return ds;
}

inline std::filesystem::path make_out_dir(const std::string& out) {
  if (out.empty()) throw UsageError("--out is required");
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out + ": " + ec.message());
  return out;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) { bin::dump(p.string(), text); }

// ---- commands -------------------------------------------------------------

inline void cmd_gen(const CommonOptions& o, std::ostream& log) {
  const RunConfig c = load_config(o);
  const auto out = make_out_dir(o.out);
  auto m = generate_dataset(c, c.seed, out.string());
  Dataset{out, m}.validate();
  log << "wrote " << m.frame_count << " frames, " << m.subjects.size() << " subjects x " << m.volumes
      << " volumes to " << out.string() << "\n";
}

inline void cmd_pretrain(const CommonOptions& o, const std::string& dataset, std::ostream& log) {
  const auto ds = open_dataset(dataset);
  const RunConfig c = load_config(o);
  if (std::size_t(c.gen_voxels) != ds.manifest.voxels)
    throw UsageError("dataset has V=" + std::to_string(ds.manifest.voxels) + " voxels but the config says gen.voxels=" +
                     std::to_string(c.gen_voxels));
  const auto out = make_out_dir(o.out);
  auto r = run_pretrain(ds, c);
  std::ostringstream csv;
  csv << "epoch,mse,total\n";
  csv.precision(9);
  for (std::size_t e = 0; e < r.log.mse.size(); ++e) csv << e << ',' << r.log.mse[e] << ',' << r.log.total[e] << "\n";
  write_text(out / "pretrain_log.csv", csv.str());
  autoencoder_checkpoint(r.ae, c.to_text()).save((out / "autoencoder.avck").string());
  log << "autoencoder mse " << (r.log.mse.empty() ? 0.0 : r.log.mse.back()) << " after " << r.log.mse.size()
      << " epochs\n";
}

inline Autoencoder<float> load_autoencoder(const std::string& path, std::size_t dim, std::size_t voxels,
                                           const RunConfig& c) {
  auto ck = Checkpoint::load(path);
  auto ae = autoencoder_from_checkpoint<float>(ck);
  if (ae.dim() != dim || ae.voxels() != voxels) {
    const auto ae_cfg = RunConfig::from_text(ck.get_meta("config"));
    throw UsageError("autoencoder " + path + " has D=" + std::to_string(ae.dim()) + ", V=" +
                     std::to_string(ae.voxels()) + " (its config: feature_dim=" + std::to_string(ae_cfg.feature_dim) +
                     ", gen.voxels=" + std::to_string(ae_cfg.gen_voxels) + ") but this run needs D=" +
                     std::to_string(dim) + ", V=" + std::to_string(voxels) + " (config: feature_dim=" +
                     std::to_string(c.feature_dim) + ", dataset voxels=" + std::to_string(voxels) + ")");
  }
  return ae;
}

inline std::string stats_table(Model<float>& m, const LoadedPairs& pairs, const ObjectiveOptions& opt) {
  return format_stats_table({target_row(), stats_row("train", split_stats(m, pairs.train, opt)),
                             stats_row("test", split_stats(m, pairs.test, opt))});
}

inline void cmd_train(const CommonOptions& o, const std::string& dataset, const std::string& ae_path,
                      std::ostream& log) {
  const auto ds = open_dataset(dataset);
  const RunConfig c = load_config(o);
  const std::size_t V = ds.manifest.voxels;
  std::optional<Autoencoder<float>> ae;
  if (!ae_path.empty()) ae = load_autoencoder(ae_path, std::size_t(c.feature_dim), V, c);
  const auto out = make_out_dir(o.out);
  auto pairs = load_pairs(ds, c, c.delay_s);
  log << "pairs: " << pairs.train.size() << " train, " << pairs.test.size() << " test\n";
  auto st = init_training(c, V, ae ? &*ae : nullptr);
  std::ofstream tl(out / "train_log.csv");
  if (!tl) throw IoError("cannot write " + (out / "train_log.csv").string());
  if (c.steps > 0) {
    run_training(st, pairs.train, c, c.steps, &tl);
  } else {
    tl << kTrainLogHeader << "\n";
  }
  const auto table = stats_table(st.model, pairs, ObjectiveOptions::from_config(c, V));
  tl << "\n" << table;
  tl.close();
  write_text(out / "stats.csv", table);
  to_checkpoint(st, c.to_text()).save((out / "model.avck").string());
  log << table;
}

struct LoadedModel {
  TrainState<float> state;
  RunConfig config;
};

inline LoadedModel load_model(const std::string& path, const CommonOptions& o) {
  auto ck = Checkpoint::load(path);
  RunConfig c = load_config(o, ck.get_meta("config"));
  auto st = from_checkpoint<float>(ck, adam_config(c));
  // Geometry always comes from the checkpoint.
  c.crop = std::int64_t(st.model.spec.crop);
  return {std::move(st), c};
}

inline std::string rmap_csv(const Tensor<float>& r) {
  std::ostringstream os;
  os.precision(7);
  for (std::size_t y = 0; y < r.dim(0); ++y) {
    for (std::size_t x = 0; x < r.dim(1); ++x) os << (x ? "," : "") << r[y * r.dim(1) + x];
    os << "\n";
  }
  return os.str();
}

/// Image darkened outside the mask with a red marker at the gaze point.
inline Image8 overlay(const Image8& im, const Tensor<float>& mask, std::optional<Point> gaze) {
  Image8 out = im;
  const std::size_t W = im.width, H = im.height;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double a = std::clamp(double(mask[y * W + x]), 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = im.at(x, y, c) * (0.25 + 0.75 * a);
        const double tint = c == 2 ? 90 * a : 0;
        out.at(x, y, c) = std::uint8_t(std::clamp(std::lround(base + tint), 0L, 255L));
      }
    }
  if (gaze) {
    const long gx = long(std::floor(gaze->x)), gy = long(std::floor(gaze->y));
    for (long dy = -3; dy <= 3; ++dy)
      for (long dx = -3; dx <= 3; ++dx) {
        const long x = gx + dx, y = gy + dy;
        if (dx * dx + dy * dy > 9 || x < 0 || y < 0 || x >= long(W) || y >= long(H)) continue;
        out.at(std::size_t(x), std::size_t(y), 0) = 255;
        out.at(std::size_t(x), std::size_t(y), 1) = 0;
        out.at(std::size_t(x), std::size_t(y), 2) = 0;
      }
  }
  return out;
}

inline std::vector<std::size_t> parse_frame_list(const std::string& s, std::size_t count) {
  std::vector<std::size_t> out;
  for (const auto& part : detail::split(s, ',')) {
    if (part.empty()) continue;
    const auto dash = part.find('-');
    auto num = [&](const std::string& x) {
      try {
        std::size_t pos = 0;
        const long v = std::stol(x, &pos);
        if (pos != x.size() || v < 0) throw std::invalid_argument(x);
        return std::size_t(v);
      } catch (const std::exception&) {
        throw UsageError("bad frame id '" + x + "'");
      }
    };
    const std::size_t a = num(dash == std::string::npos ? part : part.substr(0, dash));
    const std::size_t b = dash == std::string::npos ? a : num(part.substr(dash + 1));
    for (std::size_t i = a; i <= b; ++i) {
      if (i >= count)
        throw UsageError("frame " + std::to_string(i) + " not in dataset (available 0-" + std::to_string(count - 1) + ")");
      out.push_back(i);
    }
  }
  if (out.empty()) throw UsageError("no frames requested");
  return out;
}

inline void cmd_infer(const CommonOptions& o, const std::string& checkpoint, const std::string& dataset,
                      std::size_t subject, const std::string& frames, const std::string& mode, std::ostream& log) {
  if (mode != "group" && mode != "individual") throw UsageError("--mode must be group or individual");
  const auto ds = open_dataset(dataset);
  const auto& man = ds.manifest;
  if (subject < 1 || subject > man.subjects.size())
    throw UsageError("unknown subject " + std::to_string(subject) + " (available 1-" +
                     std::to_string(man.subjects.size()) + ")");
  const auto ids = parse_frame_list(frames, man.frame_count);
  auto lm = load_model(checkpoint, o);
  auto& model = lm.state.model;
  if (model.spec.voxels != man.voxels) throw UsageError("checkpoint V differs from the dataset's");
  const auto out = make_out_dir(o.out);
  const std::size_t s = subject - 1;
  const auto gaze = frame_gaze(ds, s);
  std::optional<FmriSeries> fmri_up;
  if (mode == "individual") fmri_up = interpolate_fmri(ds.fmri(s), man.fps);

  const std::size_t W = man.frame_width / 32 * 32, H = man.frame_height / 32 * 32;
  for (const std::size_t i : ids) {
    const Image8 im = ds.frame(i).crop(0, 0, W, H);
    std::optional<Point> g = gaze[i];
    if (g && !(g->x < double(W) && g->y < double(H))) g.reset();
    Tensor<float> x = im.to_tensor<float>();
    Tensor<float> batch = x.reshaped(Shape{1, 3, H, W});
    char stem[64];
    std::snprintf(stem, sizeof stem, "frame_%06zu", i);
    const std::string base = (out / stem).string();
    if (mode == "group") {
      auto ga = group_attention(model, batch);
      write_ppm(base + "_attended.ppm", Image8::from_tensor(ga.attended.reshaped(Shape{3, H, W})));
      write_ppm(base + "_neglected.ppm", Image8::from_tensor(ga.neglected.reshaped(Shape{3, H, W})));
      write_ppm(base + "_overlay.ppm", overlay(im, ga.mask.reshaped(Shape{H, W}), g));
    } else {
      const double pos = paired_fmri_position(i, man.fps, lm.config.delay_s, fmri_up->rate_hz);
      if (pos > double(fmri_up->size() - 1))
        throw UsageError("frame " + std::to_string(i) + " has no fMRI volume at delay " +
                         detail::format_double(lm.config.delay_s) + " s");
      std::vector<float> v(man.voxels);
      fmri_at_index(*fmri_up, pos, v.data());
      auto rmap = relational_map(model, x, v);
      const auto mk = individual_mask(rmap, H, W, lm.config.rmap_rescale);
      Tensor<float> neg = x;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < H * W; ++p) neg[c * H * W + p] *= 1 - std::clamp(mk[p], 0.0f, 1.0f);
      write_ppm(base + "_attended.ppm", Image8::from_tensor(individual_attention(x, rmap, lm.config.rmap_rescale)));
      write_ppm(base + "_neglected.ppm", Image8::from_tensor(neg));
      write_ppm(base + "_overlay.ppm", overlay(im, mk, g));
      write_text(base + "_rmap.csv", rmap_csv(rmap));
    }
  }
  log << "wrote " << ids.size() << " frame(s) to " << out.string() << "\n";
}

inline void cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& dataset,
                     const std::string& metric, std::ostream& log) {
  if (metric != "hitrate" && metric != "stats" && metric != "networks")
    throw UsageError("--metric must be hitrate, stats or networks");
  const auto ds = open_dataset(dataset);
  auto lm = load_model(checkpoint, o);
  auto& model = lm.state.model;
  const RunConfig& c = lm.config;
  if (model.spec.voxels != ds.manifest.voxels) throw UsageError("checkpoint V differs from the dataset's");
  const auto out = make_out_dir(o.out);
  std::string report;
  if (metric == "networks") {
    auto nets = extract_networks(model.fmri.w.value, training_volumes(ds, c), c.z_threshold);
    std::optional<NetworkMatch> match;
    if (!ds.manifest.ground_truth.empty()) {
      auto gt = GroundTruth::load(ds.path(ds.manifest.ground_truth));
      if (!gt.maps.empty()) match = match_networks(nets, gt.maps);
    }
    report = format_networks(nets, match ? &*match : nullptr);
    std::ostringstream maps;
    maps.precision(7);
    for (const auto& n : nets) {
      for (std::size_t v = 0; v < n.z.size(); ++v) maps << (v ? "," : "") << n.z[v];
      maps << "\n";
    }
    write_text(out / "network_zmaps.csv", maps.str());
    if (match) log << "templates matched at |corr| >= 0.6: " << recovered_count(*match, 0.6) << " of "
                   << match->best_corr.size() << "\n";
  } else {
    auto pairs = load_pairs(ds, c, c.delay_s);
    if (metric == "stats") {
      report = stats_table(model, pairs, ObjectiveOptions::from_config(c, ds.manifest.voxels));
    } else {
      std::ostringstream os;
      os << "split,kind,hits,total,rate,chance\n";
      for (const auto* split : {&pairs.train, &pairs.test})
        for (const char* kind : {"group", "individual"}) {
          const auto h = std::string(kind) == "group" ? group_hit_rate(model, *split, c.threshold)
                                                      : individual_hit_rate(model, *split, c.threshold);
          char buf[160];
          std::snprintf(buf, sizeof buf, "%s,%s,%zu,%zu,%.4f,%.4f\n", split == &pairs.train ? "train" : "test", kind,
                        h.hits, h.total, h.rate, h.chance);
          os << buf;
        }
      report = os.str();
    }
  }
  write_text(out / ("eval_" + metric + ".csv"), report);
  log << report;
}

inline void cmd_sweep(const CommonOptions& o, const std::string& dataset, const std::string& ae_path,
                      const std::string& delays, std::ostream& log) {
  const auto ds = open_dataset(dataset);
  RunConfig c = load_config(o);
  if (!delays.empty()) c.set("sweep_delays", delays), c.validate();
  std::optional<Autoencoder<float>> ae;
  if (!ae_path.empty()) ae = load_autoencoder(ae_path, std::size_t(c.feature_dim), ds.manifest.voxels, c);
  const auto out = make_out_dir(o.out);
  auto rows = delay_sweep(ds, c.sweep_delays, c, ae ? &*ae : nullptr, &log);
  const std::size_t best = best_delay(rows);
  std::string table = format_sweep(rows);
  // Mark the argmax row.
  std::istringstream in(table);
  std::ostringstream marked;
  std::string line;
  std::getline(in, line);
  marked << line << ",best\n";
  for (std::size_t i = 0; std::getline(in, line); ++i) marked << line << ',' << (i == best ? 1 : 0) << "\n";
  write_text(out / "sweep.csv", marked.str());
  log << marked.str() << "best delay: " << detail::format_double(rows[best].delay_s) << " s\n";
}

// ---- entry point ----------------------------------------------------------

/// Parses argv and runs one command. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Brain-inspired visual attention from movies, gaze and fMRI"};
  app.require_subcommand(1);
  CommonOptions common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Config file (key = value lines)");
    sub->add_option("--seed", common.seed, "Seed (overrides the config)");
    sub->add_option("--out", common.out, "Output directory")->required();
    sub->add_option("--set", common.set, "Config override key=value (repeatable)");
  };
  std::string dataset, checkpoint, ae_path, frames = "0", mode = "group", metric, delays;
  std::size_t subject = 1;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  add_common(gen);
  auto* pre = app.add_subcommand("pretrain", "Pretrain the fMRI autoencoder");
  pre->add_option("dataset", dataset, "Dataset directory")->required();
  add_common(pre);
  auto* train = app.add_subcommand("train", "Train the full model");
  train->add_option("dataset", dataset, "Dataset directory")->required();
  train->add_option("--ae", ae_path, "Autoencoder checkpoint for the fMRI encoder");
  add_common(train);
  auto* infer = app.add_subcommand("infer", "Write attention overlays for frames");
  infer->add_option("checkpoint", checkpoint, "Model checkpoint")->required();
  infer->add_option("dataset", dataset, "Dataset directory")->required();
  infer->add_option("--subject", subject, "Subject number (1-based)");
  infer->add_option("--frames", frames, "Frame ids, e.g. 0,5,10-12");
  infer->add_option("--mode", mode, "group or individual");
  add_common(infer);
  auto* eval = app.add_subcommand("eval", "Evaluate a trained model");
  eval->add_option("checkpoint", checkpoint, "Model checkpoint")->required();
  eval->add_option("dataset", dataset, "Dataset directory")->required();
  eval->add_option("--metric", metric, "hitrate, stats or networks")->required();
  add_common(eval);
  auto* sweep = app.add_subcommand("sweep-delay", "Train one model per assumed delay");
  sweep->add_option("dataset", dataset, "Dataset directory")->required();
  sweep->add_option("--delays", delays, "Comma-separated delays in seconds");
  sweep->add_option("--ae", ae_path, "Autoencoder checkpoint for the fMRI encoder");
  add_common(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }

  try {
    if (gen->parsed()) cmd_gen(common, out);
    else if (pre->parsed()) cmd_pretrain(common, dataset, out);
    else if (train->parsed()) cmd_train(common, dataset, ae_path, out);
    else if (infer->parsed()) cmd_infer(common, checkpoint, dataset, subject, frames, mode, out);
    else if (eval->parsed()) cmd_eval(common, checkpoint, dataset, metric, out);
    else if (sweep->parsed()) cmd_sweep(common, dataset, ae_path, delays, out);
    return kOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace avan::cli
