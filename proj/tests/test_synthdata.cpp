#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "avan/dataset.hpp"
#include "avan/synthdata.hpp"

using namespace avan;
namespace fs = std::filesystem;

namespace {

WorldParams small_world(std::size_t objects, double duration = 20) {
  WorldParams p;
  p.width = 160;
  p.height = 96;
  p.objects = objects;
  p.duration_s = duration;
  return p;
}

GazeParams quiet_gaze() {
  GazeParams g;
  g.jitter_px = 0;
  g.saccade_rate = 0;
  g.blink_rate = 0;
  g.offscreen_rate = 0;
  return g;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = double(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (a[i] - ma) * (b[i] - mb);
    aa += (a[i] - ma) * (a[i] - ma);
    bb += (b[i] - mb) * (b[i] - mb);
  }
  return ab / std::sqrt(aa * bb);
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("avan_synth_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(World, ExactlyOneAttendedObjectAndTrajectoriesInside) {
  auto w = make_world(small_world(3, 120), 5);
  ASSERT_EQ(w.schedules.size(), 2u);
  for (const auto& s : w.schedules) {
    ASSERT_FALSE(s.empty());
    EXPECT_EQ(s.front().start_s, 0.0);
    for (std::size_t i = 1; i < s.size(); ++i) {
      EXPECT_GT(s[i].start_s, s[i - 1].start_s);
      EXPECT_NE(s[i].object, s[i - 1].object);
    }
  }
  const double r = w.params.radius;
  for (double t = 0; t < 120; t += 0.37) {
    for (std::size_t s = 0; s < 2; ++s) EXPECT_LT(w.attended(s, t), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
      const Point c = w.position(k, t);
      EXPECT_GE(c.x - r, 0.0);
      EXPECT_GE(c.y - r, 0.0);
      EXPECT_LE(c.x + r, double(w.params.width));
      EXPECT_LE(c.y + r, double(w.params.height));
    }
  }
}

TEST(RenderFrame, NoObjectsGivesBackgroundDeterministically) {
  auto w = make_world(small_world(0), 3);
  auto a = render_frame(w, 1.0), b = render_frame(w, 1.0);
  EXPECT_TRUE(a.image == w.background);
  EXPECT_TRUE(a.image == b.image);
  EXPECT_TRUE(a.masks.empty());
}

TEST(RenderFrame, DiscCoversAboutPiRSquared) {
  for (double r : {8.0, 12.0, 20.0}) {
    auto p = small_world(1);
    p.radius = r;
    auto w = make_world(p, 3);
    ASSERT_EQ(w.objects[0].shape, ShapeKind::Disc);
    for (double t : {0.0, 4.5, 11.0}) {
      auto f = render_frame(w, t);
      const double area = double(std::count(f.masks[0].begin(), f.masks[0].end(), std::uint8_t(1)));
      EXPECT_NEAR(area, M_PI * r * r, 0.1 * M_PI * r * r) << "r=" << r << " t=" << t;
    }
  }
}

TEST(RenderFrame, FramesDifferOnlyInsideObjectBoxes) {
  auto w = make_world(small_world(3), 9);
  const double t0 = 2.0, t1 = 2.4;
  auto a = render_frame(w, t0), b = render_frame(w, t1);
  const double reach = 1.25 * w.params.radius + 1;
  std::size_t changed = 0;
  for (std::size_t y = 0; y < w.params.height; ++y)
    for (std::size_t x = 0; x < w.params.width; ++x) {
      bool same = true;
      for (std::size_t c = 0; c < 3; ++c) same = same && a.image.at(x, y, c) == b.image.at(x, y, c);
      if (same) continue;
      ++changed;
      bool in_box = false;
      for (std::size_t k = 0; k < 3; ++k)
        for (double t : {t0, t1}) {
          const Point p = w.position(k, t);
          in_box = in_box || (std::abs(double(x) + 0.5 - p.x) <= reach && std::abs(double(y) + 0.5 - p.y) <= reach);
        }
      EXPECT_TRUE(in_box) << x << "," << y;
    }
  EXPECT_GT(changed, 0u);
}

TEST(RenderFrame, MasksMatchPaintedPixels) {
  auto w = make_world(small_world(3), 4);
  auto f = render_frame(w, 7.0);
  for (std::size_t i = 0; i < w.params.width * w.params.height; ++i) {
    int owners = 0;
    for (const auto& m : f.masks) owners += m[i];
    EXPECT_LE(owners, 1);
    if (owners == 0) {
      const std::size_t x = i % w.params.width, y = i / w.params.width;
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(f.image.at(x, y, c), w.background.at(x, y, c));
    }
  }
}

TEST(RenderFrame, TimeOutsideDurationThrows) {
  auto w = make_world(small_world(2, 5), 1);
  EXPECT_THROW(render_frame(w, -0.01), std::out_of_range);
  EXPECT_THROW(render_frame(w, 5.0), std::out_of_range);
  EXPECT_NO_THROW(render_frame(w, 4.99));
}

TEST(GenGaze, NoiselessGazeIsAttendedCenter) {
  auto w = make_world(small_world(3, 10), 2);
  auto g = gen_gaze(w, 1, quiet_gaze(), 77);
  ASSERT_EQ(g.size(), 10000u);
  for (std::size_t i = 0; i < g.size(); ++i) {
    ASSERT_TRUE(g[i].valid);
    EXPECT_EQ(g[i].t_ms, std::int64_t(i));
    const double t = double(i) / 1000;
    const Point c = w.position(w.attended(1, t), t);
    EXPECT_EQ(g[i].x, c.x);
    EXPECT_EQ(g[i].y, c.y);
  }
}

TEST(GenGaze, ExplicitBlinkGivesOneInvalidRun) {
  auto w = make_world(small_world(3, 5), 2);
  auto p = quiet_gaze();
  p.jitter_px = 3;
  p.blinks = {{1234, 400}};
  auto g = gen_gaze(w, 0, p, 8);
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t i = 0; i < g.size();) {
    if (g[i].valid) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < g.size() && !g[j].valid) ++j;
    runs.push_back({i, j - i});
    i = j;
  }
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_EQ(runs[0].first, 1234u);
  EXPECT_EQ(runs[0].second, 400u);
}

TEST(GenGaze, SameSeedSameTrace) {
  auto w = make_world(small_world(3, 30), 2);
  GazeParams p;
  auto a = gen_gaze(w, 0, p, 5), b = gen_gaze(w, 0, p, 5), c = gen_gaze(w, 0, p, 6);
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].x, b[i].x);
    EXPECT_EQ(a[i].y, b[i].y);
    EXPECT_EQ(a[i].valid, b[i].valid);
    differs = differs || a[i].x != c[i].x;
  }
  EXPECT_TRUE(differs);
}

TEST(GenGaze, DefaultTraceHasSaccadesBlinksAndExcursions) {
  auto w = make_world(small_world(3, 300), 2);
  auto g = gen_gaze(w, 0, GazeParams{}, 5);
  std::size_t invalid = 0, offscreen = 0, far = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!g[i].valid) {
      ++invalid;
      continue;
    }
    if (g[i].x < 0) {
      ++offscreen;
      continue;
    }
    const double t = double(i) / 1000;
    const Point c = w.position(w.attended(0, t), t);
    far += std::hypot(g[i].x - c.x, g[i].y - c.y) > 30;
  }
  EXPECT_GT(invalid, 0u);
  EXPECT_GT(offscreen, 0u);
  EXPECT_GT(far, 0u);
  EXPECT_LT(double(invalid + offscreen + far) / double(g.size()), 0.2);
}

TEST(GenGaze, NegativeRateThrows) {
  auto w = make_world(small_world(3, 5), 2);
  auto p = quiet_gaze();
  p.blink_rate = -1;
  EXPECT_THROW(gen_gaze(w, 0, p, 1), std::invalid_argument);
}

// Independent double-gamma: t^(a-1) e^-t / Gamma(a) for unit scale.
TEST(Hrf, MatchesClosedFormDoubleGamma) {
  HrfSpec h;
  for (double t : {0.5, 1.0, 2.5, 5.0, 7.5, 12.0, 16.0, 25.0}) {
    const double peak = std::pow(t, 5) * std::exp(-t) / std::tgamma(6.0);
    const double under = std::pow(t, 15) * std::exp(-t) / std::tgamma(16.0);
    EXPECT_NEAR(hrf_value(h, t), peak - under / 6, 1e-12) << t;
  }
  EXPECT_EQ(hrf_value(h, 0), 0.0);
}

TEST(Hrf, ReachesNinetyPercentOfPeakByFiveSeconds) {
  HrfSpec h;
  const auto k = hrf_kernel(h, 0.01);
  const auto peak_it = std::max_element(k.begin(), k.end());
  const double peak_t = double(peak_it - k.begin()) * 0.01;
  EXPECT_NEAR(peak_t, 5.0, 0.5);
  double best_by_5 = 0;
  for (std::size_t i = 0; i * 0.01 <= 5.0 + 1e-12; ++i) best_by_5 = std::max(best_by_5, k[i]);
  EXPECT_GE(best_by_5, 0.9 * *peak_it);
  const double integral = std::accumulate(k.begin(), k.end(), 0.0) * 0.01;
  EXPECT_GT(integral, 0.0);
}

TEST(Bold, FourSecondDelayAtHalfHertzShiftsTwoSamples) {
  EXPECT_EQ(delay_samples(4.0, 0.5), 2u);
  EXPECT_EQ(delay_samples(0.0, 0.5), 0u);
  std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_EQ(shift_series(x, 2), (std::vector<double>{0, 0, 1, 2, 3}));

  // End to end: one driven network, no noise, simulated at the volume rate.
  auto p = small_world(3, 200);
  auto w = make_world(p, 11);
  Rng rng(1);
  auto nets = make_networks(1, 64, 0.25, rng);
  BoldParams b;
  b.noise = 0;
  b.sim_hz = 0.5;
  b.delay_s = 0;
  auto v0 = simulate_bold(w, 0, nets, b, 3);
  b.delay_s = 4;
  auto v4 = simulate_bold(w, 0, nets, b, 3);
  ASSERT_EQ(v0.size(), 100u);
  const std::size_t j = std::size_t(std::find_if(nets.maps[0].begin(), nets.maps[0].end(), [](double m) { return m > 0; }) -
                                    nets.maps[0].begin());
  EXPECT_EQ(v4[0][j], 0.0);
  EXPECT_EQ(v4[1][j], 0.0);
  std::vector<double> a, c;
  for (std::size_t i = 0; i + 2 < v0.size(); ++i) {
    a.push_back(v0[i][j]);
    c.push_back(v4[i + 2][j]);
  }
  EXPECT_GT(correlation(a, c), 1 - 1e-12);
}

TEST(Bold, ConstantDriveGivesVolumesProportionalToMap) {
  auto w = make_world(small_world(1, 120), 4);
  Rng rng(2);
  auto nets = make_networks(1, 128, 0.25, rng);
  BoldParams b;
  b.noise = 0;
  auto vol = simulate_bold(w, 0, nets, b, 9);
  // After the 32 s kernel the response is flat.
  std::size_t j0 = 0;
  while (nets.maps[0][j0] == 0) ++j0;
  for (std::size_t i = 20; i < vol.size(); ++i) {
    const double scale = vol[i][j0] / nets.maps[0][j0];
    EXPECT_GT(scale, 0.0);
    for (std::size_t j = 0; j < 128; ++j) EXPECT_NEAR(vol[i][j], scale * nets.maps[0][j], 1e-9 * std::abs(scale) + 1e-12);
  }
}

TEST(Bold, ZscoredColumns) {
  Rng rng(3);
  std::vector<std::vector<double>> m(300, std::vector<double>(40));
  for (auto& r : m)
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = 5 + double(j + 1) * rng.normal(0, 2);
  for (auto& r : m) r[7] = 3.25;  // constant column
  zscore_columns(m);
  for (std::size_t j = 0; j < 40; ++j) {
    double mean = 0, sq = 0;
    for (const auto& r : m) mean += r[j];
    mean /= 300;
    for (const auto& r : m) sq += (r[j] - mean) * (r[j] - mean);
    EXPECT_LT(std::abs(mean), 1e-9);
    if (j == 7)
      EXPECT_EQ(sq, 0.0);
    else
      EXPECT_NEAR(std::sqrt(sq / 300), 1.0, 1e-6);
  }
}

TEST(Bold, GeneratedSeriesIsZscoredPerVoxel) {
  auto w = make_world(small_world(3, 240), 6);
  Rng rng(4);
  auto nets = make_networks(8, 256, 0.125, rng);
  auto s = gen_fmri(w, 0, nets, BoldParams{}, 10);
  EXPECT_EQ(s.size(), 120u);
  EXPECT_EQ(s.rate_hz, 0.5);
  for (std::size_t j = 0; j < s.voxels; ++j) {
    double mean = 0, sq = 0;
    for (std::size_t i = 0; i < s.size(); ++i) mean += s.data[i * s.voxels + j];
    mean /= double(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) sq += std::pow(s.data[i * s.voxels + j] - mean, 2);
    EXPECT_LT(std::abs(mean), 1e-5);  // stored as float32
    EXPECT_NEAR(std::sqrt(sq / double(s.size())), 1.0, 1e-5);
  }
}

TEST(Bold, RankOneRecoversSingleNetwork) {
  auto w = make_world(small_world(3, 400), 12);
  Rng rng(5);
  auto nets = make_networks(1, 256, 0.125, rng);
  BoldParams b;
  b.noise = 0;
  auto vol = simulate_bold(w, 1, nets, b, 13);
  Eigen::MatrixXd m(vol.size(), 256);
  for (std::size_t i = 0; i < vol.size(); ++i)
    for (std::size_t j = 0; j < 256; ++j) m(long(i), long(j)) = vol[i][j];
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinV);
  std::vector<double> v(256);
  for (std::size_t j = 0; j < 256; ++j) v[j] = svd.matrixV()(long(j), 0);
  EXPECT_GT(std::abs(correlation(v, nets.maps[0])), 0.99);
}

TEST(Bold, NegativeDelayThrows) {
  auto w = make_world(small_world(3, 20), 1);
  Rng rng(1);
  auto nets = make_networks(2, 32, 0.25, rng);
  BoldParams b;
  b.delay_s = -1;
  EXPECT_THROW(simulate_bold(w, 0, nets, b, 1), std::invalid_argument);
}

TEST(PlantedNetworks, DisjointIndependentSparseMaps) {
  Rng rng(6);
  auto nets = make_networks(8, 256, 0.125, rng);
  ASSERT_EQ(nets.maps.size(), 8u);
  Eigen::MatrixXd m(8, 256);
  std::vector<int> owners(256, 0);
  for (std::size_t g = 0; g < 8; ++g) {
    std::size_t nz = 0;
    for (std::size_t j = 0; j < 256; ++j) {
      const double x = nets.maps[g][j];
      m(long(g), long(j)) = x;
      if (x != 0) {
        ++nz;
        ++owners[j];
        EXPECT_GE(x, 0.5);
        EXPECT_LE(x, 1.5);
      }
    }
    EXPECT_EQ(nz, 32u);
  }
  for (int o : owners) EXPECT_LE(o, 1);
  EXPECT_EQ(Eigen::FullPivLU<Eigen::MatrixXd>(m).rank(), 8);
  EXPECT_THROW(make_networks(9, 256, 0.125, rng), std::invalid_argument);
}

TEST(BrainMask, CellsAreDistinctAndRoundTrip) {
  auto m = make_brain_mask(256);
  ASSERT_EQ(m.cells.size(), 256u);
  auto sorted = m.cells;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
  auto back = parse_brain_mask(brain_mask_text(m), "mem");
  EXPECT_EQ(back.dims, m.dims);
  EXPECT_EQ(back.cells, m.cells);
}

class GeneratedDataset : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = new RunConfig;
    cfg_->gen_duration_s = 60;
    dir_ = new fs::path(temp_dir("a"));
    manifest_ = new Manifest(generate_dataset(*cfg_, 21, dir_->string()));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
    delete cfg_;
    delete manifest_;
  }
  static RunConfig* cfg_;
  static fs::path* dir_;
  static Manifest* manifest_;
};
RunConfig* GeneratedDataset::cfg_ = nullptr;
fs::path* GeneratedDataset::dir_ = nullptr;
Manifest* GeneratedDataset::manifest_ = nullptr;

TEST_F(GeneratedDataset, SixtySecondsGiveFrameAndVolumeCounts) {
  EXPECT_EQ(manifest_->frame_count, 1500u);
  EXPECT_EQ(manifest_->volumes, 30u);
  auto ds = Dataset::open(dir_->string());
  EXPECT_NO_THROW(ds.validate());
  EXPECT_EQ(ds.manifest.to_text(), manifest_->to_text());
  std::size_t frames = 0;
  for (const auto& e : fs::directory_iterator(*dir_ / "frames")) frames += e.is_regular_file();
  EXPECT_EQ(frames, 1500u);
}

TEST_F(GeneratedDataset, ModalitiesCoverTheSameTimeline) {
  auto ds = Dataset::open(dir_->string());
  const double duration = double(manifest_->frame_count) / manifest_->fps;
  for (std::size_t s = 0; s < manifest_->subjects.size(); ++s) {
    auto g = ds.gaze(s);
    ASSERT_EQ(g.size(), std::size_t(duration * 1000));
    EXPECT_EQ(g.front().t_ms, 0);
    EXPECT_EQ(g.back().t_ms, std::int64_t(duration * 1000) - 1);
    auto f = ds.fmri(s);
    EXPECT_EQ(f.size(), manifest_->volumes);
    EXPECT_LE(f.time(f.size() - 1), duration);
  }
  auto gt = GroundTruth::load((*dir_ / manifest_->ground_truth).string());
  EXPECT_EQ(gt.seed, 21u);
  EXPECT_EQ(gt.gen.gen_delay_s, cfg_->gen_delay_s);
  EXPECT_EQ(gt.maps.size(), 8u);
  EXPECT_EQ(gt.schedules.size(), 2u);
  EXPECT_EQ(gt.to_text(), bin::slurp((*dir_ / manifest_->ground_truth).string()));
  auto w = gt.world();
  for (std::size_t i = 0; i < manifest_->frame_count; i += 97)
    EXPECT_TRUE(render_frame(w, double(i) / manifest_->fps).image == ds.frame(i));
}

TEST_F(GeneratedDataset, SameSeedIsByteIdentical) {
  const auto other = temp_dir("b");
  generate_dataset(*cfg_, 21, other.string());
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(*dir_)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), *dir_);
    ASSERT_TRUE(fs::exists(other / rel)) << rel;
    ASSERT_EQ(bin::slurp(e.path().string()), bin::slurp((other / rel).string())) << rel;
    ++files;
  }
  std::size_t other_files = 0;
  for (const auto& e : fs::recursive_directory_iterator(other)) other_files += e.is_regular_file();
  EXPECT_EQ(files, other_files);
  fs::remove_all(other);
}

TEST_F(GeneratedDataset, DeletedFrameFailsValidation) {
  const auto copy = temp_dir("c");
  fs::copy(*dir_, copy, fs::copy_options::recursive);
  auto ds = Dataset::open(copy.string());
  ASSERT_NO_THROW(ds.validate());
  fs::remove(copy / manifest_->frame_name(733));
  EXPECT_THROW(ds.validate(), ValidationError);
  fs::remove_all(copy);
}

TEST(Generate, UnwritablePathThrows) {
  RunConfig c;
  c.gen_duration_s = 1;
  const auto file = temp_dir("file");
  bin::dump(file.string(), "x");
  EXPECT_THROW(generate_dataset(c, 1, (file / "sub").string()), IoError);
  fs::remove(file);
}
