#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "avan/cli.hpp"

namespace fs = std::filesystem;
using namespace avan;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "avan");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::size_t count_files(const fs::path& dir) {
  return std::size_t(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

const char* kSmallConfig = R"(# small end-to-end configuration
gen.duration_s = 60
gen.fps = 5
gen.width = 128
gen.height = 96
gen.voxels = 32
gen.networks = 4
gen.subjects = 2
crop = 32
widths = 2, 4, 4, 8, 8
feature_dim = 8
rel_hidden = 16, 8
batch = 4
steps = 10
log_every = 5
ae_epochs = 30
sweep_steps = 3
)";

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / ("avan_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    config = (root / "small.cfg").string();
    std::ofstream(config) << kSmallConfig;
    data = (root / "data").string();
    auto g = run_cli({"gen", "--config", config, "--seed", "3", "--out", data});
    ASSERT_EQ(g.code, 0) << g.err;
    auto p = run_cli({"pretrain", data, "--config", config, "--out", (root / "ae").string()});
    ASSERT_EQ(p.code, 0) << p.err;
    ae = (root / "ae" / "autoencoder.avck").string();
    auto t = run_cli({"train", data, "--ae", ae, "--config", config, "--seed", "1", "--out", (root / "model").string()});
    ASSERT_EQ(t.code, 0) << t.err;
    model = (root / "model" / "model.avck").string();
  }
  static void TearDownTestSuite() { fs::remove_all(root); }

  static fs::path root;
  static std::string config, data, ae, model;
};

fs::path CliTest::root;
std::string CliTest::config, CliTest::data, CliTest::ae, CliTest::model;

}  // namespace

TEST_F(CliTest, GeneratedDatasetValidates) {
  auto ds = Dataset::open(data);
  EXPECT_NO_THROW(ds.validate());
  EXPECT_EQ(ds.manifest.frame_count, 300u);
  EXPECT_EQ(ds.manifest.voxels, 32u);
  EXPECT_EQ(ds.manifest.subjects.size(), 2u);
}

TEST_F(CliTest, UsageErrorsExitWithTwo) {
  const std::string out = (root / "unused").string();
  auto missing = run_cli({"pretrain", (root / "nope").string(), "--out", out});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("not found"), std::string::npos);
  EXPECT_EQ(run_cli({"train", (root / "nope").string(), "--out", out}).code, 2);
  EXPECT_EQ(run_cli({"eval", model, data, "--metric", "accuracy", "--out", out}).code, 2);
  EXPECT_EQ(run_cli({"gen", "--set", "no_such_key=1", "--out", out}).code, 2);
  EXPECT_EQ(run_cli({"gen", "--set", "crop=33", "--out", out}).code, 2);
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"train", data}).code, 2);  // --out missing
  EXPECT_EQ(run_cli({"pretrain", data, "--config", config, "--set", "gen.voxels=16", "--out", out}).code, 2);
}

TEST_F(CliTest, PretrainLogDecreases) {
  auto log = lines(slurp(root / "ae" / "pretrain_log.csv"));
  ASSERT_EQ(log.size(), 31u);
  EXPECT_EQ(log[0], "epoch,mse,total");
  auto mse = [&](std::size_t e) { return std::stod(detail::split(log[e + 1], ',')[1]); };
  EXPECT_LT(mse(1), mse(0));
  EXPECT_LT(mse(2), mse(1));
  auto a = autoencoder_from_checkpoint<float>(Checkpoint::load(ae));
  EXPECT_EQ(a.dim(), 8u);
  EXPECT_EQ(a.voxels(), 32u);
}

TEST_F(CliTest, TrainWritesLogStatsAndCheckpoint) {
  auto log = lines(slurp(root / "model" / "train_log.csv"));
  EXPECT_EQ(log[0], kTrainLogHeader);
  // Steps 0, 5 and the final step 9.
  EXPECT_EQ(log[3].substr(0, 2), "9,");
  auto stats = lines(slurp(root / "model" / "stats.csv"));
  ASSERT_EQ(stats.size(), 4u);
  EXPECT_EQ(stats[0], "split,count,positive,negative,regularization,r_anf,r_bf");
  EXPECT_EQ(stats[1].substr(0, 7), "target,");
  EXPECT_EQ(stats[2].substr(0, 6), "train,");
  EXPECT_EQ(stats[3].substr(0, 5), "test,");
  EXPECT_NE(slurp(root / "model" / "train_log.csv").find(stats[3]), std::string::npos);
  auto st = from_checkpoint<float>(Checkpoint::load(model), {});
  EXPECT_EQ(st.step, 10);
  EXPECT_EQ(st.model.spec.crop, 32u);
}

TEST_F(CliTest, ZeroStepsKeepsAutoencoderWeights) {
  const auto out = root / "zero";
  auto r = run_cli({"train", data, "--ae", ae, "--config", config, "--set", "steps=0", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto st = from_checkpoint<float>(Checkpoint::load((out / "model.avck").string()), {});
  auto a = autoencoder_from_checkpoint<float>(Checkpoint::load(ae));
  EXPECT_EQ(st.model.fmri.w.value, a.we.value);
  EXPECT_EQ(st.step, 0);
  EXPECT_EQ(lines(slurp(out / "train_log.csv"))[1], "");
}

TEST_F(CliTest, IncompatibleAutoencoderNamesBothConfigs) {
  auto r = run_cli({"train", data, "--ae", ae, "--config", config, "--set", "feature_dim=6", "--out",
                    (root / "bad").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("D=8"), std::string::npos);
  EXPECT_NE(r.err.find("D=6"), std::string::npos);
}

TEST_F(CliTest, TrainingIsReproducible) {
  const auto out = root / "again";
  auto r = run_cli({"train", data, "--ae", ae, "--config", config, "--seed", "1", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(out / "model.avck"), slurp(model));
  EXPECT_EQ(slurp(out / "stats.csv"), slurp(root / "model" / "stats.csv"));
}

TEST_F(CliTest, CheckpointResaveIsByteIdentical) {
  const std::string bytes = slurp(model);
  EXPECT_EQ(Checkpoint::deserialize(bytes, model).serialize(), bytes);
  auto st = from_checkpoint<float>(Checkpoint::load(model), {});
  auto ck = Checkpoint::load(model);
  EXPECT_EQ(to_checkpoint(st, ck.get_meta("config")).serialize(), bytes);
}

TEST_F(CliTest, InferGroupWritesThreeFilesPerFrame) {
  const auto out = root / "infer_group";
  auto r = run_cli({"infer", model, data, "--subject", "1", "--frames", "0,5,10-11", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_files(out), 12u);
  auto im = read_ppm((out / "frame_000005_overlay.ppm").string());
  EXPECT_EQ(im.width, 128u);
  EXPECT_EQ(im.height, 96u);
}

TEST_F(CliTest, InferIndividualWritesMapCsv) {
  const auto out = root / "infer_indiv";
  auto r = run_cli({"infer", model, data, "--subject", "2", "--frames", "40", "--mode", "individual", "--out",
                    out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_files(out), 4u);
  auto rows = lines(slurp(out / "frame_000040_rmap.csv"));
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& row : rows) EXPECT_EQ(detail::split(row, ',').size(), 4u);
}

TEST_F(CliTest, InferRejectsUnknownIds) {
  const std::string out = (root / "infer_bad").string();
  auto s = run_cli({"infer", model, data, "--subject", "3", "--out", out});
  EXPECT_EQ(s.code, 2);
  EXPECT_NE(s.err.find("available 1-2"), std::string::npos);
  auto f = run_cli({"infer", model, data, "--frames", "300", "--out", out});
  EXPECT_EQ(f.code, 2);
  EXPECT_NE(f.err.find("available 0-299"), std::string::npos);
  EXPECT_EQ(run_cli({"infer", model, data, "--mode", "both", "--out", out}).code, 2);
}

TEST_F(CliTest, GazeMarkerDrawnInRed) {
  Image8 im(10, 10);
  Tensor<float> mask(Shape{10, 10}, 1.0f);
  auto o = cli::overlay(im, mask, Point{4.5, 6.2});
  EXPECT_EQ(o.at(4, 6, 0), 255);
  EXPECT_EQ(o.at(4, 6, 1), 0);
  EXPECT_EQ(o.at(0, 0, 0), 0);
  EXPECT_EQ(cli::parse_frame_list("0,5,10-12", 20), (std::vector<std::size_t>{0, 5, 10, 11, 12}));
  EXPECT_THROW(cli::parse_frame_list("3-x", 20), cli::UsageError);
}

TEST_F(CliTest, EvalReports) {
  const auto out = root / "eval";
  auto h = run_cli({"eval", model, data, "--metric", "hitrate", "--out", out.string()});
  ASSERT_EQ(h.code, 0) << h.err;
  auto hit = lines(slurp(out / "eval_hitrate.csv"));
  ASSERT_EQ(hit.size(), 5u);
  EXPECT_EQ(hit[0], "split,kind,hits,total,rate,chance");

  auto s = run_cli({"eval", model, data, "--metric", "stats", "--out", out.string()});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_EQ(slurp(out / "eval_stats.csv"), slurp(root / "model" / "stats.csv"));

  auto n = run_cli({"eval", model, data, "--metric", "networks", "--out", out.string()});
  ASSERT_EQ(n.code, 0) << n.err;
  auto nets = lines(slurp(out / "eval_networks.csv"));
  ASSERT_EQ(nets.size(), 9u);
  EXPECT_NE(nets[0].find("corr_t3"), std::string::npos);
  auto z = lines(slurp(out / "network_zmaps.csv"));
  ASSERT_EQ(z.size(), 8u);
  EXPECT_EQ(detail::split(z[0], ',').size(), 32u);
}

TEST_F(CliTest, SweepMarksArgmax) {
  const auto out = root / "sweep";
  auto r = run_cli({"sweep-delay", data, "--config", config, "--delays", "0,2,4,6", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = lines(slurp(out / "sweep.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], "delay_s,hit_rate,chance,test_r_af,train_count,test_count,best");
  double best_rate = -1;
  std::size_t best_row = 0, marked = 0, flagged = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    auto f = detail::split(rows[i], ',');
    const double rate = std::stod(f[1]);
    if (rate > best_rate) best_rate = rate, best_row = i;
    if (f.back() == "1") marked = i, ++flagged;
  }
  EXPECT_EQ(flagged, 1u);
  EXPECT_EQ(marked, best_row);

  auto one = run_cli({"sweep-delay", data, "--config", config, "--delays", "0", "--out", (root / "sweep1").string()});
  ASSERT_EQ(one.code, 0) << one.err;
  EXPECT_EQ(lines(slurp(root / "sweep1" / "sweep.csv")).size(), 2u);
}
