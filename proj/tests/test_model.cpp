#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "avan/gradcheck.hpp"
#include "avan/relational.hpp"

using namespace avan;
using TD = Tensor<double>;

namespace {

TD random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  TD t(std::move(s));
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

ModelSpec tiny_spec(std::size_t crop = 32) {
  ModelSpec s;
  s.crop = crop;
  s.dim = 4;
  s.voxels = 6;
  s.widths = {2, 3, 3, 4, 4};
  s.rel_hidden = {5, 3};
  return s;
}

/// Random weights everywhere, including the zero-initialized relation output.
template <typename T>
void randomize(Model<T>& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  m.visit([&](Param<T>& p) {
    for (auto& v : p.value.vec()) v = T(u(rng));
  });
}

}  // namespace

// ---- attention --------------------------------------------------------------

TEST(MaskNet, GridIsOneThirtySecondOfInput) {
  Rng rng(1);
  MaskNet<double> net({2, 2, 2, 2, 2}, rng);
  std::mt19937_64 r(2);
  for (auto [h, w] : {std::pair{64, 64}, std::pair{224, 224}, std::pair{32, 96}}) {
    Tape<double> t(ForwardMode{false});
    auto a = net(t, t.constant(random_tensor({2, 3, std::size_t(h), std::size_t(w)}, r, 0, 1)));
    EXPECT_EQ(a.shape(), (Shape{2, 1, std::size_t(h / 32), std::size_t(w / 32)}));
    for (double v : a.value().vec()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
  Tape<double> t(ForwardMode{false});
  EXPECT_THROW(net(t, t.constant(TD(Shape{1, 3, 48, 64}))), ShapeError);
}

TEST(MaskNet, ZeroHeadGivesHalfEverywhere) {
  Rng rng(1);
  MaskNet<double> net({2, 2, 2, 2, 2}, rng);
  EXPECT_EQ(net.head.b->value[0], 0.0);
  net.head.w.value.fill(0);
  Tape<double> t(ForwardMode{false});
  auto a = net(t, t.constant(TD(Shape{1, 3, 64, 64})));
  for (double v : a.value().vec()) EXPECT_EQ(v, 0.5);
}

TEST(MaskNet, ComplementIsExact) {
  Tape<double> t;
  std::mt19937_64 r(3);
  auto a = t.constant(random_tensor({3, 1, 2, 2}, r, 0, 1));
  auto c = complement(a);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(c.value()[i], 1.0 - a.value()[i]);
}

TEST(UpsampleMask, ConstantAndBilinearColumns) {
  Tape<double> t;
  TD g(Shape{1, 1, 2, 2});
  g.fill(0.7);
  for (double v : upsample_mask(t.constant(g), 5, 7).value().vec()) EXPECT_NEAR(v, 0.7, 1e-15);
  TD cols(Shape{1, 1, 2, 2}, {0, 1, 0, 1});
  auto up = upsample_mask(t.constant(cols), 4, 4).value();
  // Half-pixel centers: source x = (x + 0.5) / 2 - 0.5, clamped to [0, 1].
  const double expect[4] = {0, 0.25, 0.75, 1};
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_DOUBLE_EQ(up[y * 4 + x], expect[x]);
}

TEST(UpsampleMask, CommutesWithComplement) {
  Tape<double> t;
  std::mt19937_64 r(4);
  auto a = t.constant(random_tensor({2, 1, 3, 2}, r, 0, 1));
  auto u1 = upsample_mask(complement(a), 96, 64).value();
  auto u2 = upsample_mask(a, 96, 64).value();
  for (std::size_t i = 0; i < u1.size(); ++i) EXPECT_NEAR(u1[i], 1 - u2[i], 1e-15);
}

TEST(Segment, IdentityHalfAndComplementarity) {
  std::mt19937_64 r(5);
  TD img = random_tensor({2, 3, 64, 64}, r, 0, 1);
  Tape<double> t;
  auto x = t.constant(img);
  TD ones(Shape{2, 1, 2, 2});
  ones.fill(1);
  auto s1 = segment(x, t.constant(ones));
  for (std::size_t i = 0; i < img.size(); ++i) {
    EXPECT_EQ(s1.attended.value()[i], img[i]);
    EXPECT_EQ(s1.neglected.value()[i], 0.0);
  }
  TD half(Shape{2, 1, 2, 2});
  half.fill(0.5);
  auto s2 = segment(x, t.constant(half));
  for (std::size_t i = 0; i < img.size(); ++i) {
    EXPECT_NEAR(s2.attended.value()[i], img[i] / 2, 1e-15);
    EXPECT_NEAR(s2.neglected.value()[i], img[i] / 2, 1e-15);
  }
  auto s3 = segment(x, t.constant(random_tensor({2, 1, 2, 2}, r, 0, 1)));
  for (std::size_t i = 0; i < img.size(); ++i)
    EXPECT_NEAR(s3.attended.value()[i] + s3.neglected.value()[i], img[i], 1e-12);
  EXPECT_THROW(segment(x, t.constant(TD(Shape{2, 1, 3, 3}))), ShapeError);
}

TEST(Segment, AttendedOnlyLossReachesMaskParameters) {
  Rng rng(6);
  MaskNet<double> net({2, 2, 2, 2, 2}, rng);
  std::mt19937_64 r(7);
  TD img = random_tensor({2, 3, 64, 64}, r, 0, 1);
  std::vector<Param<double>*> ps;
  net.visit([&](Param<double>& p) { ps.push_back(&p); });
  auto build = [&](Tape<double>& t) {
    auto x = t.constant(img);
    return sum(segment(x, net(t, x)).attended);
  };
  for (auto* p : ps) p->zero_grad();
  Tape<double> t;
  t.backward(build(t));
  double g = 0;
  for (auto* p : ps)
    for (double v : p->grad.vec()) g += std::abs(v);
  EXPECT_GT(g, 0.0);
  auto res = grad_check<double>(build, {&net.head.w, &*net.head.b});
  EXPECT_LT(res.max_rel_error, 1e-5) << res.worst_param;
}

// ---- encoders ---------------------------------------------------------------

TEST(ImageEncoder, CodesBoundedAndDeterministic) {
  Rng rng(8);
  ImageEncoder<double> enc({2, 3, 3, 4, 4}, 16, rng);
  std::mt19937_64 r(9);
  TD imgs = random_tensor({3, 3, 64, 64}, r, 0, 1);
  for (std::size_t i = 0; i < 3 * 64 * 64; ++i) imgs[2 * 3 * 64 * 64 + i] = imgs[i];
  Tape<double> t(ForwardMode{false});
  auto codes = enc(t, t.constant(imgs)).value();
  ASSERT_EQ(codes.shape(), (Shape{3, 16}));
  for (double v : codes.vec()) EXPECT_LT(std::abs(v), 1.0);
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(codes[j], codes[2 * 16 + j]);
  auto grid = enc.grid(t, t.constant(imgs)).value();
  EXPECT_EQ(grid.shape(), (Shape{3, 4, 2, 2}));
  TD blank(Shape{1, 3, 32, 32});
  for (double v : enc(t, t.constant(blank)).value().vec()) EXPECT_LT(std::abs(v), 1.0);
}

TEST(FmriEncoder, ExactlyLinear) {
  Rng rng(10);
  FmriEncoder<double> enc(7, 3, rng);
  std::mt19937_64 r(11);
  TD a = random_tensor({1, 7}, r), b = random_tensor({1, 7}, r);
  TD ab(Shape{1, 7}), a2(Shape{1, 7});
  for (std::size_t i = 0; i < 7; ++i) {
    ab[i] = a[i] + b[i];
    a2[i] = 2 * a[i];
  }
  Tape<double> t;
  auto ea = enc(t, t.constant(a)).value(), eb = enc(t, t.constant(b)).value();
  auto eab = enc(t, t.constant(ab)).value(), ea2 = enc(t, t.constant(a2)).value();
  for (std::size_t d = 0; d < 3; ++d) {
    EXPECT_NEAR(eab[d], ea[d] + eb[d], 1e-14);
    EXPECT_EQ(ea2[d], 2 * ea[d]);
    double manual = 0;
    for (std::size_t v = 0; v < 7; ++v) manual += enc.w.value[d * 7 + v] * a[v];
    EXPECT_NEAR(ea[d], manual, 1e-14);
  }
  for (double v : enc(t, t.constant(TD(Shape{1, 7}))).value().vec()) EXPECT_EQ(v, 0.0);
  TD e1(Shape{1, 7});
  e1[0] = 1;
  auto col = enc(t, t.constant(e1)).value();
  for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(col[d], enc.w.value[d * 7]);
  EXPECT_THROW(enc(t, t.constant(TD(Shape{1, 6}))), ShapeError);
}

TEST(L1Penalty, ValueAndSubgradient) {
  Tape<double> t;
  Param<double> w("w", TD(Shape{1, 2}, {1, -2}));
  EXPECT_NEAR(l1_penalty(t.param(w), 5e-6).value().item(), 1.5e-5, 1e-20);
  Param<double> z("z", TD(Shape{2, 2}));
  EXPECT_EQ(l1_penalty(t.param(z), 5e-6).value().item(), 0.0);
  EXPECT_THROW(l1_penalty(t.param(w), -1.0), std::invalid_argument);

  std::mt19937_64 r(12);
  Param<double> p("p", random_tensor({3, 4}, r));
  for (auto& v : p.value.vec())
    if (std::abs(v) < 0.05) v = 0.3;
  auto res = grad_check<double>([&](Tape<double>& tp) { return l1_penalty(tp.param(p), 0.7); }, {&p});
  EXPECT_LT(res.max_rel_error, 1e-8);
  for (std::size_t i = 0; i < p.value.size(); ++i) EXPECT_EQ(p.grad[i], 0.7 * (p.value[i] > 0 ? 1 : -1));
  Param<double> zero("zero", TD(Shape{1, 1}));
  zero.zero_grad();
  Tape<double> t2;
  t2.backward(l1_penalty(t2.param(zero), 1.0));
  EXPECT_EQ(zero.grad[0], 0.0);
}

TEST(Autoencoder, RepeatedVectorReconstructs) {
  TD data(Shape{6, 5});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 5; ++j) data[i * 5 + j] = double(j) - 1.5;
  Rng rng(13);
  PretrainLog log;
  auto ae = pretrain_autoencoder<double>(data, 2, 1500, 0.0, AdamConfig{1e-2}, rng, &log);
  EXPECT_LT(log.mse.back(), 1e-6);
  EXPECT_LE(log.mse[10], log.mse[1]);
  for (int e = 1; e <= 3; ++e) EXPECT_LT(log.mse[e], log.mse[e - 1]);
  EXPECT_EQ(ae.we.value.shape(), (Shape{2, 5}));
  EXPECT_EQ(ae.wd.value.shape(), (Shape{5, 2}));
}

TEST(Autoencoder, NeedsTwoSamples) {
  Rng rng(1);
  EXPECT_THROW(pretrain_autoencoder<double>(TD(Shape{1, 4}), 2, 1, 0.0, {}, rng), std::invalid_argument);
  EXPECT_THROW(pretrain_autoencoder<double>(TD(Shape{0, 4}), 2, 1, 0.0, {}, rng), std::invalid_argument);
}

TEST(Autoencoder, StrongerL1GivesMoreNearZeroWeights) {
  std::mt19937_64 r(14);
  TD data = random_tensor({40, 30}, r);
  auto count_small = [&](double l1) {
    Rng rng(15);
    auto ae = pretrain_autoencoder<double>(data, 4, 400, l1, AdamConfig{1e-2}, rng);
    std::size_t n = 0;
    for (double v : ae.we.value.vec()) n += std::abs(v) < 1e-3;
    return n;
  };
  EXPECT_GT(count_small(5e-6 * 1000), count_small(5e-6));
}

TEST(InitFromAutoencoder, CopiesAndOwns) {
  Rng rng(16);
  Autoencoder<double> ae(256, 64, rng);
  auto enc = init_from_autoencoder(ae, 64, 256);
  EXPECT_EQ(enc.w.value.shape(), (Shape{64, 256}));
  EXPECT_EQ(enc.w.value.vec(), ae.we.value.vec());
  std::mt19937_64 r(17);
  TD v = random_tensor({2, 256}, r);
  Tape<double> t;
  auto a = enc(t, t.constant(v)).value();
  auto b = dense(t.constant(v), t.param(ae.we)).value();
  EXPECT_EQ(a.vec(), b.vec());
  const double before = ae.we.value[0];
  enc.w.value[0] += 1;
  EXPECT_EQ(ae.we.value[0], before);
  EXPECT_THROW(init_from_autoencoder(ae, 32, 256), ShapeError);
}

// ---- relational ---------------------------------------------------------------

TEST(RelationNet, ZeroOutputLayerAndRange) {
  Rng rng(18);
  RelationNet<double> rel(8, {6, 4}, rng);
  std::mt19937_64 r(19);
  Tape<double> t(ForwardMode{false});
  for (double v : rel(t, t.constant(random_tensor({10, 8}, r, -5, 5))).value().vec()) EXPECT_EQ(v, 0.0);
  rel.out.w.value.fill(0.3);
  auto out = rel(t, t.constant(random_tensor({1000, 8}, r, -5, 5))).value();
  for (double v : out.vec()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(rel(t, t.constant(TD(Shape{2, 7}))), ShapeError);
  RelationNet<double> big(2048, {256, 64}, rng);
  EXPECT_EQ(big.in_dim(), 2048u);
}

// Independent scalar forms of the two losses.
TEST(Losses, RelationalOracleAndTableExample) {
  std::mt19937_64 r(20);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(r), b = u(r), c = u(r), d = u(r);
    const double oracle = std::pow(a - 1, 2) + std::pow(b + 1, 2) + c * c + d * d;
    EXPECT_NEAR(relational_loss(a, b, c, d), oracle, 1e-12);
  }
  EXPECT_EQ(relational_loss(1, -1, 0, 0), 0.0);
  EXPECT_EQ(relational_loss(0, 0, 0, 0), 2.0);
  EXPECT_NEAR(relational_loss(0.91, -0.94, 0.023, 0.023), 0.012758, 1e-6);
}

TEST(Losses, TripletHinge) {
  EXPECT_NEAR(triplet_loss(1.5, 1.5, 0.1), 0.1, 1e-15);
  EXPECT_EQ(triplet_loss(1.0, 2.0, 0.1), 0.0);
  EXPECT_NEAR(triplet_loss(2.0, 1.0, 0.1), 1.1, 1e-15);
  EXPECT_THROW(triplet_loss(1, 1, -0.1), std::invalid_argument);
  std::mt19937_64 r(21);
  std::uniform_real_distribution<double> u(0, 3);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(r), n = u(r);
    const double l = triplet_loss(a, n, 0.1);
    EXPECT_GE(l, 0.0);
    if (a - n + 0.1 <= 0) EXPECT_EQ(l, 0.0);
    else EXPECT_GT(l, 0.0);
    EXPECT_GE(triplet_loss(a, n, 0.2), l);
  }
}

class ModelFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(22);
    model = Model<double>(tiny_spec(32), rng);
    std::mt19937_64 r(23);
    images = random_tensor({3, 3, 32, 32}, r, 0, 1);
    fmri = random_tensor({3, 6}, r, -2, 2);
  }
  Model<double> model;
  TD images, fmri;
};

TEST_F(ModelFixture, UntrainedRelationHeadGivesZeroMeans) {
  Tape<double> t(ForwardMode{false});
  auto f = forward(model, t, images, fmri, ObjectiveOptions{});
  auto m = metrics_of(f);
  EXPECT_EQ(m.r_af, 0.0);
  EXPECT_EQ(m.r_nf, 0.0);
  EXPECT_EQ(m.r_anf, 0.0);
  EXPECT_EQ(m.r_bf, 0.0);
  EXPECT_DOUBLE_EQ(m.l_rel, 2.0);
}

// Total loss equals the scalar oracles applied per sample and averaged.
TEST_F(ModelFixture, ObjectiveMatchesScalarOracle) {
  randomize(model, 24);
  for (bool encode : {false, true}) {
    ObjectiveOptions opt{0.1, 0.01, encode};
    Tape<double> t(ForwardMode{true});
    auto f = forward(model, t, images, fmri, opt);
    double rel = 0, trip = 0;
    for (std::size_t b = 0; b < 3; ++b) {
      rel += relational_loss(f.r_af.value()[b], f.r_nf.value()[b], f.r_anf.value()[b], f.r_bf.value()[b]);
      double da = 0, dn = 0;
      for (std::size_t v = 0; v < 6; ++v) {
        da += std::pow(fmri[b * 6 + v] - f.rec_a.value()[b * 6 + v], 2);
        dn += std::pow(fmri[b * 6 + v] - f.rec_n.value()[b * 6 + v], 2);
      }
      EXPECT_NEAR(f.d_a.value()[b], std::sqrt(da), 1e-12);
      trip += triplet_loss(std::sqrt(da), std::sqrt(dn), 0.1);
    }
    double l1 = 0;
    for (double w : model.fmri.w.value.vec()) l1 += std::abs(w);
    EXPECT_NEAR(f.l_rel.value().item(), rel / 3, 1e-12);
    EXPECT_NEAR(f.l_trip.value().item(), trip / 3, 1e-12);
    EXPECT_NEAR(f.objective.value().item(), rel / 3 + trip / 3 + 0.01 * l1, 1e-12);
    EXPECT_NEAR(metrics_of(f).loss(), rel / 3 + trip / 3, 1e-12);
  }
}

TEST_F(ModelFixture, SumModeUsesCodeSum) {
  randomize(model, 25);
  Tape<double> t(ForwardMode{true});
  auto f = forward(model, t, images, fmri, ObjectiveOptions{});
  for (std::size_t i = 0; i < f.v_o.value().size(); ++i)
    EXPECT_EQ(f.v_o.value()[i], f.v_a.value()[i] + f.v_n.value()[i]);
}

TEST_F(ModelFixture, FullModelGradientCheck) {
  randomize(model, 26);
  auto params = model.params();
  ObjectiveOptions opt{0.1, 0.01, false};
  auto res = grad_check<double>(
      [&](Tape<double>& t) { return forward(model, t, images, fmri, opt).objective; }, params, {1e-5, 1e-4, true});
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst_param << "[" << res.worst_index << "] analytic " << res.analytic
                                     << " numeric " << res.numeric;
}

TEST_F(ModelFixture, MaskParametersReceiveGradient) {
  randomize(model, 27);
  for (auto* p : model.params()) p->zero_grad();
  Tape<double> t(ForwardMode{true});
  auto f = forward(model, t, images, fmri, ObjectiveOptions{});
  t.backward(f.objective);
  double g = 0;
  model.mask.visit([&](Param<double>& p) {
    for (double v : p.grad.vec()) g += std::abs(v);
  });
  EXPECT_GT(g, 0.0);
}

TEST_F(ModelFixture, L1TermVanishesWithZeroWeights) {
  model.fmri.w.value.fill(0);
  Tape<double> t(ForwardMode{true});
  auto f = forward(model, t, images, fmri, ObjectiveOptions{0.1, 1.0, false});
  EXPECT_EQ(f.l1.value().item(), 0.0);
}

TEST_F(ModelFixture, NonFiniteInputNamesTerm) {
  fmri[0] = std::numeric_limits<double>::quiet_NaN();
  Tape<double> t(ForwardMode{true});
  try {
    forward(model, t, images, fmri, ObjectiveOptions{});
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_FALSE(e.term().empty());
  }
}

// ---- training loop and checkpoints ------------------------------------------

namespace {

std::vector<PairedSample> toy_samples(std::size_t n, std::size_t crop, std::size_t v, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PairedSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = out[i];
    s.image = Image8(crop, crop);
    const std::size_t k = i % 2;
    for (std::size_t y = 0; y < crop; ++y)
      for (std::size_t x = 0; x < crop; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          s.image.at(x, y, c) = std::uint8_t((k == 0) == (x < crop / 2) ? 200 : std::size_t(rng.below(60)));
    s.fmri.resize(v);
    for (std::size_t j = 0; j < v; ++j) s.fmri[j] = float((j % 2 == k ? 1.0 : -1.0) + rng.normal(0, 0.3));
    s.gaze_in_crop = Point{k == 0 ? crop / 4.0 : 3 * crop / 4.0, crop / 2.0};
    s.frame_index = i;
  }
  return out;
}

ModelSpec small_float_spec() {
  ModelSpec s;
  s.crop = 32;
  s.dim = 8;
  s.voxels = 10;
  s.widths = {4, 4, 8, 8, 8};
  s.rel_hidden = {16, 8};
  return s;
}

TrainState<float> fresh_state(float lr, std::uint64_t seed = 5) {
  TrainState<float> st;
  Rng init(seed);
  st.model = Model<float>(small_float_spec(), init);
  st.adam.config.lr = lr;
  st.rng = Rng(seed + 1);
  return st;
}

}  // namespace

TEST(Training, LrZeroLeavesParametersButReportsMetrics) {
  auto data = toy_samples(32, 32, 10, 1);
  auto st = fresh_state(0);
  std::vector<Tensor<float>> before;
  for (auto* p : st.model.params()) before.push_back(p->value);
  auto m = train_step(st, make_batch<float>(data, {0, 1, 2, 3}), ObjectiveOptions{});
  auto ps = st.model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(ps[i]->value.vec(), before[i].vec()) << ps[i]->name;
  EXPECT_GT(m.l_rel, 0.0);
  EXPECT_EQ(st.step, 1);
}

TEST(Training, SameSeedSameMetricStream) {
  auto data = toy_samples(64, 32, 10, 2);
  auto run = [&] {
    auto st = fresh_state(1e-3);
    std::vector<StepMetrics> out;
    train_steps<float>(st, data, 12, 8, ObjectiveOptions{0.1, 1e-3, false}, 1,
                       [&](const StepMetrics& m) { out.push_back(m); });
    return out;
  };
  auto a = run(), b = run();
  ASSERT_EQ(a.size(), 12u);
  EXPECT_TRUE(a == b);
}

TEST(Training, LossDecreasesOnToyData) {
  auto data = toy_samples(64, 32, 10, 3);
  auto st = fresh_state(1e-3);
  std::vector<double> losses;
  train_steps<float>(st, data, 200, 8, ObjectiveOptions{}, 1, [&](const StepMetrics& m) { losses.push_back(m.loss()); });
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += losses[std::size_t(i)];
    last += losses[losses.size() - 1 - std::size_t(i)];
  }
  EXPECT_LT(last, first);
  EXPECT_THROW(train_steps<float>(st, {}, 1, 8, ObjectiveOptions{}, 1), std::invalid_argument);
}

TEST(SplitStats, MatchesPerSampleInference) {
  auto data = toy_samples(10, 32, 10, 4);
  auto st = fresh_state(1e-3);
  train_steps<float>(st, data, 20, 4, ObjectiveOptions{}, 0);
  auto s = split_stats(st.model, data, ObjectiveOptions{}, 3);
  double af = 0, bf = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tape<float> t(ForwardMode{false});
    auto b = make_batch<float>(data, {i});
    auto f = forward(st.model, t, b.images, b.fmri, ObjectiveOptions{});
    af += f.r_af.value()[0];
    bf += f.r_bf.value()[0];
  }
  EXPECT_EQ(s.count, 10u);
  EXPECT_NEAR(s.r_af, af / 10, 1e-6);
  EXPECT_NEAR(s.r_bf, bf / 10, 1e-6);
}

TEST(Checkpoint, RoundTripIsByteIdenticalAndRestoresState) {
  auto data = toy_samples(16, 32, 10, 5);
  auto st = fresh_state(1e-3);
  train_steps<float>(st, data, 5, 4, ObjectiveOptions{}, 0);
  const std::string bytes = to_checkpoint(st, "lr = 0.001\n").serialize();
  auto c = Checkpoint::deserialize(bytes, "mem");
  auto back = from_checkpoint<float>(c, st.adam.config);
  EXPECT_EQ(to_checkpoint(back, "lr = 0.001\n").serialize(), bytes);
  EXPECT_EQ(back.step, st.step);
  auto s1 = split_stats(st.model, data, ObjectiveOptions{});
  auto s2 = split_stats(back.model, data, ObjectiveOptions{});
  EXPECT_EQ(s1.r_af, s2.r_af);
  EXPECT_EQ(s1.d_n, s2.d_n);
  // Continuing from the restored state reproduces the original continuation.
  std::vector<StepMetrics> a, b;
  train_steps<float>(st, data, 3, 4, ObjectiveOptions{}, 1, [&](const StepMetrics& m) { a.push_back(m); });
  train_steps<float>(back, data, 3, 4, ObjectiveOptions{}, 1, [&](const StepMetrics& m) { b.push_back(m); });
  EXPECT_TRUE(a == b);
}

TEST(Checkpoint, AutoencoderRoundTrip) {
  Rng rng(6);
  Autoencoder<float> ae(10, 8, rng);
  auto bytes = autoencoder_checkpoint(ae, "").serialize();
  auto back = autoencoder_from_checkpoint<float>(Checkpoint::deserialize(bytes, "mem"));
  EXPECT_EQ(back.we.value.vec(), ae.we.value.vec());
  EXPECT_EQ(back.wd.value.vec(), ae.wd.value.vec());
  EXPECT_EQ(autoencoder_checkpoint(back, "").serialize(), bytes);
  EXPECT_THROW(from_checkpoint<float>(Checkpoint::deserialize(bytes, "mem"), {}), IoError);
}

TEST(Checkpoint, CorruptBytesRejected) {
  auto st = fresh_state(1e-3);
  std::string bytes = to_checkpoint(st, "").serialize();
  EXPECT_THROW(Checkpoint::deserialize(bytes.substr(0, bytes.size() / 2), "mem"), IoError);
  bytes[0] = 'X';
  EXPECT_THROW(Checkpoint::deserialize(bytes, "mem"), IoError);
}
