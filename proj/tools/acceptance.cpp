// Acceptance runner: checks criteria 1-10 and prints one PASS/FAIL line each.
//
//   avan_acceptance [--only 1,2,9] [--work DIR] [--steps N] [--sweep-steps N]
//
// Criteria 4, 5, 6 and 8 share one end-to-end run on the default desk
// configuration; criterion 7 trains one model per assumed delay.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "avan/gradcheck.hpp"
#include "avan/pipeline.hpp"
#include "avan/synthdata.hpp"

namespace fs = std::filesystem;
using namespace avan;

namespace {

using TD = Tensor<double>;
using VD = Var<double>;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

TD random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  TD t(std::move(s));
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

Param<double> random_param(const std::string& name, Shape s, std::mt19937_64& rng) {
  return Param<double>(name, random_tensor(std::move(s), rng));
}

/// Scalar readout sum(y * w) with a fixed random weight, so every output
/// element contributes a distinct gradient.
VD probe(VD y, const TD& w) { return sum(mul(y, y.tape->constant(w))); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---- 1: gradient integrity ------------------------------------------------------

Outcome gradient_integrity() {
  double worst = 0;
  std::string where = "none";
  auto note = [&](const std::string& name, const GradCheckResult& r) {
    if (r.max_rel_error > worst) worst = r.max_rel_error, where = name + ":" + r.worst_param;
  };
  const GradCheckOptions opt{1e-5, 1e-4, true};

  for (int draw = 0; draw < 3; ++draw) {
    std::mt19937_64 rng(500 + draw);
    std::uniform_int_distribution<std::size_t> dim(2, 5);
    const std::size_t n = dim(rng), c = dim(rng), h = 2 * dim(rng), w = 2 * dim(rng);
    auto a = random_param("a", {n, c, h, w}, rng);
    auto b = random_param("b", {n, c, h, w}, rng);
    auto m = random_param("m", {n, 1, h, w}, rng);
    auto k = random_param("k", {c + 1, c, 3, 3}, rng);
    auto kb = random_param("kb", {c + 1}, rng);
    auto wd = random_param("wd", {3, c}, rng);
    auto bd = random_param("bd", {3}, rng);
    BatchNorm<double> bn("bn", c);
    bn.gamma.value = random_tensor({c}, rng, 0.5, 1.5);
    bn.beta.value = random_tensor({c}, rng);
    bn.running_mean = random_tensor({c}, rng);
    bn.running_var = random_tensor({c}, rng, 0.5, 2);
    const TD target = random_tensor({n, c, h, w}, rng);
    const TD row_w = random_tensor({n}, rng);
    const TD up_w = random_tensor({n, c, 3 * h, 2 * w + 1}, rng);
    const TD pool_w = random_tensor({n, c, h / 2, w / 2}, rng);
    const TD conv_w1 = random_tensor({n, c + 1, h, w}, rng);
    const TD conv_w2 = random_tensor({n, c + 1, h / 2, w / 2}, rng);

    using G = std::function<VD(Tape<double>&)>;
    std::vector<std::tuple<std::string, G, bool>> graphs = {
        {"add", [&](Tape<double>& t) { return probe(add(t.param(a), t.param(b)), target); }, true},
        {"sub", [&](Tape<double>& t) { return probe(sub(t.param(a), t.param(b)), target); }, true},
        {"mul", [&](Tape<double>& t) { return probe(mul(t.param(a), t.param(b)), target); }, true},
        {"mul_channels", [&](Tape<double>& t) { return probe(mul_channels(t.param(a), t.param(m)), target); }, true},
        {"affine", [&](Tape<double>& t) { return probe(affine(t.param(a), -0.7, 0.2), target); }, true},
        {"scale", [&](Tape<double>& t) { return probe(scale(t.param(a), 1.7), target); }, true},
        {"relu", [&](Tape<double>& t) { return probe(relu(t.param(a)), target); }, true},
        {"hinge", [&](Tape<double>& t) { return probe(hinge(t.param(a)), target); }, true},
        {"sigmoid", [&](Tape<double>& t) { return probe(sigmoid(t.param(a)), target); }, true},
        {"tanh", [&](Tape<double>& t) { return probe(tanh(t.param(a)), target); }, true},
        {"conv_s1", [&](Tape<double>& t) { return probe(conv2d(t.param(a), t.param(k), t.param(kb), 1, 1), conv_w1); },
         true},
        {"conv_s2", [&](Tape<double>& t) { return probe(conv2d(t.param(a), t.param(k), t.param(kb), 2, 1), conv_w2); },
         true},
        {"batch_norm_train", [&](Tape<double>& t) { return probe(batch_norm(t.param(a), bn), target); }, true},
        {"batch_norm_eval", [&](Tape<double>& t) { return probe(batch_norm(t.param(a), bn), target); }, false},
        {"avg_pool2", [&](Tape<double>& t) { return probe(avg_pool2(t.param(a)), pool_w); }, true},
        {"gap_dense",
         [&](Tape<double>& t) {
           auto y = dense(global_avg_pool(t.param(a)), t.param(wd), t.param(bd));
           return sum(mul(y, y));
         },
         true},
        {"upsample", [&](Tape<double>& t) { return probe(upsample_bilinear(t.param(a), 3 * h, 2 * w + 1), up_w); }, true},
        {"concat_slice",
         [&](Tape<double>& t) {
           auto y = slice(concat<double>({t.param(a), t.param(b)}, 1), 1, 1, c + 1);
           return sum(mul(y, y));
         },
         true},
        {"sse", [&](Tape<double>& t) { return sse(t.param(a), target); }, true},
        {"mean", [&](Tape<double>& t) { return mean(mul(t.param(a), t.param(b))); }, true},
        {"l1", [&](Tape<double>& t) { return l1_norm(t.param(a)); }, true},
        {"euclidean",
         [&](Tape<double>& t) {
           return probe(euclidean_rows(reshape(t.param(a), {n, c * h * w}), reshape(t.param(b), {n, c * h * w})), row_w);
         },
         true},
    };
    std::vector<Param<double>*> ps{&a, &b, &m, &k, &kb, &wd, &bd, &bn.gamma, &bn.beta};
    for (auto& [name, graph, training] : graphs) {
      GradCheckOptions o = opt;
      o.training = training;
      note(name, grad_check<double>(graph, ps, o));
    }
  }

  // The full composed model in 64-bit, training mode.
  ModelSpec spec;
  spec.crop = 32;
  spec.dim = 4;
  spec.voxels = 6;
  spec.widths = {2, 3, 3, 4, 4};
  spec.rel_hidden = {5, 3};
  Rng init(3);
  Model<double> model(spec, init);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  model.visit([&](Param<double>& p) {
    for (auto& v : p.value.vec()) v = u(rng);
  });
  const TD images = random_tensor({3, 3, 32, 32}, rng, 0, 1);
  const TD fmri = random_tensor({3, 6}, rng, -2, 2);
  for (bool encode : {false, true}) {
    const ObjectiveOptions o{0.1, 0.01, encode};
    note(encode ? "model(encode)" : "model(sum)",
         grad_check<double>([&](Tape<double>& t) { return forward(model, t, images, fmri, o).objective; },
                            model.params(), opt));
  }
  return {worst < 1e-4, "max relative error " + fmt("%.2e", worst) + " at " + where};
}

// ---- 2: loss oracles ------------------------------------------------------------

Outcome loss_oracles() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> r(-1, 1), d(0, 4), mg(0, 0.5), l1c(0, 1e-3);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t B = 1 + std::size_t(i % 7);
    TD af({B, 1}), nf({B, 1}), anf({B, 1}), bf({B, 1}), da({B}), dn({B});
    for (std::size_t b = 0; b < B; ++b) {
      af[b] = r(rng), nf[b] = r(rng), anf[b] = r(rng), bf[b] = r(rng);
      da[b] = d(rng), dn[b] = d(rng);
    }
    Param<double> w("w", random_tensor({3, 5}, rng));
    const double margin = mg(rng), coeff = l1c(rng);
    Tape<double> t;
    VD rel = relational_term(t.constant(af), t.constant(nf), t.constant(anf), t.constant(bf));
    VD trip = triplet_term(t.constant(da), t.constant(dn), margin);
    VD total = add(add(rel, trip), l1_penalty(t.param(w), coeff));
    // Independent scalar forms.
    double o_rel = 0, o_trip = 0, o_l1 = 0;
    for (std::size_t b = 0; b < B; ++b) {
      o_rel += (af[b] - 1) * (af[b] - 1) + (nf[b] + 1) * (nf[b] + 1) + anf[b] * anf[b] + bf[b] * bf[b];
      const double gap = da[b] - dn[b] + margin;
      o_trip += gap > 0 ? gap : 0;
    }
    o_rel /= double(B);
    o_trip /= double(B);
    for (double x : w.value.vec()) o_l1 += coeff * (x < 0 ? -x : x);
    worst = std::max({worst, std::abs(rel.value().item() - o_rel), std::abs(trip.value().item() - o_trip),
                      std::abs(total.value().item() - (o_rel + o_trip + o_l1))});
  }
  Tape<double> t;
  auto one = [&](double v) { return t.constant(TD(Shape{1, 1}, v)); };
  const double table = relational_term(one(0.91), one(-0.94), one(0.023), one(0.023)).value().item();
  const bool ok = worst <= 1e-12 && std::abs(table - 0.012758) <= 1e-6;
  return {ok, "max |graph - oracle| " + fmt("%.1e", worst) + ", example " + fmt("%.6f", table)};
}

// ---- 3: adversarial complementarity --------------------------------------------

Outcome complementarity() {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<float> u01(0, 1), uw(-1, 1);
  double worst = 0;
  bool exact = true;
  MaskNet<float> net;
  for (int i = 0; i < 1000; ++i) {
    if (i % 50 == 0) {
      Rng init{std::uint64_t(i)};
      net = MaskNet<float>({2, 2, 4, 4, 4}, init);
      net.visit([&](Param<float>& p) {
        for (auto& v : p.value.vec()) v = uw(rng);
      });
    }
    Tensor<float> img(Shape{1, 3, 64, 64});
    for (auto& v : img.vec()) v = u01(rng);
    Tape<float> t(ForwardMode{i % 2 == 0});
    Var<float> x = t.constant(img);
    Var<float> alpha = net(t, x);
    Var<float> comp = complement(alpha);
    auto seg = segment(x, alpha);
    for (std::size_t k = 0; k < alpha.value().size(); ++k)
      exact = exact && comp.value()[k] == 1.0f - alpha.value()[k];
    for (std::size_t k = 0; k < img.size(); ++k)
      worst = std::max(worst, double(std::abs(seg.attended.value()[k] + seg.neglected.value()[k] - img[k])));
  }
  return {worst <= 1e-5 && exact, "max |attended + neglected - image| " + fmt("%.2e", worst) +
                                      (exact ? ", complement exact" : ", complement NOT exact")};
}

// ---- shared end-to-end run (4, 5, 6, 8) -----------------------------------------

struct EndToEnd {
  RunConfig cfg;
  std::optional<Dataset> ds;
  LoadedPairs pairs;
  TrainState<float> st;
  int ae_recovered = 0;
  double seconds = 0;
};

std::unique_ptr<EndToEnd> g_run;
fs::path g_work;
std::int64_t g_steps = 3000;
std::int64_t g_sweep_steps = 1000;

Dataset make_dataset(const RunConfig& c, const fs::path& dir) {
  if (!fs::exists(dir / "manifest.txt")) {
    fs::remove_all(dir);
    generate_dataset(c, c.seed, dir.string());
  }
  auto ds = Dataset::open(dir.string());
  ds.validate();
  return ds;
}

int recovered(const Tensor<float>& w, const Dataset& ds, double thr = 0.6, NetworkMatch* out = nullptr) {
  auto gt = GroundTruth::load(ds.path(ds.manifest.ground_truth));
  auto m = match_networks(extract_networks(w, Tensor<float>(), 3.0), gt.maps);
  if (out) *out = m;
  return int(recovered_count(m, thr));
}

EndToEnd& end_to_end() {
  if (g_run) return *g_run;
  auto t0 = std::chrono::steady_clock::now();
  g_run = std::make_unique<EndToEnd>();
  auto& r = *g_run;
  r.cfg.seed = 7;
  r.cfg.steps = g_steps;
  r.ds = make_dataset(r.cfg, g_work / "desk");
  std::cerr << "[end-to-end] pretraining autoencoder\n";
  auto pre = run_pretrain(*r.ds, r.cfg);
  r.ae_recovered = recovered(pre.ae.we.value, *r.ds);
  r.pairs = load_pairs(*r.ds, r.cfg, r.cfg.delay_s);
  r.st = init_training(r.cfg, r.ds->manifest.voxels, &pre.ae);
  std::cerr << "[end-to-end] training " << r.cfg.steps << " steps on " << r.pairs.train.size() << " pairs\n";
  std::ofstream log(g_work / "desk_train_log.csv");
  run_training(r.st, r.pairs.train, r.cfg, r.cfg.steps, &log);
  to_checkpoint(r.st, r.cfg.to_text()).save((g_work / "desk_model.avck").string());
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Outcome convergence() {
  auto& r = end_to_end();
  const auto s = split_stats(r.st.model, r.pairs.test, ObjectiveOptions::from_config(r.cfg, r.ds->manifest.voxels));
  const bool ok = s.r_af >= 0.5 && s.r_nf <= -0.5 && std::abs(s.r_anf) <= 0.3 && std::abs(s.r_bf) <= 0.3;
  std::ostringstream os;
  os << "test r_af " << fmt("%.3f", s.r_af) << ", r_nf " << fmt("%.3f", s.r_nf) << ", r_anf " << fmt("%.3f", s.r_anf)
     << ", r_bf " << fmt("%.3f", s.r_bf) << " after " << r.st.step << " steps (" << fmt("%.0f", r.seconds) << " s)";
  return {ok, os.str()};
}

Outcome localization() {
  auto& r = end_to_end();
  const double thr = r.cfg.threshold;
  const auto g = group_hit_rate(r.st.model, r.pairs.test, thr);
  const auto ind = individual_hit_rate(r.st.model, r.pairs.test, thr);
  // A mask with no pixel at or above the threshold selects nothing; 0 >= 1.5 * 0
  // is not localization, so a zero chance baseline fails.
  const bool group_ok = g.chance > 0 && g.rate >= 1.5 * g.chance;
  const bool ind_ok = ind.chance > 0 && ind.rate >= 1.2 * ind.chance;
  double amin = 1, amax = 0;
  for (const auto& m : group_masks(r.st.model, r.pairs.test))
    for (float v : m.vec()) amin = std::min(amin, double(v)), amax = std::max(amax, double(v));
  std::ostringstream os;
  os << "group " << fmt("%.3f", g.rate) << " vs chance " << fmt("%.3f", g.chance) << ", individual "
     << fmt("%.3f", ind.rate) << " vs chance " << fmt("%.3f", ind.chance) << "; group mask range [" << fmt("%.3f", amin)
     << ", " << fmt("%.3f", amax) << "]";
  return {group_ok && ind_ok, os.str()};
}

Outcome triplet_ordering() {
  auto& r = end_to_end();
  const auto s = split_stats(r.st.model, r.pairs.test, ObjectiveOptions::from_config(r.cfg, r.ds->manifest.voxels));
  return {s.d_a < s.d_n, "test mean d_a " + fmt("%.3f", s.d_a) + " vs d_n " + fmt("%.3f", s.d_n)};
}

Outcome network_recovery() {
  auto& r = end_to_end();
  NetworkMatch m;
  const int found = recovered(r.st.model.fmri.w.value, *r.ds, 0.6, &m);
  // Support invariance under positive row rescaling.
  const auto& w = r.st.model.fmri.w.value;
  Tensor<float> scaled = w;
  const std::size_t D = w.dim(0), V = w.dim(1);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t v = 0; v < V; ++v) scaled[d * V + v] *= float(0.25 + 0.5 * double(d % 7));
  auto a = extract_networks(w, Tensor<float>(), 3.0), b = extract_networks(scaled, Tensor<float>(), 3.0);
  bool invariant = true;
  for (std::size_t d = 0; d < D; ++d) invariant = invariant && a[d].support == b[d].support;
  std::ostringstream os;
  os << found << " of " << m.best_corr.size() << " planted maps at |corr| >= 0.6 (best:";
  for (double c : m.best_corr) os << ' ' << fmt("%.2f", c);
  os << "); after pretraining alone " << r.ae_recovered << "; supports "
     << (invariant ? "invariant" : "NOT invariant") << " to row rescaling";
  return {found >= 4 && invariant, os.str()};
}

// ---- 7: delay recovery ------------------------------------------------------------

Outcome delay_recovery() {
  RunConfig c;
  c.seed = 7;
  c.gen_delay_s = 4;
  // A narrow response so the planted lag is the delay itself.
  c.gen_hrf_peak = 0.5;
  c.gen_hrf_dispersion = 0.25;
  c.sweep_steps = g_sweep_steps;
  auto ds = make_dataset(c, g_work / "delay4");
  std::cerr << "[delay] pretraining autoencoder\n";
  auto pre = run_pretrain(ds, c);
  std::ostringstream progress;
  auto rows = delay_sweep(ds, {0, 2, 4, 6}, c, &pre.ae, &std::cerr);
  const std::size_t best = best_delay(rows);
  std::ostringstream os;
  os << "selected " << rows[best].delay_s << " s; hit rates";
  for (const auto& row : rows) os << ' ' << row.delay_s << "s:" << fmt("%.3f", row.hit_rate);
  os << " (chance";
  for (const auto& row : rows) os << ' ' << fmt("%.3f", row.chance);
  os << "); test r_af";
  for (const auto& row : rows) os << ' ' << fmt("%.2f", row.test_r_af);
  return {rows[best].delay_s == 4.0, os.str()};
}

// ---- 9: determinism and formats -----------------------------------------------------

Outcome determinism() {
  RunConfig c;
  c.seed = 5;
  c.gen_duration_s = 40;
  c.gen_width = 128;
  c.gen_height = 96;
  c.gen_voxels = 32;
  c.gen_networks = 4;
  c.crop = 32;
  c.widths = {2, 4, 4, 8, 8};
  c.feature_dim = 8;
  c.rel_hidden = {16, 8};
  c.batch = 4;
  c.ae_epochs = 20;
  const fs::path a = g_work / "det_a", b = g_work / "det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  generate_dataset(c, c.seed, a.string());
  generate_dataset(c, c.seed, b.string());
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) ++differing;
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) files_b += e.is_regular_file();

  auto train_bytes = [&](const fs::path& dir) {
    auto ds = Dataset::open(dir.string());
    auto pre = run_pretrain(ds, c);
    auto pairs = load_pairs(ds, c, c.delay_s);
    auto st = init_training(c, ds.manifest.voxels, &pre.ae);
    run_training(st, pairs.train, c, 5, nullptr);
    return to_checkpoint(st, c.to_text()).serialize();
  };
  const std::string ck_a = train_bytes(a), ck_b = train_bytes(b);
  const auto restored = from_checkpoint<float>(Checkpoint::deserialize(ck_a, "memory"), adam_config(c));
  auto copy = restored;
  const bool round_trip = to_checkpoint(copy, c.to_text()).serialize() == ck_a;

  bool caught = false;
  {
    auto ds = Dataset::open(b.string());
    fs::remove(ds.path(ds.manifest.frame_name(3)));
    try {
      Dataset::open(b.string()).validate();
    } catch (const ValidationError&) {
      caught = true;
    }
  }
  std::ostringstream os;
  os << files << " dataset files, " << differing << " differ" << (files == files_b ? "" : " (file counts differ)")
     << "; checkpoints " << (ck_a == ck_b ? "identical" : "differ") << "; round trip "
     << (round_trip ? "identical" : "differs") << "; deleted frame " << (caught ? "rejected" : "NOT rejected");
  return {files > 0 && differing == 0 && files == files_b && ck_a == ck_b && round_trip && caught, os.str()};
}

// ---- 10: alignment unit suite ----------------------------------------------------------

Outcome alignment_suite() {
  std::vector<std::string> failures;
  auto trace_with_gap = [](std::size_t start, std::size_t len) {
    GazeTrace g;
    for (std::size_t i = 0; i < 2000; ++i)
      g.samples.push_back({std::int64_t(i), 100.0 + 0.05 * double(i), 50.0, !(i >= start && i < start + len)});
    return g;
  };
  auto invalid = [](const GazeTrace& g) {
    return std::count_if(g.samples.begin(), g.samples.end(), [](const auto& s) { return !s.valid; });
  };
  if (invalid(clean_gaze(trace_with_gap(800, 300), 320, 180)) != 0) failures.push_back("300 ms gap not bridged");
  if (invalid(clean_gaze(trace_with_gap(800, 301), 320, 180)) != 301) failures.push_back("301 ms gap not dropped");

  GazeTrace imp;
  for (std::size_t i = 0; i < 41; ++i) imp.samples.push_back({std::int64_t(i), 10.0, 20.0, true});
  imp.samples[20].x = 300;
  imp.samples[20].y = 170;
  for (const auto& s : clean_gaze(imp, 320, 180).samples)
    if (s.x != 10.0 || s.y != 20.0) {
      failures.push_back("impulse survived median filter");
      break;
    }

  FmriSeries s{0.5, 7, {}};
  std::mt19937_64 rng(31);
  std::normal_distribution<float> n;
  for (std::size_t i = 0; i < 10 * 7; ++i) s.data.push_back(n(rng));
  const auto up = interpolate_fmri(s, 25.0);
  bool knots = up.size() == 451;
  for (std::size_t k = 0; knots && k < 10; ++k)
    for (std::size_t v = 0; v < 7; ++v) knots = knots && up.volume(k * 50)[v] == s.volume(k)[v];
  if (!knots) failures.push_back("interpolation knots not exact");

  for (std::size_t i : {0u, 1u, 17u, 400u, 1499u})
    if (paired_fmri_position(i, 25.0, 2.0, 25.0) != double(i + 50)) {
      failures.push_back("2 s delay is not a 50-frame offset");
      break;
    }

  std::string detail = "blink 300/301 ms, median impulse, knot exactness, 50-frame offset";
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::string only;
  std::string work = (fs::temp_directory_path() / "avan_acceptance").string();
  app.add_option("--only", only, "Comma-separated criterion numbers (default: all)");
  app.add_option("--work", work, "Working directory for generated datasets and models");
  app.add_option("--steps", g_steps, "Training steps for the end-to-end run");
  app.add_option("--sweep-steps", g_sweep_steps, "Training steps per delay in the sweep");
  CLI11_PARSE(app, argc, argv);
  g_work = work;
  fs::create_directories(g_work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"loss oracles", loss_oracles},
      {"adversarial complementarity", complementarity},
      {"end-to-end convergence", convergence},
      {"attention localization", localization},
      {"triplet ordering", triplet_ordering},
      {"delay recovery", delay_recovery},
      {"network recovery", network_recovery},
      {"determinism and formats", determinism},
      {"alignment unit suite", alignment_suite},
  };
  std::set<std::size_t> selected;
  for (const auto& p : detail::split(only, ','))
    if (!p.empty()) selected.insert(std::stoul(p));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2zu %-28s %s  %s [%.1f s]\n", i + 1, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), sec);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
