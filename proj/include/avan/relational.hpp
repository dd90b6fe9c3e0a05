#pragma once

// Relational and reconstruction networks, the training objective, and the
// training loop.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "avan/adam.hpp"
#include "avan/alignment.hpp"
#include "avan/attention.hpp"
#include "avan/config.hpp"
#include "avan/encoders.hpp"
#include "avan/io.hpp"

namespace avan {

/// Dense stack 2D -> hidden... -> 1 with BN+ReLU on hidden layers and tanh
/// output. The last layer starts at zero, so initial outputs are exactly 0.
template <typename T>
struct RelationNet {
  std::vector<Linear<T>> hidden;
  std::vector<BatchNorm<T>> norms;
  Linear<T> out;

  RelationNet() = default;
  RelationNet(std::size_t in, const std::vector<std::size_t>& widths, Rng& rng) {
    std::size_t prev = in;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const std::string name = "rel.fc" + std::to_string(i + 1);
      hidden.emplace_back(name, prev, widths[i], true, rng);
      norms.emplace_back(name + ".bn", widths[i]);
      prev = widths[i];
    }
    out = Linear<T>("rel.out", prev, 1, true, rng);
    out.w.value.fill(T{0});
    out.b->value.fill(T{0});
  }

  std::size_t in_dim() const { return hidden.front().w.value.dim(1); }

  /// [N,2D] -> [N,1]
  Var<T> operator()(Tape<T>& t, Var<T> x) {
    const auto& s = x.shape();
    if (s.size() != 2 || s[1] != in_dim()) throw ShapeError("relate", Shape{s.empty() ? 0 : s[0], in_dim()}, s);
    for (std::size_t i = 0; i < hidden.size(); ++i) x = relu(batch_norm(hidden[i](t, x), norms[i]));
    return tanh(out(t, x));
  }

  void visit(const ParamVisitor<T>& p, const BufferVisitor<T>& b = {}) {
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      hidden[i].visit(p);
      visit_bn(norms[i], p, b);
    }
    out.visit(p);
  }
};

/// Dense D -> V followed by batch-norm.
template <typename T>
struct ReconstructionNet {
  Linear<T> fc;
  BatchNorm<T> bn;

  ReconstructionNet() = default;
  ReconstructionNet(std::size_t dim, std::size_t voxels, bool affine, Rng& rng)
      : fc("rec.fc", dim, voxels, true, rng), bn("rec.bn", voxels, affine) {}

  Var<T> operator()(Tape<T>& t, Var<T> codes) { return batch_norm(fc(t, codes), bn); }

  void visit(const ParamVisitor<T>& p, const BufferVisitor<T>& b = {}) {
    fc.visit(p);
    visit_bn(bn, p, b);
  }
};

// ---- scalar loss definitions -------------------------------------------------

inline double relational_loss(double r_af, double r_nf, double r_anf, double r_bf) {
  return (1 - r_af) * (1 - r_af) + (-1 - r_nf) * (-1 - r_nf) + r_anf * r_anf + r_bf * r_bf;
}

inline double triplet_loss(double d_a, double d_n, double margin) {
  if (margin < 0) throw std::invalid_argument("margin must be >= 0");
  return std::max(d_a - d_n + margin, 0.0);
}

class NonFiniteLoss : public std::runtime_error {
 public:
  explicit NonFiniteLoss(const std::string& term)
      : std::runtime_error("non-finite value in loss term " + term), term_(term) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

/// Batch mean of the relational loss; inputs are [B,1] relation outputs.
template <typename T>
Var<T> relational_term(Var<T> r_af, Var<T> r_nf, Var<T> r_anf, Var<T> r_bf) {
  const Shape col = r_af.shape();
  Var<T> total = add(add(sse(r_af, Tensor<T>(col, T{1})), sse(r_nf, Tensor<T>(col, T{-1}))),
                     add(sse(r_anf, Tensor<T>(col)), sse(r_bf, Tensor<T>(col))));
  return scale(total, T{1} / T(col[0]));
}

/// Batch mean of max(d_a - d_n + margin, 0); inputs are [B] distances.
template <typename T>
Var<T> triplet_term(Var<T> d_a, Var<T> d_n, T margin) {
  if (margin < T{0}) throw std::invalid_argument("margin must be >= 0");
  return scale(sum(hinge(affine(sub(d_a, d_n), T{1}, margin))), T{1} / T(d_a.shape()[0]));
}

// ---- model -------------------------------------------------------------------

struct ModelSpec {
  std::size_t crop = 64;
  std::size_t dim = 64;
  std::size_t voxels = 256;
  std::vector<std::size_t> widths{8, 16, 32, 64, 64};
  std::vector<std::size_t> rel_hidden{256, 64};
  bool rec_affine = true;

  static ModelSpec from_config(const RunConfig& c, std::size_t voxels) {
    ModelSpec s;
    s.crop = std::size_t(c.crop);
    s.dim = std::size_t(c.feature_dim);
    s.voxels = voxels;
    s.widths.assign(c.widths.begin(), c.widths.end());
    s.rel_hidden.assign(c.rel_hidden.begin(), c.rel_hidden.end());
    s.rec_affine = c.rec_bn_affine;
    return s;
  }
};

/// Objective options that do not change parameter shapes.
struct ObjectiveOptions {
  double margin = 0.1;
  double l1 = 0;  // effective coefficient on sum |W|
  bool encode_original = false;

  static ObjectiveOptions from_config(const RunConfig& c, std::size_t voxels) {
    ObjectiveOptions o;
    o.margin = c.margin;
    o.l1 = effective_l1(c, voxels);
    o.encode_original = c.anf_mode == "encode";
    return o;
  }

  static double effective_l1(const RunConfig& c, std::size_t voxels) {
    return c.l1_ref_voxels > 0 ? c.l1 * c.l1_ref_voxels / double(voxels) : c.l1;
  }
};

template <typename T>
struct Model {
  ModelSpec spec;
  MaskNet<T> mask;
  ImageEncoder<T> image;
  FmriEncoder<T> fmri;
  RelationNet<T> rel;
  ReconstructionNet<T> rec;

  Model() = default;
  Model(const ModelSpec& s, Rng& rng)
      : spec(s),
        mask(s.widths, rng),
        image(s.widths, s.dim, rng),
        fmri(s.voxels, s.dim, rng),
        rel(2 * s.dim, s.rel_hidden, rng),
        rec(s.dim, s.voxels, s.rec_affine, rng) {}

  void visit(const ParamVisitor<T>& p, const BufferVisitor<T>& b = {}) {
    mask.visit(p, b);
    image.visit(p, b);
    fmri.visit(p);
    rel.visit(p, b);
    rec.visit(p, b);
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    visit([&](Param<T>& p) { out.push_back(&p); });
    return out;
  }
};

/// Every intermediate of one forward pass over a batch.
template <typename T>
struct Forward {
  Var<T> alpha;
  Segmented<T> seg;
  Var<T> v_a, v_n, v_o, v_b, v_f;
  Var<T> r_af, r_nf, r_anf, r_bf;
  Var<T> rec_a, rec_n, d_a, d_n;
  Var<T> l_rel, l_trip, l1, objective;
};

/// images [B,3,c,c], fmri [B,V]. Losses are batch means; objective adds L1.
template <typename T>
Forward<T> forward(Model<T>& m, Tape<T>& t, const Tensor<T>& images, const Tensor<T>& fmri,
                   const ObjectiveOptions& opt) {
  const std::size_t B = images.dim(0);
  if (fmri.ndim() != 2 || fmri.dim(0) != B) throw ShapeError("forward", Shape{B, m.spec.voxels}, fmri.shape());
  Forward<T> f;
  Var<T> x = t.constant(images, "images");
  f.alpha = m.mask(t, x);
  f.seg = segment(x, f.alpha);

  Shape blank_shape = images.shape();
  blank_shape[0] = 1;
  std::vector<Var<T>> enc_in{f.seg.attended, f.seg.neglected};
  if (opt.encode_original) enc_in.push_back(x);
  enc_in.push_back(t.constant(Tensor<T>(blank_shape), "blank"));
  Var<T> codes = m.image(t, concat(enc_in, 0));
  f.v_a = slice(codes, 0, 0, B);
  f.v_n = slice(codes, 0, B, 2 * B);
  f.v_o = opt.encode_original ? slice(codes, 0, 2 * B, 3 * B) : add(f.v_a, f.v_n);
  Var<T> vb1 = slice(codes, 0, codes.shape()[0] - 1, codes.shape()[0]);
  f.v_b = concat(std::vector<Var<T>>(B, vb1), 0);

  Var<T> s = t.constant(fmri, "fmri");
  f.v_f = m.fmri(t, s);
  Var<T> rin = concat<T>({concat<T>({f.v_a, f.v_f}, 1), concat<T>({f.v_n, f.v_f}, 1),
                          concat<T>({f.v_o, f.v_f}, 1), concat<T>({f.v_b, f.v_f}, 1)},
                         0);
  Var<T> r = m.rel(t, rin);
  f.r_af = slice(r, 0, 0, B);
  f.r_nf = slice(r, 0, B, 2 * B);
  f.r_anf = slice(r, 0, 2 * B, 3 * B);
  f.r_bf = slice(r, 0, 3 * B, 4 * B);

  f.l_rel = relational_term(f.r_af, f.r_nf, f.r_anf, f.r_bf);

  Var<T> recs = m.rec(t, concat<T>({f.v_a, f.v_n}, 0));
  f.rec_a = slice(recs, 0, 0, B);
  f.rec_n = slice(recs, 0, B, 2 * B);
  f.d_a = euclidean_rows(s, f.rec_a);
  f.d_n = euclidean_rows(s, f.rec_n);
  f.l_trip = triplet_term(f.d_a, f.d_n, T(opt.margin));
  f.l1 = l1_penalty(t.param(m.fmri.w), T(opt.l1));
  f.objective = add(add(f.l_rel, f.l_trip), f.l1);

  const std::pair<const char*, Var<T>> terms[] = {{"L_rel", f.l_rel}, {"L_trip", f.l_trip}, {"L1", f.l1}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(double(v.value().item()))) throw NonFiniteLoss(name);
  return f;
}

struct StepMetrics {
  std::int64_t step = 0;
  double l_rel = 0, l_trip = 0, l1 = 0;
  double r_af = 0, r_nf = 0, r_anf = 0, r_bf = 0;
  /// Reported loss: L_rel + L_trip (the penalty is excluded).
  double loss() const { return l_rel + l_trip; }

  friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

namespace detail {
template <typename T>
double mean_of(const Var<T>& v) {
  double acc = 0;
  for (T x : v.value().vec()) acc += double(x);
  return acc / double(v.value().size());
}
}  // namespace detail

template <typename T>
StepMetrics metrics_of(const Forward<T>& f) {
  StepMetrics m;
  m.l_rel = double(f.l_rel.value().item());
  m.l_trip = double(f.l_trip.value().item());
  m.l1 = double(f.l1.value().item());
  m.r_af = detail::mean_of(f.r_af);
  m.r_nf = detail::mean_of(f.r_nf);
  m.r_anf = detail::mean_of(f.r_anf);
  m.r_bf = detail::mean_of(f.r_bf);
  return m;
}

// ---- batches -----------------------------------------------------------------

template <typename T>
struct Batch {
  Tensor<T> images;
  Tensor<T> fmri;
};

template <typename T>
Batch<T> make_batch(const std::vector<PairedSample>& samples, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw std::invalid_argument("empty batch");
  const auto& first = samples.at(idx[0]);
  const std::size_t c = first.image.width, v = first.fmri.size();
  Batch<T> b{Tensor<T>(Shape{idx.size(), 3, c, c}), Tensor<T>(Shape{idx.size(), v})};
  const std::size_t plane = c * c;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& s = samples.at(idx[k]);
    if (s.image.width != c || s.image.height != c || s.fmri.size() != v)
      throw ShapeError("make_batch", Shape{3, c, c}, Shape{3, s.image.height, s.image.width});
    T* dst = b.images.data() + k * 3 * plane;
    for (std::size_t i = 0; i < plane; ++i)
      for (std::size_t ch = 0; ch < 3; ++ch) dst[ch * plane + i] = T(s.image.rgb[i * 3 + ch]) / T(255);
    for (std::size_t j = 0; j < v; ++j) b.fmri[k * v + j] = T(s.fmri[j]);
  }
  return b;
}

// ---- training ----------------------------------------------------------------

template <typename T>
struct TrainState {
  Model<T> model;
  AdamState<T> adam;
  Rng rng;
  std::int64_t step = 0;
};

/// One joint Adam step on all five networks.
template <typename T>
StepMetrics train_step(TrainState<T>& st, const Batch<T>& batch, const ObjectiveOptions& opt) {
  auto params = st.model.params();
  for (auto* p : params) p->zero_grad();
  Tape<T> tape(ForwardMode{true});
  Forward<T> f = forward(st.model, tape, batch.images, batch.fmri, opt);
  StepMetrics m = metrics_of(f);
  m.step = st.step;
  tape.backward(f.objective);
  adam_step(params, st.adam);
  ++st.step;
  return m;
}

inline const char* kTrainLogHeader = "step,L_rel,L_trip,L1,r_af_mean,r_nf_mean,r_anf_mean,r_bf_mean";

inline std::string train_log_row(const StepMetrics& m) {
  std::ostringstream os;
  os.precision(9);
  os << m.step << ',' << m.l_rel << ',' << m.l_trip << ',' << m.l1 << ',' << m.r_af << ','
     << m.r_nf << ',' << m.r_anf << ',' << m.r_bf;
  return os.str();
}

/// Runs `steps` steps on uniformly drawn training batches. Calls on_log every
/// log_every steps (and on the final step).
template <typename T>
void train_steps(TrainState<T>& st, const std::vector<PairedSample>& train, std::int64_t steps,
                 std::size_t batch, const ObjectiveOptions& opt, std::int64_t log_every,
                 const std::function<void(const StepMetrics&)>& on_log = {}) {
  if (train.empty()) throw std::invalid_argument("empty training split");
  std::vector<std::size_t> idx(batch);
  for (std::int64_t k = 0; k < steps; ++k) {
    for (auto& i : idx) i = std::size_t(st.rng.below(train.size()));
    StepMetrics m = train_step(st, make_batch<T>(train, idx), opt);
    if (on_log && (log_every > 0 && (m.step % log_every == 0 || k + 1 == steps))) on_log(m);
  }
}

// ---- evaluation over a split -------------------------------------------------

struct SplitStats {
  std::size_t count = 0;
  double r_af = 0, r_nf = 0, r_anf = 0, r_bf = 0;
  double d_a = 0, d_n = 0;
  double regularization() const { return 0.5 * (r_anf + r_bf); }
};

/// Inference-mode means of the relational outputs and reconstruction
/// distances. Running BN statistics make each sample independent of its batch.
template <typename T>
SplitStats split_stats(Model<T>& m, const std::vector<PairedSample>& samples, const ObjectiveOptions& opt,
                       std::size_t chunk = 64) {
  SplitStats s;
  for (std::size_t b = 0; b < samples.size(); b += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(samples.size(), b + chunk); ++i) idx.push_back(i);
    auto batch = make_batch<T>(samples, idx);
    Tape<T> tape(ForwardMode{false});
    auto f = forward(m, tape, batch.images, batch.fmri, opt);
    auto acc = [](const Var<T>& v) {
      double a = 0;
      for (T x : v.value().vec()) a += double(x);
      return a;
    };
    s.r_af += acc(f.r_af);
    s.r_nf += acc(f.r_nf);
    s.r_anf += acc(f.r_anf);
    s.r_bf += acc(f.r_bf);
    s.d_a += acc(f.d_a);
    s.d_n += acc(f.d_n);
    s.count += idx.size();
  }
  if (s.count) {
    const double n = double(s.count);
    s.r_af /= n;
    s.r_nf /= n;
    s.r_anf /= n;
    s.r_bf /= n;
    s.d_a /= n;
    s.d_n /= n;
  }
  return s;
}

// ---- checkpointing -----------------------------------------------------------

namespace detail {
inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}
inline std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& p : split(s, ',')) out.push_back(std::stoul(p));
  return out;
}
}  // namespace detail

template <typename T>
Checkpoint to_checkpoint(TrainState<T>& st, const std::string& config_text) {
  Checkpoint c;
  c.meta["kind"] = "model";
  c.meta["spec.crop"] = std::to_string(st.model.spec.crop);
  c.meta["spec.dim"] = std::to_string(st.model.spec.dim);
  c.meta["spec.voxels"] = std::to_string(st.model.spec.voxels);
  c.meta["spec.widths"] = detail::join_sizes(st.model.spec.widths);
  c.meta["spec.rel_hidden"] = detail::join_sizes(st.model.spec.rel_hidden);
  c.meta["spec.rec_affine"] = st.model.spec.rec_affine ? "1" : "0";
  c.meta["config"] = config_text;
  c.meta["rng"] = st.rng.state();
  c.meta["step"] = std::to_string(st.step);
  c.meta["adam.t"] = std::to_string(st.adam.t);
  auto params = st.model.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    c.tensors["param/" + params[k]->name] = params[k]->value.template cast<float>();
    if (k < st.adam.moments.size()) {
      c.tensors["adam.m/" + params[k]->name] = st.adam.moments[k].m.template cast<float>();
      c.tensors["adam.v/" + params[k]->name] = st.adam.moments[k].v.template cast<float>();
    }
  }
  st.model.visit([](Param<T>&) {},
                 [&](const std::string& name, Tensor<T>& buf) { c.tensors["buffer/" + name] = buf.template cast<float>(); });
  return c;
}

inline ModelSpec spec_from_checkpoint(const Checkpoint& c) {
  if (c.get_meta("kind") != "model") throw IoError("checkpoint is not a model checkpoint");
  ModelSpec s;
  s.crop = std::stoul(c.get_meta("spec.crop"));
  s.dim = std::stoul(c.get_meta("spec.dim"));
  s.voxels = std::stoul(c.get_meta("spec.voxels"));
  s.widths = detail::parse_sizes(c.get_meta("spec.widths"));
  s.rel_hidden = detail::parse_sizes(c.get_meta("spec.rel_hidden"));
  s.rec_affine = c.get_meta("spec.rec_affine") == "1";
  return s;
}

template <typename T>
TrainState<T> from_checkpoint(const Checkpoint& c, const AdamConfig& adam) {
  TrainState<T> st;
  Rng init(0);
  st.model = Model<T>(spec_from_checkpoint(c), init);
  auto load = [&](const std::string& key, Tensor<T>& dst) {
    const auto& src = c.get(key);
    if (src.shape() != dst.shape()) throw ShapeError("checkpoint:" + key, dst.shape(), src.shape());
    dst = src.template cast<T>();
  };
  auto params = st.model.params();
  for (auto* p : params) load("param/" + p->name, p->value);
  st.model.visit([](Param<T>&) {}, [&](const std::string& name, Tensor<T>& buf) { load("buffer/" + name, buf); });
  st.adam.config = adam;
  st.adam.t = std::stoull(c.get_meta("adam.t"));
  if (c.tensors.count("adam.m/" + params.front()->name)) {
    for (auto* p : params) {
      AdamMoments<T> mo{Tensor<T>(p->value.shape()), Tensor<T>(p->value.shape())};
      load("adam.m/" + p->name, mo.m);
      load("adam.v/" + p->name, mo.v);
      st.adam.moments.push_back(std::move(mo));
    }
  }
  st.rng.set_state(c.get_meta("rng"));
  st.step = std::stoll(c.get_meta("step"));
  return st;
}

template <typename T>
Checkpoint autoencoder_checkpoint(const Autoencoder<T>& ae, const std::string& config_text) {
  Checkpoint c;
  c.meta["kind"] = "autoencoder";
  c.meta["config"] = config_text;
  c.tensors["param/" + ae.we.name] = ae.we.value.template cast<float>();
  c.tensors["param/" + ae.wd.name] = ae.wd.value.template cast<float>();
  return c;
}

template <typename T>
Autoencoder<T> autoencoder_from_checkpoint(const Checkpoint& c) {
  if (c.get_meta("kind") != "autoencoder") throw IoError("checkpoint is not an autoencoder checkpoint");
  Autoencoder<T> ae;
  ae.we = Param<T>("ae.encoder", c.get("param/ae.encoder").template cast<T>());
  ae.wd = Param<T>("ae.decoder", c.get("param/ae.decoder").template cast<T>());
  return ae;
}

}  // namespace avan
