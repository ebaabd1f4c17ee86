// Acceptance checks, one per criterion: `acceptance --criterion k` prints a
// single PASS/FAIL line (plus indented detail) and exits 0 only on PASS.
//
// Trained models are cached under $CENTRIFUGE_CACHE (or
// $CENTRIFUGE_CACHE_DEFAULT, which ctest points at the build tree) keyed by
// the digest of the full recipe, so reruns only pay for evaluation.

#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>

#include "centrifuge/evalsuite.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace centrifuge;
using centrifuge::testing::random_video;

namespace {

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s + "]";
}

std::optional<fs::path> cache_dir() {
  for (const char* var : {"CENTRIFUGE_CACHE", "CENTRIFUGE_CACHE_DEFAULT"})
    if (const char* p = std::getenv(var); p && *p) {
      fs::create_directories(p);
      return fs::path(p);
    }
  return std::nullopt;
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3};
constexpr int kValSamples = 64;

// Default toy configuration: 16x64x64 clips, n = 4, 3000 steps.
Recipe toy_recipe() {
  ModelConfig m;
  m.n_layers = 4;
  TrainConfig t;
  t.val_samples = 32;
  t.val_every = 1000;
  return make_recipe(m, t);
}

// Reduced-geometry recipe for the ablation trends (8x32x32, 1500 steps).
Recipe trend_recipe() {
  ModelConfig m;
  m.n_layers = 4;
  TrainConfig t;
  t.total_steps = 1500;
  t.milestones = {{625, 0.05}, {940, 0.025}, {1250, 0.01}};
  t.stream.frames = 8;
  t.stream.height = 32;
  t.stream.width = 32;
  t.val_samples = 32;
  t.val_every = 500;
  return make_recipe(m, t);
}

std::unique_ptr<SeparationModel> trained(const Recipe& r) {
  std::cerr << "  [model " << recipe_digest(r) << "]" << std::endl;
  return trained_model(r, cache_dir(), &std::cerr);
}

// Median over seeds of f(seed).
std::vector<double> per_seed(const std::function<double(std::uint64_t)>& f) {
  std::vector<double> v;
  for (auto s : kSeeds) v.push_back(f(s));
  return v;
}

// ---------------------------------------------------------------------------

Outcome criterion_1() {
  using VideoD = Video<double>;
  double worst_perm = 0, worst_swap = 0;
  for (int n : {2, 3, 4}) {
    for (std::uint64_t s = 0; s < 3; ++s) {
      const auto v1 = random_video<double>(3, 6, 7, 3, 1000 * n + s), v2 = random_video<double>(3, 6, 7, 3, 2000 * n + s);
      const auto layers = random_video<double>(3, 6, 7, 3 * n, 3000 * n + s);
      const double base = pit_loss(v1, v2, layers).total;
      std::vector<int> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      do {
        std::vector<VideoD> parts;
        for (int k : perm) parts.push_back(extract_layer(layers, k));
        worst_perm = std::max(worst_perm, std::abs(pit_loss(v1, v2, stack_layers(parts)).total - base));
      } while (std::next_permutation(perm.begin(), perm.end()));
      worst_swap = std::max(worst_swap, std::abs(pit_loss(v2, v1, layers).total - base));
    }
  }
  int violations = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto a = random_video<double>(2, 5, 6, 3, 10 * s), b = random_video<double>(2, 5, 6, 3, 10 * s + 1),
               c = random_video<double>(2, 5, 6, 3, 10 * s + 2);
    const double ab = recon_loss(a, b), ba = recon_loss(b, a), bc = recon_loss(b, c), ac = recon_loss(a, c);
    violations += recon_loss(a, a) != 0.0;
    violations += ab < 0;
    violations += std::abs(ab - ba) > 1e-15;
    violations += ac > ab + bc + 1e-12;
  }
  Outcome o;
  o.pass = worst_perm <= 1e-12 && worst_swap <= 1e-12 && violations == 0;
  o.summary = "max permutation deviation " + fmt(worst_perm) + ", swap deviation " + fmt(worst_swap) +
              ", pseudometric violations " + std::to_string(violations) + "/100 triples";
  return o;
}

Outcome criterion_2() {
  auto corpus = std::make_shared<ProceduralCorpus>(corpus_for_crop(16, 64, 64, 100, 31));
  PairStream stream(corpus, PairStreamConfig{}, 5);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const auto s = stream.sample(k);
    const auto layers = stack_layers(std::vector<VideoClip>{s.blended, s.blended});
    const Video<double> v1 = s.v1.cast<double>(), v2 = s.v2.cast<double>();
    const double id = pit_loss(v1, v2, layers.cast<double>()).total;
    worst = std::max(worst, std::abs(id - recon_loss(v1, v2)));
  }
  return {worst <= 1e-6, "max |identity - l(v1,v2)| over 100 pairs " + fmt(worst), {}};
}

Outcome criterion_3() {
  using VideoD = Video<double>;
  // Loss: double precision central differences.
  const auto v1 = random_video<double>(2, 6, 6, 3, 51), v2 = random_video<double>(2, 6, 6, 3, 52);
  auto layers = random_video<double>(2, 6, 6, 12, 53);
  const auto r = pit_loss(v1, v2, layers, false);
  VideoD g;
  pit_loss_grad(v1, v2, layers, r.assignment, 1.0, g);
  double num = 0, den = 0;
  const double h = 1e-7;
  for (std::size_t i = 0; i < layers.data.size(); ++i) {
    const double old = layers.data[i];
    layers.data[i] = old + h;
    const double up = pit_loss(v1, v2, layers, false).total;
    layers.data[i] = old - h;
    const double down = pit_loss(v1, v2, layers, false).total;
    layers.data[i] = old;
    const double fd = (up - down) / (2 * h);
    num += (fd - g.data[i]) * (fd - g.data[i]);
    den += fd * fd;
  }
  const double loss_err = std::sqrt(num / den);

  // Tiny model end to end in single precision, with the corrector.
  ModelConfig mc;
  mc.base_channels = 2;
  mc.n_layers = 2;
  mc.use_corrector = true;
  mc.zero_init_corrector_head = false;
  mc.seed = 11;
  auto model = build_model(mc);
  std::vector<BlendedSample> batch(2);
  TensorF x({2, 3, 4, 16, 16});
  for (int n = 0; n < 2; ++n) {
    batch[n].v1 = random_video(4, 16, 16, 3, 60 + n);
    batch[n].v2 = random_video(4, 16, 16, 3, 70 + n);
    batch[n].blended = blend(batch[n].v1, batch[n].v2, 0.5);
    video_to_tensor_sample(batch[n].blended, x, n);
  }
  TrainConfig tc;
  const auto mr = centrifuge::testing::check_model_gradients(*model, x, centrifuge::testing::training_objective(batch, tc),
                                                             40, 1e-2, 3);
  Outcome o;
  o.pass = loss_err <= 1e-3 && mr.rel_error <= 1e-2 && mr.used >= 40;
  o.summary = "loss rel. error " + fmt(loss_err) + " (<= 1e-3), tiny model rel. error " + fmt(mr.rel_error) +
              " over " + std::to_string(mr.used) + " probes (<= 1e-2)";
  o.detail.push_back("model probes skipped at activation kinks: " + std::to_string(mr.skipped));
  return o;
}

Outcome criterion_4() {
  const Recipe base = toy_recipe();
  std::vector<double> trained_loss, identity, untrained, ratio;
  for (auto s : kSeeds) {
    const Recipe r = with_seed(base, s);
    const auto stream = recipe_val_stream(r);
    auto model = trained(r);
    trained_loss.push_back(validate(*model, stream, kValSamples).total);
    identity.push_back(baseline_identity(stream, kValSamples));
    untrained.push_back(baseline_untrained(r.model, stream, kValSamples));
    ratio.push_back(trained_loss.back() / identity.back());
  }
  const double med_ratio = median(ratio);
  const bool below_untrained = median(trained_loss) < median(untrained);
  Outcome o;
  o.pass = med_ratio <= 0.6 && below_untrained;
  o.summary = "median trained/identity ratio " + fmt(med_ratio) + " (<= 0.6), median trained " +
              fmt(median(trained_loss)) + " vs untrained " + fmt(median(untrained));
  o.detail = {"trained   " + list(trained_loss), "identity  " + list(identity), "untrained " + list(untrained),
              "ratio     " + list(ratio)};
  return o;
}

double trend_val(const Recipe& r) { return validate(*trained(r), recipe_val_stream(r), kValSamples).total; }

Outcome criterion_5() {
  const Recipe base = trend_recipe();
  auto variant = [&](int n, bool corrector) {
    return per_seed([&](std::uint64_t s) {
      Recipe r = with_seed(base, s);
      r.model.n_layers = n;
      r.model.use_corrector = corrector;
      return trend_val(r);
    });
  };
  const auto n2 = variant(2, false), n4 = variant(4, false), n4c = variant(4, true);
  Outcome o;
  o.pass = median(n4) <= median(n2) && median(n4c) <= median(n4);
  o.summary = "median loss n=2 " + fmt(median(n2)) + ", n=4 " + fmt(median(n4)) + ", n=4 + corrector " +
              fmt(median(n4c));
  o.detail = {"n=2            " + list(n2), "n=4            " + list(n4), "n=4 corrector  " + list(n4c)};
  return o;
}

Outcome criterion_6() {
  const Recipe base = trend_recipe();
  std::vector<std::size_t> params;
  for (auto d : {EncoderDepth::shallow, EncoderDepth::medium, EncoderDepth::deep}) {
    Recipe r = base;
    r.model.encoder_depth = d;
    params.push_back(build_model(r.model)->parameter_count());
  }
  const bool increasing = params[0] < params[1] && params[1] < params[2];
  auto variant = [&](EncoderDepth d) {
    return per_seed([&](std::uint64_t s) {
      Recipe r = with_seed(base, s);
      r.model.encoder_depth = d;
      return trend_val(r);
    });
  };
  const auto shallow = variant(EncoderDepth::shallow), deep = variant(EncoderDepth::deep);
  Outcome o;
  o.pass = increasing && median(deep) <= median(shallow);
  o.summary = "median loss shallow " + fmt(median(shallow)) + ", deep " + fmt(median(deep)) + "; parameters " +
              std::to_string(params[0]) + " < " + std::to_string(params[1]) + " < " + std::to_string(params[2]);
  o.detail = {"shallow " + list(shallow), "deep    " + list(deep)};
  return o;
}

Outcome criterion_7() {
  const Recipe base = trend_recipe();
  std::vector<double> frozen_on_motion, frozen_on_frozen, div_ff, div_nn;
  for (auto s : kSeeds) {
    const Recipe normal = with_seed(base, s);
    Recipe frozen = normal;
    frozen.train.stream.mode = PairMode::frozen;
    auto fm = trained(frozen);
    auto nm = trained(normal);
    const auto ff = validate(*fm, recipe_val_stream(normal, PairMode::frozen), kValSamples);
    const auto fn = validate(*fm, recipe_val_stream(normal, PairMode::normal), kValSamples);
    const auto nn = validate(*nm, recipe_val_stream(normal, PairMode::normal), kValSamples);
    frozen_on_frozen.push_back(ff.total);
    frozen_on_motion.push_back(fn.total);
    div_ff.push_back(ff.diversity);
    div_nn.push_back(nn.diversity);
  }
  Outcome o;
  o.pass = median(frozen_on_motion) > median(frozen_on_frozen) && median(div_ff) > median(div_nn);
  o.summary = "frozen-trained loss on motion " + fmt(median(frozen_on_motion)) + " vs frozen " +
              fmt(median(frozen_on_frozen)) + "; diversity frozen/frozen " + fmt(median(div_ff)) +
              " vs normal/normal " + fmt(median(div_nn));
  o.detail = {"frozen model, motion pairs " + list(frozen_on_motion),
              "frozen model, frozen pairs " + list(frozen_on_frozen), "diversity frozen/frozen  " + list(div_ff),
              "diversity normal/normal  " + list(div_nn)};
  return o;
}

std::unique_ptr<ShapeClassifier> trend_classifier(const Recipe& r) {
  ClassifierConfig cc;
  ClassifierTrainConfig tc;
  tc.steps = 1500;
  tc.frames = r.train.stream.frames;
  tc.height = r.train.stream.height;
  tc.width = r.train.stream.width;
  const auto dir = cache_dir();
  const auto key = config_digest({{"classifier", cc}, {"train", tc}, {"corpus", r.train_corpus}});
  const fs::path file = dir ? *dir / ("classifier-" + key + ".bin") : fs::path();
  if (dir && fs::exists(file)) return classifier_from_checkpoint(read_checkpoint(file));
  auto clf = std::make_unique<ShapeClassifier>(cc);
  train_classifier(*clf, ProceduralCorpus(r.train_corpus), tc, &std::cerr);
  if (dir) write_checkpoint(file, classifier_checkpoint(*clf));
  return clf;
}

Outcome criterion_8() {
  const Recipe base = trend_recipe();
  auto clf = trend_classifier(base);
  ClassifierTrainConfig eval_geom;
  eval_geom.frames = base.train.stream.frames;
  eval_geom.height = base.train.stream.height;
  eval_geom.width = base.train.stream.width;
  const double acc = classifier_accuracy(*clf, ProceduralCorpus(base.val_corpus), eval_geom, 100);
  std::vector<double> a, b, c;
  for (auto s : kSeeds) {
    const Recipe r = with_seed(base, s);
    auto model = trained(r);
    const auto sc = downstream_scores(model_separator(*model), *clf, recipe_val_stream(r), 200);
    a.push_back(sc.mixed);
    b.push_back(sc.unmixed);
    c.push_back(sc.original);
  }
  Outcome o;
  o.pass = median(b) >= median(a) + 5 && median(b) <= median(c);
  o.summary = "median scores (a) mixed " + fmt(median(a)) + ", (b) unmixed " + fmt(median(b)) + ", (c) original " +
              fmt(median(c)) + " (need b >= a + 5 and b <= c)";
  o.detail = {"(a) " + list(a), "(b) " + list(b), "(c) " + list(c),
              "classifier held-out accuracy " + fmt(100 * acc) + "%"};
  return o;
}

Outcome criterion_9() {
  const Recipe r = with_seed(toy_recipe(), kSeeds.front());
  auto model = trained(r);
  const auto big = corpus_for_crop(24, 96, 96, 1, 77);
  const auto clip = augment(ProceduralCorpus(big).clip(0), 24, 96, 96, 3);
  const auto out = model_forward(*model, clip);
  const auto& f = out.final_layers;
  bool finite = true;
  for (float v : f.data) finite = finite && std::isfinite(v);
  const bool ok = f.frames == 24 && f.height == 96 && f.width == 96 && f.channels == 3 * r.model.n_layers && finite;
  return {ok, "checkpoint trained at 16x64x64 maps a 24x96x96x3 clip to " + geometry_string(f) +
                  (finite ? "" : " (non-finite values)"),
          {}};
}

Outcome criterion_10() {
  centrifuge::testing::TempDir dir("accept_io");
  auto v = random_video(5, 9, 11, 3, 7);
  v.data[0] = 0.1f;
  v.data[1] = 1.0f / 3.0f;
  v.data[2] = std::nextafter(1.0f, 0.0f);
  save_clip(v, dir / "a.rawvid", VideoFormat::rawvid, RawDtype::float32);
  const auto back = load_clip(dir / "a.rawvid");
  const bool raw_exact = back.data == v.data && back.frames == v.frames && back.height == v.height;

  save_clip(v, dir / "frames", VideoFormat::framedir);
  const double png_err = max_abs_diff(load_clip(dir / "frames"), v);

  // A few training steps so normalization statistics are non-trivial.
  Recipe r = trend_recipe();
  r.model.base_channels = 4;
  r.train.total_steps = 5;
  r.train.val_every = 0;
  r.train_corpus.num_clips = 12;
  auto model = trained_model(r, std::nullopt);
  CheckpointData ck;
  store_model(*model, ck);
  write_checkpoint(dir / "m.bin", ck);
  auto loaded = load_model(dir / "m.bin");
  const auto clip = recipe_val_stream(r).sample(0).blended;
  const auto y1 = model_forward(*model, clip).final_layers, y2 = model_forward(*loaded, clip).final_layers;
  const bool ck_exact = y1.data == y2.data;

  Outcome o;
  o.pass = raw_exact && png_err <= 1.0 / 255 && ck_exact;
  o.summary = std::string("rawvid float round trip ") + (raw_exact ? "exact" : "NOT exact") + ", PNG max error " +
              fmt(png_err * 255, 3) + "/255, checkpoint eval outputs " + (ck_exact ? "bit-identical" : "DIFFER");
  return o;
}

Outcome criterion_11() {
  const double both = downstream_score({3, 5}, {5, 3}), one = downstream_score({3, 4}, {5, 3}),
               none = downstream_score({1, 2}, {5, 3});
  return {both == 1.0 && one == 0.5 && none == 0.0,
          "both -> " + fmt(both) + ", one -> " + fmt(one) + ", none -> " + fmt(none), {}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int criterion = 0;
  app.add_option("--criterion", criterion, "Criterion number 1-11 (0: all)")->check(CLI::Range(0, 11));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<Outcome()>> checks{criterion_1, criterion_2, criterion_3, criterion_4,
                                                     criterion_5, criterion_6, criterion_7, criterion_8,
                                                     criterion_9, criterion_10, criterion_11};
  bool all = true;
  for (int k = 1; k <= 11; ++k) {
    if (criterion != 0 && k != criterion) continue;
    Outcome o;
    try {
      o = checks[k - 1]();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what(), {}};
    }
    std::cout << "criterion " << k << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.summary << '\n';
    for (const auto& d : o.detail) std::cout << "    " << d << '\n';
    std::cout.flush();
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
