#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "centrifuge/evalsuite.hpp"
#include "test_util.hpp"

using namespace centrifuge;
using centrifuge::testing::random_video;
using centrifuge::testing::TempDir;

namespace {

struct VectorCorpus final : Corpus {
  std::vector<VideoClip> clips;
  std::vector<int> labels;
  std::size_t size() const override { return clips.size(); }
  VideoClip clip(std::size_t i) const override { return clips.at(i); }
  int label(std::size_t i) const override { return labels.at(i); }
};

PairStreamConfig small_stream() {
  PairStreamConfig c;
  c.frames = 8;
  c.height = 32;
  c.width = 32;
  return c;
}

PairStream procedural_stream(std::uint64_t seed, PairStreamConfig cfg = small_stream()) {
  auto corpus = std::make_shared<ProceduralCorpus>(corpus_for_crop(cfg.frames, cfg.height, cfg.width, 30, 5));
  return PairStream(corpus, cfg, seed);
}

Recipe tiny_recipe(std::int64_t steps) {
  ModelConfig m;
  m.base_channels = 4;
  m.n_layers = 2;
  m.encoder_depth = EncoderDepth::shallow;
  TrainConfig t;
  t.total_steps = steps;
  t.batch_size = 2;
  t.milestones = {};
  t.stream = small_stream();
  t.val_samples = 4;
  t.val_every = 0;
  return make_recipe(m, t, 20, 10);
}

}  // namespace

// ---------------------------------------------------------------------------
// statistics

TEST(Pearson, SelfAndNegation) {
  std::vector<double> x{0.3, -1.2, 4.0, 2.5, 0.0, 7.1};
  std::vector<double> neg(x.size());
  std::transform(x.begin(), x.end(), neg.begin(), [](double v) { return -v; });
  EXPECT_NEAR(pearson(x, x), 1.0, 1e-12);
  EXPECT_NEAR(pearson(x, neg), -1.0, 1e-12);
}

TEST(Pearson, MatchesTextbookFormula) {
  // Oracle: single-pass raw moment formula in long double.
  Rng rng(3);
  std::vector<double> x(50), y(50);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = uniform(rng, -2, 2);
    y[i] = 0.4 * x[i] + uniform(rng, -1, 1);
  }
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  const long double n = x.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += (long double)x[i] * x[i];
    syy += (long double)y[i] * y[i];
    sxy += (long double)x[i] * y[i];
  }
  const long double r = (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
  EXPECT_NEAR(pearson(x, y), static_cast<double>(r), 1e-12);
}

TEST(Pearson, AffineInvariance) {
  std::vector<double> x{1, 2, 4, 3, 9}, y{2, 1, 5, 5, 7};
  std::vector<double> x2(x.size());
  std::transform(x.begin(), x.end(), x2.begin(), [](double v) { return 3 * v - 7; });
  EXPECT_NEAR(pearson(x, y), pearson(x2, y), 1e-12);
}

TEST(Pearson, Rejects) {
  std::vector<double> a{1, 2}, b{1, 2};
  EXPECT_THROW(pearson(a, b), std::invalid_argument);
  std::vector<double> c{1, 1, 1}, d{1, 2, 3};
  EXPECT_THROW(pearson(c, d), std::invalid_argument);
  std::vector<double> e{1, 2, 3};
  EXPECT_THROW(pearson(e, a), std::invalid_argument);
}

TEST(Median, OddEvenEmpty) {
  EXPECT_EQ(median({3, 1, 2}), 2);
  EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_THROW(median({}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// downstream scoring

TEST(DownstreamScore, ScoringRule) {
  EXPECT_EQ(downstream_score({0, 1}, {0, 1}), 1.0);
  EXPECT_EQ(downstream_score({0, 2}, {0, 1}), 0.5);
  EXPECT_EQ(downstream_score({2, 3}, {0, 1}), 0.0);
}

TEST(DownstreamScore, MultisetSemantics) {
  EXPECT_EQ(downstream_score({0, 0}, {0, 0}), 1.0);
  EXPECT_EQ(downstream_score({0, 0}, {0, 1}), 0.5);  // one prediction cannot match twice
  EXPECT_EQ(downstream_score({0, 1}, {0, 0}), 0.5);
}

TEST(DownstreamScore, SymmetricInBothOrders) {
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        for (int d = 0; d < 4; ++d) {
          const double s = downstream_score({a, b}, {c, d});
          EXPECT_EQ(s, downstream_score({b, a}, {c, d}));
          EXPECT_EQ(s, downstream_score({a, b}, {d, c}));
          // Oracle: count matched pairs over both matchings.
          const int m = std::max((a == c) + (b == d), (a == d) + (b == c));
          EXPECT_EQ(s, m / 2.0);
        }
}

// ---------------------------------------------------------------------------
// baselines

TEST(Baselines, IdentityEqualsMeanPairDistance) {
  const auto stream = procedural_stream(8);
  double mean = 0;
  const int n = 12;
  for (int k = 0; k < n; ++k) {
    const auto s = stream.sample(k);
    mean += recon_loss(s.v1, s.v2);
  }
  mean /= n;
  EXPECT_NEAR(baseline_identity(stream, n), mean, 1e-6);
}

TEST(Baselines, IdentityOnIdenticalPairsIsZero) {
  auto corpus = std::make_shared<VectorCorpus>();
  const auto v = random_video(8, 32, 32, 3, 4);
  corpus->clips = {v, v};
  corpus->labels = {0, 0};
  auto cfg = small_stream();
  cfg.augment = false;
  PairStream stream(corpus, cfg, 1);
  EXPECT_EQ(baseline_identity(stream, 4), 0.0);
}

TEST(Baselines, UntrainedIsDeterministic) {
  const auto stream = procedural_stream(3);
  ModelConfig m;
  m.base_channels = 4;
  m.encoder_depth = EncoderDepth::shallow;
  m.seed = 7;
  EXPECT_EQ(baseline_untrained(m, stream, 4), baseline_untrained(m, stream, 4));
}

TEST(Baselines, OracleSeparatorScoresZero) {
  const auto stream = procedural_stream(2);
  EXPECT_EQ(validate(oracle_separator(), stream, 6).total, 0.0);
}

// ---------------------------------------------------------------------------
// reports

TEST(Report, DigestIsStableAndSensitive) {
  nlohmann::json a = {{"x", 1}, {"y", "z"}};
  EXPECT_EQ(config_digest(a), config_digest(a));
  EXPECT_EQ(config_digest(a).size(), 16u);
  a["x"] = 2;
  EXPECT_NE(config_digest(a), config_digest({{"x", 1}, {"y", "z"}}));
  // FNV-1a of the empty object "{}".
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : std::string("{}")) h = (h ^ c) * 0x100000001B3ull;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  EXPECT_EQ(config_digest(nlohmann::json::object()), buf);
}

TEST(Report, WritesJsonCsvAndFigures) {
  TempDir dir("report");
  ExperimentReport r;
  r.name = "demo";
  r.seeds = {1, 2};
  r.results = {{"a", {{"n=2", 0.5}}}, {"b", 1.25}};
  r.figures.emplace_back("demo_bars", plot::bar_chart("t", {"x", "y"}, {1.0, 2.0}));
  const auto files = write_report(r, dir.path());
  ASSERT_EQ(files.size(), 3u);
  for (const auto& f : files) EXPECT_TRUE(fs::exists(f)) << f;

  std::ifstream in(dir / "demo.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["experiment"], "demo");
  EXPECT_EQ(j["results"]["a"]["n=2"], 0.5);
  EXPECT_EQ(j["seeds"].size(), 2u);

  std::ifstream csv(dir / "demo.csv");
  std::string all((std::istreambuf_iterator<char>(csv)), {});
  EXPECT_NE(all.find("a.n=2,0.5"), std::string::npos);
  EXPECT_NE(all.find("b,1.25"), std::string::npos);

  const auto img = png::read(dir / "demo_bars.png");
  EXPECT_GT(img.width, 0);
}

// ---------------------------------------------------------------------------
// classifier

TEST(Classifier, CrossEntropyMatchesFiniteDifferences) {
  TensorF logits({3, 4});
  Rng rng(1);
  for (auto& v : logits.values()) v = static_cast<float>(uniform(rng, -2, 2));
  const std::vector<int> labels{0, 3, 1};
  TensorF g;
  const double loss = softmax_cross_entropy(logits, labels, g);
  // Oracle: direct log-sum-exp in double.
  double ref = 0;
  for (int n = 0; n < 3; ++n) {
    double s = 0;
    for (int k = 0; k < 4; ++k) s += std::exp(static_cast<double>(logits[n * 4 + k]));
    ref += std::log(s) - logits[n * 4 + labels[n]];
  }
  EXPECT_NEAR(loss, ref / 3, 1e-6);
  TensorF scratch;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    TensorF p = logits, m = logits;
    p[i] += 1e-2f;
    m[i] -= 1e-2f;
    const double fd = (softmax_cross_entropy(p, labels, scratch) - softmax_cross_entropy(m, labels, scratch)) / 2e-2;
    EXPECT_NEAR(g[i], fd, 1e-4) << i;
  }
}

TEST(Classifier, CrossEntropyRejectsBadLabels) {
  TensorF logits({1, 3}), g;
  std::vector<int> bad{3};
  EXPECT_THROW(softmax_cross_entropy(logits, bad, g), std::invalid_argument);
}

TEST(Classifier, GradientsMatchFiniteDifferences) {
  ClassifierConfig cc;
  cc.base_channels = 2;
  cc.num_classes = 3;
  cc.seed = 4;
  ShapeClassifier clf(cc);
  const auto v = random_video(4, 8, 8, 3, 2);
  TensorF x = clips_to_tensor(std::vector<VideoClip>{v, random_video(4, 8, 8, 3, 3)});
  const std::vector<int> labels{1, 2};
  TensorF g;
  auto objective = [&](bool train) {
    const TensorF y = clf.logits(x, train);
    return softmax_cross_entropy(y, labels, g);
  };
  // BN batch statistics make the training-mode objective the function under test.
  objective(true);
  const auto digest = clf.activation_digest();
  clf.zero_grad();
  clf.backward(g);
  clf.release();
  int checked = 0;
  double worst = 0;
  for (auto* p : clf.parameters()) {
    for (std::size_t i = 0; i < p->value.size(); i += std::max<std::size_t>(1, p->value.size() / 7)) {
      const float saved = p->value[i];
      p->value[i] = saved + 1e-2f;
      const double lp = objective(true);
      const bool kink_p = clf.activation_digest() != digest;
      clf.release();
      p->value[i] = saved - 1e-2f;
      const double lm = objective(true);
      const bool kink_m = clf.activation_digest() != digest;
      clf.release();
      p->value[i] = saved;
      if (kink_p || kink_m) continue;  // probe straddles a ReLU kink
      const double fd = (lp - lm) / 2e-2, an = p->grad[i];
      worst = std::max(worst, std::abs(fd - an) / std::max(1e-3, std::abs(fd) + std::abs(an)));
      ++checked;
    }
  }
  EXPECT_GT(checked, 10);
  EXPECT_LT(worst, 1e-2);
}

TEST(Classifier, CheckpointRoundTripIsBitIdentical) {
  TempDir dir("clf");
  ClassifierConfig cc;
  cc.base_channels = 2;
  cc.seed = 9;
  ShapeClassifier clf(cc);
  write_checkpoint(dir / "c.bin", classifier_checkpoint(clf));
  auto back = classifier_from_checkpoint(read_checkpoint(dir / "c.bin"));
  const auto v = random_video(8, 16, 16, 3, 5);
  const auto a = clf.probabilities(std::span<const VideoClip>(&v, 1));
  const auto b = back->probabilities(std::span<const VideoClip>(&v, 1));
  EXPECT_EQ(a, b);
  CheckpointData empty;
  EXPECT_THROW(classifier_from_checkpoint(empty), IoError);
}

TEST(Classifier, TopKIsSortedPermutationPrefix) {
  ClassifierConfig cc;
  cc.base_channels = 2;
  ShapeClassifier clf(cc);
  const auto v = random_video(8, 16, 16, 3, 6);
  const auto p = clf.probabilities(std::span<const VideoClip>(&v, 1)).front();
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
  const auto top = clf.top_k(v, 3);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_GE(p[top[0]], p[top[1]]);
  EXPECT_GE(p[top[1]], p[top[2]]);
  EXPECT_EQ(clf.predict(v), top[0]);
}

TEST(Classifier, LearnsProceduralLabels) {
  ClassifierConfig cc;
  cc.base_channels = 4;
  cc.seed = 1;
  ShapeClassifier clf(cc);
  ClassifierTrainConfig tc;
  tc.steps = 250;
  tc.frames = 8;
  tc.height = 32;
  tc.width = 32;
  const ProceduralCorpus train_set(corpus_for_crop(8, 32, 32, 200, 21));
  const ProceduralCorpus test_set(corpus_for_crop(8, 32, 32, 90, 22));
  train_classifier(clf, train_set, tc);
  EXPECT_GT(classifier_accuracy(clf, test_set, tc, 90), 2.0 / kNumClasses);
}

// ---------------------------------------------------------------------------
// experiments with stub separators

TEST(Experiments, ColorWithOracleIsZeroAndBlackBlendIsHalf) {
  std::vector<VideoClip> clips{random_video(4, 16, 16, 3, 1), random_video(4, 16, 16, 3, 2)};
  std::vector<BlendedSample> seen;
  Separator oracle_spy = [&](std::span<const BlendedSample> batch) {
    seen.insert(seen.end(), batch.begin(), batch.end());
    return oracle_separator()(batch);
  };
  const auto rep = experiment_color(oracle_spy, clips, {"black", "magenta"});
  EXPECT_EQ(rep.results["black"]["loss"], 0.0);
  EXPECT_EQ(rep.results["magenta"]["loss"], 0.0);
  ASSERT_EQ(seen.size(), 4u);
  for (std::size_t i = 0; i < clips[0].data.size(); ++i) ASSERT_FLOAT_EQ(seen[0].blended.data[i], clips[0].data[i] / 2);
  EXPECT_EQ(rep.figures.size(), 1u);
  EXPECT_THROW(experiment_color(oracle_spy, clips, {"ochre"}), std::invalid_argument);
}

TEST(Experiments, DownstreamOracleUnmixedEqualsOriginal) {
  ClassifierConfig cc;
  cc.base_channels = 2;
  ShapeClassifier clf(cc);
  const auto stream = procedural_stream(4);
  const auto s = downstream_scores(oracle_separator(), clf, stream, 10);
  EXPECT_EQ(s.unmixed, s.original);
  const auto rep = experiment_downstream(oracle_separator(), clf, stream, 10);
  EXPECT_EQ(rep.results["b_unmixed"], rep.results["c_original"]);
}

TEST(Experiments, DownstreamIdentityUnmixedEqualsTop1OnBlendTwice) {
  ClassifierConfig cc;
  cc.base_channels = 2;
  ShapeClassifier clf(cc);
  const auto stream = procedural_stream(6);
  const auto s = downstream_scores(identity_separator(), clf, stream, 6);
  double expect = 0;
  for (int k = 0; k < 6; ++k) {
    const auto b = stream.sample(k);
    const int p = clf.predict(clamp01(b.blended));
    expect += downstream_score({p, p}, {b.label1, b.label2});
  }
  EXPECT_NEAR(s.unmixed, expect * 100 / 6, 1e-9);
}

// ---------------------------------------------------------------------------
// experiments with a briefly trained model

class TrainedTiny : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cache_ = std::make_unique<TempDir>("cache");
    recipe_ = tiny_recipe(20);
    model_ = trained_model(recipe_, cache_->path());
  }
  static void TearDownTestSuite() {
    model_.reset();
    cache_.reset();
  }
  static inline std::unique_ptr<TempDir> cache_;
  static inline Recipe recipe_;
  static inline std::unique_ptr<SeparationModel> model_;
};

TEST_F(TrainedTiny, CacheHitReproducesModel) {
  const auto files = std::distance(fs::directory_iterator(cache_->path()), fs::directory_iterator());
  EXPECT_EQ(files, 1);
  auto again = trained_model(recipe_, cache_->path());
  const auto stream = recipe_val_stream(recipe_);
  EXPECT_EQ(validate(*again, stream, 4).total, validate(*model_, stream, 4).total);
}

TEST_F(TrainedTiny, CacheMatchesFreshTraining) {
  auto fresh = trained_model(recipe_, std::nullopt);
  const auto stream = recipe_val_stream(recipe_);
  EXPECT_EQ(validate(*fresh, stream, 4).total, validate(*model_, stream, 4).total);
}

TEST_F(TrainedTiny, RecipeDigestTracksConfig) {
  EXPECT_NE(recipe_digest(recipe_), recipe_digest(with_seed(recipe_, 5)));
  EXPECT_EQ(recipe_digest(recipe_), recipe_digest(tiny_recipe(20)));
}

TEST_F(TrainedTiny, CorrelationIsReproducibleAndBounded) {
  const auto stream = recipe_val_stream(recipe_);
  const auto a = feature_loss_correlation(*model_, stream, 12);
  const auto b = feature_loss_correlation(*model_, stream, 12);
  EXPECT_EQ(a.r_low, b.r_low);
  EXPECT_EQ(a.r_high, b.r_high);
  EXPECT_LE(std::abs(a.r_low), 1.0 + 1e-12);
  EXPECT_LE(std::abs(a.r_high), 1.0 + 1e-12);
  EXPECT_EQ(a.losses.size(), 12u);
  EXPECT_NEAR(pearson(a.losses, a.high_distance), a.r_high, 1e-15);
  EXPECT_THROW(feature_loss_correlation(*model_, stream, 2), std::invalid_argument);
}

TEST_F(TrainedTiny, FrozenReportHasSixCells) {
  const auto rep = experiment_frozen(*model_, *model_, recipe_, 4);
  for (const char* row : {"normal-trained", "frozen-trained"})
    for (const char* col : {"2 frozen", "2 normal", "1 frozen 1 normal"}) {
      ASSERT_TRUE(rep.results[row].contains(col));
      EXPECT_TRUE(std::isfinite(rep.results[row][col]["loss"].get<double>()));
    }
  // Same model in both rows: rows agree exactly.
  EXPECT_EQ(rep.results["normal-trained"], rep.results["frozen-trained"]);
  EXPECT_EQ(rep.figures.size(), 2u);
}

TEST_F(TrainedTiny, SameClassProbeRuns) {
  const auto rep = experiment_same_class(*model_, recipe_, 4);
  EXPECT_TRUE(rep.results.contains("same_class"));
  EXPECT_TRUE(rep.results.contains("any_class"));
}

TEST(Ablations, DepthParameterCountsIncrease) {
  TempDir cache("abl");
  AblationOptions opt;
  opt.seeds = {1};
  opt.val_samples = 2;
  opt.cache_dir = cache.path();
  Recipe r = tiny_recipe(2);
  const auto rep = ablation_depth({EncoderDepth::shallow, EncoderDepth::medium}, r, opt);
  EXPECT_LT(rep.results["shallow"]["parameters"].get<std::size_t>(),
            rep.results["medium"]["parameters"].get<std::size_t>());
  EXPECT_EQ(rep.results["shallow"]["conv_layers"], 7);
  EXPECT_EQ(rep.results["medium"]["conv_layers"], 12);
  // Rerunning hits the cache and reproduces every scalar.
  const auto again = ablation_depth({EncoderDepth::shallow, EncoderDepth::medium}, r, opt);
  EXPECT_EQ(rep.results, again.results);
}

TEST(Ablations, LayerCountReportsBothArms) {
  AblationOptions opt;
  opt.seeds = {1};
  opt.val_samples = 2;
  const auto rep = ablation_layer_count({2, 4}, tiny_recipe(1), opt);
  for (const char* arm : {"predictor", "corrector"})
    for (const char* n : {"n=2", "n=4"}) EXPECT_TRUE(rep.results[arm].contains(n)) << arm << n;
}
