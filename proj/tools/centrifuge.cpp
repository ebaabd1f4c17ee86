// centrifuge: data generation, training, separation and experiment runner.
//
// Exit codes: 0 success, 1 internal error, 2 user or configuration error.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "centrifuge/evalsuite.hpp"

using namespace centrifuge;
using nlohmann::json;

namespace {

struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open config '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UserError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json_atomic(const fs::path& path, const json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for '" + path.string() + "'");
  }
  fs::rename(tmp, path);
}

// FNV-1a over file bytes; directories hash their regular files in name order.
std::string file_digest(const fs::path& path) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  auto eat = [&](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    char buf[1 << 15];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
      for (std::streamsize i = 0; i < in.gcount(); ++i) h = (h ^ static_cast<unsigned char>(buf[i])) * 0x100000001B3ull;
    }
  };
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      for (unsigned char c : fs::relative(f, path).generic_string()) h = (h ^ c) * 0x100000001B3ull;
      eat(f);
    }
  } else {
    eat(path);
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

/// Written at the end of every command; enough to replay it.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::vector<std::uint64_t> seeds;
  json inputs = json::object();  // path -> digest
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void input(const fs::path& p) { inputs[p.string()] = file_digest(p); }

  void write(const fs::path& out_dir) const {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_json_atomic(out_dir / "run_manifest.json", {{"command", command},
                                                      {"argv", argv},
                                                      {"config", config},
                                                      {"seeds", seeds},
                                                      {"inputs", inputs},
                                                      {"outputs", outputs},
                                                      {"runtime_seconds", secs}});
  }
};

std::optional<fs::path> cache_dir() {
  if (const char* p = std::getenv("CENTRIFUGE_CACHE"); p && *p) return fs::path(p);
  return std::nullopt;
}

void make_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UserError("cannot create output directory '" + dir.string() + "'");
}

// Clips [first, first + count) of another corpus.
class SubsetCorpus final : public Corpus {
 public:
  SubsetCorpus(std::shared_ptr<const Corpus> base, std::size_t first, std::size_t count)
      : base_(std::move(base)), first_(first), count_(count) {}
  std::size_t size() const override { return count_; }
  VideoClip clip(std::size_t i) const override { return base_->clip(first_ + i); }
  int label(std::size_t i) const override { return base_->label(first_ + i); }

 private:
  std::shared_ptr<const Corpus> base_;
  std::size_t first_, count_;
};

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenDataArgs& a, RunManifest& run) {
  ProceduralCorpusConfig cfg;
  if (!a.config.empty()) {
    run.input(a.config);
    try {
      cfg = read_json_file(a.config).get<ProceduralCorpusConfig>();
    } catch (const json::exception& e) {
      throw UserError(std::string("invalid corpus config: ") + e.what());
    }
  }
  if (a.seed) cfg.seed = *a.seed;
  if (cfg.num_clips < 1 || cfg.frames < 1 || cfg.height < 1 || cfg.width < 1)
    throw UserError("invalid corpus config: counts and geometry must be positive");
  const fs::path out = a.out;
  make_out_dir(out / "clips");
  const ProceduralCorpus corpus(cfg);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%05zu.rawvid", i);
    save_clip(corpus.clip(i), out / "clips" / name, VideoFormat::rawvid, RawDtype::u8);
    entries.push_back({std::string("clips/") + name, corpus.label(i)});
  }
  write_corpus_manifest(out / "manifest.json", entries);
  run.config = cfg;
  run.seeds = {cfg.seed};
  run.outputs = {(out / "manifest.json").string(), (out / "clips").string()};
  std::cout << "wrote " << entries.size() << " clips to " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config, data, out, resume;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> steps;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig load_run_config(const std::string& path, RunManifest& run) {
  RunConfig rc;
  if (path.empty()) return rc;
  run.input(path);
  const json j = read_json_file(path);
  try {
    if (j.contains("model")) rc.model = j["model"].get<ModelConfig>();
    if (j.contains("train")) rc.train = j["train"].get<TrainConfig>();
  } catch (const json::exception& e) {
    throw UserError(std::string("invalid run config: ") + e.what());
  }
  return rc;
}

int cmd_train(const TrainArgs& a, RunManifest& run) {
  RunConfig rc = load_run_config(a.config, run);
  if (a.seed) {
    rc.model.seed = *a.seed;
    rc.train.data_seed = *a.seed;
  }
  if (a.steps) rc.train.total_steps = *a.steps;
  validate(rc.model);
  validate(rc.train);

  const fs::path manifest = fs::path(a.data) / "manifest.json";
  if (!fs::exists(manifest)) throw UserError("no corpus at '" + a.data + "' (missing manifest.json; run gen-data)");
  run.input(manifest);
  auto corpus = std::make_shared<FileCorpus>(manifest);
  if (corpus->size() < 4) throw UserError("corpus needs at least 4 clips");
  const std::size_t n_val = std::max<std::size_t>(2, corpus->size() / 10);
  auto train_part = std::make_shared<SubsetCorpus>(corpus, 0, corpus->size() - n_val);
  auto val_part = std::make_shared<SubsetCorpus>(corpus, corpus->size() - n_val, n_val);
  const VideoClip probe = corpus->clip(0);
  if (probe.frames < rc.train.stream.frames)
    throw UserError("corpus clips have " + std::to_string(probe.frames) + " frames, training crop needs " +
                    std::to_string(rc.train.stream.frames));

  PairStream train_stream(train_part, rc.train.stream, rc.train.data_seed);
  PairStream val_stream(val_part, rc.train.stream, rc.train.val_seed);
  auto model = build_model(rc.model);

  TrainOptions opt;
  opt.out_dir = fs::path(a.out);
  opt.progress = &std::cerr;
  if (!a.resume.empty()) {
    run.input(a.resume);
    opt.resume = read_checkpoint(a.resume);
  }
  make_out_dir(a.out);
  const auto result = train(*model, train_stream, &val_stream, rc.train, opt);

  run.config = {{"model", rc.model}, {"train", rc.train}, {"data", a.data}};
  run.seeds = {rc.model.seed, rc.train.data_seed, rc.train.val_seed};
  for (const char* f : {"checkpoint.bin", "train_log.csv", "config.json"}) run.outputs.push_back((fs::path(a.out) / f).string());
  std::cout << "final validation loss " << std::setprecision(6) << result.final_val_loss.value_or(NAN) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// separate

struct SeparateArgs {
  std::string checkpoint, input, out;
  bool identity = false;
  int n_select = 2;
};

int cmd_separate(const SeparateArgs& a, RunManifest& run) {
  if (a.n_select != 2) throw UserError("--n-select: only 2 is supported");
  if (a.checkpoint.empty() == !a.identity) throw UserError("give exactly one of --checkpoint or --identity");
  run.input(a.input);
  VideoClip clip;
  try {
    clip = load_clip(a.input);
  } catch (const IoError& e) {
    throw UserError(e.what());
  }
  std::unique_ptr<SeparationModel> model;
  if (!a.identity) {
    run.input(a.checkpoint);
    model = load_model(a.checkpoint);
    run.config["model"] = model->config();
  }
  const auto t0 = std::chrono::steady_clock::now();
  LayerSet layers;
  if (model) {
    layers = model_forward(*model, clip).final_layers;
  } else {
    layers = stack_layers(std::vector<VideoClip>{clip, clip});
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto sel = select_two(layers);

  const fs::path out = a.out;
  make_out_dir(out);
  const int n = layer_count(layers);
  for (int i = 0; i < n; ++i) {
    const auto p = out / ("layer_" + std::to_string(i));
    save_clip(clamp01(extract_layer(layers, i)), p, VideoFormat::framedir);
    run.outputs.push_back(p.string());
  }
  for (auto [name, idx] : {std::pair{"selected_1", sel.i}, std::pair{"selected_2", sel.j}}) {
    const auto p = out / name;
    save_clip(clamp01(extract_layer(layers, idx)), p, VideoFormat::framedir);
    run.outputs.push_back(p.string());
  }
  run.config["selected"] = {sel.i, sel.j};
  run.config["separation_seconds"] = secs;
  std::cout << "layers " << n << " selected " << sel.i << ' ' << sel.j << '\n';
  std::cout << "separation time " << std::fixed << std::setprecision(3) << secs << " s\n";
  return 0;
}

// ---------------------------------------------------------------------------
// experiments

const std::vector<std::string> kExperiments{"identity-baseline", "untrained-baseline", "color",   "frozen",
                                            "downstream",        "correlation",        "same-class", "layer-count",
                                            "depth"};

struct ExperimentArgs {
  std::string which = "all", config, checkpoint, frozen_checkpoint, classifier, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> steps;
  int samples = 64;
  int correlation_samples = 200;
  int classifier_steps = 600;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

class ExperimentRunner {
 public:
  ExperimentRunner(const ExperimentArgs& a, RunManifest& run) : a_(a), run_(run) {
    rc_ = load_run_config(a.config, run);
    if (a.seed) rc_.model.seed = *a.seed;
    if (a.steps) rc_.train.total_steps = *a.steps;
  }

  ExperimentReport run(const std::string& name) {
    if (name == "identity-baseline") {
      ExperimentReport r;
      r.name = "identity_baseline";
      r.results = {{"loss", baseline_identity(val_stream(rc_.train), a_.samples)}};
      return finish(r);
    }
    if (name == "untrained-baseline") {
      ExperimentReport r;
      r.name = "untrained_baseline";
      r.results = {{"loss", baseline_untrained(rc_.model, val_stream(rc_.train), a_.samples)},
                   {"identity", baseline_identity(val_stream(rc_.train), a_.samples)}};
      r.seeds = {rc_.model.seed};
      return finish(r);
    }
    if (name == "color") {
      auto& m = model();
      const auto stream = val_stream(trained_config());
      std::vector<VideoClip> clips;
      for (int k = 0; k < std::min(a_.samples, 32); ++k) clips.push_back(stream.sample(k).v1);
      return finish(experiment_color(model_separator(m), clips,
                                     {"black", "white", "green", "red", "yellow", "blue", "cyan", "magenta"}));
    }
    if (name == "frozen") {
      if (a_.frozen_checkpoint.empty())
        throw UserError("experiment 'frozen' needs --frozen-checkpoint (a model trained with stream.mode = \"frozen\")");
      auto& normal = model();
      run_.input(a_.frozen_checkpoint);
      auto frozen = load_model(a_.frozen_checkpoint);
      return finish(experiment_frozen(normal, *frozen, recipe(), a_.samples));
    }
    if (name == "downstream") {
      auto& m = model();
      auto& clf = classifier();
      return finish(experiment_downstream(model_separator(m), clf, val_stream(trained_config()), a_.samples));
    }
    if (name == "correlation")
      return finish(experiment_correlation(model(), val_stream(trained_config()), a_.correlation_samples));
    if (name == "same-class") return finish(experiment_same_class(model(), recipe(), a_.samples));
    if (name == "layer-count" || name == "depth") {
      AblationOptions opt;
      opt.seeds = a_.seeds;
      opt.val_samples = a_.samples;
      opt.cache_dir = cache_dir();
      opt.progress = &std::cerr;
      const Recipe base = make_recipe(rc_.model, rc_.train);
      if (name == "layer-count") return finish(ablation_layer_count({2, 4}, base, opt));
      return finish(ablation_depth({EncoderDepth::shallow, EncoderDepth::medium, EncoderDepth::deep}, base, opt));
    }
    throw UserError("unknown experiment '" + name + "'");
  }

 private:
  ExperimentReport finish(ExperimentReport r) {
    if (r.config_digest.empty()) r.config_digest = config_digest(run_.config);
    return r;
  }

  PairStream val_stream(const TrainConfig& t) const {
    const auto& s = t.stream;
    auto corpus = std::make_shared<ProceduralCorpus>(corpus_for_crop(s.frames, s.height, s.width, 100, 12));
    return PairStream(corpus, s, t.val_seed);
  }

  SeparationModel& model() {
    if (!model_) {
      if (a_.checkpoint.empty()) throw UserError("this experiment needs --checkpoint (a trained model)");
      run_.input(a_.checkpoint);
      const auto ck = read_checkpoint(a_.checkpoint);
      if (ck.step == 0 && !ck.meta.contains("recipe"))
        throw UserError("checkpoint '" + a_.checkpoint + "' is untrained (step 0)");
      model_ = build_model(ck.model_config());
      restore_model(*model_, ck);
      if (ck.meta.contains("train")) trained_cfg_ = ck.meta["train"].get<TrainConfig>();
      if (ck.meta.contains("recipe")) trained_cfg_ = ck.meta["recipe"]["train"].get<TrainConfig>();
    }
    return *model_;
  }

  const TrainConfig& trained_config() {
    model();
    return trained_cfg_ ? *trained_cfg_ : rc_.train;
  }

  Recipe recipe() { return make_recipe(model().config(), trained_config()); }

  ShapeClassifier& classifier() {
    if (clf_) return *clf_;
    if (!a_.classifier.empty()) {
      run_.input(a_.classifier);
      clf_ = classifier_from_checkpoint(read_checkpoint(a_.classifier));
      return *clf_;
    }
    const auto& s = trained_config().stream;
    ClassifierConfig cc;
    ClassifierTrainConfig tc;
    tc.steps = a_.classifier_steps;
    tc.frames = s.frames;
    tc.height = s.height;
    tc.width = s.width;
    const auto corpus_cfg = corpus_for_crop(s.frames, s.height, s.width, 600, 11);
    const auto key = config_digest({{"classifier", cc}, {"train", tc}, {"corpus", corpus_cfg}});
    const auto dir = cache_dir();
    const fs::path file = dir ? *dir / ("classifier-" + key + ".bin") : fs::path();
    if (dir && fs::exists(file)) {
      clf_ = classifier_from_checkpoint(read_checkpoint(file));
      return *clf_;
    }
    clf_ = std::make_unique<ShapeClassifier>(cc);
    train_classifier(*clf_, ProceduralCorpus(corpus_cfg), tc, &std::cerr);
    if (dir) {
      fs::create_directories(*dir);
      write_checkpoint(file, classifier_checkpoint(*clf_));
    }
    return *clf_;
  }

  const ExperimentArgs& a_;
  RunManifest& run_;
  RunConfig rc_;
  std::unique_ptr<SeparationModel> model_;
  std::optional<TrainConfig> trained_cfg_;
  std::unique_ptr<ShapeClassifier> clf_;
};

int cmd_experiments(const ExperimentArgs& a, RunManifest& run) {
  std::vector<std::string> names;
  if (a.which == "all") {
    names = kExperiments;
    if (a.checkpoint.empty() || a.frozen_checkpoint.empty())
      throw UserError("--which all needs --checkpoint and --frozen-checkpoint");
  } else {
    std::stringstream ss(a.which);
    for (std::string n; std::getline(ss, n, ',');) {
      if (std::find(kExperiments.begin(), kExperiments.end(), n) == kExperiments.end())
        throw UserError("unknown experiment '" + n + "'");
      names.push_back(n);
    }
  }
  make_out_dir(a.out);
  ExperimentRunner runner(a, run);
  json index = json::array();
  for (const auto& n : names) {
    std::cerr << "running " << n << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    auto rep = runner.run(n);
    rep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto files = write_report(rep, a.out);
    json entry = {{"experiment", rep.name}, {"files", json::array()}, {"runtime_seconds", rep.runtime_seconds}};
    for (const auto& f : files) {
      entry["files"].push_back(fs::relative(f, a.out).string());
      run.outputs.push_back(f.string());
    }
    index.push_back(entry);
    std::cout << rep.name << ": " << rep.results.dump() << '\n';
  }
  write_json_atomic(fs::path(a.out) / "index.json", index);
  run.outputs.push_back((fs::path(a.out) / "index.json").string());
  run.config["which"] = names;
  return 0;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const std::string& path) {
  const json j = read_json_file(path);
  if (!j.contains("experiment") || !j.contains("results")) throw UserError("'" + path + "' is not an experiment report");
  std::cout << "experiment  " << j["experiment"].get<std::string>() << '\n';
  if (j.contains("config_digest")) std::cout << "config      " << j["config_digest"].get<std::string>() << '\n';
  if (j.contains("seeds")) std::cout << "seeds       " << j["seeds"].dump() << '\n';
  if (j.contains("runtime_seconds"))
    std::cout << "runtime     " << std::fixed << std::setprecision(1) << j["runtime_seconds"].get<double>() << " s\n";
  std::vector<std::pair<std::string, std::string>> rows;
  detail::flatten(j["results"], "", rows);
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.first.size());
  for (const auto& [k, v] : rows) std::cout << "  " << std::left << std::setw(static_cast<int>(width) + 2) << k << v << '\n';
  if (j.contains("notes"))
    for (const auto& n : j["notes"]) std::cout << "note: " << n.get<std::string>() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video layer separation: data, training, separation and experiments"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Materialize a procedural corpus with a manifest");
  gen_cmd->add_option("--config", gen.config, "Corpus config JSON");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Override the corpus seed");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a separation model on a corpus");
  train_cmd->add_option("--config", tr.config, "Run config JSON with \"model\" and \"train\" sections");
  train_cmd->add_option("--data", tr.data, "Corpus directory from gen-data")->required();
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_option("--resume", tr.resume, "Continue from this checkpoint");
  train_cmd->add_option("--seed", tr.seed, "Override model and data seeds");
  train_cmd->add_option("--steps", tr.steps, "Override total steps");

  SeparateArgs sep;
  auto* sep_cmd = app.add_subcommand("separate", "Split a video into layers");
  sep_cmd->add_option("--checkpoint", sep.checkpoint, "Trained checkpoint");
  sep_cmd->add_flag("--identity", sep.identity, "Echo the input into two layers (no model)");
  sep_cmd->add_option("--input", sep.input, "Input video (rawvid file or frame directory)")->required();
  sep_cmd->add_option("--out", sep.out, "Output directory")->required();
  sep_cmd->add_option("--n-select", sep.n_select, "Number of selected layers");

  ExperimentArgs ex;
  auto* ex_cmd = app.add_subcommand("experiments", "Run evaluation experiments");
  ex_cmd->add_option("--which", ex.which, "Comma-separated experiment names or 'all'")->default_str("all");
  ex_cmd->add_option("--config", ex.config, "Run config JSON for baselines and ablations");
  ex_cmd->add_option("--checkpoint", ex.checkpoint, "Normally trained checkpoint");
  ex_cmd->add_option("--frozen-checkpoint", ex.frozen_checkpoint, "Checkpoint trained on frozen pairs");
  ex_cmd->add_option("--classifier", ex.classifier, "Shape classifier checkpoint (trained and cached if absent)");
  ex_cmd->add_option("--out", ex.out, "Report directory")->required();
  ex_cmd->add_option("--seed", ex.seed, "Override the model seed");
  ex_cmd->add_option("--steps", ex.steps, "Override training steps for ablations");
  ex_cmd->add_option("--samples", ex.samples, "Evaluation pairs per condition");
  ex_cmd->add_option("--correlation-samples", ex.correlation_samples, "Pairs for the correlation analysis");
  ex_cmd->add_option("--classifier-steps", ex.classifier_steps, "Classifier training steps");
  ex_cmd->add_option("--seeds", ex.seeds, "Seeds for ablations");

  std::string report_path;
  auto* rep_cmd = app.add_subcommand("report", "Pretty-print an experiment report");
  rep_cmd->add_option("report", report_path, "Report JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  RunManifest run;
  run.argv.assign(argv, argv + argc);
  try {
    if (*gen_cmd) {
      run.command = "gen-data";
      const int rc = cmd_gen_data(gen, run);
      run.write(gen.out);
      return rc;
    }
    if (*train_cmd) {
      run.command = "train";
      const int rc = cmd_train(tr, run);
      run.write(tr.out);
      return rc;
    }
    if (*sep_cmd) {
      run.command = "separate";
      const int rc = cmd_separate(sep, run);
      run.write(sep.out);
      return rc;
    }
    if (*ex_cmd) {
      run.command = "experiments";
      const int rc = cmd_experiments(ex, run);
      run.write(ex.out);
      return rc;
    }
    return cmd_report(report_path);
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
