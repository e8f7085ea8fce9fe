// mcmil: train and evaluate weakly-supervised multi-camera anomaly scoring
// models over precomputed per-clip features.
//
// Subcommands: synth, train, score, eval, experiment, convert, gradcheck.
// Exit codes: 0 success, 1 validation, 2 runtime/numeric failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"

#include "mcmil/checkpoint.hpp"
#include "mcmil/dataset.hpp"
#include "mcmil/report.hpp"
#include "mcmil/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mcmil;

namespace {

std::string resolve_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("MCMIL_OUT_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  throw ValidationError("no output directory: pass --out or set MCMIL_OUT_DIR");
}

// Fills flag targets from an optional JSON config file. Precedence is
// flags > file > defaults; unknown keys in the file are rejected.
class ConfigFile {
 public:
  void load(const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    try {
      in >> doc_;
    } catch (const json::exception& e) {
      throw ValidationError(std::string("config parse error: ") + e.what());
    }
    if (!doc_.is_object()) throw ValidationError("config file must hold a JSON object");
    loaded_ = true;
  }

  template <typename T>
  void apply(const CLI::Option* opt, const std::string& key, T& value) {
    known_.insert(key);
    if (!loaded_ || opt->count() > 0 || !doc_.contains(key)) return;
    try {
      value = doc_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError("config key '" + key + "' has the wrong type");
    }
  }

  void finish() const {
    if (!loaded_) return;
    for (const auto& [key, _] : doc_.items()) {
      if (!known_.contains(key)) {
        throw ValidationError("unknown config key '" + key + "'");
      }
    }
  }

 private:
  json doc_;
  bool loaded_ = false;
  std::set<std::string> known_;
};

void dump_effective_config(const fs::path& out_dir, const json& effective) {
  std::ofstream out(out_dir / "effective_config.json", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write effective_config.json");
  out << effective.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
  std::string out;
  std::string config;
  SyntheticSpec spec;
};

void run_synth(const SynthOpts& o) {
  o.spec.validate();
  const fs::path out_dir = resolve_out_dir(o.out);
  Dataset ds = generate_synthetic(o.spec);
  fs::create_directories(out_dir);
  dump_effective_config(out_dir, json{{"cameras", o.spec.n_cameras},
                                      {"dim", o.spec.feature_dim},
                                      {"scenes", o.spec.scenes_per_class},
                                      {"clips_min", o.spec.clip_min},
                                      {"clips_max", o.spec.clip_max},
                                      {"normal_mean", o.spec.normal_mean},
                                      {"normal_scale", o.spec.normal_scale},
                                      {"shift", o.spec.anomaly_shift},
                                      {"segment_min", o.spec.segment_min},
                                      {"segment_max", o.spec.segment_max},
                                      {"occlusion", o.spec.occlusion_probability},
                                      {"view_transforms", o.spec.camera_view_transforms},
                                      {"seed", o.spec.seed}});
  write_dataset(ds, out_dir.string());
  std::cout << "wrote " << (ds.train.size() + ds.test.size()) << " scenes ("
            << ds.train.size() << " train, " << ds.test.size() << " test) to "
            << (out_dir / "manifest.json").string() << "\n";
}

// ---------------------------------------------------------------------------
// shared train flags

struct TrainFlags {
  std::string manifest;
  std::string mode = "sc";
  int camera = 0;
  std::string combine = "max";
  bool multiview = false;
  int split_layers = 1;
  int hidden1 = 512;
  int hidden2 = 32;
  int iterations = 20000;
  int batch_normal = 30;
  int batch_anomalous = 30;
  double lambda1 = 8e-5;
  double lambda2 = 8e-5;
  double lambda3 = 0.01;
  bool normalize_bags = false;
  double lr = 1e-3;
  double eps = 1e-8;
  double keep_prob = 0.4;
  uint64_t seed = 0;
  int eval_every = 0;
};

struct FlagRefs {
  std::map<std::string, CLI::Option*> opts;
};

FlagRefs add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_mode) {
  FlagRefs r;
  r.opts["manifest"] =
      cmd->add_option("--manifest", f.manifest, "dataset manifest JSON")->required();
  if (with_mode) {
    r.opts["mode"] = cmd->add_option("--mode", f.mode, "training mode: sc|mc|mc-bagunion");
    r.opts["camera"] = cmd->add_option("--camera", f.camera, "camera index for sc mode");
    r.opts["combine"] = cmd->add_option("--combine", f.combine, "mc loss combinator: max|min|mean");
    r.opts["multiview"] = cmd->add_flag("--multiview", f.multiview,
                                        "camera-specific weights for the first layers");
    r.opts["split-layer"] =
        cmd->add_option("--split-layer", f.split_layers, "layers routed per camera (1-3)");
  }
  r.opts["hidden1"] = cmd->add_option("--hidden1", f.hidden1, "first hidden width");
  r.opts["hidden2"] = cmd->add_option("--hidden2", f.hidden2, "second hidden width");
  r.opts["iters"] = cmd->add_option("--iters", f.iterations, "training iterations");
  r.opts["batch-normal"] = cmd->add_option("--batch-normal", f.batch_normal, "normal bags/batch");
  r.opts["batch-anomalous"] =
      cmd->add_option("--batch-anomalous", f.batch_anomalous, "anomalous bags/batch");
  r.opts["lambda1"] = cmd->add_option("--lambda1", f.lambda1, "smoothness weight");
  r.opts["lambda2"] = cmd->add_option("--lambda2", f.lambda2, "sparsity weight");
  r.opts["lambda3"] = cmd->add_option("--lambda3", f.lambda3, "weight decay coefficient");
  r.opts["normalize-bags"] =
      cmd->add_flag("--normalize-bags", f.normalize_bags, "normalize loss terms by bag size");
  r.opts["lr"] = cmd->add_option("--lr", f.lr, "learning rate");
  r.opts["eps"] = cmd->add_option("--eps", f.eps, "optimizer epsilon");
  r.opts["keep-prob"] = cmd->add_option("--keep-prob", f.keep_prob,
                                        "dropout keep probability (0.4 = 60% dropout)");
  r.opts["seed"] = cmd->add_option("--seed", f.seed, "RNG seed");
  r.opts["eval-every"] =
      cmd->add_option("--eval-every", f.eval_every, "record loss components every N iterations");
  return r;
}

void merge_train_flags(ConfigFile& cf, const FlagRefs& r, TrainFlags& f) {
  auto get = [&](const char* k) { return r.opts.at(k); };
  if (r.opts.contains("mode")) {
    cf.apply(get("mode"), "mode", f.mode);
    cf.apply(get("camera"), "camera", f.camera);
    cf.apply(get("combine"), "combine", f.combine);
    cf.apply(get("multiview"), "multiview", f.multiview);
    cf.apply(get("split-layer"), "split_layer", f.split_layers);
  }
  cf.apply(get("hidden1"), "hidden1", f.hidden1);
  cf.apply(get("hidden2"), "hidden2", f.hidden2);
  cf.apply(get("iters"), "iters", f.iterations);
  cf.apply(get("batch-normal"), "batch_normal", f.batch_normal);
  cf.apply(get("batch-anomalous"), "batch_anomalous", f.batch_anomalous);
  cf.apply(get("lambda1"), "lambda1", f.lambda1);
  cf.apply(get("lambda2"), "lambda2", f.lambda2);
  cf.apply(get("lambda3"), "lambda3", f.lambda3);
  cf.apply(get("normalize-bags"), "normalize_bags", f.normalize_bags);
  cf.apply(get("lr"), "lr", f.lr);
  cf.apply(get("eps"), "eps", f.eps);
  cf.apply(get("keep-prob"), "keep_prob", f.keep_prob);
  cf.apply(get("seed"), "seed", f.seed);
  cf.apply(get("eval-every"), "eval_every", f.eval_every);
}

TrainConfig to_train_config(const TrainFlags& f) {
  TrainConfig cfg;
  cfg.mode = parse_train_mode(f.mode);
  cfg.camera = f.camera;
  cfg.multiview = f.multiview;
  cfg.split_layers = f.split_layers;
  cfg.hidden1 = f.hidden1;
  cfg.hidden2 = f.hidden2;
  cfg.iterations = f.iterations;
  cfg.batch_normal = f.batch_normal;
  cfg.batch_anomalous = f.batch_anomalous;
  cfg.loss.lambda1 = f.lambda1;
  cfg.loss.lambda2 = f.lambda2;
  cfg.loss.lambda3 = f.lambda3;
  cfg.loss.combinator = parse_combinator(f.combine);
  cfg.loss.normalize_by_bag_size = f.normalize_bags;
  cfg.optimizer.learning_rate = f.lr;
  cfg.optimizer.epsilon = f.eps;
  cfg.keep_prob = f.keep_prob;
  cfg.seed = f.seed;
  cfg.eval_every = f.eval_every;
  return cfg;
}

json train_flags_json(const TrainFlags& f) {
  return json{{"manifest", f.manifest},
              {"mode", f.mode},
              {"camera", f.camera},
              {"combine", f.combine},
              {"multiview", f.multiview},
              {"split_layer", f.split_layers},
              {"hidden1", f.hidden1},
              {"hidden2", f.hidden2},
              {"iters", f.iterations},
              {"batch_normal", f.batch_normal},
              {"batch_anomalous", f.batch_anomalous},
              {"lambda1", f.lambda1},
              {"lambda2", f.lambda2},
              {"lambda3", f.lambda3},
              {"normalize_bags", f.normalize_bags},
              {"lr", f.lr},
              {"eps", f.eps},
              {"keep_prob", f.keep_prob},
              {"seed", f.seed},
              {"eval_every", f.eval_every}};
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  TrainFlags flags;
  std::string out;
};

void run_train(const TrainOpts& o) {
  const Dataset ds = load_manifest(o.flags.manifest);
  const TrainConfig cfg = to_train_config(o.flags);
  cfg.validate(ds);
  const fs::path out_dir = resolve_out_dir(o.out);
  fs::create_directories(out_dir);
  dump_effective_config(out_dir, train_flags_json(o.flags));

  const TrainResult result = train(ds, cfg);
  save_checkpoint((out_dir / "checkpoint.mcml").string(), result.params);
  write_trace_csv((out_dir / "trace.csv").string(), result.trace);

  std::cout << "trained " << to_string(cfg.mode) << " for " << cfg.iterations << " iterations in "
            << result.trace.wall_seconds << " s";
  if (!result.trace.total_loss.empty()) {
    std::cout << "; final batch loss " << result.trace.total_loss.back();
  }
  std::cout << "\ncheckpoint: " << (out_dir / "checkpoint.mcml").string() << "\n";
}

// ---------------------------------------------------------------------------
// score

struct ScoreOpts {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::string out;
};

void run_score(const ScoreOpts& o) {
  if (o.split != "test" && o.split != "train" && o.split != "all") {
    throw ValidationError("--split must be test|train|all");
  }
  const Dataset ds = load_manifest(o.manifest);
  const RegressorParams params = load_checkpoint(o.checkpoint);
  if (params.input_dim() != ds.feature_dim) {
    throw ValidationError("checkpoint input dim " + std::to_string(params.input_dim()) +
                          " != manifest feature_dim " + std::to_string(ds.feature_dim));
  }
  const fs::path out_dir = resolve_out_dir(o.out);
  fs::create_directories(out_dir);

  std::ofstream out(out_dir / "scores.csv", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write scores.csv");
  out << "scene,camera,clip,score\n";
  auto emit = [&](const std::vector<MultiCameraScene>& scenes) {
    for (const auto& scene : scenes) {
      const auto bags = score_scene(params, scene);
      for (size_t c = 0; c < bags.size(); ++c) {
        for (size_t j = 0; j < bags[c].scores.size(); ++j) {
          out << scene.id << ',' << ds.cameras[c] << ',' << j << ','
              << std::setprecision(17) << bags[c].scores[j] << '\n';
        }
      }
    }
  };
  if (o.split != "test") emit(ds.train);
  if (o.split != "train") emit(ds.test);
  std::cout << "wrote " << (out_dir / "scores.csv").string() << "\n";
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string checkpoint;
  std::string manifest;
  std::string fuse = "max";
  CLI::Option* fuse_opt = nullptr;
  double beta = 0.5;
  double threshold = 0.5;
  std::string out;
};

void run_eval(const EvalOpts& o) {
  const Dataset ds = load_manifest(o.manifest);
  const RegressorParams params = load_checkpoint(o.checkpoint);
  if (params.input_dim() != ds.feature_dim) {
    throw ValidationError("checkpoint input dim " + std::to_string(params.input_dim()) +
                          " != manifest feature_dim " + std::to_string(ds.feature_dim));
  }
  const bool fuse_requested = o.fuse_opt != nullptr && o.fuse_opt->count() > 0;
  if (fuse_requested && ds.num_cameras() < 2) {
    throw ValidationError("--fuse needs at least 2 cameras; manifest has " +
                          std::to_string(ds.num_cameras()));
  }
  FusionConfig fusion;
  fusion.strategy = parse_fusion(o.fuse);
  fusion.beta = o.beta;
  fusion.validate();

  const fs::path out_dir = resolve_out_dir(o.out);
  fs::create_directories(out_dir);
  dump_effective_config(out_dir, json{{"checkpoint", o.checkpoint},
                                      {"manifest", o.manifest},
                                      {"fuse", o.fuse},
                                      {"beta", o.beta},
                                      {"threshold", o.threshold}});

  const auto targets = evaluate_model(params, ds, fusion, o.threshold, true);
  write_metrics_csv((out_dir / "metrics.csv").string(), targets);
  const std::string table = format_metrics_table(targets);
  {
    std::ofstream out(out_dir / "metrics.txt", std::ios::binary | std::ios::trunc);
    out << table;
  }
  for (const auto& t : targets) {
    write_roc_csv((out_dir / ("roc_" + t.name + ".csv")).string(), t.roc);
    write_roc_svg((out_dir / ("roc_" + t.name + ".svg")).string(), t.roc);
  }
  std::cout << table;
}

// ---------------------------------------------------------------------------
// experiment

struct ExperimentOpts {
  TrainFlags flags;
  std::vector<std::string> modes;
  int repeats = 5;
  std::string fuse = "max";
  double beta = 0.5;
  double threshold = 0.5;
  bool sequential = false;
  std::string out;
};

TrainConfig mode_token_to_config(const std::string& token, const TrainFlags& base) {
  TrainFlags f = base;
  std::string body = token;
  f.multiview = false;
  if (body.size() > 3 && body.substr(body.size() - 3) == "+mv") {
    f.multiview = true;
    body = body.substr(0, body.size() - 3);
  }
  if (body.rfind("sc@", 0) == 0) {
    f.mode = "sc";
    f.camera = std::stoi(body.substr(3));
  } else if (body == "mc-max" || body == "mc-min" || body == "mc-mean") {
    f.mode = "mc";
    f.combine = body.substr(3);
  } else if (body == "union") {
    f.mode = "mc-bagunion";
  } else {
    throw ValidationError("unknown mode token '" + token +
                          "' (expected sc@K, mc-max|mc-min|mc-mean, union, optional +mv)");
  }
  return to_train_config(f);
}

void run_experiment_cmd(const ExperimentOpts& o) {
  const Dataset ds = load_manifest(o.flags.manifest);
  if (o.repeats < 1) throw ValidationError("--repeats must be >= 1");

  std::vector<std::string> modes = o.modes;
  if (modes.empty()) {
    for (int c = 0; c < ds.num_cameras(); ++c) modes.push_back("sc@" + std::to_string(c));
    if (ds.num_cameras() >= 2) {
      modes.push_back("mc-max");
      modes.push_back("union+mv");
    }
  }

  FusionConfig fusion;
  fusion.strategy = parse_fusion(o.fuse);
  fusion.beta = o.beta;
  fusion.validate();

  // Validate every mode before training anything.
  std::vector<std::pair<std::string, TrainConfig>> configs;
  for (const auto& token : modes) {
    TrainConfig cfg = mode_token_to_config(token, o.flags);
    cfg.validate(ds);
    configs.emplace_back(token, cfg);
  }

  const fs::path out_dir = resolve_out_dir(o.out);
  fs::create_directories(out_dir);
  json eff = train_flags_json(o.flags);
  eff["modes"] = modes;
  eff["repeats"] = o.repeats;
  eff["fuse"] = o.fuse;
  eff["beta"] = o.beta;
  eff["threshold"] = o.threshold;
  eff.erase("mode");
  eff.erase("camera");
  eff.erase("combine");
  eff.erase("multiview");
  dump_effective_config(out_dir, eff);

  std::vector<std::pair<std::string, ExperimentResult>> by_mode;
  for (const auto& [token, cfg] : configs) {
    std::cerr << "running " << token << " x" << o.repeats << " ...\n";
    by_mode.emplace_back(token,
                         run_experiment(ds, cfg, o.repeats, fusion, o.threshold, !o.sequential));
  }

  write_experiment_csv((out_dir / "report.csv").string(), by_mode);
  const std::string table = format_experiment_table(by_mode);
  {
    std::ofstream out(out_dir / "report.txt", std::ios::binary | std::ios::trunc);
    out << table;
  }
  std::cout << table;
}

// ---------------------------------------------------------------------------
// convert

struct ConvertOpts {
  std::string in;
  std::string out;
};

void run_convert(const ConvertOpts& o) {
  const Matrix m = read_feature_file(o.in);  // accepts CSV or MCVF
  const fs::path out_dir = resolve_out_dir(o.out);
  fs::create_directories(out_dir);
  const fs::path target = out_dir / (fs::path(o.in).stem().string() + ".mcvf");
  write_feature_file(target.string(), m);
  std::cout << "wrote " << target.string() << " (" << m.rows << " clips x " << m.cols << ")\n";
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOpts {
  int cameras = 2;
  int dim = 6;
  uint64_t seed = 0;
  double h = 1e-5;
  double tol = 1e-4;
  double abs_tol = 1e-7;
};

void run_gradcheck(const GradcheckOpts& o) {
  SyntheticSpec spec;
  spec.n_cameras = o.cameras;
  spec.feature_dim = o.dim;
  spec.scenes_per_class = 4;
  spec.clip_min = 3;
  spec.clip_max = 5;
  spec.segment_min = 1;
  spec.segment_max = 2;
  spec.occlusion_probability = 0.0;
  spec.seed = o.seed;
  const Dataset ds = generate_synthetic(spec);

  struct ModeSpec {
    std::string name;
    TrainMode mode;
    Combinator comb;
    bool multiview;
  };
  std::vector<ModeSpec> specs = {
      {"sc", TrainMode::ScMil, Combinator::Max, false},
      {"mc-max", TrainMode::McCombined, Combinator::Max, false},
      {"mc-min", TrainMode::McCombined, Combinator::Min, false},
      {"mc-mean", TrainMode::McCombined, Combinator::Mean, false},
      {"bag-union", TrainMode::McBagUnion, Combinator::Max, false},
      {"sc+mv", TrainMode::ScMil, Combinator::Max, true},
      {"mc-max+mv", TrainMode::McCombined, Combinator::Max, true},
      {"bag-union+mv", TrainMode::McBagUnion, Combinator::Max, true},
  };

  bool all_pass = true;
  for (const auto& ms : specs) {
    TrainConfig cfg;
    cfg.mode = ms.mode;
    cfg.camera = 0;
    cfg.loss.combinator = ms.comb;
    cfg.multiview = ms.multiview;
    cfg.split_layers = 1;
    cfg.hidden1 = 8;
    cfg.hidden2 = 5;
    cfg.seed = o.seed;
    const RegressorParams params =
        init_params(cfg.layer_dims(ds.feature_dim), derive_seed(o.seed, 77),
                    ms.multiview ? ds.num_cameras() : 0, ms.multiview ? 1 : 0);
    const GradCheckReport rep = gradient_check(params, ds, cfg, o.h, o.tol, o.abs_tol);
    all_pass = all_pass && rep.pass;
    std::cout << (rep.pass ? "PASS" : "FAIL") << "  " << ms.name << "  max rel err "
              << rep.max_rel_err << "  max abs err " << rep.max_abs_err << "  ("
              << rep.coords_checked << " coords)\n";
  }
  if (!all_pass) throw DivergenceError("gradient check failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-camera MIL anomaly scoring toolkit"};
  app.require_subcommand(1);

  SynthOpts synth;
  std::string synth_config;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic multi-camera dataset");
  auto* s_out = synth_cmd->add_option("--out", synth.out, "output directory");
  auto* s_cam = synth_cmd->add_option("--cameras", synth.spec.n_cameras, "number of cameras");
  auto* s_scenes =
      synth_cmd->add_option("--scenes", synth.spec.scenes_per_class, "scenes per class");
  auto* s_dim = synth_cmd->add_option("--dim", synth.spec.feature_dim, "feature dimension");
  auto* s_cmin = synth_cmd->add_option("--clips-min", synth.spec.clip_min, "min clips per scene");
  auto* s_cmax = synth_cmd->add_option("--clips-max", synth.spec.clip_max, "max clips per scene");
  auto* s_occ = synth_cmd->add_option("--occlusion", synth.spec.occlusion_probability,
                                      "per-camera segment occlusion probability");
  auto* s_shift = synth_cmd->add_option("--shift", synth.spec.anomaly_shift, "anomaly shift magnitude");
  auto* s_nmean = synth_cmd->add_option("--normal-mean", synth.spec.normal_mean, "normal cluster mean");
  auto* s_nscale =
      synth_cmd->add_option("--normal-scale", synth.spec.normal_scale, "normal cluster scale");
  auto* s_smin = synth_cmd->add_option("--seg-min", synth.spec.segment_min, "min segment clips");
  auto* s_smax = synth_cmd->add_option("--seg-max", synth.spec.segment_max, "max segment clips");
  auto* s_views = synth_cmd->add_flag("--view-transforms,!--no-view-transforms",
                                      synth.spec.camera_view_transforms,
                                      "per-camera orthogonal view transforms (default on)");
  auto* s_seed = synth_cmd->add_option("--seed", synth.spec.seed, "RNG seed");
  synth_cmd->add_option("--config", synth_config, "JSON config file");
  synth_cmd->callback([&] {
    ConfigFile cf;
    cf.load(synth_config);
    cf.apply(s_out, "out", synth.out);
    cf.apply(s_cam, "cameras", synth.spec.n_cameras);
    cf.apply(s_scenes, "scenes", synth.spec.scenes_per_class);
    cf.apply(s_dim, "dim", synth.spec.feature_dim);
    cf.apply(s_cmin, "clips_min", synth.spec.clip_min);
    cf.apply(s_cmax, "clips_max", synth.spec.clip_max);
    cf.apply(s_occ, "occlusion", synth.spec.occlusion_probability);
    cf.apply(s_shift, "shift", synth.spec.anomaly_shift);
    cf.apply(s_nmean, "normal_mean", synth.spec.normal_mean);
    cf.apply(s_nscale, "normal_scale", synth.spec.normal_scale);
    cf.apply(s_smin, "seg_min", synth.spec.segment_min);
    cf.apply(s_smax, "seg_max", synth.spec.segment_max);
    cf.apply(s_views, "view_transforms", synth.spec.camera_view_transforms);
    cf.apply(s_seed, "seed", synth.spec.seed);
    cf.finish();
    run_synth(synth);
  });

  TrainOpts train_opts;
  std::string train_config;
  auto* train_cmd = app.add_subcommand("train", "train a scoring model");
  FlagRefs train_refs = add_train_flags(train_cmd, train_opts.flags, true);
  auto* t_out = train_cmd->add_option("--out", train_opts.out, "output directory");
  train_cmd->add_option("--config", train_config, "JSON config file");
  train_cmd->callback([&] {
    ConfigFile cf;
    cf.load(train_config);
    merge_train_flags(cf, train_refs, train_opts.flags);
    cf.apply(t_out, "out", train_opts.out);
    cf.apply(train_refs.opts.at("manifest"), "manifest", train_opts.flags.manifest);
    cf.finish();
    run_train(train_opts);
  });

  ScoreOpts score_opts;
  auto* score_cmd = app.add_subcommand("score", "emit per-clip scores for a checkpoint");
  score_cmd->add_option("--checkpoint", score_opts.checkpoint, "model checkpoint")->required();
  score_cmd->add_option("--manifest", score_opts.manifest, "dataset manifest")->required();
  score_cmd->add_option("--split", score_opts.split, "test|train|all (default test)");
  score_cmd->add_option("--out", score_opts.out, "output directory");
  score_cmd->callback([&] { run_score(score_opts); });

  EvalOpts eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "frame-level metrics and ROC for a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--manifest", eval_opts.manifest, "dataset manifest")->required();
  eval_opts.fuse_opt =
      eval_cmd->add_option("--fuse", eval_opts.fuse, "late fusion: linear|max|min (default max)");
  eval_cmd->add_option("--beta", eval_opts.beta, "linear fusion weight for camera 1");
  eval_cmd->add_option("--threshold", eval_opts.threshold, "decision threshold (default 0.5)");
  eval_cmd->add_option("--out", eval_opts.out, "output directory");
  eval_cmd->callback([&] { run_eval(eval_opts); });

  ExperimentOpts exp_opts;
  std::string exp_config;
  auto* exp_cmd =
      app.add_subcommand("experiment", "repeated train+eval protocol with aggregate report");
  FlagRefs exp_refs = add_train_flags(exp_cmd, exp_opts.flags, false);
  auto* e_modes = exp_cmd->add_option(
      "--modes", exp_opts.modes,
      "mode tokens: sc@K, mc-max|mc-min|mc-mean, union; optional +mv suffix")->delimiter(',');
  auto* e_repeats = exp_cmd->add_option("--repeats", exp_opts.repeats, "repeats per mode");
  auto* e_fuse = exp_cmd->add_option("--fuse", exp_opts.fuse, "late fusion for the fused target");
  auto* e_beta = exp_cmd->add_option("--beta", exp_opts.beta, "linear fusion weight");
  auto* e_thr = exp_cmd->add_option("--threshold", exp_opts.threshold, "decision threshold");
  exp_cmd->add_flag("--sequential", exp_opts.sequential, "disable parallel repeats");
  auto* e_out = exp_cmd->add_option("--out", exp_opts.out, "output directory");
  exp_cmd->add_option("--config", exp_config, "JSON config file");
  exp_cmd->callback([&] {
    ConfigFile cf;
    cf.load(exp_config);
    merge_train_flags(cf, exp_refs, exp_opts.flags);
    cf.apply(e_modes, "modes", exp_opts.modes);
    cf.apply(e_repeats, "repeats", exp_opts.repeats);
    cf.apply(e_fuse, "fuse", exp_opts.fuse);
    cf.apply(e_beta, "beta", exp_opts.beta);
    cf.apply(e_thr, "threshold", exp_opts.threshold);
    cf.apply(e_out, "out", exp_opts.out);
    cf.finish();
    run_experiment_cmd(exp_opts);
  });

  ConvertOpts conv_opts;
  auto* conv_cmd = app.add_subcommand("convert", "convert a CSV feature matrix to MCVF");
  conv_cmd->add_option("--in", conv_opts.in, "input CSV (one clip per row)")->required();
  conv_cmd->add_option("--out", conv_opts.out, "output directory");
  conv_cmd->callback([&] { run_convert(conv_opts); });

  GradcheckOpts gc_opts;
  auto* gc_cmd = app.add_subcommand("gradcheck", "verify analytic gradients of every loss mode");
  gc_cmd->add_option("--cameras", gc_opts.cameras, "cameras in the toy dataset");
  gc_cmd->add_option("--dim", gc_opts.dim, "toy feature dimension");
  gc_cmd->add_option("--seed", gc_opts.seed, "RNG seed");
  gc_cmd->add_option("--step", gc_opts.h, "central difference step");
  gc_cmd->add_option("--tol", gc_opts.tol, "relative error tolerance");
  gc_cmd->add_option("--abs-tol", gc_opts.abs_tol, "absolute fallback tolerance");
  gc_cmd->callback([&] { run_gradcheck(gc_opts); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
