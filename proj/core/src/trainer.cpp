#include "mcmil/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <numeric>

namespace mcmil {

namespace {

// Independent seed streams derived from the run seed.
constexpr uint64_t kInitStream = 1;
constexpr uint64_t kBatchStream = 2;
constexpr uint64_t kDropoutStream = 3;
constexpr uint64_t kGradCheckStream = 4;

uint64_t mask_key(uint64_t dropout_seed, int iteration, int pair, int role, int clip) {
  uint64_t k = dropout_seed;
  k = mix64(k ^ static_cast<uint64_t>(iteration));
  k = mix64(k ^ static_cast<uint64_t>(pair));
  k = mix64(k ^ static_cast<uint64_t>(role));
  k = mix64(k ^ static_cast<uint64_t>(clip));
  return k;
}

void zero_params(RegressorParams& p) {
  for (auto& lp : p.shared) {
    std::fill(lp.w.data.begin(), lp.w.data.end(), 0.0);
    std::fill(lp.b.begin(), lp.b.end(), 0.0);
  }
  for (auto& cam : p.variants) {
    for (auto& lp : cam) {
      std::fill(lp.w.data.begin(), lp.w.data.end(), 0.0);
      std::fill(lp.b.begin(), lp.b.end(), 0.0);
    }
  }
}

/// Weight-decay gradient of lambda3 * ||W||_F^2 over the active weight set
/// (the same tensors weight_norm_sq() sums).
void add_decay_grads(const RegressorParams& params, double lambda3, RegressorParams& grads) {
  if (lambda3 == 0.0) return;
  const double c = 2.0 * lambda3;
  const int first_shared = params.multiview() ? params.split_layers : 0;
  for (int l = first_shared; l < params.num_layers(); ++l) {
    const auto& w = params.shared[l].w.data;
    auto& g = grads.shared[l].w.data;
    for (size_t i = 0; i < w.size(); ++i) g[i] += c * w[i];
  }
  for (size_t cam = 0; cam < params.variants.size(); ++cam) {
    for (size_t l = 0; l < params.variants[cam].size(); ++l) {
      const auto& w = params.variants[cam][l].w.data;
      auto& g = grads.variants[cam][l].w.data;
      for (size_t i = 0; i < w.size(); ++i) g[i] += c * w[i];
    }
  }
}

struct SceneTapes {
  ScoreBag bag;
  std::vector<ForwardTape> tapes;
};

// Forwards every clip of `bag` in one mode. `masks` is indexed by clip and
// shared across cameras so the dropout draw does not depend on camera count.
SceneTapes forward_bag(const RegressorParams& params, const ClipBag& bag,
                       const std::vector<DropoutMasks>* masks) {
  SceneTapes out;
  out.bag.scene_id = bag.scene_id;
  out.bag.camera_id = bag.camera_id;
  out.bag.label = bag.label;
  out.bag.scores.resize(bag.n_clips());
  out.tapes.resize(bag.n_clips());
  const int camera = params.multiview() ? bag.camera_id : -1;
  for (int j = 0; j < bag.n_clips(); ++j) {
    std::span<const double> x(bag.features.row(j), static_cast<size_t>(bag.features.cols));
    if (masks != nullptr) {
      out.bag.scores[j] = forward_train(params, x, (*masks)[j], camera, &out.tapes[j]);
    } else {
      out.bag.scores[j] = forward(params, x, camera, &out.tapes[j]);
    }
  }
  return out;
}

std::vector<int> relevant_cameras(const TrainConfig& cfg, const Dataset& ds) {
  if (cfg.mode == TrainMode::ScMil) return {cfg.camera};
  std::vector<int> all(ds.num_cameras());
  std::iota(all.begin(), all.end(), 0);
  return all;
}

struct PairWork {
  McLossResult loss;
  // Indexed like the camera list passed to mc_loss.
  std::vector<SceneTapes> anom;
  std::vector<SceneTapes> norm;
};

PairWork pair_forward_and_loss(const RegressorParams& params, const Dataset& ds,
                               std::pair<int, int> pair, int pair_slot,
                               const std::vector<int>& cameras, const TrainConfig& cfg,
                               double weight_norm_sq, int iteration, bool use_dropout,
                               uint64_t dropout_seed) {
  const MultiCameraScene& normal_scene = ds.train[pair.first];
  const MultiCameraScene& anom_scene = ds.train[pair.second];

  // Masks are keyed by (iteration, pair slot, scene role, clip) and drawn
  // once per clip, then reused for every camera, so the dropout stream does
  // not depend on how many cameras train.
  auto draw_clip_masks = [&](int role, int n_clips) {
    std::vector<DropoutMasks> masks(n_clips);
    for (int j = 0; j < n_clips; ++j) {
      Rng rng(mask_key(dropout_seed, iteration, pair_slot, role, j));
      masks[j] = draw_masks(params.layer_dims, cfg.keep_prob, rng);
    }
    return masks;
  };

  std::vector<DropoutMasks> anom_masks, norm_masks;
  if (use_dropout) {
    anom_masks = draw_clip_masks(0, anom_scene.n_clips());
    norm_masks = draw_clip_masks(1, normal_scene.n_clips());
  }

  PairWork work;
  std::vector<std::pair<ScoreBag, ScoreBag>> bag_pairs;
  for (int cam : cameras) {
    work.anom.push_back(
        forward_bag(params, anom_scene.bags[cam], use_dropout ? &anom_masks : nullptr));
    work.norm.push_back(
        forward_bag(params, normal_scene.bags[cam], use_dropout ? &norm_masks : nullptr));
    bag_pairs.emplace_back(work.anom.back().bag, work.norm.back().bag);
  }

  const McStrategy strategy =
      cfg.mode == TrainMode::McBagUnion ? McStrategy::BagUnion : McStrategy::Combined;
  work.loss = mc_loss(bag_pairs, cfg.loss, weight_norm_sq, strategy);
  return work;
}

// Backpropagates one pair. Per-camera contributions accumulate into separate
// scratch buffers and are summed coordinate-wise before entering the batch
// buffer, which keeps the arithmetic of mean-combined identical cameras
// exactly equal to the single-camera path.
void pair_backward(const RegressorParams& params, const PairWork& work,
                   std::vector<RegressorParams>& scratch, std::vector<std::vector<double*>>& scoords,
                   std::vector<double*>& bcoords) {
  const auto& active = work.loss.active_cameras;
  for (int slot : active) {
    zero_params(scratch[slot]);
    const auto& grads = work.loss.per_camera[slot];
    for (size_t j = 0; j < grads.danomalous.size(); ++j) {
      if (grads.danomalous[j] != 0.0) {
        backward(params, work.anom[slot].tapes[j], grads.danomalous[j], scratch[slot]);
      }
    }
    for (size_t j = 0; j < grads.dnormal.size(); ++j) {
      if (grads.dnormal[j] != 0.0) {
        backward(params, work.norm[slot].tapes[j], grads.dnormal[j], scratch[slot]);
      }
    }
  }
  const size_t n_coords = bcoords.size();
  for (size_t i = 0; i < n_coords; ++i) {
    double pair_val = 0.0;
    for (int slot : active) pair_val += *scoords[slot][i];
    *bcoords[i] += pair_val;
  }
}

void scale_params(RegressorParams& p, double factor) {
  for (auto& lp : p.shared) {
    for (double& v : lp.w.data) v *= factor;
    for (double& v : lp.b) v *= factor;
  }
  for (auto& cam : p.variants) {
    for (auto& lp : cam) {
      for (double& v : lp.w.data) v *= factor;
      for (double& v : lp.b) v *= factor;
    }
  }
}

struct BatchAccum {
  LossBreakdown sum;
  void add(const LossBreakdown& b) {
    sum.hinge += b.hinge;
    sum.smoothness += b.smoothness;
    sum.sparsity += b.sparsity;
    sum.weight_decay += b.weight_decay;
  }
  LossBreakdown mean(int n) const {
    LossBreakdown m;
    m.hinge = sum.hinge / n;
    m.smoothness = sum.smoothness / n;
    m.sparsity = sum.sparsity / n;
    m.weight_decay = sum.weight_decay / n;
    m.total = m.hinge + m.smoothness + m.sparsity + m.weight_decay;
    return m;
  }
};

}  // namespace

TrainMode parse_train_mode(const std::string& name) {
  if (name == "sc") return TrainMode::ScMil;
  if (name == "mc") return TrainMode::McCombined;
  if (name == "mc-bagunion") return TrainMode::McBagUnion;
  throw ValidationError("unknown training mode '" + name + "' (expected sc|mc|mc-bagunion)");
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::ScMil: return "sc";
    case TrainMode::McCombined: return "mc";
    case TrainMode::McBagUnion: return "mc-bagunion";
  }
  return "?";
}

void TrainConfig::validate(const Dataset& ds) const {
  loss.validate();
  if (iterations < 0) throw ValidationError("iterations must be >= 0");
  if (batch_normal != batch_anomalous || batch_normal < 1) {
    throw ValidationError("batch sizes must be equal and >= 1 (pairs form by position)");
  }
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw ValidationError("keep probability must be in (0, 1]");
  }
  if (hidden1 < 1 || hidden2 < 1) throw ValidationError("hidden widths must be positive");
  if (ds.feature_dim < 1) throw ValidationError("dataset feature_dim must be positive");
  if (mode == TrainMode::ScMil) {
    if (camera < 0 || camera >= ds.num_cameras()) {
      throw ValidationError("sc camera index out of range");
    }
  } else if (ds.num_cameras() < 1) {
    throw ValidationError("mc modes need at least one camera");
  }
  if (multiview && (split_layers < 1 || split_layers > 3)) {
    throw ValidationError("split_layers must be in [1, 3]");
  }
  const bool has_normal = std::any_of(ds.train.begin(), ds.train.end(),
                                      [](const auto& s) { return s.label == Label::Normal; });
  const bool has_anom = std::any_of(ds.train.begin(), ds.train.end(),
                                    [](const auto& s) { return s.label == Label::Anomalous; });
  if (!has_normal || !has_anom) {
    throw ValidationError("training split must contain both classes");
  }
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate(ds);
  const auto t0 = std::chrono::steady_clock::now();

  RegressorParams params =
      init_params(cfg.layer_dims(ds.feature_dim), derive_seed(cfg.seed, kInitStream),
                  cfg.multiview ? ds.num_cameras() : 0, cfg.multiview ? cfg.split_layers : 0);
  OptimizerState opt = make_optimizer(params, cfg.optimizer);
  Rng batch_rng(derive_seed(cfg.seed, kBatchStream));
  const uint64_t dropout_seed = derive_seed(cfg.seed, kDropoutStream);
  const std::vector<int> cameras = relevant_cameras(cfg, ds);

  RegressorParams grads = params.zeros_like();
  std::vector<RegressorParams> scratch(cameras.size(), params.zeros_like());
  std::vector<double*> bcoords = param_coords(grads);
  std::vector<std::vector<double*>> scoords;
  for (auto& s : scratch) scoords.push_back(param_coords(s));

  TrainTrace trace;
  trace.total_loss.reserve(cfg.iterations);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const auto pairs = sample_batch(ds.train, cfg.batch_normal, cfg.batch_anomalous, batch_rng);
    const double wns = params.weight_norm_sq();
    zero_params(grads);
    BatchAccum accum;

    for (size_t pi = 0; pi < pairs.size(); ++pi) {
      PairWork work = pair_forward_and_loss(params, ds, pairs[pi], static_cast<int>(pi), cameras,
                                            cfg, wns, iter, cfg.keep_prob < 1.0, dropout_seed);
      accum.add(work.loss.breakdown);
      pair_backward(params, work, scratch, scoords, bcoords);
      add_decay_grads(params, cfg.loss.lambda3, grads);
    }

    const int n_pairs = static_cast<int>(pairs.size());
    scale_params(grads, 1.0 / n_pairs);
    const LossBreakdown batch_mean = accum.mean(n_pairs);
    if (!std::isfinite(batch_mean.total)) {
      throw DivergenceError("non-finite loss at iteration " + std::to_string(iter));
    }
    trace.total_loss.push_back(batch_mean.total);

    if (cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0) {
      TraceCheckpoint cp;
      cp.iteration = iter;
      cp.breakdown = batch_mean;
      if (!ds.test.empty()) {
        try {
          const auto targets = evaluate_model(params, ds, FusionConfig{}, 0.5, false);
          const std::string want = cfg.mode == TrainMode::ScMil
                                       ? ds.cameras[cfg.camera]
                                       : (ds.num_cameras() >= 2 ? "fused" : ds.cameras[0]);
          for (const auto& t : targets) {
            if (t.name == want) cp.test_auc = t.report.auc;
          }
        } catch (const ValidationError&) {
          // single-class test pool at this point; leave the AUC unset
        }
      }
      trace.checkpoints.push_back(std::move(cp));
    }

    apply_update(params, grads, opt);
  }

  trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return TrainResult{std::move(params), std::move(trace)};
}

std::vector<ScoreBag> score_scene(const RegressorParams& params, const MultiCameraScene& scene) {
  std::vector<ScoreBag> out;
  out.reserve(scene.bags.size());
  for (const auto& bag : scene.bags) {
    SceneTapes st = forward_bag(params, bag, nullptr);
    out.push_back(std::move(st.bag));
  }
  return out;
}

double batch_loss(const RegressorParams& params, const Dataset& ds,
                  const std::vector<std::pair<int, int>>& pairs, const TrainConfig& cfg,
                  RegressorParams* grads, LossBreakdown* breakdown) {
  if (pairs.empty()) throw ValidationError("batch_loss: no pairs");
  const std::vector<int> cameras = relevant_cameras(cfg, ds);
  const double wns = params.weight_norm_sq();
  BatchAccum accum;

  std::vector<RegressorParams> scratch;
  std::vector<std::vector<double*>> scoords;
  std::vector<double*> bcoords;
  if (grads != nullptr) {
    zero_params(*grads);
    scratch.assign(cameras.size(), params.zeros_like());
    for (auto& s : scratch) scoords.push_back(param_coords(s));
    bcoords = param_coords(*grads);
  }

  for (size_t pi = 0; pi < pairs.size(); ++pi) {
    PairWork work = pair_forward_and_loss(params, ds, pairs[pi], static_cast<int>(pi), cameras,
                                          cfg, wns, 0, false, 0);
    accum.add(work.loss.breakdown);
    if (grads != nullptr) {
      pair_backward(params, work, scratch, scoords, bcoords);
      add_decay_grads(params, cfg.loss.lambda3, *grads);
    }
  }
  const int n = static_cast<int>(pairs.size());
  if (grads != nullptr) scale_params(*grads, 1.0 / n);
  const LossBreakdown mean = accum.mean(n);
  if (breakdown != nullptr) *breakdown = mean;
  return mean.total;
}

GradCheckReport gradient_check(const RegressorParams& params, const Dataset& ds,
                               const TrainConfig& cfg, double h, double rel_tol, double abs_tol,
                               size_t min_coords) {
  std::vector<int> normals, anoms;
  for (size_t i = 0; i < ds.train.size(); ++i) {
    (ds.train[i].label == Label::Normal ? normals : anoms).push_back(static_cast<int>(i));
  }
  const size_t n_pairs = std::min(normals.size(), anoms.size());
  if (n_pairs == 0) throw ValidationError("gradient_check: need both classes in train split");
  std::vector<std::pair<int, int>> pairs;
  for (size_t i = 0; i < n_pairs; ++i) pairs.emplace_back(normals[i], anoms[i]);

  TrainConfig check_cfg = cfg;
  check_cfg.keep_prob = 1.0;  // dropout disabled for differentiability

  RegressorParams analytic = params.zeros_like();
  batch_loss(params, ds, pairs, check_cfg, &analytic);

  auto loss_value = [&](const RegressorParams& p) { return batch_loss(p, ds, pairs, check_cfg); };
  Rng rng(derive_seed(cfg.seed, kGradCheckStream));
  return finite_diff_check(params, analytic, loss_value, h, rel_tol, abs_tol,
                           std::max(min_coords, size_t{200}), rng);
}

std::vector<EvalTarget> evaluate_model(const RegressorParams& params, const Dataset& ds,
                                       const FusionConfig& fusion, double threshold,
                                       bool include_roc) {
  if (ds.test.empty()) throw ValidationError("evaluation needs a non-empty test split");
  fusion.validate();

  const int n_cams = ds.num_cameras();
  std::vector<std::vector<FrameScoreSeq>> per_camera(n_cams);
  std::vector<FrameScoreSeq> fused_seqs;

  for (const auto& scene : ds.test) {
    const std::vector<ScoreBag> bags = score_scene(params, scene);
    std::vector<FrameScoreSeq> seqs;
    seqs.reserve(bags.size());
    for (int c = 0; c < n_cams; ++c) {
      seqs.push_back(expand_to_frames(bags[c], scene.frame_labels));
      per_camera[c].push_back(seqs.back());
    }
    if (n_cams >= 2) fused_seqs.push_back(fuse(seqs, fusion));
  }

  std::vector<EvalTarget> out;
  auto add_target = [&](const std::string& name, const std::vector<FrameScoreSeq>& seqs) {
    const FrameScoreSeq pooled = concat_seqs(seqs, name);
    EvalTarget t;
    t.name = name;
    t.report = metrics(confusion(pooled, threshold), auc(pooled), threshold);
    if (include_roc) t.roc = roc_points(pooled);
    out.push_back(std::move(t));
  };
  for (int c = 0; c < n_cams; ++c) add_target(ds.cameras[c], per_camera[c]);
  if (n_cams >= 2) add_target("fused", fused_seqs);
  return out;
}

MetricAggregate aggregate(const std::vector<double>& values) {
  MetricAggregate a;
  if (values.empty()) return a;
  a.min = *std::min_element(values.begin(), values.end());
  a.max = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / values.size();
  double sq = 0.0;
  for (double v : values) sq += (v - a.mean) * (v - a.mean);
  a.stddev = std::sqrt(sq / values.size());  // population
  return a;
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"auc", "fpr", "bacc", "prec", "rec", "f1"};
  return names;
}

double metric_value(const MetricsReport& r, const std::string& name) {
  if (name == "auc") return r.auc;
  if (name == "fpr") return r.fpr;
  if (name == "bacc") return r.bacc;
  if (name == "prec") return r.prec;
  if (name == "rec") return r.rec;
  if (name == "f1") return r.f1;
  throw ValidationError("unknown metric '" + name + "'");
}

ExperimentResult run_experiment(const Dataset& ds, const TrainConfig& cfg, int repeats,
                                const FusionConfig& fusion, double threshold, bool parallel) {
  if (repeats < 1) throw ValidationError("repeats must be >= 1");
  cfg.validate(ds);

  auto one_repeat = [&](int r) {
    TrainConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + static_cast<uint64_t>(r);
    TrainResult res = train(ds, run_cfg);
    return evaluate_model(res.params, ds, fusion, threshold, false);
  };

  std::vector<std::vector<EvalTarget>> per_repeat(repeats);
  if (parallel && repeats > 1) {
    std::vector<std::future<std::vector<EvalTarget>>> futures;
    futures.reserve(repeats);
    for (int r = 0; r < repeats; ++r) {
      futures.push_back(std::async(std::launch::async, one_repeat, r));
    }
    for (int r = 0; r < repeats; ++r) per_repeat[r] = futures[r].get();
  } else {
    for (int r = 0; r < repeats; ++r) per_repeat[r] = one_repeat(r);
  }

  ExperimentResult result;
  result.repeats = repeats;
  const auto& first = per_repeat.front();
  for (size_t t = 0; t < first.size(); ++t) {
    TargetAggregate agg;
    agg.target = first[t].name;
    for (const auto& metric : metric_names()) {
      std::vector<double> values;
      values.reserve(repeats);
      for (int r = 0; r < repeats; ++r) {
        values.push_back(metric_value(per_repeat[r][t].report, metric));
      }
      agg.by_metric[metric] = aggregate(values);
    }
    result.targets.push_back(std::move(agg));
  }
  return result;
}

}  // namespace mcmil
