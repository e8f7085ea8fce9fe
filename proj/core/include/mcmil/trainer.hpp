#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mcmil/dataset.hpp"
#include "mcmil/eval.hpp"
#include "mcmil/loss.hpp"
#include "mcmil/nn.hpp"

namespace mcmil {

enum class TrainMode { ScMil, McCombined, McBagUnion };

TrainMode parse_train_mode(const std::string& name);
std::string to_string(TrainMode m);

struct TrainConfig {
  TrainMode mode = TrainMode::ScMil;
  int camera = 0;            // sc_mil: which camera to train on
  bool multiview = false;    // camera-specific weights for the split prefix
  int split_layers = 1;
  int hidden1 = 512;
  int hidden2 = 32;
  int iterations = 20000;
  int batch_normal = 30;
  int batch_anomalous = 30;
  LossConfig loss;           // loss.combinator drives mc_combined
  OptimizerConfig optimizer;
  double keep_prob = 0.4;    // dropout rate 60%
  uint64_t seed = 0;
  int eval_every = 0;        // 0 = no mid-training checkpoints

  std::vector<int> layer_dims(int feature_dim) const { return {feature_dim, hidden1, hidden2, 1}; }
  void validate(const Dataset& ds) const;
};

struct TraceCheckpoint {
  int iteration = 0;
  LossBreakdown breakdown;  // batch mean at this iteration
  std::optional<double> test_auc;
};

struct TrainTrace {
  std::vector<double> total_loss;  // one entry per iteration
  std::vector<TraceCheckpoint> checkpoints;
  double wall_seconds = 0.0;
};

struct TrainResult {
  RegressorParams params;
  TrainTrace trace;
};

/**
 * Runs the MIL training loop: every iteration samples batch_normal
 * (normal, anomalous) scene pairs, forwards all clips of the relevant
 * cameras in train mode, computes the configured loss per pair, averages
 * over the batch, backpropagates and applies an adaptive-gradient update.
 * Deterministic per seed; dropout masks are keyed by (iteration, pair,
 * scene role, clip) so they do not depend on the number of cameras.
 */
TrainResult train(const Dataset& ds, const TrainConfig& cfg);

/// Infer-mode scores for every camera of a scene (multiview params route by
/// camera index).
std::vector<ScoreBag> score_scene(const RegressorParams& params, const MultiCameraScene& scene);

/// Batch loss and (optionally) parameter gradients for a fixed set of pairs,
/// dropout off. Shared by the gradient checker and tests.
double batch_loss(const RegressorParams& params, const Dataset& ds,
                  const std::vector<std::pair<int, int>>& pairs, const TrainConfig& cfg,
                  RegressorParams* grads = nullptr, LossBreakdown* breakdown = nullptr);

/**
 * Verifies the full analytic pipeline gradient (losses per cfg.mode through
 * the network) against central finite differences on a random subsample of
 * at least `min_coords` parameters. Dropout is disabled. Failures are
 * reported, not thrown.
 */
GradCheckReport gradient_check(const RegressorParams& params, const Dataset& ds,
                               const TrainConfig& cfg, double h = 1e-5, double rel_tol = 1e-4,
                               double abs_tol = 1e-7, size_t min_coords = 200);

/// One evaluation target: a camera or the fused stream.
struct EvalTarget {
  std::string name;
  MetricsReport report;
  std::vector<RocPoint> roc;
};

/**
 * Pooled frame-level evaluation over the test split: expands clip scores to
 * frames, concatenates all scenes in manifest order (micro-averaging), and
 * reports metrics per camera plus the fused stream when 2+ cameras exist.
 */
std::vector<EvalTarget> evaluate_model(const RegressorParams& params, const Dataset& ds,
                                       const FusionConfig& fusion, double threshold = 0.5,
                                       bool include_roc = false);

struct MetricAggregate {
  double mean = 0.0;
  double stddev = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
};

struct TargetAggregate {
  std::string target;
  // metric name (auc, fpr, bacc, prec, rec, f1) -> aggregate over repeats
  std::map<std::string, MetricAggregate> by_metric;
};

struct ExperimentResult {
  std::vector<TargetAggregate> targets;
  int repeats = 0;
};

/**
 * Repeats train + evaluate with seeds seed, seed+1, ... and aggregates each
 * metric (mean, population std, min, max) per evaluation target. Repeats may
 * run in parallel; results join by repeat index, so the output is identical
 * either way.
 */
ExperimentResult run_experiment(const Dataset& ds, const TrainConfig& cfg, int repeats,
                                const FusionConfig& fusion, double threshold = 0.5,
                                bool parallel = true);

MetricAggregate aggregate(const std::vector<double>& values);

const std::vector<std::string>& metric_names();
double metric_value(const MetricsReport& r, const std::string& name);

}  // namespace mcmil
