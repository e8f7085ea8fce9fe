#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcmil/common.hpp"
#include "mcmil/loss.hpp"

namespace mcmil {

/// Per-frame scores with ground-truth labels.
struct FrameScoreSeq {
  std::vector<double> scores;
  std::vector<uint8_t> labels;
  std::string scene_id;
  std::string source;  // camera name or fusion tag
};

struct ConfusionCounts {
  uint64_t tp = 0;
  uint64_t fp = 0;
  uint64_t tn = 0;
  uint64_t fn = 0;

  uint64_t total() const { return tp + fp + tn + fn; }
};

struct MetricsReport {
  double auc = 0.0;
  double fpr = 0.0;
  double bacc = 0.0;
  double prec = 0.0;
  double rec = 0.0;
  double f1 = 0.0;
  double threshold = 0.5;
  // Set when any rate had a zero denominator (reported as 0, never NaN).
  bool degenerate = false;
};

enum class FusionStrategy { Linear, Max, Min };

FusionStrategy parse_fusion(const std::string& name);
std::string to_string(FusionStrategy s);

struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::Max;
  double beta = 0.5;  // linear only: S = beta*C1 + (1-beta)*C2

  void validate() const;
};

/// Replicates each clip score to its 16 frames: clip i -> frames [16i, 16i+15].
FrameScoreSeq expand_to_frames(const ScoreBag& bag, const std::vector<uint8_t>& frame_labels);

/// Late score fusion across cameras. Linear combination applies beta as
/// printed for two cameras and uniform weights otherwise.
FrameScoreSeq fuse(const std::vector<FrameScoreSeq>& per_camera, const FusionConfig& cfg);

/// Predicted positive iff score >= threshold (boundary inclusive).
ConfusionCounts confusion(const FrameScoreSeq& seq, double threshold = 0.5);

MetricsReport metrics(const ConfusionCounts& counts, double auc, double threshold = 0.5);

/// ROC AUC with Mann-Whitney tie handling: tied positive-negative pairs
/// contribute 0.5. Throws on single-class input.
double auc(const FrameScoreSeq& seq);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

/// One point per distinct threshold, descending, with (0,0) prepended; the
/// lowest threshold yields (1,1). Trapezoid area equals auc().
std::vector<RocPoint> roc_points(const FrameScoreSeq& seq);

double trapezoid_area(const std::vector<RocPoint>& points);

/// Concatenates sequences (pooled micro-average evaluation).
FrameScoreSeq concat_seqs(const std::vector<FrameScoreSeq>& seqs, const std::string& source);

}  // namespace mcmil
