#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mcmil/common.hpp"

namespace mcmil {

enum class Label { Normal, Anomalous };

/// Per-clip anomaly scores of one camera view of one scene, in temporal order.
struct ScoreBag {
  std::vector<double> scores;
  Label label = Label::Normal;
  std::string scene_id;
  int camera_id = -1;
};

enum class Combinator { Max, Min, Mean };

Combinator parse_combinator(const std::string& name);
std::string to_string(Combinator c);

struct LossConfig {
  double lambda1 = 8e-5;  // temporal smoothness weight
  double lambda2 = 8e-5;  // sparsity weight
  double lambda3 = 0.01;  // weight decay coefficient
  Combinator combinator = Combinator::Max;
  // Divide smoothness by (n-1) and sparsity by n so totals do not scale with
  // bag size; off by default (the raw-sum form).
  bool normalize_by_bag_size = false;

  void validate() const;
};

struct LossBreakdown {
  double hinge = 0.0;
  double smoothness = 0.0;
  double sparsity = 0.0;
  double weight_decay = 0.0;
  double total = 0.0;
};

/// dloss/dscore for one (anomalous, normal) bag pair.
struct RankingGrads {
  std::vector<double> danomalous;
  std::vector<double> dnormal;
};

/**
 * MIL ranking loss over one bag pair:
 *   hinge      = max(0, 1 - max(anomalous) + max(normal))
 *   smoothness = lambda1 * sum_i (a_i - a_{i+1})^2
 *   sparsity   = lambda2 * sum_i a_i
 *   decay      = lambda3 * weight_norm_sq
 *
 * The hinge contributes -1 to the anomalous argmax and +1 to the normal
 * argmax only when the hinge is strictly positive (subgradient 0 at the
 * kink); argmax ties break to the lowest index. Normal scores receive
 * gradient only through the hinge argmax.
 */
LossBreakdown ranking_loss(const ScoreBag& anomalous, const ScoreBag& normal,
                           const LossConfig& cfg, double weight_norm_sq,
                           RankingGrads* grads = nullptr);

struct CombineResult {
  double value = 0.0;
  // (camera index, gradient scale): max/min route to the single argmax/argmin
  // camera at scale 1 (ties to the lowest index); mean routes to every camera
  // at scale 1/N.
  std::vector<std::pair<int, double>> active;
};

CombineResult combine_losses(const std::vector<LossBreakdown>& per_camera, Combinator mode);

/// Elementwise mean of synchronized per-camera score bags (the fused bag).
ScoreBag bag_union(const std::vector<ScoreBag>& per_camera);

enum class McStrategy { Combined, BagUnion };

struct McLossResult {
  double total = 0.0;
  LossBreakdown breakdown;
  std::vector<RankingGrads> per_camera;  // indexed by camera; zeros when inactive
  std::vector<int> active_cameras;
};

/**
 * Multi-camera loss over per-camera (anomalous, normal) bag pairs.
 *
 * Combined: the configured combinator over per-camera ranking losses, with
 * gradients routed to the active cameras. BagUnion: ranking loss on the
 * fused (elementwise mean) bags, each fused gradient distributing 1/N to
 * every camera's corresponding score.
 */
McLossResult mc_loss(const std::vector<std::pair<ScoreBag, ScoreBag>>& per_camera_pairs,
                     const LossConfig& cfg, double weight_norm_sq, McStrategy strategy);

}  // namespace mcmil
