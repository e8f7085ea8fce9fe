#include "mcmil/loss.hpp"

#include <algorithm>
#include <cmath>

namespace mcmil {

Combinator parse_combinator(const std::string& name) {
  if (name == "max") return Combinator::Max;
  if (name == "min") return Combinator::Min;
  if (name == "mean") return Combinator::Mean;
  throw ValidationError("unknown combinator '" + name + "' (expected max|min|mean)");
}

std::string to_string(Combinator c) {
  switch (c) {
    case Combinator::Max: return "max";
    case Combinator::Min: return "min";
    case Combinator::Mean: return "mean";
  }
  return "?";
}

void LossConfig::validate() const {
  for (double l : {lambda1, lambda2, lambda3}) {
    if (!(l >= 0.0) || !std::isfinite(l)) {
      throw ValidationError("loss weights must be finite and non-negative");
    }
  }
}

namespace {

size_t argmax_lowest(const std::vector<double>& v) {
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace

LossBreakdown ranking_loss(const ScoreBag& anomalous, const ScoreBag& normal,
                           const LossConfig& cfg, double weight_norm_sq, RankingGrads* grads) {
  if (anomalous.scores.empty() || normal.scores.empty()) {
    throw ValidationError("ranking_loss: empty score bag");
  }
  if (anomalous.label != Label::Anomalous || normal.label != Label::Normal) {
    throw ValidationError("ranking_loss: bag labels do not match their roles");
  }
  cfg.validate();

  const auto& a = anomalous.scores;
  const auto& n = normal.scores;
  const size_t ia = argmax_lowest(a);
  const size_t in = argmax_lowest(n);

  LossBreakdown out;
  out.hinge = std::max(0.0, 1.0 - a[ia] + n[in]);

  const size_t len = a.size();
  const double smooth_w =
      cfg.normalize_by_bag_size && len > 1 ? cfg.lambda1 / static_cast<double>(len - 1)
                                           : cfg.lambda1;
  const double sparse_w =
      cfg.normalize_by_bag_size ? cfg.lambda2 / static_cast<double>(len) : cfg.lambda2;

  double smooth = 0.0;
  for (size_t i = 0; i + 1 < len; ++i) {
    const double d = a[i] - a[i + 1];
    smooth += d * d;
  }
  out.smoothness = smooth_w * smooth;

  double sparse = 0.0;
  for (double s : a) sparse += s;
  out.sparsity = sparse_w * sparse;

  out.weight_decay = cfg.lambda3 * weight_norm_sq;
  out.total = out.hinge + out.smoothness + out.sparsity + out.weight_decay;

  if (grads != nullptr) {
    grads->danomalous.assign(len, 0.0);
    grads->dnormal.assign(n.size(), 0.0);
    if (out.hinge > 0.0) {
      grads->danomalous[ia] -= 1.0;
      grads->dnormal[in] += 1.0;
    }
    for (size_t i = 0; i + 1 < len; ++i) {
      const double d = 2.0 * smooth_w * (a[i] - a[i + 1]);
      grads->danomalous[i] += d;
      grads->danomalous[i + 1] -= d;
    }
    for (size_t i = 0; i < len; ++i) grads->danomalous[i] += sparse_w;
  }
  return out;
}

CombineResult combine_losses(const std::vector<LossBreakdown>& per_camera, Combinator mode) {
  if (per_camera.empty()) throw ValidationError("combine_losses: empty loss list");
  const int n = static_cast<int>(per_camera.size());
  CombineResult out;
  switch (mode) {
    case Combinator::Max:
    case Combinator::Min: {
      int best = 0;
      for (int i = 1; i < n; ++i) {
        const bool better = mode == Combinator::Max ? per_camera[i].total > per_camera[best].total
                                                    : per_camera[i].total < per_camera[best].total;
        if (better) best = i;
      }
      out.value = per_camera[best].total;
      out.active = {{best, 1.0}};
      break;
    }
    case Combinator::Mean: {
      double sum = 0.0;
      for (const auto& b : per_camera) sum += b.total;
      out.value = sum / n;
      const double scale = 1.0 / n;
      for (int i = 0; i < n; ++i) out.active.emplace_back(i, scale);
      break;
    }
  }
  return out;
}

ScoreBag bag_union(const std::vector<ScoreBag>& per_camera) {
  if (per_camera.empty()) throw ValidationError("bag_union: empty bag list");
  const size_t len = per_camera.front().scores.size();
  const Label label = per_camera.front().label;
  const std::string& scene = per_camera.front().scene_id;
  for (const auto& bag : per_camera) {
    if (bag.scores.size() != len) {
      throw SyncError("bag_union: clip counts differ across cameras (scene alignment broken)");
    }
    if (bag.label != label) throw ValidationError("bag_union: bag labels differ");
    if (!bag.scene_id.empty() && !scene.empty() && bag.scene_id != scene) {
      throw SyncError("bag_union: bags come from different scenes");
    }
  }
  ScoreBag fused;
  fused.label = label;
  fused.scene_id = scene;
  fused.camera_id = -1;
  fused.scores.assign(len, 0.0);
  const double inv = 1.0 / static_cast<double>(per_camera.size());
  for (size_t i = 0; i < len; ++i) {
    double sum = 0.0;
    for (const auto& bag : per_camera) sum += bag.scores[i];
    fused.scores[i] = sum * inv;
  }
  return fused;
}

McLossResult mc_loss(const std::vector<std::pair<ScoreBag, ScoreBag>>& per_camera_pairs,
                     const LossConfig& cfg, double weight_norm_sq, McStrategy strategy) {
  if (per_camera_pairs.empty()) throw ValidationError("mc_loss: no camera bags");
  const int n_cams = static_cast<int>(per_camera_pairs.size());

  McLossResult out;
  out.per_camera.resize(n_cams);
  for (int c = 0; c < n_cams; ++c) {
    out.per_camera[c].danomalous.assign(per_camera_pairs[c].first.scores.size(), 0.0);
    out.per_camera[c].dnormal.assign(per_camera_pairs[c].second.scores.size(), 0.0);
  }

  if (strategy == McStrategy::Combined) {
    std::vector<LossBreakdown> breakdowns(n_cams);
    std::vector<RankingGrads> grads(n_cams);
    for (int c = 0; c < n_cams; ++c) {
      breakdowns[c] = ranking_loss(per_camera_pairs[c].first, per_camera_pairs[c].second, cfg,
                                   weight_norm_sq, &grads[c]);
    }
    const CombineResult comb = combine_losses(breakdowns, cfg.combinator);
    for (const auto& [cam, scale] : comb.active) {
      out.active_cameras.push_back(cam);
      auto& dst = out.per_camera[cam];
      for (size_t i = 0; i < dst.danomalous.size(); ++i) {
        dst.danomalous[i] = scale * grads[cam].danomalous[i];
      }
      for (size_t i = 0; i < dst.dnormal.size(); ++i) {
        dst.dnormal[i] = scale * grads[cam].dnormal[i];
      }
    }
    if (cfg.combinator == Combinator::Mean) {
      LossBreakdown mean;
      for (const auto& b : breakdowns) {
        mean.hinge += b.hinge;
        mean.smoothness += b.smoothness;
        mean.sparsity += b.sparsity;
        mean.weight_decay += b.weight_decay;
      }
      mean.hinge /= n_cams;
      mean.smoothness /= n_cams;
      mean.sparsity /= n_cams;
      mean.weight_decay /= n_cams;
      mean.total = mean.hinge + mean.smoothness + mean.sparsity + mean.weight_decay;
      out.breakdown = mean;
    } else {
      out.breakdown = breakdowns[comb.active.front().first];
    }
    out.total = out.breakdown.total;
    return out;
  }

  // BagUnion: ranking loss on the fused bags, gradients split uniformly.
  std::vector<ScoreBag> anoms, norms;
  anoms.reserve(n_cams);
  norms.reserve(n_cams);
  for (const auto& [a, n] : per_camera_pairs) {
    anoms.push_back(a);
    norms.push_back(n);
  }
  const ScoreBag fused_a = bag_union(anoms);
  const ScoreBag fused_n = bag_union(norms);

  RankingGrads fused_grads;
  out.breakdown = ranking_loss(fused_a, fused_n, cfg, weight_norm_sq, &fused_grads);
  out.total = out.breakdown.total;

  const double inv = 1.0 / static_cast<double>(n_cams);
  for (int c = 0; c < n_cams; ++c) {
    out.active_cameras.push_back(c);
    auto& dst = out.per_camera[c];
    for (size_t i = 0; i < dst.danomalous.size(); ++i) {
      dst.danomalous[i] = inv * fused_grads.danomalous[i];
    }
    for (size_t i = 0; i < dst.dnormal.size(); ++i) {
      dst.dnormal[i] = inv * fused_grads.dnormal[i];
    }
  }
  return out;
}

}  // namespace mcmil
