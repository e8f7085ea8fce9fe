#include "mcmil/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mcmil/dataset.hpp"

namespace mcmil {

FusionStrategy parse_fusion(const std::string& name) {
  if (name == "linear") return FusionStrategy::Linear;
  if (name == "max") return FusionStrategy::Max;
  if (name == "min") return FusionStrategy::Min;
  throw ValidationError("unknown fusion strategy '" + name + "' (expected linear|max|min)");
}

std::string to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::Linear: return "linear";
    case FusionStrategy::Max: return "max";
    case FusionStrategy::Min: return "min";
  }
  return "?";
}

void FusionConfig::validate() const {
  if (strategy == FusionStrategy::Linear && !(beta >= 0.0 && beta <= 1.0)) {
    throw ValidationError("fusion beta must be in [0, 1]");
  }
}

FrameScoreSeq expand_to_frames(const ScoreBag& bag, const std::vector<uint8_t>& frame_labels) {
  if (bag.scores.empty()) throw ValidationError("expand_to_frames: empty score bag");
  if (frame_labels.size() != bag.scores.size() * kFramesPerClip) {
    throw ShapeError("frame label count " + std::to_string(frame_labels.size()) + " != 16 * " +
                     std::to_string(bag.scores.size()));
  }
  FrameScoreSeq seq;
  seq.scene_id = bag.scene_id;
  seq.source = bag.camera_id >= 0 ? "C" + std::to_string(bag.camera_id) : "";
  seq.labels = frame_labels;
  seq.scores.reserve(frame_labels.size());
  for (double s : bag.scores) {
    for (int f = 0; f < kFramesPerClip; ++f) seq.scores.push_back(s);
  }
  return seq;
}

FrameScoreSeq fuse(const std::vector<FrameScoreSeq>& per_camera, const FusionConfig& cfg) {
  cfg.validate();
  if (per_camera.empty()) throw ValidationError("fuse: no camera sequences");
  const size_t len = per_camera.front().scores.size();
  for (const auto& seq : per_camera) {
    if (seq.scores.size() != len || seq.labels.size() != len) {
      throw SyncError("fuse: misaligned camera sequences");
    }
    if (seq.labels != per_camera.front().labels) {
      throw SyncError("fuse: camera sequences disagree on frame labels");
    }
  }

  FrameScoreSeq out;
  out.scene_id = per_camera.front().scene_id;
  out.source = "fused:" + to_string(cfg.strategy);
  out.labels = per_camera.front().labels;
  out.scores.assign(len, 0.0);

  const size_t n = per_camera.size();
  switch (cfg.strategy) {
    case FusionStrategy::Max:
      for (size_t i = 0; i < len; ++i) {
        double v = per_camera[0].scores[i];
        for (size_t c = 1; c < n; ++c) v = std::max(v, per_camera[c].scores[i]);
        out.scores[i] = v;
      }
      break;
    case FusionStrategy::Min:
      for (size_t i = 0; i < len; ++i) {
        double v = per_camera[0].scores[i];
        for (size_t c = 1; c < n; ++c) v = std::min(v, per_camera[c].scores[i]);
        out.scores[i] = v;
      }
      break;
    case FusionStrategy::Linear:
      if (n == 2) {
        for (size_t i = 0; i < len; ++i) {
          out.scores[i] = cfg.beta * per_camera[0].scores[i] +
                          (1.0 - cfg.beta) * per_camera[1].scores[i];
        }
      } else {
        const double w = 1.0 / static_cast<double>(n);
        for (size_t i = 0; i < len; ++i) {
          double v = 0.0;
          for (size_t c = 0; c < n; ++c) v += per_camera[c].scores[i];
          out.scores[i] = v * w;
        }
      }
      break;
  }
  return out;
}

ConfusionCounts confusion(const FrameScoreSeq& seq, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ValidationError("threshold must be in [0, 1]");
  }
  if (seq.scores.size() != seq.labels.size()) {
    throw ShapeError("confusion: score/label length mismatch");
  }
  ConfusionCounts c;
  for (size_t i = 0; i < seq.scores.size(); ++i) {
    const bool pred = seq.scores[i] >= threshold;
    const bool truth = seq.labels[i] != 0;
    if (pred && truth) {
      ++c.tp;
    } else if (pred && !truth) {
      ++c.fp;
    } else if (!pred && truth) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

namespace {

double safe_ratio(uint64_t num, uint64_t den, bool& degenerate) {
  if (den == 0) {
    degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport metrics(const ConfusionCounts& c, double auc_value, double threshold) {
  MetricsReport r;
  r.auc = auc_value;
  r.threshold = threshold;
  r.fpr = safe_ratio(c.fp, c.fp + c.tn, r.degenerate);
  r.prec = safe_ratio(c.tp, c.tp + c.fp, r.degenerate);
  r.rec = safe_ratio(c.tp, c.tp + c.fn, r.degenerate);
  const double tpr = r.rec;
  const double tnr = safe_ratio(c.tn, c.tn + c.fp, r.degenerate);
  r.bacc = (tpr + tnr) / 2.0;
  if (r.prec + r.rec > 0.0) {
    r.f1 = 2.0 * r.prec * r.rec / (r.prec + r.rec);
  } else {
    r.f1 = 0.0;
    r.degenerate = true;
  }
  return r;
}

double auc(const FrameScoreSeq& seq) {
  const size_t n = seq.scores.size();
  if (n != seq.labels.size()) throw ShapeError("auc: score/label length mismatch");
  uint64_t n_pos = 0;
  for (uint8_t l : seq.labels) n_pos += l != 0 ? 1 : 0;
  const uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("auc undefined: input contains a single class");
  }

  // Rank-sum form of the Mann-Whitney statistic; ties get the average rank,
  // which credits tied positive-negative pairs exactly 0.5.
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return seq.scores[a] < seq.scores[b]; });

  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && seq.scores[order[j]] == seq.scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k) {
      if (seq.labels[order[k]] != 0) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<RocPoint> roc_points(const FrameScoreSeq& seq) {
  const size_t n = seq.scores.size();
  if (n != seq.labels.size()) throw ShapeError("roc_points: score/label length mismatch");
  uint64_t n_pos = 0;
  for (uint8_t l : seq.labels) n_pos += l != 0 ? 1 : 0;
  const uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("roc undefined: input contains a single class");
  }

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return seq.scores[a] > seq.scores[b]; });

  std::vector<RocPoint> pts;
  pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  uint64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < n) {
    const double thr = seq.scores[order[i]];
    size_t j = i;
    while (j < n && seq.scores[order[j]] == thr) {
      if (seq.labels[order[j]] != 0) {
        ++tp;
      } else {
        ++fp;
      }
      ++j;
    }
    pts.push_back({thr, static_cast<double>(fp) / static_cast<double>(n_neg),
                   static_cast<double>(tp) / static_cast<double>(n_pos)});
    i = j;
  }
  return pts;
}

double trapezoid_area(const std::vector<RocPoint>& points) {
  double area = 0.0;
  for (size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  }
  return area;
}

FrameScoreSeq concat_seqs(const std::vector<FrameScoreSeq>& seqs, const std::string& source) {
  FrameScoreSeq out;
  out.source = source;
  for (const auto& s : seqs) {
    if (s.scores.size() != s.labels.size()) throw ShapeError("concat: malformed sequence");
    out.scores.insert(out.scores.end(), s.scores.begin(), s.scores.end());
    out.labels.insert(out.labels.end(), s.labels.begin(), s.labels.end());
  }
  return out;
}

}  // namespace mcmil
