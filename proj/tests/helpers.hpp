#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "mcmil/eval.hpp"
#include "mcmil/loss.hpp"

namespace mcmil::testing {

/// Unique scratch directory under the system tmp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mcmil_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

/// O(n^2) Mann-Whitney statistic: ties between a positive and a negative
/// count 0.5. The independent oracle for auc().
inline double brute_force_auc(const FrameScoreSeq& seq) {
  double wins = 0.0;
  uint64_t n_pos = 0, n_neg = 0;
  for (size_t i = 0; i < seq.scores.size(); ++i) {
    if (seq.labels[i] == 0) continue;
    ++n_pos;
    for (size_t j = 0; j < seq.scores.size(); ++j) {
      if (seq.labels[j] != 0) continue;
      if (seq.scores[i] > seq.scores[j]) {
        wins += 1.0;
      } else if (seq.scores[i] == seq.scores[j]) {
        wins += 0.5;
      }
    }
  }
  n_neg = seq.scores.size() - n_pos;
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline ScoreBag make_bag(std::vector<double> scores, Label label, int camera = 0,
                         const std::string& scene = "s0") {
  ScoreBag bag;
  bag.scores = std::move(scores);
  bag.label = label;
  bag.scene_id = scene;
  bag.camera_id = camera;
  return bag;
}

}  // namespace mcmil::testing
