#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mcmil/common.hpp"
#include "mcmil/loss.hpp"
#include "mcmil/matrix.hpp"

namespace mcmil {

/// Every clip covers this many consecutive frames.
constexpr int kFramesPerClip = 16;

/// One camera view of one scene: the MIL bag.
struct ClipBag {
  std::string scene_id;
  int camera_id = -1;
  Label label = Label::Normal;
  Matrix features;  // n_clips x D

  int n_clips() const { return features.rows; }
};

/// Synchronized per-camera bags of the same scene plus frame ground truth.
struct MultiCameraScene {
  std::string id;
  Label label = Label::Normal;
  std::vector<ClipBag> bags;
  std::vector<uint8_t> frame_labels;  // length 16 * n_clips

  int n_clips() const { return bags.empty() ? 0 : bags.front().n_clips(); }
  void validate() const;
};

struct Dataset {
  std::vector<std::string> cameras;
  int feature_dim = 0;
  std::vector<MultiCameraScene> train;
  std::vector<MultiCameraScene> test;

  int num_cameras() const { return static_cast<int>(cameras.size()); }
};

// Feature file formats. Binary MCVF: magic "MCVF", u32 LE version = 1,
// u32 LE n_clips, u32 LE dim, then n_clips*dim f32 LE row-major. Plain CSV
// (one clip per line) is accepted as a fallback for hand-authored data.
Matrix read_feature_file(const std::string& path);
void write_feature_file(const std::string& path, const Matrix& features);

// Frame label file: one '0' or '1' per line.
std::vector<uint8_t> read_frame_labels(const std::string& path);
void write_frame_labels(const std::string& path, const std::vector<uint8_t>& labels);

/**
 * Loads a manifest JSON document and materializes every scene.
 *
 * Top-level fields: `cameras` (camera names), `feature_dim`, `scenes`; each
 * scene carries `id`, `label` ("normal"|"anomalous"), `split`
 * ("train"|"test"), `features` (camera name -> path) and `frame_labels`
 * (path). Relative paths resolve against the manifest's directory.
 */
Dataset load_manifest(const std::string& path);

/// Writes a dataset to `out_dir` as manifest.json + feature/label files.
/// Deterministic bytes for a given dataset.
void write_dataset(const Dataset& ds, const std::string& out_dir);

struct SyntheticSpec {
  int n_cameras = 2;
  int feature_dim = 32;
  int scenes_per_class = 40;
  int clip_min = 8;
  int clip_max = 16;
  double normal_mean = 0.0;
  double normal_scale = 1.0;
  double anomaly_shift = 3.0;  // magnitude of the planted shift vector
  int segment_min = 2;
  int segment_max = 5;
  double occlusion_probability = 0.0;
  // Each camera observes the shared scene through its own fixed orthogonal
  // transform, giving every view its own statistics (and its own effective
  // anomaly direction). Disabled, all cameras see identical features apart
  // from occlusion.
  bool camera_view_transforms = true;
  uint64_t seed = 0;

  void validate() const;
};

/// Generation metadata, exposed for verification: where each anomaly was
/// planted and which cameras had it occluded.
struct SceneGenInfo {
  std::string scene_id;
  int segment_start = -1;  // clip index; -1 for normal scenes
  int segment_len = 0;
  std::vector<uint8_t> occluded;  // per camera
};

struct SynthTrace {
  Vector shift_direction;                 // unit vector in latent scene space
  std::vector<Vector> per_camera_shift;   // the shift as each camera sees it
  std::vector<SceneGenInfo> scenes;
};

/**
 * Plants contiguous anomalous segments into gaussian clutter. Every clip has
 * one latent scene vector shared by all cameras; camera c observes it through
 * its view transform. Normal scenes draw every clip from the normal cluster;
 * anomalous scenes shift a contiguous clip segment in latent space, and each
 * camera independently has its view of that segment replaced by fresh
 * normal-cluster draws with probability `occlusion_probability` (the anomaly
 * is invisible from that viewpoint). Frame labels mark the planted segment
 * regardless of per-camera occlusion. Pure function of the spec: equal seeds
 * give byte-identical datasets.
 */
Dataset generate_synthetic(const SyntheticSpec& spec, SynthTrace* trace = nullptr);

/**
 * Draws (normal, anomalous) training pairs: without replacement while the
 * class population covers the request, with replacement otherwise. Scene
 * selection applies to all cameras simultaneously. Returns index pairs into
 * `train`.
 */
std::vector<std::pair<int, int>> sample_batch(const std::vector<MultiCameraScene>& train,
                                              int n_normal, int n_anomalous, Rng& rng);

Label parse_label(const std::string& s);
std::string to_string(Label l);

}  // namespace mcmil
