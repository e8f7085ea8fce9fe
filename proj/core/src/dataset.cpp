#include "mcmil/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mcmil {

namespace {

constexpr char kFeatureMagic[4] = {'M', 'C', 'V', 'F'};
constexpr uint32_t kFeatureVersion = 1;

uint32_t read_u32(std::istream& in, const std::string& what) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw IoError("truncated file while reading " + what);
  return static_cast<uint32_t>(buf[0]) | static_cast<uint32_t>(buf[1]) << 8 |
         static_cast<uint32_t>(buf[2]) << 16 | static_cast<uint32_t>(buf[3]) << 24;
}

void write_u32(std::ostream& out, uint32_t v) {
  const unsigned char buf[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

Matrix read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    size_t pos = 0;
    while (pos <= line.size()) {
      size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      const std::string tok = line.substr(pos, comma - pos);
      try {
        size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size() && tok.find_first_not_of(" \t", used) != std::string::npos) {
          throw IoError("bad CSV value '" + tok + "' in " + path);
        }
        row.push_back(v);
      } catch (const std::invalid_argument&) {
        throw IoError("bad CSV value '" + tok + "' in " + path);
      }
      pos = comma + 1;
      if (comma == line.size()) break;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw IoError("ragged CSV rows in " + path);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("empty feature file: " + path);
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) m(r, c) = rows[r][c];
  }
  return m;
}

void check_finite(const Matrix& m, const std::string& path) {
  for (double v : m.data) {
    if (!std::isfinite(v)) throw IoError("non-finite feature value in " + path);
  }
}

}  // namespace

Matrix read_feature_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    Matrix m = read_csv_matrix(path);
    check_finite(m, path);
    return m;
  }
  const uint32_t version = read_u32(in, "version");
  if (version != kFeatureVersion) {
    throw IoError("unsupported MCVF version " + std::to_string(version) + " in " + path);
  }
  const uint32_t n = read_u32(in, "n_clips");
  const uint32_t d = read_u32(in, "dim");
  if (n == 0 || d == 0) throw IoError("MCVF with zero dimension in " + path);
  Matrix m(static_cast<int>(n), static_cast<int>(d));
  std::vector<float> buf(static_cast<size_t>(n) * d);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (static_cast<size_t>(in.gcount()) != buf.size() * sizeof(float)) {
    throw IoError("truncated MCVF payload in " + path);
  }
  in.peek();
  if (!in.eof()) throw IoError("trailing bytes after MCVF payload in " + path);
  for (size_t i = 0; i < buf.size(); ++i) m.data[i] = static_cast<double>(buf[i]);
  check_finite(m, path);
  return m;
}

void write_feature_file(const std::string& path, const Matrix& features) {
  if (features.rows == 0 || features.cols == 0) {
    throw ValidationError("refusing to write empty feature matrix");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature file: " + path);
  out.write(kFeatureMagic, 4);
  write_u32(out, kFeatureVersion);
  write_u32(out, static_cast<uint32_t>(features.rows));
  write_u32(out, static_cast<uint32_t>(features.cols));
  std::vector<float> buf(features.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(features.data[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw IoError("short write to " + path);
}

std::vector<uint8_t> read_frame_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open frame label file: " + path);
  std::vector<uint8_t> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line == "0") {
      labels.push_back(0);
    } else if (line == "1") {
      labels.push_back(1);
    } else {
      throw IoError("bad frame label '" + line + "' in " + path);
    }
  }
  if (labels.empty()) throw IoError("empty frame label file: " + path);
  return labels;
}

void write_frame_labels(const std::string& path, const std::vector<uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write frame label file: " + path);
  for (uint8_t l : labels) out << (l ? '1' : '0') << '\n';
}

Label parse_label(const std::string& s) {
  if (s == "normal") return Label::Normal;
  if (s == "anomalous") return Label::Anomalous;
  throw ValidationError("unknown label '" + s + "' (expected normal|anomalous)");
}

std::string to_string(Label l) { return l == Label::Normal ? "normal" : "anomalous"; }

void MultiCameraScene::validate() const {
  if (bags.empty()) throw ValidationError("scene '" + id + "' has no camera bags");
  const int clips = bags.front().n_clips();
  for (const auto& bag : bags) {
    if (bag.n_clips() != clips) {
      throw SyncError("scene '" + id + "': clip counts differ across cameras (" +
                      std::to_string(bag.n_clips()) + " vs " + std::to_string(clips) + ")");
    }
    if (bag.label != label) throw ValidationError("scene '" + id + "': bag label mismatch");
  }
  if (static_cast<int>(frame_labels.size()) != clips * kFramesPerClip) {
    throw ValidationError("scene '" + id + "': frame label count " +
                          std::to_string(frame_labels.size()) + " != 16 * " +
                          std::to_string(clips));
  }
  const bool any_positive =
      std::any_of(frame_labels.begin(), frame_labels.end(), [](uint8_t v) { return v != 0; });
  if (label == Label::Anomalous && !any_positive) {
    throw ValidationError("anomalous scene '" + id + "' has no positive frame label");
  }
  if (label == Label::Normal && any_positive) {
    throw ValidationError("normal scene '" + id + "' has positive frame labels");
  }
}

Dataset load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest parse error: ") + e.what());
  }
  for (const char* key : {"cameras", "feature_dim", "scenes"}) {
    if (!doc.contains(key)) throw ValidationError(std::string("manifest missing '") + key + "'");
  }

  Dataset ds;
  ds.cameras = doc["cameras"].get<std::vector<std::string>>();
  if (ds.cameras.empty()) throw ValidationError("manifest lists no cameras");
  ds.feature_dim = doc["feature_dim"].get<int>();
  if (ds.feature_dim <= 0) throw ValidationError("feature_dim must be positive");

  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };

  for (const auto& entry : doc["scenes"]) {
    for (const char* key : {"id", "label", "split", "features", "frame_labels"}) {
      if (!entry.contains(key)) {
        throw ValidationError(std::string("scene entry missing '") + key + "'");
      }
    }
    MultiCameraScene scene;
    scene.id = entry["id"].get<std::string>();
    scene.label = parse_label(entry["label"].get<std::string>());
    const std::string split = entry["split"].get<std::string>();
    if (split != "train" && split != "test") {
      throw ValidationError("scene '" + scene.id + "': split must be train|test");
    }

    const auto& feats = entry["features"];
    for (size_t c = 0; c < ds.cameras.size(); ++c) {
      if (!feats.contains(ds.cameras[c])) {
        throw ValidationError("scene '" + scene.id + "' missing camera '" + ds.cameras[c] + "'");
      }
      ClipBag bag;
      bag.scene_id = scene.id;
      bag.camera_id = static_cast<int>(c);
      bag.label = scene.label;
      bag.features = read_feature_file(resolve(feats[ds.cameras[c]].get<std::string>()));
      if (bag.features.cols != ds.feature_dim) {
        throw ShapeError("scene '" + scene.id + "' camera '" + ds.cameras[c] +
                         "': feature dim " + std::to_string(bag.features.cols) +
                         " != manifest feature_dim " + std::to_string(ds.feature_dim));
      }
      scene.bags.push_back(std::move(bag));
    }
    scene.frame_labels = read_frame_labels(resolve(entry["frame_labels"].get<std::string>()));
    scene.validate();
    (split == "train" ? ds.train : ds.test).push_back(std::move(scene));
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& out_dir) {
  const fs::path root(out_dir);
  fs::create_directories(root / "features");
  fs::create_directories(root / "labels");

  json scenes = json::array();
  auto emit = [&](const MultiCameraScene& scene, const std::string& split) {
    json feats;
    for (size_t c = 0; c < scene.bags.size(); ++c) {
      const std::string rel = "features/" + scene.id + "_" + ds.cameras[c] + ".mcvf";
      write_feature_file((root / rel).string(), scene.bags[c].features);
      feats[ds.cameras[c]] = rel;
    }
    const std::string lrel = "labels/" + scene.id + ".txt";
    write_frame_labels((root / lrel).string(), scene.frame_labels);
    scenes.push_back({{"id", scene.id},
                      {"label", to_string(scene.label)},
                      {"split", split},
                      {"features", feats},
                      {"frame_labels", lrel}});
  };
  for (const auto& s : ds.train) emit(s, "train");
  for (const auto& s : ds.test) emit(s, "test");

  const json doc = {{"cameras", ds.cameras}, {"feature_dim", ds.feature_dim}, {"scenes", scenes}};
  std::ofstream out(root / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest under " + out_dir);
  out << doc.dump(2) << '\n';
}

void SyntheticSpec::validate() const {
  if (n_cameras < 1) throw ValidationError("n_cameras must be >= 1");
  if (feature_dim < 1) throw ValidationError("feature_dim must be >= 1");
  if (scenes_per_class < 1) throw ValidationError("scenes_per_class must be >= 1");
  if (clip_min < 1 || clip_max < clip_min) throw ValidationError("bad clip count range");
  if (segment_min < 1 || segment_max < segment_min) throw ValidationError("bad segment range");
  if (segment_min > clip_min) {
    throw ValidationError("segment_min exceeds the minimum clip count; segments may not fit");
  }
  if (!(occlusion_probability >= 0.0 && occlusion_probability <= 1.0)) {
    throw ValidationError("occlusion_probability must be in [0, 1]");
  }
  if (!(normal_scale > 0.0)) throw ValidationError("normal_scale must be positive");
  if (!std::isfinite(anomaly_shift) || anomaly_shift < 0.0) {
    throw ValidationError("anomaly_shift must be finite and non-negative");
  }
}

namespace {

// Random orthogonal matrix via Gram-Schmidt on a gaussian draw.
Matrix random_orthogonal(int dim, Rng& rng) {
  Matrix q(dim, dim);
  for (double& v : q.data) v = rng.normal();
  for (int r = 0; r < dim; ++r) {
    double* row = q.row(r);
    for (int p = 0; p < r; ++p) {
      const double* prev = q.row(p);
      double dot = 0.0;
      for (int d = 0; d < dim; ++d) dot += row[d] * prev[d];
      for (int d = 0; d < dim; ++d) row[d] -= dot * prev[d];
    }
    double norm = 0.0;
    for (int d = 0; d < dim; ++d) norm += row[d] * row[d];
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      // Degenerate draw; fall back to a unit basis vector.
      std::fill(row, row + dim, 0.0);
      row[r % dim] = 1.0;
    } else {
      for (int d = 0; d < dim; ++d) row[d] /= norm;
    }
  }
  return q;
}

// y = M x
Vector transform(const Matrix& m, const double* x) {
  Vector y(m.rows, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    double acc = 0.0;
    for (int c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec, SynthTrace* trace) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x5f3e));
  const int dim = spec.feature_dim;

  // One latent shift direction per dataset; anomalous clips live at
  // normal_cluster + anomaly_shift * direction in latent scene space.
  Vector dir(dim);
  double norm = 0.0;
  for (double& v : dir) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) norm = 1.0;
  for (double& v : dir) v /= norm;

  std::vector<Matrix> views;
  if (spec.camera_view_transforms) {
    views.reserve(spec.n_cameras);
    for (int c = 0; c < spec.n_cameras; ++c) views.push_back(random_orthogonal(dim, rng));
  }
  auto to_camera = [&](int c, const double* latent) {
    if (views.empty()) return Vector(latent, latent + dim);
    return transform(views[c], latent);
  };

  if (trace != nullptr) {
    trace->shift_direction = dir;
    trace->per_camera_shift.clear();
    for (int c = 0; c < spec.n_cameras; ++c) {
      trace->per_camera_shift.push_back(to_camera(c, dir.data()));
    }
    trace->scenes.clear();
  }

  Dataset ds;
  ds.feature_dim = dim;
  for (int c = 0; c < spec.n_cameras; ++c) ds.cameras.push_back("cam" + std::to_string(c));

  auto draw_latent_row = [&](double* row) {
    for (int d = 0; d < dim; ++d) row[d] = spec.normal_mean + spec.normal_scale * rng.normal();
  };

  const int train_count = spec.scenes_per_class / 2;
  for (Label label : {Label::Normal, Label::Anomalous}) {
    for (int i = 0; i < spec.scenes_per_class; ++i) {
      MultiCameraScene scene;
      std::ostringstream id;
      id << to_string(label) << "-" << std::setw(3) << std::setfill('0') << i;
      scene.id = id.str();
      scene.label = label;

      const int n_clips = rng.uniform_int(spec.clip_min, spec.clip_max);
      int seg_start = -1, seg_len = 0;
      if (label == Label::Anomalous) {
        seg_len = rng.uniform_int(spec.segment_min, std::min(spec.segment_max, n_clips));
        seg_start = rng.uniform_int(0, n_clips - seg_len);
      }

      SceneGenInfo info;
      info.scene_id = scene.id;
      info.segment_start = seg_start;
      info.segment_len = seg_len;

      // The shared scene: one latent vector per clip, anomaly planted in
      // latent space.
      Matrix latent(n_clips, dim);
      for (int r = 0; r < n_clips; ++r) draw_latent_row(latent.row(r));
      if (label == Label::Anomalous) {
        for (int r = seg_start; r < seg_start + seg_len; ++r) {
          double* row = latent.row(r);
          for (int d = 0; d < dim; ++d) row[d] += spec.anomaly_shift * dir[d];
        }
      }

      for (int c = 0; c < spec.n_cameras; ++c) {
        ClipBag bag;
        bag.scene_id = scene.id;
        bag.camera_id = c;
        bag.label = label;
        bag.features = Matrix(n_clips, dim);

        bool occluded = false;
        Matrix occl_rows;
        if (label == Label::Anomalous) {
          occluded = rng.bernoulli(spec.occlusion_probability);
          if (occluded) {
            // This camera sees normal clutter where the anomaly happens.
            occl_rows = Matrix(seg_len, dim);
            for (int r = 0; r < seg_len; ++r) draw_latent_row(occl_rows.row(r));
          }
        }
        for (int r = 0; r < n_clips; ++r) {
          const double* src = latent.row(r);
          if (occluded && r >= seg_start && r < seg_start + seg_len) {
            src = occl_rows.row(r - seg_start);
          }
          const Vector cam_row = to_camera(c, src);
          std::copy(cam_row.begin(), cam_row.end(), bag.features.row(r));
        }
        info.occluded.push_back(occluded ? 1 : 0);
        scene.bags.push_back(std::move(bag));
      }

      scene.frame_labels.assign(static_cast<size_t>(n_clips) * kFramesPerClip, 0);
      if (label == Label::Anomalous) {
        std::fill(scene.frame_labels.begin() + static_cast<size_t>(seg_start) * kFramesPerClip,
                  scene.frame_labels.begin() +
                      static_cast<size_t>(seg_start + seg_len) * kFramesPerClip,
                  1);
      }
      scene.validate();
      if (trace != nullptr) trace->scenes.push_back(std::move(info));
      (i < train_count ? ds.train : ds.test).push_back(std::move(scene));
    }
  }
  return ds;
}

std::vector<std::pair<int, int>> sample_batch(const std::vector<MultiCameraScene>& train,
                                              int n_normal, int n_anomalous, Rng& rng) {
  if (n_normal != n_anomalous) {
    throw ValidationError("batch forms (normal, anomalous) pairs by position; counts must match");
  }
  if (n_normal < 1) throw ValidationError("batch size must be >= 1");

  std::vector<int> normals, anomalies;
  for (size_t i = 0; i < train.size(); ++i) {
    (train[i].label == Label::Normal ? normals : anomalies).push_back(static_cast<int>(i));
  }
  if (normals.empty() || anomalies.empty()) {
    throw ValidationError("training split must contain both classes");
  }

  auto draw = [&](const std::vector<int>& pool, int count) {
    std::vector<int> picked;
    picked.reserve(count);
    if (static_cast<int>(pool.size()) >= count) {
      std::vector<int> shuffled = pool;
      for (int i = 0; i < count; ++i) {
        const int j = i + rng.uniform_int(0, static_cast<int>(shuffled.size()) - i - 1);
        std::swap(shuffled[i], shuffled[j]);
        picked.push_back(shuffled[i]);
      }
    } else {
      for (int i = 0; i < count; ++i) {
        picked.push_back(pool[rng.uniform_int(0, static_cast<int>(pool.size()) - 1)]);
      }
    }
    return picked;
  };

  const std::vector<int> ns = draw(normals, n_normal);
  const std::vector<int> as = draw(anomalies, n_anomalous);
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(n_normal);
  for (int i = 0; i < n_normal; ++i) pairs.emplace_back(ns[i], as[i]);
  return pairs;
}

}  // namespace mcmil
