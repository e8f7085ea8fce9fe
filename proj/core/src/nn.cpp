#include "mcmil/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mcmil {

namespace {

constexpr double kScoreClamp = 1e-12;

void check_layer_shapes(const LayerParams& lp, int in, int out, const std::string& what) {
  if (lp.w.rows != out || lp.w.cols != in) {
    std::ostringstream os;
    os << what << ": weight shape (" << lp.w.rows << "x" << lp.w.cols << ") != expected ("
       << out << "x" << in << ")";
    throw ShapeError(os.str());
  }
  if (static_cast<int>(lp.b.size()) != out) {
    throw ShapeError(what + ": bias length mismatch");
  }
}

}  // namespace

double stable_sigmoid(double z) {
  double s;
  if (z >= 0.0) {
    const double e = std::exp(-z);
    s = 1.0 / (1.0 + e);
  } else {
    const double e = std::exp(z);
    s = e / (1.0 + e);
  }
  // Keep the output strictly inside (0, 1) even where exp saturates.
  return std::clamp(s, kScoreClamp, 1.0 - kScoreClamp);
}

const LayerParams& RegressorParams::layer(int l, int camera) const {
  if (l < split_layers && multiview()) {
    if (camera < 0) throw RoutingError("camera index required: params have camera variants");
    if (camera >= num_cameras()) {
      throw RoutingError("camera index " + std::to_string(camera) + " out of range (have " +
                         std::to_string(num_cameras()) + " variants)");
    }
    return variants[camera][l];
  }
  return shared[l];
}

void RegressorParams::validate() const {
  if (layer_dims.size() != 4) throw ShapeError("layer_dims must have exactly 4 entries");
  if (layer_dims.back() != 1) throw ShapeError("output layer width must be 1");
  for (int d : layer_dims) {
    if (d <= 0) throw ShapeError("layer_dims entries must be positive");
  }
  if (static_cast<int>(shared.size()) != num_layers()) {
    throw ShapeError("shared layer count mismatch");
  }
  for (int l = 0; l < num_layers(); ++l) {
    check_layer_shapes(shared[l], layer_dims[l], layer_dims[l + 1],
                       "shared layer " + std::to_string(l));
  }
  if (multiview()) {
    if (split_layers < 1 || split_layers > num_layers()) {
      throw ShapeError("split_layers out of range for camera variants");
    }
    for (size_t c = 0; c < variants.size(); ++c) {
      if (static_cast<int>(variants[c].size()) != split_layers) {
        throw ShapeError("camera " + std::to_string(c) + " variant layer count mismatch");
      }
      for (int l = 0; l < split_layers; ++l) {
        check_layer_shapes(variants[c][l], layer_dims[l], layer_dims[l + 1],
                           "camera " + std::to_string(c) + " layer " + std::to_string(l));
      }
    }
  }
}

RegressorParams RegressorParams::zeros_like() const {
  RegressorParams z;
  z.layer_dims = layer_dims;
  z.split_layers = split_layers;
  z.shared.reserve(shared.size());
  for (const auto& lp : shared) {
    z.shared.push_back({Matrix(lp.w.rows, lp.w.cols), Vector(lp.b.size(), 0.0)});
  }
  z.variants.reserve(variants.size());
  for (const auto& cam : variants) {
    std::vector<LayerParams> v;
    v.reserve(cam.size());
    for (const auto& lp : cam) {
      v.push_back({Matrix(lp.w.rows, lp.w.cols), Vector(lp.b.size(), 0.0)});
    }
    z.variants.push_back(std::move(v));
  }
  return z;
}

double RegressorParams::weight_norm_sq() const {
  double acc = 0.0;
  const int first_shared = multiview() ? split_layers : 0;
  for (int l = first_shared; l < num_layers(); ++l) {
    for (double v : shared[l].w.data) acc += v * v;
  }
  for (const auto& cam : variants) {
    for (const auto& lp : cam) {
      for (double v : lp.w.data) acc += v * v;
    }
  }
  return acc;
}

size_t RegressorParams::num_coords() const {
  size_t n = 0;
  for (const auto& lp : shared) n += lp.w.size() + lp.b.size();
  for (const auto& cam : variants) {
    for (const auto& lp : cam) n += lp.w.size() + lp.b.size();
  }
  return n;
}

RegressorParams init_params(const std::vector<int>& layer_dims, uint64_t seed, int cameras,
                            int split_layers) {
  RegressorParams p;
  p.layer_dims = layer_dims;
  if (layer_dims.size() != 4 || layer_dims.back() != 1) {
    throw ShapeError("layer_dims must be {D, H1, H2, 1}");
  }
  Rng rng(seed);
  auto make_layer = [&](int in, int out) {
    LayerParams lp{Matrix(out, in), Vector(out, 0.0)};
    const double a = std::sqrt(6.0 / (in + out));
    for (double& v : lp.w.data) v = rng.uniform(-a, a);
    return lp;
  };
  for (int l = 0; l + 1 < static_cast<int>(layer_dims.size()); ++l) {
    p.shared.push_back(make_layer(layer_dims[l], layer_dims[l + 1]));
  }
  if (cameras > 0) {
    p.split_layers = split_layers;
    for (int c = 0; c < cameras; ++c) {
      std::vector<LayerParams> v;
      for (int l = 0; l < split_layers; ++l) {
        v.push_back(make_layer(layer_dims[l], layer_dims[l + 1]));
      }
      p.variants.push_back(std::move(v));
    }
  }
  p.validate();
  return p;
}

DropoutMasks draw_masks(const std::vector<int>& layer_dims, double keep, Rng& rng) {
  if (keep <= 0.0 || keep > 1.0) throw ValidationError("keep probability must be in (0, 1]");
  DropoutMasks m;
  m.keep = keep;
  // Masks cover the hidden layers only (layer_dims[1..n-2]).
  for (size_t l = 1; l + 1 < layer_dims.size(); ++l) {
    std::vector<uint8_t> mask(layer_dims[l]);
    for (auto& bit : mask) bit = rng.bernoulli(keep) ? 1 : 0;
    m.layer_masks.push_back(std::move(mask));
  }
  return m;
}

namespace {

// z = W x + b
void affine(const LayerParams& lp, std::span<const double> x, Vector& z) {
  z.assign(lp.b.begin(), lp.b.end());
  for (int o = 0; o < lp.w.rows; ++o) {
    const double* wr = lp.w.row(o);
    double acc = 0.0;
    for (int i = 0; i < lp.w.cols; ++i) acc += wr[i] * x[i];
    z[o] += acc;
  }
}

double run_forward(const RegressorParams& p, std::span<const double> x,
                   const DropoutMasks* masks, int camera, ForwardTape* tape) {
  if (static_cast<int>(x.size()) != p.input_dim()) {
    throw ShapeError("input length " + std::to_string(x.size()) + " != feature dim " +
                     std::to_string(p.input_dim()));
  }
  if (p.multiview() && camera < 0) {
    throw RoutingError("camera index required: params have camera variants");
  }
  if (!p.multiview() && camera >= 0) {
    camera = -1;  // shared network ignores the hint
  }

  const int n_layers = p.num_layers();
  Vector cur(x.begin(), x.end());
  Vector z;
  std::vector<Vector> hidden;
  hidden.reserve(n_layers - 1);

  for (int l = 0; l + 1 < n_layers; ++l) {
    affine(p.layer(l, camera), cur, z);
    for (double& v : z) v = v > 0.0 ? v : 0.0;
    if (masks != nullptr) {
      const auto& mask = masks->layer_masks[l];
      if (mask.size() != z.size()) throw ShapeError("dropout mask width mismatch");
      const double inv_keep = 1.0 / masks->keep;
      for (size_t i = 0; i < z.size(); ++i) z[i] = mask[i] ? z[i] * inv_keep : 0.0;
    }
    hidden.push_back(z);
    cur.swap(z);
  }
  affine(p.layer(n_layers - 1, camera), cur, z);
  const double score = stable_sigmoid(z[0]);

  if (tape != nullptr) {
    tape->input.assign(x.begin(), x.end());
    tape->hidden = std::move(hidden);
    tape->masks = masks != nullptr ? *masks : DropoutMasks{};
    tape->camera = camera;
    tape->score = score;
  }
  return score;
}

}  // namespace

double forward(const RegressorParams& p, std::span<const double> x, int camera,
               ForwardTape* tape) {
  return run_forward(p, x, nullptr, camera, tape);
}

double forward_train(const RegressorParams& p, std::span<const double> x,
                     const DropoutMasks& masks, int camera, ForwardTape* tape) {
  if (static_cast<int>(masks.layer_masks.size()) != p.num_layers() - 1) {
    throw ShapeError("dropout masks must cover every hidden layer");
  }
  return run_forward(p, x, &masks, camera, tape);
}

double forward(const RegressorParams& p, std::span<const double> x, Mode mode, double keep_prob,
               Rng* rng, int camera, ForwardTape* tape) {
  if (mode == Mode::Infer) return run_forward(p, x, nullptr, camera, tape);
  if (rng == nullptr) throw ValidationError("train-mode forward requires an rng");
  DropoutMasks masks = draw_masks(p.layer_dims, keep_prob, *rng);
  return run_forward(p, x, &masks, camera, tape);
}

namespace {

LayerParams& grad_layer(RegressorParams& grads, int l, int camera) {
  if (l < grads.split_layers && grads.multiview()) return grads.variants[camera][l];
  return grads.shared[l];
}

}  // namespace

void backward(const RegressorParams& p, const ForwardTape& tape, double dscore,
              RegressorParams& grads) {
  const int n_layers = p.num_layers();
  if (static_cast<int>(tape.hidden.size()) != n_layers - 1) {
    throw ShapeError("tape does not match network depth");
  }
  for (int l = 0; l < n_layers - 1; ++l) {
    if (static_cast<int>(tape.hidden[l].size()) != p.layer_dims[l + 1]) {
      throw ShapeError("tape hidden width does not match params");
    }
  }
  if (static_cast<int>(tape.input.size()) != p.input_dim()) {
    throw ShapeError("tape input does not match params");
  }

  const double s = tape.score;
  double dz = dscore * s * (1.0 - s);

  // delta flows backward layer by layer; `upstream` is dL/d(post-activation).
  Vector delta{dz};
  for (int l = n_layers - 1; l >= 0; --l) {
    const LayerParams& lp = p.layer(l, tape.camera);
    LayerParams& g = grad_layer(grads, l, tape.camera);
    const Vector& in = l == 0 ? tape.input : tape.hidden[l - 1];

    for (int o = 0; o < lp.w.rows; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      g.b[o] += d;
      double* gr = g.w.row(o);
      for (int i = 0; i < lp.w.cols; ++i) gr[i] += d * in[i];
    }
    if (l == 0) break;

    Vector down(lp.w.cols, 0.0);
    for (int o = 0; o < lp.w.rows; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* wr = lp.w.row(o);
      for (int i = 0; i < lp.w.cols; ++i) down[i] += d * wr[i];
    }
    // Through dropout scaling and the ReLU: post-activations that ended up at
    // zero (dropped or negative pre-activation) carry no gradient.
    const bool has_masks = !tape.masks.layer_masks.empty();
    const Vector& post = tape.hidden[l - 1];
    for (size_t i = 0; i < down.size(); ++i) {
      if (post[i] <= 0.0) {
        down[i] = 0.0;
      } else if (has_masks) {
        down[i] /= tape.masks.keep;
      }
    }
    delta.swap(down);
  }
}

RegressorParams backward(const RegressorParams& p, const ForwardTape& tape, double dscore) {
  RegressorParams grads = p.zeros_like();
  backward(p, tape, dscore, grads);
  return grads;
}

OptimizerState make_optimizer(const RegressorParams& params, const OptimizerConfig& cfg) {
  if (cfg.learning_rate <= 0.0) throw ValidationError("learning rate must be positive");
  if (cfg.epsilon < 0.0) throw ValidationError("epsilon must be non-negative");
  return OptimizerState{params.zeros_like(), cfg.learning_rate, cfg.epsilon};
}

namespace {

void update_tensor(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& acc,
                   double lr, double eps) {
  if (p.size() != g.size() || p.size() != acc.size()) {
    throw ShapeError("optimizer state does not mirror params");
  }
  for (size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i];
    if (!std::isfinite(gi)) {
      throw DivergenceError("non-finite gradient encountered during update");
    }
    if (gi == 0.0) continue;
    acc[i] += gi * gi;
    p[i] -= lr * gi / (std::sqrt(acc[i]) + eps);
  }
}

}  // namespace

void apply_update(RegressorParams& params, const RegressorParams& grads, OptimizerState& state) {
  if (params.shared.size() != grads.shared.size() ||
      params.variants.size() != grads.variants.size()) {
    throw ShapeError("gradient structure does not mirror params");
  }
  for (size_t l = 0; l < params.shared.size(); ++l) {
    update_tensor(params.shared[l].w.data, grads.shared[l].w.data,
                  state.accumulators.shared[l].w.data, state.learning_rate, state.epsilon);
    update_tensor(params.shared[l].b, grads.shared[l].b, state.accumulators.shared[l].b,
                  state.learning_rate, state.epsilon);
  }
  for (size_t c = 0; c < params.variants.size(); ++c) {
    for (size_t l = 0; l < params.variants[c].size(); ++l) {
      update_tensor(params.variants[c][l].w.data, grads.variants[c][l].w.data,
                    state.accumulators.variants[c][l].w.data, state.learning_rate, state.epsilon);
      update_tensor(params.variants[c][l].b, grads.variants[c][l].b,
                    state.accumulators.variants[c][l].b, state.learning_rate, state.epsilon);
    }
  }
}

std::vector<double*> param_coords(RegressorParams& p) {
  std::vector<double*> out;
  out.reserve(p.num_coords());
  auto push = [&](LayerParams& lp) {
    for (double& v : lp.w.data) out.push_back(&v);
    for (double& v : lp.b) out.push_back(&v);
  };
  for (auto& lp : p.shared) push(lp);
  for (auto& cam : p.variants) {
    for (auto& lp : cam) push(lp);
  }
  return out;
}

GradCheckReport finite_diff_check(const RegressorParams& params, const RegressorParams& analytic,
                                  const std::function<double(const RegressorParams&)>& loss_value,
                                  double h, double rel_tol, double abs_tol, size_t max_coords,
                                  Rng& rng) {
  if (h <= 0.0) throw ValidationError("finite-difference step must be positive");
  RegressorParams work = params;
  RegressorParams grads = analytic;
  std::vector<double*> coords = param_coords(work);
  std::vector<double*> gcoords = param_coords(grads);
  if (coords.size() != gcoords.size()) throw ShapeError("analytic grads do not mirror params");

  std::vector<size_t> idx(coords.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  if (max_coords < idx.size()) {
    // Partial Fisher-Yates: the first max_coords entries become the sample.
    for (size_t i = 0; i < max_coords; ++i) {
      const size_t j = i + static_cast<size_t>(rng.uniform_int(0, static_cast<int>(idx.size() - i - 1)));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(max_coords);
  }

  GradCheckReport rep;
  rep.pass = true;
  for (size_t k : idx) {
    const double orig = *coords[k];
    *coords[k] = orig + h;
    const double lp = loss_value(work);
    *coords[k] = orig - h;
    const double lm = loss_value(work);
    *coords[k] = orig;

    const double fd = (lp - lm) / (2.0 * h);
    const double an = *gcoords[k];
    const double abs_err = std::abs(an - fd);
    const double denom = std::max(std::abs(an), std::abs(fd));
    const double rel_err = denom > 0.0 ? abs_err / denom : 0.0;

    rep.coords_checked++;
    if (abs_err > rep.max_abs_err) rep.max_abs_err = abs_err;
    const bool ok = abs_err <= abs_tol || rel_err <= rel_tol;
    if (rel_err > rep.max_rel_err && abs_err > abs_tol) {
      rep.max_rel_err = rel_err;
      rep.worst_coord = "coord " + std::to_string(k);
    }
    if (!ok) rep.pass = false;
  }
  return rep;
}

}  // namespace mcmil
