#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mcmil/common.hpp"
#include "mcmil/matrix.hpp"

namespace mcmil {

struct LayerParams {
  Matrix w;  // out x in
  Vector b;  // out

  bool operator==(const LayerParams&) const = default;
};

/**
 * Weights and biases of the anomaly-score regression network.
 *
 * layer_dims has exactly four entries {D, H1, H2, 1}: two ReLU hidden layers
 * and a sigmoid output neuron. When camera variants are present, the first
 * split_layers dense layers are replaced per camera at forward time and the
 * remaining layers stay shared (the multiview network). Variant tensors must
 * match the shared shapes for the replaced layers.
 */
struct RegressorParams {
  std::vector<int> layer_dims;
  std::vector<LayerParams> shared;                 // one per dense layer
  int split_layers = 0;                            // leading layers routed per camera
  std::vector<std::vector<LayerParams>> variants;  // [camera][layer < split_layers]

  bool multiview() const { return !variants.empty(); }
  int num_layers() const { return static_cast<int>(layer_dims.size()) - 1; }
  int input_dim() const { return layer_dims.empty() ? 0 : layer_dims.front(); }
  int num_cameras() const { return static_cast<int>(variants.size()); }

  /// Layer l as seen by `camera` (-1 = shared network).
  const LayerParams& layer(int l, int camera) const;

  void validate() const;

  /// Same shapes, all values zero. Used for gradients and accumulators.
  RegressorParams zeros_like() const;

  /// Squared Frobenius norm over the weight matrices reachable by any camera
  /// (variants plus shared layers past the split; biases excluded).
  double weight_norm_sq() const;

  size_t num_coords() const;

  bool operator==(const RegressorParams&) const = default;
};

/// Glorot-uniform weights ([-a, a], a = sqrt(6/(fan_in+fan_out))), zero
/// biases. Shared layers are drawn first, then variants camera by camera.
RegressorParams init_params(const std::vector<int>& layer_dims, uint64_t seed,
                            int cameras = 0, int split_layers = 0);

enum class Mode { Train, Infer };

/// Per-hidden-layer keep/drop masks for one forward call.
struct DropoutMasks {
  std::vector<std::vector<uint8_t>> layer_masks;
  double keep = 1.0;
};

DropoutMasks draw_masks(const std::vector<int>& layer_dims, double keep, Rng& rng);

/// Activation record of one forward pass; consumed by backward().
struct ForwardTape {
  Vector input;
  std::vector<Vector> hidden;  // post-activation, post-dropout
  DropoutMasks masks;          // empty layer_masks in infer mode
  int camera = -1;
  double score = 0.0;
};

/// Infer-mode forward: pure function of (params, x, camera). No dropout.
double forward(const RegressorParams& p, std::span<const double> x, int camera = -1,
               ForwardTape* tape = nullptr);

/// Train-mode forward with caller-supplied inverted-dropout masks
/// (kept activations are scaled by 1/keep so inference needs no rescaling).
double forward_train(const RegressorParams& p, std::span<const double> x,
                     const DropoutMasks& masks, int camera = -1,
                     ForwardTape* tape = nullptr);

/// Convenience form matching the train|infer switch: in train mode masks are
/// drawn from `rng` with the given keep probability and recorded in the tape.
double forward(const RegressorParams& p, std::span<const double> x, Mode mode,
               double keep_prob, Rng* rng, int camera = -1, ForwardTape* tape = nullptr);

/// Accumulates exact gradients of dscore * score(x) into `grads` for every
/// parameter that participated in the recorded pass. Camera-routed layers
/// accumulate only into their variant.
void backward(const RegressorParams& p, const ForwardTape& tape, double dscore,
              RegressorParams& grads);

RegressorParams backward(const RegressorParams& p, const ForwardTape& tape, double dscore);

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double epsilon = 1e-8;
};

/// Adaptive-gradient state: per-parameter squared-gradient accumulators.
struct OptimizerState {
  RegressorParams accumulators;
  double learning_rate = 1e-3;
  double epsilon = 1e-8;
};

OptimizerState make_optimizer(const RegressorParams& params, const OptimizerConfig& cfg = {});

/// acc += g^2; p -= lr * g / (sqrt(acc) + eps). Zero gradients leave both the
/// parameter and its accumulator untouched. Throws DivergenceError on
/// non-finite gradients.
void apply_update(RegressorParams& params, const RegressorParams& grads, OptimizerState& state);

/// Flat view over every parameter coordinate (shared tensors first, then
/// variants by camera). Order is part of the checkpoint contract.
std::vector<double*> param_coords(RegressorParams& p);

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  size_t coords_checked = 0;
  bool pass = false;
  std::string worst_coord;
};

/**
 * Central-difference check of `analytic` against `loss_value`, sampling
 * min(max_coords, all) parameter coordinates without replacement. A
 * coordinate passes when its relative error is below `rel_tol` or the
 * absolute error is below `abs_tol` (near-zero fallback). Failures are
 * reported, never thrown.
 */
GradCheckReport finite_diff_check(const RegressorParams& params,
                                  const RegressorParams& analytic,
                                  const std::function<double(const RegressorParams&)>& loss_value,
                                  double h, double rel_tol, double abs_tol,
                                  size_t max_coords, Rng& rng);

/// Numerically stable logistic sigmoid, clamped to the open interval (0, 1).
double stable_sigmoid(double z);

}  // namespace mcmil
