#include "mcmil/nn.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "mcmil/checkpoint.hpp"

using namespace mcmil;

namespace {

// 1 -> 2 -> 1 -> 1 toy net with hand-set weights.
RegressorParams toy_net() {
  RegressorParams p;
  p.layer_dims = {1, 2, 1, 1};
  p.shared.resize(3);
  p.shared[0].w = Matrix(2, 1);
  p.shared[0].w(0, 0) = 1.0;
  p.shared[0].w(1, 0) = -2.0;
  p.shared[0].b = {0.5, 0.25};
  p.shared[1].w = Matrix(1, 2);
  p.shared[1].w(0, 0) = 0.3;
  p.shared[1].w(0, 1) = 0.7;
  p.shared[1].b = {-0.2};
  p.shared[2].w = Matrix(1, 1);
  p.shared[2].w(0, 0) = 2.0;
  p.shared[2].b = {-0.1};
  p.validate();
  return p;
}

}  // namespace

TEST_CASE("zero network scores 0.5 on any input") {
  RegressorParams p = init_params({4, 6, 3, 1}, 1);
  for (auto& lp : p.shared) {
    std::fill(lp.w.data.begin(), lp.w.data.end(), 0.0);
    std::fill(lp.b.begin(), lp.b.end(), 0.0);
  }
  const Vector x = {1.0, -2.0, 0.5, 3.0};
  CHECK(forward(p, x) == 0.5);
}

TEST_CASE("hand-evaluated forward pass") {
  // z1 = [1.5, -1.75] -> relu [1.5, 0]; z2 = 0.3*1.5 - 0.2 = 0.25;
  // z3 = 2*0.25 - 0.1 = 0.4; sigmoid(0.4) = 0.598687660112452.
  const RegressorParams p = toy_net();
  const Vector x = {1.0};
  CHECK(forward(p, x) == doctest::Approx(0.598687660112452).epsilon(1e-12));
}

TEST_CASE("train-mode forward is deterministic under a fixed seed") {
  const RegressorParams p = init_params({5, 8, 4, 1}, 3);
  Rng rng_a(42), rng_b(42);
  Vector x = {0.1, -0.3, 2.0, 0.7, -1.0};
  ForwardTape ta, tb;
  const double sa = forward(p, x, Mode::Train, 0.4, &rng_a, -1, &ta);
  const double sb = forward(p, x, Mode::Train, 0.4, &rng_b, -1, &tb);
  CHECK(sa == sb);
  CHECK(ta.masks.layer_masks == tb.masks.layer_masks);
}

TEST_CASE("infer forward is pure and scores stay strictly inside (0,1)") {
  const RegressorParams p = init_params({8, 16, 8, 1}, 9);
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    Vector x(8);
    for (double& v : x) v = rng.normal() * 100.0;  // drive the output to saturation
    const double a = forward(p, x);
    const double b = forward(p, x);
    CHECK(a == b);
    CHECK(a > 0.0);
    CHECK(a < 1.0);
  }
}

TEST_CASE("sigmoid saturation is clamped strictly inside the open interval") {
  CHECK(stable_sigmoid(1000.0) < 1.0);
  CHECK(stable_sigmoid(-1000.0) > 0.0);
  CHECK(stable_sigmoid(0.0) == 0.5);
}

TEST_CASE("backward with zero dscore yields exactly zero gradients") {
  const RegressorParams p = init_params({4, 6, 3, 1}, 5);
  ForwardTape tape;
  const Vector x = {1.0, 2.0, -1.0, 0.5};
  forward(p, x, -1, &tape);
  const RegressorParams g = backward(p, tape, 0.0);
  for (const auto& lp : g.shared) {
    for (double v : lp.w.data) CHECK(v == 0.0);
    for (double v : lp.b) CHECK(v == 0.0);
  }
}

TEST_CASE("gradient accumulation is additive across instances") {
  const RegressorParams p = init_params({3, 5, 4, 1}, 7);
  Rng rng(11);
  Vector x1(3), x2(3);
  for (double& v : x1) v = rng.normal();
  for (double& v : x2) v = rng.normal();
  ForwardTape t1, t2;
  forward(p, x1, -1, &t1);
  forward(p, x2, -1, &t2);

  RegressorParams both = p.zeros_like();
  backward(p, t1, 0.7, both);
  backward(p, t2, -1.3, both);

  RegressorParams g1 = backward(p, t1, 0.7);
  RegressorParams g2 = backward(p, t2, -1.3);

  auto coords_both = param_coords(both);
  auto c1 = param_coords(g1);
  auto c2 = param_coords(g2);
  for (size_t i = 0; i < coords_both.size(); ++i) {
    CHECK(*coords_both[i] == doctest::Approx(*c1[i] + *c2[i]).epsilon(1e-12));
  }
}

TEST_CASE("analytic network gradient matches finite differences") {
  RegressorParams p = init_params({4, 6, 5, 1}, 13);
  Rng data_rng(3);
  std::vector<Vector> xs(3, Vector(4));
  for (auto& x : xs) {
    for (double& v : x) v = data_rng.normal();
  }
  // loss = sum of scores
  RegressorParams analytic = p.zeros_like();
  for (const auto& x : xs) {
    ForwardTape tape;
    forward(p, x, -1, &tape);
    backward(p, tape, 1.0, analytic);
  }
  auto loss = [&](const RegressorParams& q) {
    double total = 0.0;
    for (const auto& x : xs) total += forward(q, x);
    return total;
  };
  Rng rng(17);
  const GradCheckReport rep = finite_diff_check(p, analytic, loss, 1e-5, 1e-4, 1e-9, 4096, rng);
  CHECK(rep.pass);
  CHECK(rep.coords_checked == p.num_coords());
}

TEST_CASE("finite_diff_check flags a corrupted gradient") {
  RegressorParams p = init_params({4, 6, 5, 1}, 13);
  Vector x = {0.3, -0.8, 1.2, 0.1};
  ForwardTape tape;
  forward(p, x, -1, &tape);
  RegressorParams analytic = backward(p, tape, 1.0);
  // sign-flip one layer
  for (double& v : analytic.shared[1].w.data) v = -v;
  auto loss = [&](const RegressorParams& q) { return forward(q, x); };
  Rng rng(17);
  const GradCheckReport rep = finite_diff_check(p, analytic, loss, 1e-5, 1e-4, 1e-9, 4096, rng);
  CHECK_FALSE(rep.pass);
}

TEST_CASE("apply_update hand case and zero-gradient stability") {
  RegressorParams p = init_params({1, 2, 1, 1}, 1);
  for (auto& lp : p.shared) {
    std::fill(lp.w.data.begin(), lp.w.data.end(), 1.0);
    std::fill(lp.b.begin(), lp.b.end(), 1.0);
  }
  RegressorParams g = p.zeros_like();
  g.shared[0].w(0, 0) = 2.0;  // single active coordinate

  OptimizerState state = make_optimizer(p, {0.1, 0.0});
  const RegressorParams before = p;
  apply_update(p, g, state);

  // acc = 4, w = 1 - 0.1 * 2 / 2 = 0.9
  CHECK(p.shared[0].w(0, 0) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(state.accumulators.shared[0].w(0, 0) == 4.0);
  // everything else untouched
  CHECK(p.shared[0].w(1, 0) == before.shared[0].w(1, 0));
  CHECK(p.shared[1].w(0, 0) == before.shared[1].w(0, 0));
  CHECK(state.accumulators.shared[1].w(0, 0) == 0.0);

  // all-zero gradients leave params and accumulators unchanged
  const RegressorParams snapshot = p;
  const RegressorParams acc_snapshot = state.accumulators;
  apply_update(p, p.zeros_like(), state);
  CHECK(p == snapshot);
  CHECK(state.accumulators == acc_snapshot);
}

TEST_CASE("repeated identical gradients take strictly shrinking steps") {
  RegressorParams p = init_params({1, 2, 1, 1}, 1);
  RegressorParams g = p.zeros_like();
  g.shared[2].w(0, 0) = 0.5;
  OptimizerState state = make_optimizer(p, {1e-2, 1e-8});
  double prev_step = 1e9;
  double prev_w = p.shared[2].w(0, 0);
  for (int i = 0; i < 10; ++i) {
    apply_update(p, g, state);
    const double step = std::abs(p.shared[2].w(0, 0) - prev_w);
    CHECK(step < prev_step);
    prev_step = step;
    prev_w = p.shared[2].w(0, 0);
  }
}

TEST_CASE("non-finite gradients abort the update") {
  RegressorParams p = init_params({1, 2, 1, 1}, 1);
  RegressorParams g = p.zeros_like();
  g.shared[0].b[0] = std::numeric_limits<double>::quiet_NaN();
  OptimizerState state = make_optimizer(p);
  CHECK_THROWS_AS(apply_update(p, g, state), DivergenceError);
}

TEST_CASE("multiview routing matches the shared network when variants equal it") {
  RegressorParams shared = init_params({6, 8, 4, 1}, 21);
  RegressorParams mv = shared;
  mv.split_layers = 1;
  mv.variants = {{shared.shared[0]}, {shared.shared[0]}, {shared.shared[0]}};
  mv.validate();

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Vector x(6);
    for (double& v : x) v = rng.normal();
    const double base = forward(shared, x);
    for (int cam = 0; cam < 3; ++cam) {
      CHECK(forward(mv, x, cam) == base);  // bitwise
    }
  }
}

TEST_CASE("multiview routing errors") {
  RegressorParams mv = init_params({4, 6, 3, 1}, 2, /*cameras=*/2, /*split_layers=*/1);
  const Vector x = {1.0, 2.0, 3.0, 4.0};
  CHECK_THROWS_AS(forward(mv, x), RoutingError);                 // camera required
  CHECK_THROWS_AS(forward(mv, x, 5), RoutingError);              // out of range
  CHECK_THROWS_AS(forward(mv, Vector{1.0, 2.0}, 0), ShapeError); // bad input width
  CHECK_NOTHROW(forward(mv, x, 1));
}

TEST_CASE("camera-routed layers accumulate gradients only into their variant") {
  RegressorParams mv = init_params({4, 6, 3, 1}, 2, 2, 1);
  const Vector x = {0.5, -0.5, 1.0, 0.25};
  ForwardTape tape;
  forward(mv, x, 1, &tape);
  const RegressorParams g = backward(mv, tape, 1.0);
  double cam0_sum = 0.0, cam1_sum = 0.0, shared_prefix = 0.0;
  for (double v : g.variants[0][0].w.data) cam0_sum += std::abs(v);
  for (double v : g.variants[1][0].w.data) cam1_sum += std::abs(v);
  for (double v : g.shared[0].w.data) shared_prefix += std::abs(v);
  CHECK(cam0_sum == 0.0);
  CHECK(shared_prefix == 0.0);
  CHECK(cam1_sum > 0.0);
}

TEST_CASE("inverted dropout: train-mode activation expectation matches infer mode") {
  const RegressorParams p = init_params({4, 16, 4, 1}, 33);
  const Vector x = {0.8, -0.2, 1.5, 0.3};
  ForwardTape infer_tape;
  forward(p, x, -1, &infer_tape);

  const double keep = 0.4;
  const int n = 100000;
  Rng rng(99);
  // pick the first hidden unit with a positive infer-mode activation
  size_t unit = 0;
  while (unit < infer_tape.hidden[0].size() && infer_tape.hidden[0][unit] <= 0.0) ++unit;
  REQUIRE(unit < infer_tape.hidden[0].size());
  const double target = infer_tape.hidden[0][unit];

  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    ForwardTape tape;
    forward(p, x, Mode::Train, keep, &rng, -1, &tape);
    sum += tape.hidden[0][unit];
  }
  const double mean = sum / n;
  // value is target/keep with probability keep: var = target^2 (1-keep)/keep
  const double sigma = target * std::sqrt((1.0 - keep) / keep / n);
  CHECK(std::abs(mean - target) < 3.0 * sigma);
}

TEST_CASE("glorot init bounds and determinism") {
  const RegressorParams a = init_params({10, 8, 4, 1}, 77);
  const RegressorParams b = init_params({10, 8, 4, 1}, 77);
  CHECK(a == b);
  const double bound0 = std::sqrt(6.0 / (10 + 8));
  for (double v : a.shared[0].w.data) {
    CHECK(std::abs(v) <= bound0);
  }
  for (double v : a.shared[0].b) CHECK(v == 0.0);
  CHECK(a.shared[0].w.data != init_params({10, 8, 4, 1}, 78).shared[0].w.data);
}

TEST_CASE("checkpoint round-trip preserves structure to f32 precision") {
  mcmil::testing::TempDir tmp("ckpt");
  const std::string path = (tmp.path() / "model.mcml").string();

  RegressorParams p = init_params({6, 8, 4, 1}, 55, 2, 1);
  save_checkpoint(path, p);
  const RegressorParams q = load_checkpoint(path);

  CHECK(q.layer_dims == p.layer_dims);
  CHECK(q.split_layers == p.split_layers);
  CHECK(q.num_cameras() == 2);
  auto pc = param_coords(p);
  auto qc = param_coords(q);
  REQUIRE(pc.size() == qc.size());
  for (size_t i = 0; i < pc.size(); ++i) {
    CHECK(*qc[i] == static_cast<double>(static_cast<float>(*pc[i])));
  }

  // Saving the loaded params again is byte-stable.
  const std::string path2 = (tmp.path() / "model2.mcml").string();
  save_checkpoint(path2, q);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string bytes1((std::istreambuf_iterator<char>(f1)), {});
  const std::string bytes2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(bytes1 == bytes2);
}

TEST_CASE("checkpoint rejects corrupt files") {
  mcmil::testing::TempDir tmp("ckpt_bad");
  const std::string path = (tmp.path() / "model.mcml").string();
  const RegressorParams p = init_params({4, 6, 3, 1}, 5);
  save_checkpoint(path, p);

  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
  }
  SUBCASE("truncated") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
  }
  SUBCASE("trailing bytes") {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out.write("zz", 2);
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
  }
}

TEST_CASE("params validate rejects malformed structures") {
  RegressorParams p = init_params({4, 6, 3, 1}, 5);
  SUBCASE("wrong dim count") {
    p.layer_dims = {4, 6, 1};
    CHECK_THROWS_AS(p.validate(), ShapeError);
  }
  SUBCASE("output width") {
    p.layer_dims = {4, 6, 3, 2};
    CHECK_THROWS_AS(p.validate(), ShapeError);
  }
  SUBCASE("weight shape mismatch") {
    p.shared[1].w = Matrix(3, 7);
    CHECK_THROWS_AS(p.validate(), ShapeError);
  }
  SUBCASE("variant shape mismatch") {
    p.split_layers = 1;
    p.variants = {{p.shared[1]}};  // wrong shape for layer 0
    CHECK_THROWS_AS(p.validate(), ShapeError);
  }
}
