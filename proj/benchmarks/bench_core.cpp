#include <benchmark/benchmark.h>

#include "mcmil/dataset.hpp"
#include "mcmil/eval.hpp"
#include "mcmil/nn.hpp"
#include "mcmil/trainer.hpp"

namespace {

using namespace mcmil;

void BM_ForwardInfer(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const RegressorParams params = init_params({dim, 512, 32, 1}, 1);
  Rng rng(7);
  Vector x(dim);
  for (double& v : x) v = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(params, x));
  }
}
BENCHMARK(BM_ForwardInfer)->Arg(32)->Arg(1024);

void BM_ForwardBackward(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const RegressorParams params = init_params({dim, 512, 32, 1}, 1);
  RegressorParams grads = params.zeros_like();
  Rng rng(7);
  Vector x(dim);
  for (double& v : x) v = rng.normal();
  for (auto _ : state) {
    ForwardTape tape;
    forward(params, x, -1, &tape);
    backward(params, tape, 1.0, grads);
    benchmark::DoNotOptimize(grads);
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(1024);

void BM_RankingLoss(benchmark::State& state) {
  const int clips = static_cast<int>(state.range(0));
  Rng rng(3);
  ScoreBag anom{Vector(clips), Label::Anomalous, "a", 0};
  ScoreBag norm{Vector(clips), Label::Normal, "n", 0};
  for (double& v : anom.scores) v = rng.uniform();
  for (double& v : norm.scores) v = rng.uniform();
  LossConfig cfg;
  RankingGrads grads;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ranking_loss(anom, norm, cfg, 1.0, &grads));
  }
}
BENCHMARK(BM_RankingLoss)->Arg(16)->Arg(512);

void BM_Auc(benchmark::State& state) {
  const int frames = static_cast<int>(state.range(0));
  Rng rng(11);
  FrameScoreSeq seq;
  seq.scores.resize(frames);
  seq.labels.resize(frames);
  for (int i = 0; i < frames; ++i) {
    seq.scores[i] = rng.uniform();
    seq.labels[i] = rng.bernoulli(0.2) ? 1 : 0;
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(auc(seq));
  }
}
BENCHMARK(BM_Auc)->Arg(8448)->Arg(100000);

void BM_TrainIteration(benchmark::State& state) {
  SyntheticSpec spec;
  spec.n_cameras = 2;
  spec.feature_dim = 32;
  spec.scenes_per_class = 10;
  spec.seed = 5;
  const Dataset ds = generate_synthetic(spec);
  TrainConfig cfg;
  cfg.mode = TrainMode::McCombined;
  cfg.hidden1 = 64;
  cfg.hidden2 = 16;
  cfg.iterations = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(train(ds, cfg));
  }
}
BENCHMARK(BM_TrainIteration);

}  // namespace

BENCHMARK_MAIN();
