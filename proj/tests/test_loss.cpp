#include "mcmil/loss.hpp"

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

using namespace mcmil;
using mcmil::testing::make_bag;

namespace {

LossConfig lambdas(double l1, double l2, double l3 = 0.0) {
  LossConfig cfg;
  cfg.lambda1 = l1;
  cfg.lambda2 = l2;
  cfg.lambda3 = l3;
  return cfg;
}

}  // namespace

TEST_CASE("perfectly separated pair has zero loss") {
  const auto b = ranking_loss(make_bag({1.0}, Label::Anomalous), make_bag({0.0}, Label::Normal),
                              lambdas(0, 0), 0.0);
  CHECK(b.hinge == 0.0);
  CHECK(b.total == 0.0);
}

TEST_CASE("indistinguishable scores give hinge 1") {
  const auto b = ranking_loss(make_bag({0.5}, Label::Anomalous), make_bag({0.5}, Label::Normal),
                              lambdas(0, 0), 0.0);
  CHECK(b.hinge == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("hand-evaluated ranking loss term by term") {
  // hinge = max(0, 1 - 0.9 + 0.3) = 0.4
  // smoothness = (0.2-0.9)^2 + (0.9-0.4)^2 = 0.49 + 0.25 = 0.74
  // sparsity = 0.2 + 0.9 + 0.4 = 1.5
  const auto b = ranking_loss(make_bag({0.2, 0.9, 0.4}, Label::Anomalous),
                              make_bag({0.3, 0.1}, Label::Normal), lambdas(1, 1), 0.0);
  CHECK(b.hinge == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(b.smoothness == doctest::Approx(0.74).epsilon(1e-12));
  CHECK(b.sparsity == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(b.weight_decay == 0.0);
  CHECK(b.total == doctest::Approx(2.64).epsilon(1e-12));
}

TEST_CASE("breakdown total equals the component sum") {
  Rng rng(4);
  LossConfig cfg;  // defaults with nonzero lambdas
  for (int trial = 0; trial < 200; ++trial) {
    const int na = rng.uniform_int(1, 12), nn = rng.uniform_int(1, 12);
    Vector a(na), n(nn);
    for (double& v : a) v = rng.uniform();
    for (double& v : n) v = rng.uniform();
    const auto b = ranking_loss(make_bag(a, Label::Anomalous), make_bag(n, Label::Normal), cfg,
                                rng.uniform());
    CHECK(b.total == doctest::Approx(b.hinge + b.smoothness + b.sparsity + b.weight_decay)
                         .epsilon(1e-12));
    CHECK(b.hinge >= 0.0);
    CHECK(b.hinge <= 2.0);
    CHECK(b.smoothness >= 0.0);
    CHECK(b.sparsity >= 0.0);
  }
}

TEST_CASE("lambda = 0 reduces the total to the pure hinge") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Vector a(5), n(4);
    for (double& v : a) v = rng.uniform();
    for (double& v : n) v = rng.uniform();
    const auto b = ranking_loss(make_bag(a, Label::Anomalous), make_bag(n, Label::Normal),
                                lambdas(0, 0), 0.0);
    const double hinge =
        std::max(0.0, 1.0 - *std::max_element(a.begin(), a.end()) +
                          *std::max_element(n.begin(), n.end()));
    CHECK(b.total == doctest::Approx(hinge).epsilon(1e-15));
  }
}

TEST_CASE("score gradients match central differences away from kinks") {
  Rng rng(12);
  LossConfig cfg = lambdas(0.7, 0.3, 0.0);
  int tested = 0;
  for (int trial = 0; trial < 400 && tested < 60; ++trial) {
    const int na = rng.uniform_int(2, 8), nn = rng.uniform_int(2, 8);
    Vector a(na), n(nn);
    for (double& v : a) v = rng.uniform(0.05, 0.95);
    for (double& v : n) v = rng.uniform(0.05, 0.95);

    // keep a margin around argmax ties and the hinge kink
    auto sorted_gap = [](Vector v) {
      std::sort(v.begin(), v.end(), std::greater<>());
      return v.size() > 1 ? v[0] - v[1] : 1.0;
    };
    const double hinge_val =
        1.0 - *std::max_element(a.begin(), a.end()) + *std::max_element(n.begin(), n.end());
    if (sorted_gap(a) < 1e-3 || sorted_gap(n) < 1e-3 || std::abs(hinge_val) < 1e-3) continue;
    ++tested;

    RankingGrads grads;
    ranking_loss(make_bag(a, Label::Anomalous), make_bag(n, Label::Normal), cfg, 0.0, &grads);

    const double h = 1e-6;
    auto loss_at = [&](const Vector& av, const Vector& nv) {
      return ranking_loss(make_bag(av, Label::Anomalous), make_bag(nv, Label::Normal), cfg, 0.0)
          .total;
    };
    for (int i = 0; i < na; ++i) {
      Vector ap = a, am = a;
      ap[i] += h;
      am[i] -= h;
      const double fd = (loss_at(ap, n) - loss_at(am, n)) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(grads.danomalous[i]), 1e-9});
      CHECK(std::abs(fd - grads.danomalous[i]) / denom < 1e-6);
    }
    for (int i = 0; i < nn; ++i) {
      Vector np = n, nm = n;
      np[i] += h;
      nm[i] -= h;
      const double fd = (loss_at(a, np) - loss_at(a, nm)) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(grads.dnormal[i]), 1e-9});
      CHECK(std::abs(fd - grads.dnormal[i]) / denom < 1e-6);
    }
  }
  CHECK(tested >= 50);
}

TEST_CASE("hinge at zero contributes no gradient") {
  RankingGrads grads;
  ranking_loss(make_bag({1.0, 0.2}, Label::Anomalous), make_bag({0.0}, Label::Normal),
               lambdas(0, 0), 0.0, &grads);
  CHECK(grads.danomalous[0] == 0.0);
  CHECK(grads.danomalous[1] == 0.0);
  CHECK(grads.dnormal[0] == 0.0);
}

TEST_CASE("argmax ties break to the lowest index") {
  RankingGrads grads;
  ranking_loss(make_bag({0.9, 0.9}, Label::Anomalous), make_bag({0.7, 0.7}, Label::Normal),
               lambdas(0, 0), 0.0, &grads);
  CHECK(grads.danomalous[0] == -1.0);
  CHECK(grads.danomalous[1] == 0.0);
  CHECK(grads.dnormal[0] == 1.0);
  CHECK(grads.dnormal[1] == 0.0);
}

TEST_CASE("total is invariant to permuting the normal bag but not the anomalous bag") {
  LossConfig cfg = lambdas(1.0, 0.5, 0.0);
  const Vector a = {0.1, 0.7, 0.3, 0.5};
  const Vector n = {0.2, 0.6, 0.4};
  const double base =
      ranking_loss(make_bag(a, Label::Anomalous), make_bag(n, Label::Normal), cfg, 0.0).total;

  Vector n_perm = {0.6, 0.4, 0.2};
  CHECK(ranking_loss(make_bag(a, Label::Anomalous), make_bag(n_perm, Label::Normal), cfg, 0.0)
            .total == doctest::Approx(base).epsilon(1e-15));

  Vector a_perm = {0.7, 0.1, 0.3, 0.5};
  CHECK(ranking_loss(make_bag(a_perm, Label::Anomalous), make_bag(n, Label::Normal), cfg, 0.0)
            .total != doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("normalize_by_bag_size divides smoothness and sparsity") {
  LossConfig cfg = lambdas(1.0, 1.0, 0.0);
  cfg.normalize_by_bag_size = true;
  const Vector a = {0.2, 0.9, 0.4};
  const auto b =
      ranking_loss(make_bag(a, Label::Anomalous), make_bag({0.3}, Label::Normal), cfg, 0.0);
  CHECK(b.smoothness == doctest::Approx(0.74 / 2).epsilon(1e-12));
  CHECK(b.sparsity == doctest::Approx(1.5 / 3).epsilon(1e-12));

  // single-clip anomalous bag is safe
  const auto single =
      ranking_loss(make_bag({0.4}, Label::Anomalous), make_bag({0.3}, Label::Normal), cfg, 0.0);
  CHECK(single.smoothness == 0.0);
}

TEST_CASE("ranking loss contract violations") {
  CHECK_THROWS_AS(ranking_loss(make_bag({}, Label::Anomalous), make_bag({0.5}, Label::Normal),
                               LossConfig{}, 0.0),
                  ValidationError);
  CHECK_THROWS_AS(ranking_loss(make_bag({0.5}, Label::Normal), make_bag({0.5}, Label::Normal),
                               LossConfig{}, 0.0),
                  ValidationError);
}

TEST_CASE("combine_losses routing") {
  auto mk = [](double total) {
    LossBreakdown b;
    b.hinge = total;
    b.total = total;
    return b;
  };
  SUBCASE("max picks the single largest camera") {
    const auto r = combine_losses({mk(0.4), mk(0.7)}, Combinator::Max);
    CHECK(r.value == 0.7);
    REQUIRE(r.active.size() == 1);
    CHECK(r.active[0] == std::pair<int, double>{1, 1.0});
  }
  SUBCASE("min picks the smallest") {
    const auto r = combine_losses({mk(0.4), mk(0.7)}, Combinator::Min);
    CHECK(r.value == 0.4);
    CHECK(r.active[0].first == 0);
  }
  SUBCASE("mean routes to every camera at 1/N") {
    const auto r = combine_losses({mk(0.4), mk(0.7)}, Combinator::Mean);
    CHECK(r.value == doctest::Approx(0.55).epsilon(1e-15));
    REQUIRE(r.active.size() == 2);
    CHECK(r.active[0].second == 0.5);
    CHECK(r.active[1].second == 0.5);
  }
  SUBCASE("ties break to the lowest camera index") {
    const auto r = combine_losses({mk(0.7), mk(0.7)}, Combinator::Max);
    CHECK(r.active[0].first == 0);
  }
  SUBCASE("identical losses are a fixed point of every mode") {
    for (auto mode : {Combinator::Max, Combinator::Min, Combinator::Mean}) {
      CHECK(combine_losses({mk(0.42), mk(0.42), mk(0.42)}, mode).value == 0.42);
    }
  }
  SUBCASE("a singleton list is its own combination") {
    for (auto mode : {Combinator::Max, Combinator::Min, Combinator::Mean}) {
      CHECK(combine_losses({mk(1.3)}, mode).value == 1.3);
    }
  }
  SUBCASE("empty list is a contract violation") {
    CHECK_THROWS_AS(combine_losses({}, Combinator::Max), ValidationError);
  }
}

TEST_CASE("combinator ordering: min <= mean <= max") {
  Rng rng(31);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = rng.uniform_int(2, 5);
    std::vector<LossBreakdown> losses(n);
    for (auto& b : losses) {
      b.hinge = rng.uniform(0, 3);
      b.total = b.hinge;
    }
    const double lo = combine_losses(losses, Combinator::Min).value;
    const double mid = combine_losses(losses, Combinator::Mean).value;
    const double hi = combine_losses(losses, Combinator::Max).value;
    CHECK(lo <= mid + 1e-12);
    CHECK(mid <= hi + 1e-12);
  }
}

TEST_CASE("bag_union is the elementwise mean") {
  const auto fused = bag_union({make_bag({0.8, 0.2}, Label::Anomalous, 0),
                                make_bag({0.4, 0.6}, Label::Anomalous, 1)});
  CHECK(fused.scores == Vector{0.6, 0.4});

  SUBCASE("idempotent on identical bags") {
    const auto same = bag_union({make_bag({0.3, 0.9}, Label::Normal, 0),
                                 make_bag({0.3, 0.9}, Label::Normal, 1)});
    CHECK(same.scores == Vector{0.3, 0.9});
  }
  SUBCASE("three cameras") {
    const auto three = bag_union({make_bag({0.9, 0.0}, Label::Anomalous, 0),
                                  make_bag({0.0, 0.9}, Label::Anomalous, 1),
                                  make_bag({0.3, 0.3}, Label::Anomalous, 2)});
    CHECK(three.scores[0] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(three.scores[1] == doctest::Approx(0.4).epsilon(1e-15));
  }
  SUBCASE("length mismatch is a synchronization error") {
    CHECK_THROWS_AS(bag_union({make_bag({0.1, 0.2}, Label::Normal, 0),
                               make_bag({0.1}, Label::Normal, 1)}),
                    SyncError);
  }
  SUBCASE("scene mismatch is a synchronization error") {
    CHECK_THROWS_AS(bag_union({make_bag({0.1}, Label::Normal, 0, "sceneA"),
                               make_bag({0.1}, Label::Normal, 1, "sceneB")}),
                    SyncError);
  }
}

TEST_CASE("mc_loss degenerates to ranking_loss on identical cameras") {
  const ScoreBag a0 = make_bag({0.2, 0.9, 0.4}, Label::Anomalous, 0);
  const ScoreBag n0 = make_bag({0.3, 0.1}, Label::Normal, 0);
  LossConfig cfg = lambdas(1, 1, 0.5);
  const double single = ranking_loss(a0, n0, cfg, 0.25).total;

  for (auto strategy : {McStrategy::Combined, McStrategy::BagUnion}) {
    for (auto mode : {Combinator::Max, Combinator::Min, Combinator::Mean}) {
      cfg.combinator = mode;
      const auto r = mc_loss({{a0, n0}, {a0, n0}}, cfg, 0.25, strategy);
      CHECK(r.total == doctest::Approx(single).epsilon(1e-15));
    }
  }
}

TEST_CASE("mc_loss max composes the hand oracles") {
  // camera 0 carries the 2.64 hand case, camera 1 a perfect pair
  LossConfig cfg = lambdas(1, 1, 0.0);
  cfg.combinator = Combinator::Max;
  const auto r = mc_loss({{make_bag({0.2, 0.9, 0.4}, Label::Anomalous, 0),
                           make_bag({0.3, 0.1}, Label::Normal, 0)},
                          {make_bag({1.0}, Label::Anomalous, 1),
                           make_bag({0.0}, Label::Normal, 1)}},
                         cfg, 0.0, McStrategy::Combined);
  CHECK(r.total == doctest::Approx(2.64).epsilon(1e-12));
  REQUIRE(r.active_cameras.size() == 1);
  CHECK(r.active_cameras[0] == 0);
  // inactive camera receives no gradient
  CHECK(r.per_camera[1].danomalous[0] == 0.0);
  CHECK(r.per_camera[1].dnormal[0] == 0.0);
}

TEST_CASE("bag_union strategy hand case") {
  // fused anomalous [0.5, 0.5], fused normal [0.0]; hinge = 1 - 0.5 + 0 = 0.5
  LossConfig cfg = lambdas(0, 0, 0.0);
  const auto r = mc_loss({{make_bag({1.0, 0.0}, Label::Anomalous, 0),
                           make_bag({0.0}, Label::Normal, 0)},
                          {make_bag({0.0, 1.0}, Label::Anomalous, 1),
                           make_bag({0.0}, Label::Normal, 1)}},
                         cfg, 0.0, McStrategy::BagUnion);
  CHECK(r.total == doctest::Approx(0.5).epsilon(1e-12));
  // fused hinge argmax is clip 0 (tie, lowest index); each camera gets 1/2
  CHECK(r.per_camera[0].danomalous[0] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(r.per_camera[1].danomalous[0] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(r.per_camera[0].danomalous[1] == 0.0);
  CHECK(r.per_camera[0].dnormal[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("bag_union strategy requires synchronized bag lengths") {
  LossConfig cfg;
  CHECK_THROWS_AS(mc_loss({{make_bag({0.5, 0.5}, Label::Anomalous, 0),
                            make_bag({0.1}, Label::Normal, 0)},
                           {make_bag({0.5}, Label::Anomalous, 1),
                            make_bag({0.1}, Label::Normal, 1)}},
                          cfg, 0.0, McStrategy::BagUnion),
                  SyncError);
}
