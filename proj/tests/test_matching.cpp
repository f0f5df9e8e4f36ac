#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "spotter/matching.hpp"
#include "testutil.hpp"

using namespace spotter;
using namespace spotter::ad;
using namespace spotter::match;

namespace {

std::mt19937_64 rng(21);

// minimum assignment cost by trying every injective row->column map
double bruteForceCost(const std::vector<std::vector<double>>& cost) {
  const int n = (int)cost.size(), m = (int)cost[0].size();
  std::vector<int> cols(m);
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double tot = 0;
    for (int i = 0; i < n; ++i) tot += cost[i][cols[i]];
    best = std::min(best, tot);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

model::LayerPrediction makePred(int slots, int T, int U2, bool grad = false) {
  model::LayerPrediction p;
  p.classLogits = makeVar(uniformTensor({slots, 1}, -2, 2, rng), grad);
  Tensor boxes({slots, 4});
  for (int i = 0; i < slots; ++i) {
    boxes.v[(int64_t)i * 4] = std::uniform_real_distribution<double>(0.2, 0.8)(rng);
    boxes.v[(int64_t)i * 4 + 1] = std::uniform_real_distribution<double>(0.2, 0.8)(rng);
    boxes.v[(int64_t)i * 4 + 2] = std::uniform_real_distribution<double>(0.05, 0.4)(rng);
    boxes.v[(int64_t)i * 4 + 3] = std::uniform_real_distribution<double>(0.05, 0.4)(rng);
  }
  p.boxes = makeVar(boxes, grad);
  p.polygons = makeVar(uniformTensor({slots, 2 * geom::kPolygonPoints}, 0, 1, rng), grad);
  p.charLogits = makeVar(uniformTensor({slots, T, U2}, -1, 1, rng), grad);
  return p;
}

data::Instance makeGt(const std::string& text) {
  data::Instance g;
  g.box = {std::uniform_real_distribution<double>(0.2, 0.8)(rng),
           std::uniform_real_distribution<double>(0.2, 0.8)(rng),
           std::uniform_real_distribution<double>(0.05, 0.4)(rng),
           std::uniform_real_distribution<double>(0.05, 0.4)(rng)};
  for (auto& pt : g.polygon)
    pt = {std::uniform_real_distribution<double>(0, 1)(rng),
          std::uniform_real_distribution<double>(0, 1)(rng)};
  g.transcript = text;
  return g;
}

}  // namespace

TEST_CASE("assignment matches the brute-force optimum") {
  for (int trial = 0; trial < 200; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 6)(rng);
    const int m = std::uniform_int_distribution<int>(n, 7)(rng);
    std::vector<std::vector<double>> cost(n, std::vector<double>(m));
    for (auto& row : cost)
      for (auto& c : row) c = std::uniform_real_distribution<double>(-5, 5)(rng);
    auto a = hungarian(cost);
    std::vector<bool> used(m, false);
    double tot = 0;
    for (int i = 0; i < n; ++i) {
      REQUIRE(a[i] >= 0);
      REQUIRE(!used[a[i]]);
      used[a[i]] = true;
      tot += cost[i][a[i]];
    }
    CHECK(tot == doctest::Approx(bruteForceCost(cost)).epsilon(1e-9));
  }
}

TEST_CASE("instance matching minimizes the composed cost") {
  data::Charset cs;
  LossWeights w;
  for (int trial = 0; trial < 60; ++trial) {
    const int slots = std::uniform_int_distribution<int>(2, 6)(rng);
    const int G = std::uniform_int_distribution<int>(1, slots)(rng);
    auto pred = makePred(slots, 5, cs.numClasses());
    std::vector<data::Instance> gts;
    for (int g = 0; g < G; ++g) gts.push_back(makeGt("ab"));
    auto assign = matchInstances(pred, 0, slots, gts, w);
    auto cost = matchingCost(pred, 0, slots, gts, w);
    double tot = 0;
    int matched = 0;
    for (int s = 0; s < slots; ++s)
      if (assign[s] >= 0) {
        tot += cost[s][assign[s]];
        ++matched;
      }
    CHECK(matched == G);
    // brute force over gt-major assignments
    std::vector<std::vector<double>> gtMajor(G, std::vector<double>(slots));
    for (int g = 0; g < G; ++g)
      for (int s = 0; s < slots; ++s) gtMajor[g][s] = cost[s][g];
    CHECK(tot == doctest::Approx(bruteForceCost(gtMajor)).epsilon(1e-9));
  }
}

TEST_CASE("surplus ground truths stay unmatched without throwing") {
  data::Charset cs;
  LossWeights w;
  auto pred = makePred(2, 5, cs.numClasses());
  std::vector<data::Instance> gts;
  for (int g = 0; g < 5; ++g) gts.push_back(makeGt("ab"));
  auto assign = matchInstances(pred, 0, 2, gts, w);
  CHECK(assign[0] >= 0);
  CHECK(assign[1] >= 0);
  CHECK(assign[0] != assign[1]);
}

TEST_CASE("pairwise GIoU agrees with the scalar oracle and is differentiable") {
  const int k = 12;
  Tensor a({k, 4}), b({k, 4});
  for (int i = 0; i < k; ++i)
    for (int d = 0; d < 4; ++d) {
      a.v[(int64_t)i * 4 + d] = std::uniform_real_distribution<double>(d < 2 ? 0.2 : 0.05,
                                                                      d < 2 ? 0.8 : 0.4)(rng);
      b.v[(int64_t)i * 4 + d] = std::uniform_real_distribution<double>(d < 2 ? 0.2 : 0.05,
                                                                      d < 2 ? 0.8 : 0.4)(rng);
    }
  auto g = giouPairwise(makeVar(a, false), makeVar(b, false));
  for (int i = 0; i < k; ++i) {
    geom::Box ba{a.v[(int64_t)i * 4], a.v[(int64_t)i * 4 + 1], a.v[(int64_t)i * 4 + 2],
                 a.v[(int64_t)i * 4 + 3]};
    geom::Box bb{b.v[(int64_t)i * 4], b.v[(int64_t)i * 4 + 1], b.v[(int64_t)i * 4 + 2],
                 b.v[(int64_t)i * 4 + 3]};
    CHECK(g->val.v[i] == doctest::Approx(geom::giou(geom::boxToCorners(ba), geom::boxToCorners(bb))).epsilon(1e-9));
  }
  auto f = [](const std::vector<Var>& v) { return sum(giouPairwise(v[0], v[1])); };
  CHECK(testutil::gradCheck(f, {a, b}) < 1e-5);
}

TEST_CASE("focal and cross-entropy hand values") {
  data::Charset cs;
  LossWeights w;
  const int T = 6, U2 = cs.numClasses();

  model::ForwardResult res;
  res.numMatching = 1;
  model::LayerPrediction pred;
  pred.classLogits = makeVar(Tensor::zeros({1, 1}), false);  // p = 0.5
  data::Instance gt = makeGt("ab");
  Tensor boxes({1, 4}, {gt.box.cx, gt.box.cy, gt.box.w, gt.box.h});
  pred.boxes = makeVar(boxes, false);
  Tensor poly({1, 32});
  for (int j = 0; j < 16; ++j) {
    poly.v[2 * j] = gt.polygon[j].x;
    poly.v[2 * j + 1] = gt.polygon[j].y;
  }
  pred.polygons = makeVar(poly, false);
  pred.charLogits = makeVar(Tensor::zeros({1, T, U2}), false);  // uniform
  res.layers.push_back(pred);

  LossBreakdown bd;
  auto total = spottingLoss(res, {gt}, w, cs, &bd);
  // matched slot at p=0.5: alpha*(1-p)^gamma*(-log p) = 0.25*0.25*ln2
  CHECK(bd.cls == doctest::Approx(w.cls * 0.25 * 0.25 * std::log(2.0)).epsilon(1e-9));
  CHECK(bd.box == doctest::Approx(0.0));
  CHECK(bd.giou == doctest::Approx(0.0));
  CHECK(bd.poly == doctest::Approx(0.0));
  // uniform logits: CE = log(U+2) per counted position, averaged
  CHECK(bd.rec == doctest::Approx(w.rec * std::log((double)U2)).epsilon(1e-9));
  CHECK(total->val.v[0] == doctest::Approx(bd.total));
}

TEST_CASE("positions after EOS receive no recognition gradient") {
  data::Charset cs;
  LossWeights w;
  const int T = 6, U2 = cs.numClasses();
  model::ForwardResult res;
  res.numMatching = 1;
  auto pred = makePred(1, T, U2, /*grad=*/true);
  res.layers.push_back(pred);
  data::Instance gt = makeGt("abc");  // counted positions: a,b,c,EOS = 4
  auto total = spottingLoss(res, {gt}, w, cs);
  backward(total);
  const auto& g = pred.charLogits->grad;
  REQUIRE(!g.v.empty());
  double before = 0, after = 0;
  for (int t = 0; t < T; ++t)
    for (int u = 0; u < U2; ++u) {
      const double gv = std::fabs(g.v[(int64_t)t * U2 + u]);
      (t < 4 ? before : after) += gv;
    }
  CHECK(before > 0);
  CHECK(after == 0.0);
}

TEST_CASE("breakdown components sum to the total") {
  data::Charset cs;
  LossWeights w;
  model::ForwardResult res;
  res.numMatching = 5;
  res.numDenoise = 4;
  res.denoiseTargets = {0, 1, 0, 1};
  for (int l = 0; l < 2; ++l) res.layers.push_back(makePred(9, 6, cs.numClasses()));
  // encoder auxiliary inputs
  const int M = 12;
  res.encScores = makeVar(uniformTensor({M, 1}, -2, 2, rng), false);
  res.meta.tokens = M;
  res.meta.positions = uniformTensor({M, 2}, 0, 1, rng);
  res.encProposals = makePred(6, 6, cs.numClasses()).boxes;

  std::vector<data::Instance> gts = {makeGt("abc"), makeGt("xy")};
  LossBreakdown bd;
  auto total = spottingLoss(res, gts, w, cs, &bd);
  const double parts = bd.cls + bd.box + bd.giou + bd.poly + bd.rec + bd.denoise + bd.encAux;
  CHECK(bd.total == doctest::Approx(parts).epsilon(1e-9));
  CHECK(total->val.v[0] == doctest::Approx(parts).epsilon(1e-9));
  CHECK(std::isfinite(bd.total));
}

TEST_CASE("ignored instances are excluded from matching and loss") {
  data::Charset cs;
  LossWeights w;
  model::ForwardResult res;
  res.numMatching = 3;
  res.layers.push_back(makePred(3, 6, cs.numClasses()));
  data::Instance keep = makeGt("ab");
  data::Instance drop = makeGt("cd");
  drop.ignore = true;
  LossBreakdown bd1, bd2;
  spottingLoss(res, {keep, drop}, w, cs, &bd1);
  spottingLoss(res, {keep}, w, cs, &bd2);
  CHECK(bd1.total == doctest::Approx(bd2.total).epsilon(1e-12));
}
