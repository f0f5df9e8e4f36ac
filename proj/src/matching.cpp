#include "spotter/matching.hpp"

#include <cmath>

namespace spotter::match {

using namespace spotter::ad;
using model::ForwardResult;
using model::LayerPrediction;

std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const int n = (int)cost.size();
  if (n == 0) return {};
  const int m = (int)cost[0].size();
  if (n > m) throw std::invalid_argument("hungarian: need rows <= cols");
  const double INF = std::numeric_limits<double>::infinity();

  std::vector<double> u(n + 1, 0), v(m + 1, 0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, INF);
    std::vector<char> used(m + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = INF;
      int j1 = -1;
      for (int j = 1; j <= m; ++j)
        if (!used[j]) {
          const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (int j = 0; j <= m; ++j)
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> ans(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j]) ans[p[j] - 1] = j - 1;
  return ans;
}

namespace {

geom::Box boxAt(const Tensor& t, int row) {
  return {t.v[(int64_t)row * 4], t.v[(int64_t)row * 4 + 1], t.v[(int64_t)row * 4 + 2],
          t.v[(int64_t)row * 4 + 3]};
}

double focalPosMinusNeg(double logit, double alpha, double gamma) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  const double pc = std::clamp(p, 1e-9, 1.0 - 1e-9);
  const double pos = alpha * std::pow(1 - pc, gamma) * (-std::log(pc));
  const double neg = (1 - alpha) * std::pow(pc, gamma) * (-std::log(1 - pc));
  return pos - neg;
}

}  // namespace

std::vector<std::vector<double>> matchingCost(const LayerPrediction& pred, int slotBegin,
                                              int count, const std::vector<data::Instance>& gts,
                                              const LossWeights& w) {
  std::vector<std::vector<double>> cost(count, std::vector<double>(gts.size(), 0.0));
  for (int s = 0; s < count; ++s) {
    const int slot = slotBegin + s;
    const double clsCost =
        focalPosMinusNeg(pred.classLogits->val.v[slot], w.focalAlpha, w.focalGamma);
    const geom::Box pb = boxAt(pred.boxes->val, slot);
    for (size_t g = 0; g < gts.size(); ++g) {
      const geom::Box& gb = gts[g].box;
      const double l1 = std::fabs(pb.cx - gb.cx) + std::fabs(pb.cy - gb.cy) +
                        std::fabs(pb.w - gb.w) + std::fabs(pb.h - gb.h);
      cost[s][g] = w.matchCls * clsCost + w.matchL1 * l1 - w.matchGiou * geom::giou(geom::boxToCorners(pb), geom::boxToCorners(gb));
    }
  }
  return cost;
}

std::vector<int> matchInstances(const LayerPrediction& pred, int slotBegin, int count,
                                const std::vector<data::Instance>& gts, const LossWeights& w) {
  std::vector<int> assign(count, -1);
  if (gts.empty() || count == 0) return assign;
  auto cost = matchingCost(pred, slotBegin, count, gts, w);
  if ((int)gts.size() <= count) {
    // rows = ground truths
    std::vector<std::vector<double>> gtMajor(gts.size(), std::vector<double>(count));
    for (size_t g = 0; g < gts.size(); ++g)
      for (int s = 0; s < count; ++s) gtMajor[g][s] = cost[s][g];
    auto a = hungarian(gtMajor);
    for (size_t g = 0; g < gts.size(); ++g) assign[a[g]] = (int)g;
  } else {
    auto a = hungarian(cost);
    for (int s = 0; s < count; ++s) assign[s] = a[s];
  }
  return assign;
}

ad::Var giouPairwise(const ad::Var& a, const ad::Var& b) {
  auto half = [](const Var& x) { return scale(x, 0.5); };
  auto cxA = sliceLastDim(a, 0, 1), cyA = sliceLastDim(a, 1, 1);
  auto wA = sliceLastDim(a, 2, 1), hA = sliceLastDim(a, 3, 1);
  auto cxB = sliceLastDim(b, 0, 1), cyB = sliceLastDim(b, 1, 1);
  auto wB = sliceLastDim(b, 2, 1), hB = sliceLastDim(b, 3, 1);
  auto ax1 = sub(cxA, half(wA)), ax2 = add(cxA, half(wA));
  auto ay1 = sub(cyA, half(hA)), ay2 = add(cyA, half(hA));
  auto bx1 = sub(cxB, half(wB)), bx2 = add(cxB, half(wB));
  auto by1 = sub(cyB, half(hB)), by2 = add(cyB, half(hB));

  auto iw = clampMin(sub(emin(ax2, bx2), emax(ax1, bx1)), 0.0);
  auto ih = clampMin(sub(emin(ay2, by2), emax(ay1, by1)), 0.0);
  auto inter = mul(iw, ih);
  auto uni = clampMin(sub(add(mul(wA, hA), mul(wB, hB)), inter), 1e-12);
  auto ew = sub(emax(ax2, bx2), emin(ax1, bx1));
  auto eh = sub(emax(ay2, by2), emin(ay1, by1));
  auto encl = clampMin(mul(ew, eh), 1e-12);
  return sub(div(inter, uni), div(sub(encl, uni), encl));
}

namespace {

struct SlotLoss {
  Var cls, box, giou, poly, rec;
};

// loss terms for a contiguous slot range under a fixed assignment
SlotLoss slotSetLoss(const LayerPrediction& pred, int slotBegin, int count,
                     const std::vector<int>& assign, const std::vector<data::Instance>& gts,
                     const LossWeights& w, const data::Charset& cs, double normalizer) {
  SlotLoss out;
  const int T = pred.charLogits->val.shape[1];
  const int U2 = pred.charLogits->val.shape[2];
  const int NT = pred.classLogits->val.shape[0];

  // focal classification over every slot in the range
  {
    auto logits = sliceRows(pred.classLogits, slotBegin, count);
    auto p = sigmoid(logits);
    auto pc = clampMin(p, 1e-9);
    auto qc = clampMin(sub(constant(Tensor::full({count, 1}, 1.0)), p), 1e-9);
    Tensor tPos({count, 1}), tNeg({count, 1});
    for (int s = 0; s < count; ++s) {
      tPos.v[s] = assign[s] >= 0 ? 1.0 : 0.0;
      tNeg.v[s] = 1.0 - tPos.v[s];
    }
    auto posTerm = mul(powc(qc, w.focalGamma), neg(log(pc)));
    auto negTerm = mul(powc(pc, w.focalGamma), neg(log(qc)));
    auto focal = add(scale(mul(constant(tPos), posTerm), w.focalAlpha),
                     scale(mul(constant(tNeg), negTerm), 1.0 - w.focalAlpha));
    out.cls = scale(sum(focal), 1.0 / normalizer);
  }

  std::vector<int> slots, gtIdx;
  for (int s = 0; s < count; ++s)
    if (assign[s] >= 0) {
      slots.push_back(slotBegin + s);
      gtIdx.push_back(assign[s]);
    }
  if (slots.empty()) {
    out.box = out.giou = out.poly = out.rec = constant(Tensor::scalar(0.0));
    return out;
  }
  const int k = (int)slots.size();

  Tensor gtB({k, 4}), gtP({k, 2 * geom::kPolygonPoints});
  for (int i = 0; i < k; ++i) {
    const auto& g = gts[gtIdx[i]];
    gtB.v[(int64_t)i * 4] = g.box.cx;
    gtB.v[(int64_t)i * 4 + 1] = g.box.cy;
    gtB.v[(int64_t)i * 4 + 2] = g.box.w;
    gtB.v[(int64_t)i * 4 + 3] = g.box.h;
    for (int j = 0; j < geom::kPolygonPoints; ++j) {
      gtP.v[(int64_t)i * 32 + 2 * j] = g.polygon[j].x;
      gtP.v[(int64_t)i * 32 + 2 * j + 1] = g.polygon[j].y;
    }
  }
  auto boxesM = gatherRows(pred.boxes, slots);
  auto gtBc = constant(std::move(gtB));
  out.box = scale(sum(absval(sub(boxesM, gtBc))), 1.0 / normalizer);
  auto g = giouPairwise(boxesM, gtBc);
  out.giou = scale(sum(sub(constant(Tensor::full({k, 1}, 1.0)), g)), 1.0 / normalizer);
  auto polyM = gatherRows(pred.polygons, slots);
  out.poly = scale(sum(absval(sub(polyM, constant(std::move(gtP))))), 1.0 / normalizer);

  // character cross-entropy over positions up to and including EOS
  std::vector<int> rows;
  std::vector<int> targets;
  for (int i = 0; i < k; ++i) {
    const auto ids = data::encodeTranscript(gts[gtIdx[i]].transcript, cs, T);
    for (int t = 0; t < T; ++t) {
      rows.push_back(slots[i] * T + t);
      targets.push_back(ids[t]);
      if (ids[t] == cs.eosId()) break;
    }
  }
  auto flat = reshape(pred.charLogits, {NT * T, U2});
  auto ls = logSoftmaxLastDim(gatherRows(flat, rows));
  Tensor onehot({(int)rows.size(), U2});
  for (size_t r = 0; r < rows.size(); ++r) onehot.v[(int64_t)r * U2 + targets[r]] = 1.0;
  out.rec = scale(neg(sum(mul(ls, constant(std::move(onehot))))), 1.0 / (double)rows.size());
  return out;
}

}  // namespace

ad::Var spottingLoss(const ForwardResult& res, const std::vector<data::Instance>& allGts,
                     const LossWeights& w, const data::Charset& cs, LossBreakdown* breakdown) {
  std::vector<data::Instance> gts;
  for (const auto& g : allGts)
    if (!g.ignore) gts.push_back(g);
  const double norm = std::max<size_t>(1, gts.size());

  Var total = constant(Tensor::scalar(0.0));
  LossBreakdown bd;
  auto addTerm = [&](double& slot, const Var& term, double weight) {
    if (!term) return;
    auto weighted = scale(term, weight);
    slot += weighted->val.v[0];
    total = add(total, weighted);
  };

  for (const auto& layer : res.layers) {
    auto assign = matchInstances(layer, res.numDenoise, res.numMatching, gts, w);
    auto sl = slotSetLoss(layer, res.numDenoise, res.numMatching, assign, gts, w, cs, norm);
    addTerm(bd.cls, sl.cls, w.cls);
    addTerm(bd.box, sl.box, w.l1);
    addTerm(bd.giou, sl.giou, w.giou);
    addTerm(bd.poly, sl.poly, w.poly);
    addTerm(bd.rec, sl.rec, w.rec);

    if (w.superviseDenoise && res.numDenoise > 0 && !gts.empty()) {
      auto dn = slotSetLoss(layer, 0, res.numDenoise, res.denoiseTargets, gts, w, cs,
                            std::max(1, res.numDenoise));
      addTerm(bd.denoise, dn.cls, w.cls);
      addTerm(bd.denoise, dn.box, w.l1);
      addTerm(bd.denoise, dn.giou, w.giou);
      addTerm(bd.denoise, dn.poly, w.poly);
      addTerm(bd.denoise, dn.rec, w.rec);
    }
  }

  // encoder auxiliary: token objectness plus proposal regression
  if (res.encScores) {
    const int M = res.encScores->val.shape[0];
    Tensor tPos({M, 1}), tNeg({M, 1});
    for (int t = 0; t < M; ++t) {
      const double x = res.meta.positions.v[2 * t], y = res.meta.positions.v[2 * t + 1];
      bool inside = false;
      for (const auto& g : gts)
        inside = inside || (std::fabs(x - g.box.cx) <= g.box.w / 2 &&
                            std::fabs(y - g.box.cy) <= g.box.h / 2);
      tPos.v[t] = inside ? 1.0 : 0.0;
      tNeg.v[t] = inside ? 0.0 : 1.0;
    }
    auto p = sigmoid(res.encScores);
    auto pc = clampMin(p, 1e-9);
    auto qc = clampMin(sub(constant(Tensor::full({M, 1}, 1.0)), p), 1e-9);
    auto focal = add(scale(mul(constant(tPos), mul(powc(qc, w.focalGamma), neg(log(pc)))),
                           w.focalAlpha),
                     scale(mul(constant(tNeg), mul(powc(pc, w.focalGamma), neg(log(qc)))),
                           1.0 - w.focalAlpha));
    addTerm(bd.encAux, scale(sum(focal), 1.0 / norm), w.encAux * w.cls);

    if (res.encProposals && !gts.empty()) {
      const int N = res.encProposals->val.shape[0];
      std::vector<std::vector<double>> cost(gts.size(), std::vector<double>(N));
      for (size_t g = 0; g < gts.size(); ++g)
        for (int s = 0; s < N; ++s) {
          const geom::Box pb = boxAt(res.encProposals->val, s);
          const auto& gb = gts[g].box;
          const double l1 = std::fabs(pb.cx - gb.cx) + std::fabs(pb.cy - gb.cy) +
                            std::fabs(pb.w - gb.w) + std::fabs(pb.h - gb.h);
          cost[g][s] = w.matchL1 * l1 - w.matchGiou * geom::giou(geom::boxToCorners(pb), geom::boxToCorners(gb));
        }
      auto a = hungarian(cost);
      std::vector<int> slots(gts.size());
      Tensor gtB({(int)gts.size(), 4});
      for (size_t g = 0; g < gts.size(); ++g) {
        slots[g] = a[g];
        gtB.v[(int64_t)g * 4] = gts[g].box.cx;
        gtB.v[(int64_t)g * 4 + 1] = gts[g].box.cy;
        gtB.v[(int64_t)g * 4 + 2] = gts[g].box.w;
        gtB.v[(int64_t)g * 4 + 3] = gts[g].box.h;
      }
      auto pm = gatherRows(res.encProposals, slots);
      auto gtBc = constant(std::move(gtB));
      addTerm(bd.encAux, scale(sum(absval(sub(pm, gtBc))), 1.0 / norm), w.encAux * w.l1);
      auto g = giouPairwise(pm, gtBc);
      addTerm(bd.encAux,
              scale(sum(sub(constant(Tensor::full({(int)gts.size(), 1}, 1.0)), g)), 1.0 / norm),
              w.encAux * w.giou);
    }
  }

  bd.total = total->val.v[0];
  if (breakdown) *breakdown = bd;
  return total;
}

}  // namespace spotter::match
