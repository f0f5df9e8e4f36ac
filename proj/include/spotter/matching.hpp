#pragma once

#include "spotter/model.hpp"

namespace spotter::match {

// Minimum-cost assignment. cost is n x m with n <= m; returns the assigned
// column for every row.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost);

struct LossWeights {
  // loss term weights
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  double poly = 1.0;
  double rec = 1.0;
  double focalAlpha = 0.25;
  double focalGamma = 2.0;
  // matching cost weights
  double matchCls = 2.0;
  double matchL1 = 5.0;
  double matchGiou = 2.0;
  // encoder auxiliary supervision
  double encAux = 1.0;
  // turn off to restrict the loss to matching slots (plus encoder terms)
  bool superviseDenoise = true;
};

// Pairwise matching cost between prediction slots [slotBegin, slotBegin+count)
// and ground truths: class term (focal-style pos-minus-neg cost) plus box L1
// and negated GIoU.
std::vector<std::vector<double>> matchingCost(const model::LayerPrediction& pred, int slotBegin,
                                              int count, const std::vector<data::Instance>& gts,
                                              const LossWeights& w);

// gt index per matching slot, -1 for unmatched. When there are more ground
// truths than slots the extras stay unmatched.
std::vector<int> matchInstances(const model::LayerPrediction& pred, int slotBegin, int count,
                                const std::vector<data::Instance>& gts, const LossWeights& w);

struct LossBreakdown {
  double cls = 0, box = 0, giou = 0, poly = 0, rec = 0;
  double denoise = 0, encAux = 0;
  double total = 0;
};

// Differentiable GIoU between two [k,4] center-form box tensors.
ad::Var giouPairwise(const ad::Var& a, const ad::Var& b);

// Full training loss: per-layer Hungarian matching with deep supervision,
// denoising slots supervised by their known targets, plus encoder auxiliary
// token scoring and proposal regression. Ignored instances are dropped.
ad::Var spottingLoss(const model::ForwardResult& res, const std::vector<data::Instance>& gts,
                     const LossWeights& w, const data::Charset& cs,
                     LossBreakdown* breakdown = nullptr);

}  // namespace spotter::match
