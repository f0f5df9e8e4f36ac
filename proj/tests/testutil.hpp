#pragma once

#include <functional>
#include <random>

#include "spotter/autodiff.hpp"

namespace spotter::testutil {

// Central finite differences of a scalar-valued graph builder w.r.t. the
// tensors in `leaves`, compared against the analytic gradients.
// Returns the worst relative error over all coordinates.
inline double gradCheck(const std::function<ad::Var(const std::vector<ad::Var>&)>& f,
                        std::vector<Tensor> leafValues, double h = 1e-5) {
  using namespace spotter::ad;
  std::vector<Var> leaves;
  for (auto& t : leafValues) leaves.push_back(makeVar(t));
  Var out = f(leaves);
  backward(out);

  double worst = 0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    for (int64_t i = 0; i < leafValues[li].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var> pert;
        for (size_t lj = 0; lj < leafValues.size(); ++lj) {
          Tensor t = leafValues[lj];
          if (lj == li) t.v[i] += delta;
          pert.push_back(makeVar(t, false));
        }
        return f(pert)->val.v[0];
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      const double an = leaves[li]->grad.v.empty() ? 0.0 : leaves[li]->grad.v[i];
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-3});
      worst = std::max(worst, std::fabs(fd - an) / denom);
    }
  }
  return worst;
}

}  // namespace spotter::testutil
