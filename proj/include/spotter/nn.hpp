#pragma once

#include <map>
#include <string>

#include "spotter/autodiff.hpp"

namespace spotter::nn {

// Named parameter registry with deterministic iteration order.
struct ParamStore {
  std::map<std::string, ad::Var> params;

  ad::Var make(const std::string& name, Tensor init) {
    auto it = params.find(name);
    if (it != params.end()) return it->second;
    auto v = ad::makeVar(std::move(init), true);
    params.emplace(name, v);
    return v;
  }
  ad::Var get(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("no parameter " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return params.count(name) > 0; }
  std::vector<ad::Var> all() const {
    std::vector<ad::Var> v;
    for (const auto& [k, p] : params) v.push_back(p);
    return v;
  }
  int64_t count() const {
    int64_t n = 0;
    for (const auto& [k, p] : params) n += p->val.size();
    return n;
  }
};

// Xavier-uniform weight init.
Tensor xavier(std::vector<int> shape, std::mt19937_64& rng);

// Decoupled weight decay Adam with global-norm gradient clipping.
struct AdamW {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weightDecay = 1e-4;
  double clipNorm = 0.1;
  int64_t step = 0;
  std::map<std::string, Tensor> m, v;

  // Returns the pre-clip gradient norm.
  double update(ParamStore& store, double lrScale = 1.0);
};

// Checkpoint archive: magic, JSON config block, then named arrays.
void saveCheckpoint(const std::string& path, const std::string& configJson,
                    const ParamStore& store);
// Returns the stored config JSON; fills `store` (must have matching names/shapes
// if non-empty, otherwise it is populated).
std::string loadCheckpoint(const std::string& path, ParamStore& store);

}  // namespace spotter::nn
