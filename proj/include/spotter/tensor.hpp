#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace spotter {

// Dense row-major tensor of doubles. Shapes are small; no striding tricks.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(sizeFor(shape), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
    if ((int64_t)v.size() != sizeFor(shape)) throw std::invalid_argument("tensor data/shape mismatch");
  }

  static int64_t sizeFor(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double x) {
    Tensor t(std::move(s));
    std::fill(t.v.begin(), t.v.end(), x);
    return t;
  }
  static Tensor scalar(double x) { return Tensor({1}, {x}); }

  int64_t size() const { return (int64_t)v.size(); }
  int dim(int i) const { return shape[i < 0 ? (int)shape.size() + i : i]; }
  int ndim() const { return (int)shape.size(); }

  // Collapse all leading dims; view tensor as [rows, lastDim].
  int rows() const { return (int)(size() / (shape.empty() ? 1 : shape.back())); }
  int cols() const { return shape.empty() ? 1 : shape.back(); }

  double& at(std::initializer_list<int> idx) { return v[offset(idx)]; }
  double at(std::initializer_list<int> idx) const { return v[offset(idx)]; }

  int64_t offset(std::initializer_list<int> idx) const {
    assert((int)idx.size() == ndim());
    int64_t off = 0;
    int i = 0;
    for (int ix : idx) {
      off = off * shape[i] + ix;
      ++i;
    }
    return off;
  }

  bool sameShape(const Tensor& o) const { return shape == o.shape; }

  bool allFinite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline Tensor uniformTensor(std::vector<int> s, double lo, double hi, std::mt19937_64& rng) {
  Tensor t(std::move(s));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& x : t.v) x = d(rng);
  return t;
}

inline Tensor normalTensor(std::vector<int> s, double mean, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(s));
  std::normal_distribution<double> d(mean, stddev);
  for (auto& x : t.v) x = d(rng);
  return t;
}

}  // namespace spotter
