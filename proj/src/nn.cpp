#include "spotter/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace spotter::nn {

Tensor xavier(std::vector<int> shape, std::mt19937_64& rng) {
  double fanIn = shape.size() >= 2 ? shape[0] : shape.back();
  double fanOut = shape.back();
  const double bound = std::sqrt(6.0 / (fanIn + fanOut));
  return uniformTensor(std::move(shape), -bound, bound, rng);
}

double AdamW::update(ParamStore& store, double lrScale) {
  double norm2 = 0;
  for (auto& [name, p] : store.params) {
    if (p->grad.v.empty()) continue;
    for (double g : p->grad.v) norm2 += g * g;
  }
  const double norm = std::sqrt(norm2);
  const double clip = (clipNorm > 0 && norm > clipNorm) ? clipNorm / norm : 1.0;

  ++step;
  const double bc1 = 1.0 - std::pow(beta1, (double)step);
  const double bc2 = 1.0 - std::pow(beta2, (double)step);
  const double alpha = lr * lrScale;
  for (auto& [name, p] : store.params) {
    if (p->grad.v.empty()) continue;
    Tensor& mm = m.try_emplace(name, Tensor::zeros(p->val.shape)).first->second;
    Tensor& vv = v.try_emplace(name, Tensor::zeros(p->val.shape)).first->second;
    for (int64_t i = 0; i < p->val.size(); ++i) {
      const double g = p->grad.v[i] * clip;
      mm.v[i] = beta1 * mm.v[i] + (1 - beta1) * g;
      vv.v[i] = beta2 * vv.v[i] + (1 - beta2) * g * g;
      const double mhat = mm.v[i] / bc1;
      const double vhat = vv.v[i] / bc2;
      p->val.v[i] -= alpha * (mhat / (std::sqrt(vhat) + eps) + weightDecay * p->val.v[i]);
    }
  }
  return norm;
}

namespace {
constexpr char kMagic[8] = {'E', 'S', 'T', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void writeRaw(std::ofstream& f, const T& x) {
  f.write(reinterpret_cast<const char*>(&x), sizeof(T));
}
template <typename T>
void readRaw(std::ifstream& f, T& x) {
  f.read(reinterpret_cast<char*>(&x), sizeof(T));
}
}  // namespace

void saveCheckpoint(const std::string& path, const std::string& configJson,
                    const ParamStore& store) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 8);
  writeRaw(f, (uint64_t)configJson.size());
  f.write(configJson.data(), configJson.size());
  writeRaw(f, (uint64_t)store.params.size());
  for (const auto& [name, p] : store.params) {
    writeRaw(f, (uint32_t)name.size());
    f.write(name.data(), name.size());
    writeRaw(f, (uint32_t)p->val.shape.size());
    for (int d : p->val.shape) writeRaw(f, (int32_t)d);
    f.write(reinterpret_cast<const char*>(p->val.v.data()), p->val.size() * sizeof(double));
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

std::string loadCheckpoint(const std::string& path, ParamStore& store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("bad checkpoint magic: " + path);
  uint64_t jsonLen = 0;
  readRaw(f, jsonLen);
  std::string configJson(jsonLen, '\0');
  f.read(configJson.data(), jsonLen);
  uint64_t count = 0;
  readRaw(f, count);
  const bool populate = store.params.empty();
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t nameLen = 0;
    readRaw(f, nameLen);
    std::string name(nameLen, '\0');
    f.read(name.data(), nameLen);
    uint32_t ndim = 0;
    readRaw(f, ndim);
    std::vector<int> shape(ndim);
    for (auto& d : shape) {
      int32_t x;
      readRaw(f, x);
      d = x;
    }
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.v.data()), t.size() * sizeof(double));
    if (populate) {
      store.make(name, std::move(t));
    } else {
      if (!store.has(name)) throw std::runtime_error("checkpoint has unknown parameter " + name);
      auto p = store.get(name);
      if (p->val.shape != shape)
        throw std::runtime_error("checkpoint shape mismatch for " + name);
      p->val = std::move(t);
    }
  }
  if (!f) throw std::runtime_error("checkpoint truncated: " + path);
  return configJson;
}

}  // namespace spotter::nn
