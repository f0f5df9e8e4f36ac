#pragma once

#include <random>
#include <string>
#include <vector>

#include "spotter/geometry.hpp"

namespace spotter::data {

// Dense character ids 0..U-1, then EOS = U, PAD = U+1.
struct Charset {
  std::string chars = "abcdefghijklmnopqrstuvwxyz0123456789";

  int size() const { return (int)chars.size(); }
  int eosId() const { return size(); }
  int padId() const { return size() + 1; }
  int numClasses() const { return size() + 2; }
  int idOf(char c) const;
  bool contains(char c) const { return chars.find(c) != std::string::npos; }
};

// ids + EOS, padded with PAD to length T. Throws on out-of-charset characters
// or strings longer than T-1.
std::vector<int> encodeTranscript(const std::string& s, const Charset& cs, int maxLen);
std::string decodeTranscript(const std::vector<int>& ids, const Charset& cs);

struct Instance {
  geom::Polygon16 polygon;  // normalized coordinates
  geom::Box box;            // axis-aligned hull of the polygon
  std::string transcript;
  bool ignore = false;
};

struct SpottingSample {
  int height = 0, width = 0;
  std::vector<float> image;  // H*W*3 RGB in [0,1]
  std::vector<Instance> instances;
};

struct GenConfig {
  int height = 128;
  int width = 192;
  int minInstances = 1;
  int maxInstances = 3;
  int minLen = 3;
  int maxLen = 6;
  double maxCurvature = 0.5;   // fraction of words drawn on an arc
  double maxSkewDeg = 20.0;    // baseline orientation range
  Charset charset;
};

// Renders random stroke-font words on a textured background. Deterministic
// per RNG state; emits fewer instances when placement keeps failing.
SpottingSample generateSample(std::mt19937_64& rng, const GenConfig& cfg);

struct AugmentConfig {
  std::vector<int> shorterSides;  // empty = keep size
  int maxLongSide = 1600;
  double maxRotationDeg = 0.0;
  bool crop = false;
};

// Full-scale ranges from the training protocol (shorter side 640..896 step 32).
AugmentConfig paperAugmentConfig();

SpottingSample augment(const SpottingSample& s, std::mt19937_64& rng, const AugmentConfig& cfg);

// Directory of PNGs plus annotations.jsonl with normalized coordinates.
void writeDataset(const std::string& dir, const std::vector<SpottingSample>& samples,
                  bool overwrite);
std::vector<SpottingSample> loadDataset(const std::string& dir);

void writeImagePng(const std::string& path, const SpottingSample& s);

}  // namespace spotter::data
