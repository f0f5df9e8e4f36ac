#pragma once

#include <nlohmann/json.hpp>

#include "spotter/data.hpp"
#include "spotter/nn.hpp"

namespace spotter::model {

struct DenoiseConfig {
  bool enabled = true;
  int groups = 3;
  double shiftRatio = 0.4;
  double scaleRatio = 0.4;
};

struct ModelConfig {
  std::vector<int> backboneChannels{32, 64, 128, 256};
  int hidden = 64;       // C
  int heads = 4;
  int points = 4;        // deformable sampling points per head per level
  int ffnDim = 256;
  int encLayers = 6;
  int decLayers = 6;
  int numQueries = 100;  // N
  int maxTextLen = 25;   // T
  int samplingRows = 4;  // H of the TAQI sampling grid
  std::string charset = "abcdefghijklmnopqrstuvwxyz0123456789";
  bool useTAQI = true;
  bool useVLC = true;
  DenoiseConfig denoise;
  double scoreThreshold = 0.3;
  double priorProb = 0.01;  // initial classification confidence (focal prior)
  double nmsIou = 0.5;      // polygon-overlap threshold for inference dedup
  uint64_t initSeed = 0;

  nlohmann::json toJson() const;
  static ModelConfig fromJson(const nlohmann::json& j);
};

constexpr int kLevels = 4;
constexpr int kStrides[kLevels] = {8, 16, 32, 64};

struct MemoryMeta {
  int levelH[kLevels], levelW[kLevels];
  int levelStart[kLevels];   // token offset per level
  int tokens = 0;
  Tensor positions;          // [M,2] normalized centers
  std::vector<int> levelOf;  // per token
  int paddedH = 0, paddedW = 0;  // input size after pad-to-64
  int validH = 0, validW = 0;
};

struct EncoderOutput {
  ad::Var memory;  // [M, C]
  MemoryMeta meta;
};

struct TaskAwareQueries {
  ad::Var detection;    // [n, C]
  ad::Var recognition;  // [n, T, C]
  ad::Var proposals;    // [n, 4] center form in (0,1), differentiable
  std::vector<int> tokenIndices;  // selected memory tokens (TAQI path)
};

struct LayerPrediction {
  ad::Var classLogits;  // [NT, 1]
  ad::Var boxes;        // [NT, 4]
  ad::Var polygons;     // [NT, 32] absolute coordinates
  ad::Var charLogits;   // [NT, T, U+2]
};

struct ForwardResult {
  int numDenoise = 0;  // denoising slots occupy [0, numDenoise)
  int numMatching = 0;
  std::vector<LayerPrediction> layers;
  ad::Var encScores;          // [M, 1]
  ad::Var encProposals;       // [N, 4]
  std::vector<int> encTokens; // selected token indices
  MemoryMeta meta;
  std::vector<int> denoiseTargets;  // gt index per denoising slot
  ad::Var queries;            // final decoder queries S [NT, T+1, C]
};

struct InstancePrediction {
  double score = 0;
  geom::Box box;
  geom::Polygon16 polygon;
  std::string transcript;
};

class Model {
 public:
  explicit Model(ModelConfig config);

  ModelConfig cfg;
  data::Charset charset;
  nn::ParamStore store;

  // backbone + REM + deformable encoder
  EncoderOutput encode(const data::SpottingSample& sample);
  // backbone only; returns per-level projected token features (before encoder)
  EncoderOutput extractPyramid(const data::SpottingSample& sample);

  // TAQI: score memory, select top-N, initialize detection/recognition queries.
  ad::Var scoreMemory(const ad::Var& memory);
  TaskAwareQueries taskAwareInit(const EncoderOutput& enc, const ad::Var& scores);
  // recognition queries for arbitrary boxes (also used by denoising);
  // differentiable in both the memory and the boxes
  ad::Var sampleRecognitionQueries(const EncoderOutput& enc, const ad::Var& boxes);
  ad::Var sampleRecognitionQueries(const EncoderOutput& enc, const Tensor& boxes);

  // decoder building blocks, exposed for tests
  std::pair<ad::Var, ad::Var> languageConversion(const ad::Var& S);  // (L, P)
  ad::Var visionLanguageAttention(const ad::Var& S, const ad::Var& L,
                                  Tensor* saveWeights = nullptr);
  ad::Var intraGroupAttention(int layer, const ad::Var& S);
  ad::Var interGroupAttention(int layer, const ad::Var& S, const Tensor* isolationMask);
  ad::Var deformableAttention(const std::string& prefix, const ad::Var& queries,
                              const Tensor& refBoxes, bool pointMode, const ad::Var& memory,
                              const MemoryMeta& meta, const ad::Var* queryPos = nullptr);

  // Full forward. When training with ground truths and denoising enabled,
  // noised groups are prepended to the matching queries.
  ForwardResult forward(const data::SpottingSample& sample, bool training = false,
                        const std::vector<data::Instance>* gts = nullptr,
                        std::mt19937_64* rng = nullptr);

  std::vector<InstancePrediction> infer(const data::SpottingSample& sample,
                                        double scoreThreshold = -1);

  void save(const std::string& path) const;
  static std::unique_ptr<Model> load(const std::string& path);

 private:
  void initParams();
  ad::Var backboneLevels(const data::SpottingSample& sample, MemoryMeta& meta);
  ad::Var encoderLayer(int layer, const ad::Var& tokens, const MemoryMeta& meta,
                       const ad::Var& pos);
  ad::Var memoryPosEmbedding(const MemoryMeta& meta);  // sinusoidal + level embedding
  ad::Var ffn(const std::string& prefix, const ad::Var& x);
  LayerPrediction predictHeads(const ad::Var& S, const Tensor& refs);

  Tensor sinusoidalPos(const MemoryMeta& meta) const;
};

// uniform shift-and-scale box noise, one noised copy per GT per group
std::vector<geom::Box> makeNoiseBoxes(const std::vector<geom::Box>& gtBoxes,
                                      std::mt19937_64& rng, double shiftRatio,
                                      double scaleRatio, int groups);

double inverseSigmoid(double p);

}  // namespace spotter::model
