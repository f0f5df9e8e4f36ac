#pragma once

#include <functional>
#include <ostream>

#include "spotter/evaluation.hpp"
#include "spotter/matching.hpp"

namespace spotter::train {

struct TrainConfig {
  int iterations = 2000;
  double baseLr = 1e-4;
  std::vector<int> milestones{1500, 1800};  // strictly increasing
  double decayFactor = 0.1;
  int batchSize = 1;
  uint64_t seed = 0;
  double weightDecay = 1e-4;
  double clipNorm = 0.1;
  int evalEvery = 500;  // 0 = only at the end
  double scoreThreshold = 0.3;
  match::LossWeights loss;
  model::ModelConfig model;

  void validate() const;  // throws std::invalid_argument
  nlohmann::json toJson() const;
  static TrainConfig fromJson(const nlohmann::json& j);
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  TrainConfig cfg;
  std::unique_ptr<model::Model> net;
  nn::AdamW opt;
  std::mt19937_64 rng;
  int iteration = 0;
  double lastGradNorm = 0;

  double lrScaleAt(int iter) const;

  // One optimization step over a batch. Throws std::runtime_error naming the
  // offending component if any loss term is non-finite; the parameters are
  // left untouched in that case. update=false evaluates the loss only.
  match::LossBreakdown trainStep(const std::vector<data::SpottingSample>& batch,
                                 bool update = true);
};

std::vector<eval::ImagePreds> predictDataset(model::Model& net,
                                             const std::vector<data::SpottingSample>& samples,
                                             double scoreThreshold);

eval::EvalReport evaluateModel(model::Model& net,
                               const std::vector<data::SpottingSample>& samples,
                               const std::vector<std::string>* lexicon, double scoreThreshold);

struct FitResult {
  std::string finalCheckpoint;
  std::string bestCheckpoint;
  double bestE2eHmean = 0;
  match::LossBreakdown lastLoss;
};

// Sequential deterministic loop: batches cycle through the dataset in order,
// metrics go to `metricsLog` as JSON lines, best checkpoint (by end-to-end
// H-mean on evalSet) and final checkpoint land in outDir.
FitResult fit(const TrainConfig& cfg, const std::vector<data::SpottingSample>& trainSet,
              const std::vector<data::SpottingSample>* evalSet, const std::string& outDir,
              std::ostream* metricsLog = nullptr,
              const std::function<void(int, const match::LossBreakdown&)>& onStep = {});

}  // namespace spotter::train
