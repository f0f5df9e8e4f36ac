#include "spotter/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

namespace spotter::train {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (baseLr <= 0 || decayFactor <= 0) throw std::invalid_argument("rates must be > 0");
  if (batchSize < 1) throw std::invalid_argument("batchSize must be >= 1");
  for (size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1])
      throw std::invalid_argument("milestones must be strictly increasing");
}

json TrainConfig::toJson() const {
  json j;
  j["iterations"] = iterations;
  j["base_lr"] = baseLr;
  j["milestones"] = milestones;
  j["decay_factor"] = decayFactor;
  j["batch_size"] = batchSize;
  j["seed"] = seed;
  j["weight_decay"] = weightDecay;
  j["clip_norm"] = clipNorm;
  j["eval_every"] = evalEvery;
  j["score_threshold"] = scoreThreshold;
  j["loss"] = {{"cls", loss.cls},
               {"l1", loss.l1},
               {"giou", loss.giou},
               {"poly", loss.poly},
               {"rec", loss.rec},
               {"focal_alpha", loss.focalAlpha},
               {"focal_gamma", loss.focalGamma},
               {"match_cls", loss.matchCls},
               {"match_l1", loss.matchL1},
               {"match_giou", loss.matchGiou},
               {"enc_aux", loss.encAux}};
  j["model"] = model.toJson();
  return j;
}

TrainConfig TrainConfig::fromJson(const json& j) {
  TrainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.baseLr = j.value("base_lr", c.baseLr);
  c.milestones = j.value("milestones", c.milestones);
  c.decayFactor = j.value("decay_factor", c.decayFactor);
  c.batchSize = j.value("batch_size", c.batchSize);
  c.seed = j.value("seed", c.seed);
  c.weightDecay = j.value("weight_decay", c.weightDecay);
  c.clipNorm = j.value("clip_norm", c.clipNorm);
  c.evalEvery = j.value("eval_every", c.evalEvery);
  c.scoreThreshold = j.value("score_threshold", c.scoreThreshold);
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    c.loss.cls = l.value("cls", c.loss.cls);
    c.loss.l1 = l.value("l1", c.loss.l1);
    c.loss.giou = l.value("giou", c.loss.giou);
    c.loss.poly = l.value("poly", c.loss.poly);
    c.loss.rec = l.value("rec", c.loss.rec);
    c.loss.focalAlpha = l.value("focal_alpha", c.loss.focalAlpha);
    c.loss.focalGamma = l.value("focal_gamma", c.loss.focalGamma);
    c.loss.matchCls = l.value("match_cls", c.loss.matchCls);
    c.loss.matchL1 = l.value("match_l1", c.loss.matchL1);
    c.loss.matchGiou = l.value("match_giou", c.loss.matchGiou);
    c.loss.encAux = l.value("enc_aux", c.loss.encAux);
  }
  if (j.contains("model")) c.model = model::ModelConfig::fromJson(j["model"]);
  c.validate();
  return c;
}

Trainer::Trainer(TrainConfig config) : cfg(std::move(config)) {
  cfg.validate();
  cfg.model.initSeed = cfg.seed;
  net = std::make_unique<model::Model>(cfg.model);
  opt.lr = cfg.baseLr;
  opt.weightDecay = cfg.weightDecay;
  opt.clipNorm = cfg.clipNorm;
  rng.seed(cfg.seed * 0x9e3779b97f4a7c15ull + 1);
}

double Trainer::lrScaleAt(int iter) const {
  double s = 1.0;
  for (int m : cfg.milestones)
    if (iter >= m) s *= cfg.decayFactor;
  return s;
}

match::LossBreakdown Trainer::trainStep(const std::vector<data::SpottingSample>& batch,
                                        bool update) {
  if (batch.empty()) throw std::invalid_argument("trainStep: empty batch");
  // loss-only evaluation must leave every piece of trainer state untouched,
  // including the denoising RNG
  const std::mt19937_64 rngBefore = rng;
  auto params = net->store.all();
  ad::zeroGrad(params);

  auto allFinite = [](const Tensor& t) {
    for (double x : t.v)
      if (!std::isfinite(x)) return false;
    return true;
  };

  match::LossBreakdown sum;
  for (const auto& sample : batch) {
    auto res = net->forward(sample, /*training=*/true, &sample.instances, &rng);
    // catch diverged predictions before they reach the matcher
    const auto& last = res.layers.back();
    auto checks = {std::pair{"classification", &last.classLogits},
                   std::pair{"box_l1", &last.boxes},
                   std::pair{"polygon_l1", &last.polygons},
                   std::pair{"recognition_ce", &last.charLogits}};
    for (const auto& [name, v] : checks)
      if (!allFinite((*v)->val))
        throw std::runtime_error(std::string("non-finite loss component: ") + name);
    match::LossBreakdown bd;
    auto loss = match::spottingLoss(res, sample.instances, cfg.loss, net->charset, &bd);
    auto pairs = {std::pair{"classification", bd.cls}, std::pair{"box_l1", bd.box},
                  std::pair{"box_giou", bd.giou},      std::pair{"polygon_l1", bd.poly},
                  std::pair{"recognition_ce", bd.rec}, std::pair{"denoising", bd.denoise},
                  std::pair{"encoder_aux", bd.encAux}};
    for (const auto& [name, v] : pairs)
      if (!std::isfinite(v))
        throw std::runtime_error(std::string("non-finite loss component: ") + name);
    if (update) ad::backward(ad::scale(loss, 1.0 / batch.size()));
    sum.cls += bd.cls;
    sum.box += bd.box;
    sum.giou += bd.giou;
    sum.poly += bd.poly;
    sum.rec += bd.rec;
    sum.denoise += bd.denoise;
    sum.encAux += bd.encAux;
    sum.total += bd.total;
  }
  const double inv = 1.0 / batch.size();
  sum.cls *= inv;
  sum.box *= inv;
  sum.giou *= inv;
  sum.poly *= inv;
  sum.rec *= inv;
  sum.denoise *= inv;
  sum.encAux *= inv;
  sum.total *= inv;

  if (update) {
    lastGradNorm = opt.update(net->store, lrScaleAt(iteration));
    ++iteration;
  } else {
    rng = rngBefore;
  }
  return sum;
}

std::vector<eval::ImagePreds> predictDataset(model::Model& net,
                                             const std::vector<data::SpottingSample>& samples,
                                             double scoreThreshold) {
  std::vector<eval::ImagePreds> out;
  for (const auto& s : samples) {
    eval::ImagePreds img;
    for (const auto& p : net.infer(s, scoreThreshold))
      img.push_back({p.polygon, p.score, p.transcript});
    out.push_back(std::move(img));
  }
  return out;
}

eval::EvalReport evaluateModel(model::Model& net,
                               const std::vector<data::SpottingSample>& samples,
                               const std::vector<std::string>* lexicon, double scoreThreshold) {
  std::vector<eval::ImageGts> gts;
  for (const auto& s : samples) gts.push_back(s.instances);
  return eval::evaluate(predictDataset(net, samples, scoreThreshold), gts, lexicon);
}

FitResult fit(const TrainConfig& cfg, const std::vector<data::SpottingSample>& trainSet,
              const std::vector<data::SpottingSample>* evalSet, const std::string& outDir,
              std::ostream* metricsLog,
              const std::function<void(int, const match::LossBreakdown&)>& onStep) {
  if (trainSet.empty()) throw std::invalid_argument("fit: empty training set");
  std::filesystem::create_directories(outDir);
  Trainer trainer(cfg);
  const auto& evalSamples = evalSet ? *evalSet : trainSet;

  FitResult result;
  result.finalCheckpoint = outDir + "/final.ckpt";
  result.bestCheckpoint = outDir + "/best.ckpt";
  result.bestE2eHmean = -1;

  auto maybeEval = [&](int iter) {
    auto report = evaluateModel(*trainer.net, evalSamples, nullptr, cfg.scoreThreshold);
    if (metricsLog) {
      json j = {{"iteration", iter},
                {"eval", report.toJson()},
                {"event", "eval"}};
      j["eval"].erase("matches");
      (*metricsLog) << j.dump() << "\n";
    }
    if (report.e2eNone.hmean > result.bestE2eHmean) {
      result.bestE2eHmean = report.e2eNone.hmean;
      trainer.net->save(result.bestCheckpoint);
    }
  };

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    std::vector<data::SpottingSample> batch;
    for (int b = 0; b < cfg.batchSize; ++b)
      batch.push_back(trainSet[((size_t)iter * cfg.batchSize + b) % trainSet.size()]);
    auto bd = trainer.trainStep(batch);
    result.lastLoss = bd;
    if (metricsLog) {
      json j = {{"iteration", iter},
                {"total", bd.total},
                {"classification", bd.cls},
                {"box_l1", bd.box},
                {"box_giou", bd.giou},
                {"polygon_l1", bd.poly},
                {"recognition_ce", bd.rec},
                {"denoising", bd.denoise},
                {"encoder_aux", bd.encAux},
                {"lr", cfg.baseLr * trainer.lrScaleAt(iter)},
                {"grad_norm", trainer.lastGradNorm}};
      (*metricsLog) << j.dump() << "\n";
    }
    if (onStep) onStep(iter, bd);
    if (cfg.evalEvery > 0 && (iter + 1) % cfg.evalEvery == 0) maybeEval(iter + 1);
  }
  maybeEval(cfg.iterations);
  trainer.net->save(result.finalCheckpoint);
  if (result.bestE2eHmean < 0) {
    trainer.net->save(result.bestCheckpoint);
    result.bestE2eHmean = 0;
  }
  return result;
}

}  // namespace spotter::train
