// Command-line entry point: dataset generation, training, evaluation,
// inference, and overlay visualization.
//
// Config schema (JSON, all keys optional):
//   {
//     "generate": {"height", "width", "min_instances", "max_instances",
//                  "min_len", "max_len", "max_curvature", "max_skew_deg"},
//     "train": { TrainConfig: "iterations", "base_lr", "milestones",
//                "decay_factor", "batch_size", "weight_decay", "clip_norm",
//                "eval_every", "score_threshold", "loss": {...},
//                "model": { ModelConfig } }
//   }
// Dotted --set overrides (e.g. --set train.model.hidden=64) are applied after
// the file is read; the fully resolved config is echoed into the manifest.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "spotter/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace spotter;

namespace {

std::string isoNow() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string configHash(const json& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)fnv1a(cfg.dump()));
  return buf;
}

// Output directories live under $SPOTTER_OUT_ROOT when a relative path is given.
std::string resolveOut(const std::string& path) {
  const char* root = std::getenv("SPOTTER_OUT_ROOT");
  if (root && *root && fs::path(path).is_relative()) return (fs::path(root) / path).string();
  return path;
}

void requireFresh(const fs::path& dir, bool overwrite) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !overwrite)
    throw std::runtime_error("output directory not empty (pass --overwrite): " + dir.string());
  fs::create_directories(dir);
}

void requireFreshFile(const fs::path& file, bool overwrite) {
  if (fs::exists(file) && !overwrite)
    throw std::runtime_error("output file exists (pass --overwrite): " + file.string());
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

json loadConfig(const std::string& path, const std::vector<std::string>& overrides) {
  json cfg = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    cfg = json::parse(in);
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::runtime_error("override must be key=value: " + kv);
    // dotted path -> json pointer
    std::string p = "/";
    for (char c : kv.substr(0, eq)) p += (c == '.') ? '/' : c;
    const std::string raw = kv.substr(eq + 1);
    json val;
    try {
      val = json::parse(raw);
    } catch (const json::parse_error&) {
      val = raw;  // bare strings need no quoting
    }
    cfg[json::json_pointer(p)] = val;
  }
  return cfg;
}

void writeManifest(const fs::path& dir, const std::string& command,
                   const std::string& configPath, const json& resolved, uint64_t seed,
                   const std::string& startedAt, const std::vector<std::string>& artifacts) {
  json m;
  m["command"] = command;
  m["config_path"] = configPath;
  m["config"] = resolved;
  m["config_hash"] = configHash(resolved);
  m["seed"] = seed;
  m["output_dir"] = dir.string();
  m["started_at"] = startedAt;
  m["finished_at"] = isoNow();
  m["artifacts"] = artifacts;
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << "\n";
}

data::GenConfig genConfigFrom(const json& cfg) {
  data::GenConfig g;
  if (!cfg.contains("generate")) return g;
  const auto& j = cfg["generate"];
  g.height = j.value("height", g.height);
  g.width = j.value("width", g.width);
  g.minInstances = j.value("min_instances", g.minInstances);
  g.maxInstances = j.value("max_instances", g.maxInstances);
  g.minLen = j.value("min_len", g.minLen);
  g.maxLen = j.value("max_len", g.maxLen);
  g.maxCurvature = j.value("max_curvature", g.maxCurvature);
  g.maxSkewDeg = j.value("max_skew_deg", g.maxSkewDeg);
  return g;
}

data::SpottingSample loadImage(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) throw std::runtime_error("cannot read image: " + path);
  data::SpottingSample s;
  s.height = img.rows;
  s.width = img.cols;
  s.image.resize((size_t)img.rows * img.cols * 3);
  for (int i = 0; i < img.rows; ++i)
    for (int j = 0; j < img.cols; ++j) {
      const auto& px = img.at<cv::Vec3b>(i, j);
      for (int c = 0; c < 3; ++c) s.image[((size_t)i * img.cols + j) * 3 + c] = px[c] / 255.0f;
    }
  return s;
}

std::vector<std::string> listPngs(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .png images in " + dir);
  return files;
}

int cmdGenerate(const json& cfg, const std::string& configPath, const std::string& outArg,
                int count, uint64_t seed, bool overwrite) {
  const auto started = isoNow();
  const fs::path out = resolveOut(outArg);
  requireFresh(out, overwrite);
  auto gc = genConfigFrom(cfg);
  std::mt19937_64 rng(seed);
  std::vector<data::SpottingSample> samples;
  for (int i = 0; i < count; ++i) samples.push_back(data::generateSample(rng, gc));
  data::writeDataset(out.string(), samples, /*overwrite=*/true);
  writeManifest(out, "generate", configPath, cfg, seed, started,
                {(out / "annotations.jsonl").string()});
  std::cout << "wrote " << count << " samples to " << out.string() << "\n";
  return 0;
}

int cmdTrain(const json& cfg, const std::string& configPath, const std::string& dataDir,
             const std::string& evalDir, const std::string& outArg, uint64_t seed,
             bool overwrite) {
  const auto started = isoNow();
  const fs::path out = resolveOut(outArg);
  requireFresh(out, overwrite);
  auto tc = train::TrainConfig::fromJson(cfg.value("train", json::object()));
  tc.seed = seed;
  auto trainSet = data::loadDataset(dataDir);
  std::vector<data::SpottingSample> evalSet;
  if (!evalDir.empty()) evalSet = data::loadDataset(evalDir);
  std::ofstream metrics(out / "metrics.jsonl");
  auto result = train::fit(tc, trainSet, evalDir.empty() ? nullptr : &evalSet, out.string(),
                           &metrics);
  writeManifest(out, "train", configPath, cfg, seed, started,
                {result.finalCheckpoint, result.bestCheckpoint, (out / "metrics.jsonl").string()});
  std::cout << "trained " << tc.iterations << " iterations, final loss "
            << result.lastLoss.total << ", best e2e hmean " << result.bestE2eHmean << "\n";
  return 0;
}

int cmdEval(const json& cfg, const std::string& configPath, const std::string& checkpoint,
            const std::string& predictionsPath, const std::string& dataDir,
            const std::string& lexiconPath, const std::string& outArg, double scoreThreshold,
            uint64_t seed, bool overwrite) {
  const auto started = isoNow();
  const fs::path out = resolveOut(outArg);
  requireFreshFile(out, overwrite);
  auto samples = data::loadDataset(dataDir);

  std::vector<eval::ImagePreds> preds;
  if (!predictionsPath.empty()) {
    preds = eval::loadPredictions(predictionsPath);
    if (preds.size() != samples.size())
      throw std::runtime_error("prediction file has " + std::to_string(preds.size()) +
                               " images, dataset has " + std::to_string(samples.size()));
  } else {
    auto net = model::Model::load(checkpoint);
    preds = train::predictDataset(*net, samples, scoreThreshold);
  }

  std::vector<eval::ImageGts> gts;
  for (const auto& s : samples) gts.push_back(s.instances);
  std::optional<std::vector<std::string>> lexicon;
  if (!lexiconPath.empty()) lexicon = eval::loadLexicon(lexiconPath);
  auto report = eval::evaluate(preds, gts, lexicon ? &*lexicon : nullptr);

  std::ofstream rf(out);
  rf << report.toJson().dump(2) << "\n";
  rf.close();
  if (out.has_parent_path())
    writeManifest(out.parent_path(), "eval", configPath, cfg, seed, started, {out.string()});
  std::cout << report.toJson().dump() << "\n";
  return 0;
}

int cmdInfer(const json& cfg, const std::string& configPath, const std::string& checkpoint,
             const std::string& input, const std::string& outArg, double scoreThreshold,
             uint64_t seed, bool overwrite) {
  const auto started = isoNow();
  const fs::path out = resolveOut(outArg);
  requireFreshFile(out, overwrite);
  auto net = model::Model::load(checkpoint);

  std::vector<data::SpottingSample> samples;
  if (fs::is_directory(input))
    for (const auto& f : listPngs(input)) samples.push_back(loadImage(f));
  else
    samples.push_back(loadImage(input));

  auto preds = train::predictDataset(*net, samples, scoreThreshold);
  eval::writePredictions(out.string(), preds);
  if (out.has_parent_path())
    writeManifest(out.parent_path(), "infer", configPath, cfg, seed, started, {out.string()});
  size_t total = 0;
  for (const auto& p : preds) total += p.size();
  std::cout << "wrote " << total << " predictions for " << samples.size() << " images to "
            << out.string() << "\n";
  return 0;
}

int cmdVisualize(const json& cfg, const std::string& configPath,
                 const std::string& predictionsPath, const std::string& imagesDir,
                 const std::string& outArg, uint64_t seed, bool overwrite) {
  const auto started = isoNow();
  const fs::path out = resolveOut(outArg);
  requireFresh(out, overwrite);
  auto preds = eval::loadPredictions(predictionsPath);
  auto files = listPngs(imagesDir);
  if (preds.size() != files.size())
    throw std::runtime_error("prediction file has " + std::to_string(preds.size()) +
                             " images, directory has " + std::to_string(files.size()));

  std::vector<std::string> artifacts;
  for (size_t i = 0; i < files.size(); ++i) {
    cv::Mat img = cv::imread(files[i], cv::IMREAD_COLOR);
    if (img.empty()) throw std::runtime_error("cannot read image: " + files[i]);
    for (const auto& p : preds[i]) {
      std::vector<cv::Point> pts;
      for (const auto& pt : p.polygon) pts.emplace_back((int)std::lround(pt.x),
                                                        (int)std::lround(pt.y));
      cv::polylines(img, pts, /*isClosed=*/true, cv::Scalar(0, 220, 0), 1, cv::LINE_AA);
      char label[96];
      std::snprintf(label, sizeof(label), "%s %.2f", p.transcript.c_str(), p.score);
      cv::Point anchor = pts.empty() ? cv::Point(2, 10) : pts[0] + cv::Point(0, -3);
      anchor.y = std::max(anchor.y, 10);
      cv::putText(img, label, anchor, cv::FONT_HERSHEY_PLAIN, 0.8, cv::Scalar(0, 0, 255), 1,
                  cv::LINE_AA);
    }
    const auto dst = out / fs::path(files[i]).filename();
    if (!cv::imwrite(dst.string(), img))
      throw std::runtime_error("failed to write " + dst.string());
    artifacts.push_back(dst.string());
  }
  writeManifest(out, "visualize", configPath, cfg, seed, started, artifacts);
  std::cout << "wrote " << files.size() << " overlays to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"text spotting: synthetic data, training, evaluation, inference"};
  app.require_subcommand(1);

  std::string configPath, outPath, dataDir, evalDir, checkpoint, input, lexiconPath;
  std::string predictionsPath, imagesDir;
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  bool overwrite = false;
  int count = 10;
  double scoreThreshold = 0.3;

  auto addCommon = [&](CLI::App* c) {
    c->add_option("--config", configPath, "JSON config file");
    c->add_option("--set", overrides, "dotted config override, e.g. train.model.hidden=64");
    c->add_option("--seed", seed, "RNG seed");
    c->add_flag("--overwrite", overwrite, "allow writing into non-empty outputs");
  };

  auto* gen = app.add_subcommand("generate", "render a synthetic dataset");
  gen->add_option("--out", outPath, "output dataset directory")->required();
  gen->add_option("--count", count, "number of images");
  addCommon(gen);

  auto* tr = app.add_subcommand("train", "train a model on a dataset directory");
  tr->add_option("--data", dataDir, "training dataset directory")->required();
  tr->add_option("--eval-data", evalDir, "held-out dataset for periodic evaluation");
  tr->add_option("--out", outPath, "output run directory")->required();
  addCommon(tr);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint or a prediction file");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint");
  ev->add_option("--predictions", predictionsPath, "evaluate this prediction file instead");
  ev->add_option("--data", dataDir, "annotated dataset directory")->required();
  ev->add_option("--lexicon", lexiconPath, "word list for lexicon-corrected scoring");
  ev->add_option("--out", outPath, "output report JSON path")->required();
  ev->add_option("--score-threshold", scoreThreshold, "confidence cutoff");
  addCommon(ev);

  auto* in = app.add_subcommand("infer", "run a checkpoint on images");
  in->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  in->add_option("--input", input, "image file or directory of .png images")->required();
  in->add_option("--out", outPath, "output predictions JSONL path")->required();
  in->add_option("--score-threshold", scoreThreshold, "confidence cutoff");
  addCommon(in);

  auto* vis = app.add_subcommand("visualize", "draw predictions over images");
  vis->add_option("--predictions", predictionsPath, "predictions JSONL")->required();
  vis->add_option("--images", imagesDir, "directory of .png images")->required();
  vis->add_option("--out", outPath, "output directory for overlays")->required();
  addCommon(vis);

  CLI11_PARSE(app, argc, argv);

  try {
    json cfg = loadConfig(configPath, overrides);
    if (gen->parsed()) return cmdGenerate(cfg, configPath, outPath, count, seed, overwrite);
    if (tr->parsed()) return cmdTrain(cfg, configPath, dataDir, evalDir, outPath, seed, overwrite);
    if (ev->parsed()) {
      if (checkpoint.empty() == predictionsPath.empty())
        throw std::runtime_error("eval needs exactly one of --checkpoint or --predictions");
      return cmdEval(cfg, configPath, checkpoint, predictionsPath, dataDir, lexiconPath, outPath,
                     scoreThreshold, seed, overwrite);
    }
    if (in->parsed())
      return cmdInfer(cfg, configPath, checkpoint, input, outPath, scoreThreshold, seed,
                      overwrite);
    if (vis->parsed())
      return cmdVisualize(cfg, configPath, predictionsPath, imagesDir, outPath, seed, overwrite);
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }
  return 2;
}
