// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Usage: acceptance [path-to-cli-binary] [--skip-slow]
#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "spotter/training.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using namespace spotter;
using namespace spotter::ad;

namespace {

int failures = 0;

void report(int idx, const char* what, bool ok, const std::string& detail) {
  std::printf("criterion %d (%s): %s%s%s\n", idx, what, ok ? "PASS" : "FAIL",
              detail.empty() ? "" : " — ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

model::ModelConfig toyConfig() {
  model::ModelConfig c;
  c.backboneChannels = {2, 3, 3, 3};
  c.hidden = 8;
  c.heads = 2;
  c.points = 1;
  c.ffnDim = 8;
  c.encLayers = 1;
  c.decLayers = 1;
  c.numQueries = 2;
  c.maxTextLen = 2;
  c.samplingRows = 2;
  c.initSeed = 3;
  return c;
}

data::SpottingSample noiseImage(int h, int w, uint64_t seed) {
  data::SpottingSample s;
  s.height = h;
  s.width = w;
  s.image.resize((size_t)h * w * 3);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (auto& x : s.image) x = u(rng);
  return s;
}

geom::Polygon16 squarePoly(double x0, double y0, double x1, double y1) {
  geom::Polygon16 p;
  for (int k = 0; k < 8; ++k) {
    const double t = k / 7.0;
    p[k] = {x0 + t * (x1 - x0), y0};
    p[15 - k] = {x0 + t * (x1 - x0), y1};
  }
  return p;
}

data::Instance gtAt(double x0, double y0, double x1, double y1, const std::string& text) {
  data::Instance g;
  g.polygon = squarePoly(x0, y0, x1, y1);
  g.box = {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
  g.transcript = text;
  return g;
}

eval::PredRecord predAt(double x0, double y0, double x1, double y1, const std::string& text,
                        double score = 0.9) {
  return {squarePoly(x0, y0, x1, y1), score, text};
}

// --------------------------------------------------------------------------
// 1. analytic gradients vs central finite differences on toy shapes

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  model::Model m(toyConfig());
  const auto& c = m.cfg;
  std::mt19937_64 rng(71);
  double worst = 0;
  std::string worstName = "-";
  auto note = [&](const char* name, double e) {
    if (e > worst) {
      worst = e;
      worstName = name;
    }
  };

  // language conversion + vision-language attention, perturbing the queries
  {
    Tensor S = uniformTensor({2, c.maxTextLen + 1, c.hidden}, -1, 1, rng);
    note("language_conversion", testutil::gradCheck(
        [&](const std::vector<Var>& v) {
          auto [L, P] = m.languageConversion(v[0]);
          return sum(mul(L, L));
        }, {S}));
    note("vision_language_attention", testutil::gradCheck(
        [&](const std::vector<Var>& v) {
          auto [L, P] = m.languageConversion(v[0]);
          auto F = m.visionLanguageAttention(v[0], L);
          return sum(mul(F, F));
        }, {S}));
  }

  // deformable cross-attention, perturbing queries and the whole memory
  {
    auto enc = m.extractPyramid(noiseImage(64, 64, 5));
    Tensor refs({2, 4});
    refs.v = {0.4, 0.45, 0.3, 0.28, 0.62, 0.55, 0.2, 0.33};
    Tensor q = uniformTensor({2, c.hidden}, -1, 1, rng);
    note("deformable_attention", testutil::gradCheck(
        [&](const std::vector<Var>& v) {
          auto out = m.deformableAttention("dec.l0.cross", v[0], refs, /*pointMode=*/false,
                                           v[1], enc.meta);
          return sum(mul(out, out));
        }, {q, enc.memory->val}));
  }

  // focal / box l1+GIoU / polygon l1 / recognition CE through the full loss
  {
    data::Charset cs;
    const int U2 = (int)cs.size();
    const int T = c.maxTextLen;
    std::vector<data::Instance> gts = {gtAt(0.1, 0.1, 0.4, 0.3, "a"),
                                       gtAt(0.55, 0.6, 0.9, 0.85, "z")};
    Tensor cls = uniformTensor({2, 1}, -2, 2, rng);
    Tensor boxes({2, 4});
    // box edges kept well away from gt edges: min/max kinks in the GIoU term
    // would make central differences invalid at coinciding corners
    boxes.v = {0.27, 0.23, 0.28, 0.18, 0.7, 0.71, 0.33, 0.24};
    Tensor polys = uniformTensor({2, 2 * geom::kPolygonPoints}, 0, 1, rng);
    Tensor chars = uniformTensor({2, T, U2}, -1, 1, rng);
    note("focal+giou+poly_l1+recognition_ce", testutil::gradCheck(
        [&](const std::vector<Var>& v) {
          model::ForwardResult res;
          res.numMatching = 2;
          model::LayerPrediction p;
          p.classLogits = v[0];
          p.boxes = v[1];
          p.polygons = v[2];
          p.charLogits = v[3];
          res.layers.push_back(p);
          return match::spottingLoss(res, gts, match::LossWeights{}, cs);
        }, {cls, boxes, polys, chars}));

    Tensor b2({2, 4});
    b2.v = {0.3, 0.33, 0.25, 0.18, 0.6, 0.52, 0.31, 0.22};
    note("giou_pairwise", testutil::gradCheck(
        [&](const std::vector<Var>& v) { return sum(match::giouPairwise(v[0], v[1])); },
        {boxes, b2}));
  }

  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report(1, "gradient checks", worst < 1e-4 && sec < 60,
         fmt("worst rel err %.2e (%s), %.1fs", worst, worstName.c_str(), sec));
}

// --------------------------------------------------------------------------
// 2. masked query->language attention: exact zero diagonal, rows sum to 1

void criterion2() {
  model::Model m(toyConfig());
  std::mt19937_64 rng(17);
  bool ok = true;
  double worstRow = 0;
  for (int trial = 0; trial < 5; ++trial) {
    auto S = makeVar(uniformTensor({3, m.cfg.maxTextLen + 1, m.cfg.hidden}, -1, 1, rng));
    auto [L, P] = m.languageConversion(S);
    Tensor w;
    m.visionLanguageAttention(S, L, &w);
    const int T1 = m.cfg.maxTextLen + 1;
    for (int b = 0; b < 3; ++b)
      for (int h = 0; h < m.cfg.heads; ++h)
        for (int i = 0; i < T1; ++i) {
          double sum = 0;
          for (int j = 0; j < T1; ++j) {
            const double wij = w.at({b, h, i, j});
            sum += wij;
            if (i == j && wij != 0.0) ok = false;
          }
          worstRow = std::max(worstRow, std::fabs(sum - 1.0));
        }
  }
  report(2, "attention mask semantics", ok && worstRow < 1e-6,
         fmt("diagonal exact, worst row-sum dev %.1e", worstRow));
}

// --------------------------------------------------------------------------
// 3. Hungarian vs exhaustive permutation minimum

void criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(29);
  bool ok = true;
  for (int trial = 0; trial < 200 && ok; ++trial) {
    const int n = 1 + (int)(rng() % 7);
    const int mm = n + (int)(rng() % (8 - n));
    std::vector<std::vector<double>> cost(n, std::vector<double>(mm));
    for (auto& row : cost)
      for (auto& x : row) x = std::uniform_real_distribution<double>(-5, 5)(rng);

    auto assign = match::hungarian(cost);
    double got = 0;
    for (int i = 0; i < n; ++i) got += cost[i][assign[i]];

    std::vector<int> cols(mm);
    std::iota(cols.begin(), cols.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double tot = 0;
      for (int i = 0; i < n; ++i) tot += cost[i][cols[i]];
      best = std::min(best, tot);
    } while (std::next_permutation(cols.begin(), cols.end()));
    if (got != best) ok = false;
  }
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report(3, "matcher oracle", ok && sec < 30, fmt("200 matrices, %.1fs", sec));
}

// --------------------------------------------------------------------------
// 4. polygon offset round trip, 16 points enforced

void criterion4() {
  std::mt19937_64 rng(31);
  bool ok = geom::kPolygonPoints == 16;
  for (int trial = 0; trial < 50 && ok; ++trial) {
    geom::Box prop = {std::uniform_real_distribution<double>(0.2, 0.8)(rng),
                      std::uniform_real_distribution<double>(0.2, 0.8)(rng),
                      std::uniform_real_distribution<double>(0.05, 0.4)(rng),
                      std::uniform_real_distribution<double>(0.05, 0.4)(rng)};
    std::vector<geom::Point> offsets(16);
    for (auto& o : offsets)
      o = {std::uniform_real_distribution<double>(-0.2, 0.2)(rng),
           std::uniform_real_distribution<double>(-0.2, 0.2)(rng)};
    auto poly = geom::reconstructPolygon(prop, offsets);
    for (int i = 0; i < 16; ++i)
      if (poly[i].x != prop.cx + offsets[i].x || poly[i].y != prop.cy + offsets[i].y) ok = false;
  }
  bool throws = false;
  try {
    geom::reconstructPolygon({0.5, 0.5, 0.2, 0.2}, std::vector<geom::Point>(15));
  } catch (const std::exception&) {
    throws = true;
  }
  report(4, "polygon format", ok && throws, "exact round trip, wrong point count rejected");
}

// --------------------------------------------------------------------------
// 5. denoising isolation: bit-identical outputs and gradients, 20 seeds

void criterion5() {
  model::ModelConfig c = toyConfig();
  c.numQueries = 6;
  c.maxTextLen = 4;
  match::LossWeights w;
  w.superviseDenoise = false;
  bool ok = true;
  std::string detail = "20 batches bit-identical";
  for (uint64_t seed = 1; seed <= 20 && ok; ++seed) {
    model::Model m(c);
    std::mt19937_64 gen(seed);
    data::GenConfig gc;
    gc.height = 128;
    gc.width = 128;
    gc.maxLen = c.maxTextLen - 1;  // leave room for the EOS position
    auto s = data::generateSample(gen, gc);
    if (s.instances.empty()) continue;

    std::mt19937_64 rngA(seed + 1), rngB(seed + 1);
    m.cfg.denoise.enabled = true;
    auto resA = m.forward(s, true, &s.instances, &rngA);
    m.cfg.denoise.enabled = false;
    auto resB = m.forward(s, true, &s.instances, &rngB);
    if (resA.numDenoise == 0) {
      ok = false;
      detail = "no denoising slots generated";
      break;
    }

    const int off = resA.numDenoise;
    auto cmpRows = [&](const Tensor& a, const Tensor& b) {
      const int cols = (int)(a.size() / a.shape[0]);
      for (int i = 0; i < resA.numMatching; ++i)
        for (int cc = 0; cc < cols; ++cc)
          if (a.v[(int64_t)(off + i) * cols + cc] != b.v[(int64_t)i * cols + cc]) return false;
      return true;
    };
    for (size_t l = 0; l < resA.layers.size() && ok; ++l) {
      const auto& A = resA.layers[l];
      const auto& B = resB.layers[l];
      if (!cmpRows(A.classLogits->val, B.classLogits->val) || !cmpRows(A.boxes->val, B.boxes->val) ||
          !cmpRows(A.polygons->val, B.polygons->val) || !cmpRows(A.charLogits->val, B.charLogits->val)) {
        ok = false;
        detail = fmt("output mismatch, seed %llu layer %zu", (unsigned long long)seed, l);
      }
    }
    if (!ok) break;

    auto params = m.store.all();
    zeroGrad(params);
    backward(match::spottingLoss(resA, s.instances, w, m.charset));
    std::map<std::string, Tensor> gradsA;
    for (const auto& [name, p] : m.store.params)
      gradsA[name] = p->grad.v.empty() ? Tensor::zeros(p->val.shape) : p->grad;
    zeroGrad(params);
    backward(match::spottingLoss(resB, s.instances, w, m.charset));
    for (const auto& [name, p] : m.store.params) {
      const Tensor gB = p->grad.v.empty() ? Tensor::zeros(p->val.shape) : p->grad;
      const Tensor& gA = gradsA[name];
      for (int64_t i = 0; i < (int64_t)gA.v.size(); ++i)
        if (gA.v[i] != gB.v[i]) {
          ok = false;
          detail = fmt("gradient mismatch in %s, seed %llu", name.c_str(),
                       (unsigned long long)seed);
          break;
        }
      if (!ok) break;
    }
  }
  report(5, "denoising isolation", ok, detail);
}

// --------------------------------------------------------------------------
// 6. query initialization: sort oracle, constant sampling, full-size shapes

void criterion6() {
  model::ModelConfig full;  // defaults: N=100, T=25
  bool ok = full.numQueries == 100 && full.maxTextLen == 25;
  std::string detail;
  model::Model m(full);
  auto s = noiseImage(128, 128, 9);
  auto enc = m.encode(s);

  // top-N matches a stable sort-based oracle
  auto scores = m.scoreMemory(enc.memory);
  auto taq = m.taskAwareInit(enc, scores);
  std::vector<int> order(enc.meta.tokens);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores->val.v[a] > scores->val.v[b]; });
  for (int i = 0; i < full.numQueries; ++i)
    if (taq.tokenIndices[i] != order[i]) {
      ok = false;
      detail = fmt("top-N mismatch at rank %d", i);
    }

  // recognition-query sampling on constant memory returns the constant
  auto pyr = m.extractPyramid(s);
  Tensor constMem(pyr.memory->val.shape);
  std::fill(constMem.v.begin(), constMem.v.end(), 0.37);
  model::EncoderOutput constEnc{constant(constMem), pyr.meta};
  Tensor box({1, 4});
  box.v = {0.5, 0.5, 0.3, 0.2};
  auto R = m.sampleRecognitionQueries(constEnc, box);
  for (double v : R->val.v)
    if (std::fabs(v - 0.37) > 1e-12) {
      ok = false;
      detail = "constant memory not preserved";
      break;
    }

  // queries S in N x (T+1) x C at full defaults
  auto res = m.forward(s);
  const std::vector<int> want{full.numQueries, full.maxTextLen + 1, full.hidden};
  if (res.queries->val.shape != want) {
    ok = false;
    detail = "decoder query shape mismatch";
  }
  report(6, "query initialization contract", ok,
         ok ? fmt("top-100 oracle, constant sampling, S 100x26x%d", full.hidden) : detail);
}

// --------------------------------------------------------------------------
// 7 & 8. scaled-down overfit convergence and synergy-module direction check

train::TrainConfig deskConfig(uint64_t seed, bool synergy) {
  train::TrainConfig c;
  c.model.backboneChannels = {16, 32, 64, 64};
  c.model.hidden = 64;
  c.model.heads = 8;
  c.model.points = 4;
  c.model.ffnDim = 256;
  c.model.encLayers = 2;
  c.model.decLayers = 3;
  c.model.numQueries = 10;
  c.model.maxTextLen = 12;
  c.model.samplingRows = 2;
  c.model.priorProb = 0.3;
  c.model.nmsIou = 0.2;
  c.model.useTAQI = synergy;
  c.model.useVLC = synergy;
  c.seed = seed;
  c.iterations = 2000;
  c.baseLr = 1e-3;
  c.milestones = {1500, 1800};
  c.scoreThreshold = 0.25;
  c.evalEvery = 0;
  return c;
}

std::pair<double, double> runOverfit(uint64_t seed, bool synergy) {
  auto c = deskConfig(seed, synergy);
  data::GenConfig gc;  // 128x192, 1-3 instances, a-z0-9
  std::mt19937_64 rng(100 + seed);
  std::vector<data::SpottingSample> set;
  for (int i = 0; i < 8; ++i) set.push_back(data::generateSample(rng, gc));
  train::Trainer t(c);
  for (int it = 0; it < c.iterations; ++it)
    t.trainStep({set[(size_t)it % set.size()]});
  auto rep = train::evaluateModel(*t.net, set, nullptr, c.scoreThreshold);
  return {rep.detection.hmean, rep.e2eNone.hmean};
}

void criteria78() {
  const auto t0 = std::chrono::steady_clock::now();
  double synDet[3], synE2e[3], baseE2e[3];
  for (uint64_t s = 0; s < 3; ++s) {
    std::tie(synDet[s], synE2e[s]) = runOverfit(s + 1, true);
    baseE2e[s] = runOverfit(s + 1, false).second;
  }
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report(7, "overfit convergence", synDet[0] >= 0.95 && synE2e[0] >= 0.90,
         fmt("detection H %.3f, e2e H %.3f (%.0fs for all runs)", synDet[0], synE2e[0], sec));
  const double meanSyn = (synE2e[0] + synE2e[1] + synE2e[2]) / 3;
  const double meanBase = (baseE2e[0] + baseE2e[1] + baseE2e[2]) / 3;
  report(8, "synergy direction check", meanSyn >= meanBase,
         fmt("mean e2e H with synergy modules %.3f vs baseline %.3f", meanSyn, meanBase));
}

// --------------------------------------------------------------------------
// 9. metric oracles on hand-computed fixtures

void criterion9() {
  bool ok = true;
  std::string detail = "hand-computed fixtures exact";

  {  // 2 gts, 3 preds of which 2 match: P=2/3 R=1 H=0.8
    std::vector<eval::ImageGts> gts = {{gtAt(10, 10, 50, 30, "abc"), gtAt(60, 40, 120, 60, "xy")}};
    std::vector<eval::ImagePreds> preds = {{predAt(10, 10, 50, 30, "abc"),
                                            predAt(60, 40, 120, 60, "xy"),
                                            predAt(200, 200, 240, 220, "zzz", 0.5)}};
    auto r = eval::evaluate(preds, gts);
    if (r.detection.precision != 2.0 / 3.0 || r.detection.recall != 1.0 ||
        std::fabs(r.detection.hmean - 0.8) > 1e-12) {
      ok = false;
      detail = "detection fixture mismatch";
    }
    // perfect transcripts on the two matches: e2e P=2/3, R=1
    if (ok && std::fabs(r.e2eNone.hmean - 0.8) > 1e-12) {
      ok = false;
      detail = "e2e fixture mismatch";
    }
  }
  {  // wrong transcript without lexicon: no e2e match; 1-NED pair "abc" vs "abd"
    std::vector<eval::ImageGts> gts = {{gtAt(10, 10, 50, 30, "abc")}};
    std::vector<eval::ImagePreds> preds = {{predAt(10, 10, 50, 30, "abd")}};
    auto r = eval::evaluate(preds, gts);
    if (r.e2eNone.hmean != 0.0 || std::fabs(r.oneMinusNed - 2.0 / 3.0) > 1e-12) {
      ok = false;
      detail = "1-NED fixture mismatch";
    }
  }
  {  // lexicon rescue of "hel1o" -> "hello"
    std::vector<eval::ImageGts> gts = {{gtAt(10, 10, 50, 30, "hello")}};
    std::vector<eval::ImagePreds> preds = {{predAt(10, 10, 50, 30, "hel1o")}};
    std::vector<std::string> lex = {"hello", "world"};
    auto r = eval::evaluate(preds, gts, &lex);
    if (!r.e2eLexicon || r.e2eLexicon->hmean != 1.0 || r.e2eNone.hmean != 0.0) {
      ok = false;
      detail = "lexicon fixture mismatch";
    }
  }
  {  // no detections, one gt: 1-NED = 0, P-undefined convention
    std::vector<eval::ImageGts> gts = {{gtAt(10, 10, 50, 30, "abc")}};
    std::vector<eval::ImagePreds> preds = {{}};
    auto r = eval::evaluate(preds, gts);
    if (r.oneMinusNed != 0.0 || r.detection.precision != 0.0 || r.detection.hmean != 0.0) {
      ok = false;
      detail = "empty-prediction convention mismatch";
    }
  }
  report(9, "metric oracles", ok, detail);
}

// --------------------------------------------------------------------------
// 10. CLI pipeline smoke with byte-identical reruns

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion10(const std::string& cli) {
  const fs::path root = fs::temp_directory_path() / "acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string cfgPath = (root / "cfg.json").string();
  {
    std::ofstream cfg(cfgPath);
    cfg << R"({"generate": {"height": 64, "width": 64, "max_instances": 2, "max_len": 4},
               "train": {"iterations": 50, "eval_every": 0,
                         "model": {"backbone_channels": [4,8,8,8], "hidden": 16, "heads": 2,
                                   "points": 2, "ffn_dim": 32, "enc_layers": 1, "dec_layers": 2,
                                   "num_queries": 8, "max_text_len": 8, "sampling_rows": 2}}})";
  }
  auto run = [&](const std::string& args) {
    const std::string cmd = cli + " " + args + " --config " + cfgPath + " --seed 5 >" +
                            (root / "stdout.txt").string() + " 2>" +
                            (root / "stderr.txt").string();
    return std::system(cmd.c_str());
  };
  const std::string d = (root / "data").string(), r = (root / "run").string();
  bool ok = true;
  std::string detail = "generate/train/eval/infer/visualize, reruns byte-identical";
  auto step = [&](const char* name, const std::string& args) {
    if (ok && run(args) != 0) {
      ok = false;
      detail = std::string(name) + " failed: " + slurp(root / "stderr.txt");
      detail.erase(std::remove(detail.begin(), detail.end(), '\n'), detail.end());
    }
  };
  step("generate", "generate --out " + d + " --count 4");
  step("train", "train --data " + d + " --out " + r);
  step("eval", "eval --checkpoint " + r + "/final.ckpt --data " + d + " --out " + root.string() +
                   "/report.json");
  step("infer", "infer --checkpoint " + r + "/final.ckpt --input " + d + " --out " +
                    root.string() + "/preds.jsonl");
  step("visualize", "visualize --predictions " + root.string() + "/preds.jsonl --images " + d +
                        " --out " + root.string() + "/vis");

  if (ok) {
    for (const char* want : {"data/annotations.jsonl", "run/final.ckpt", "run/metrics.jsonl",
                             "run/manifest.json", "report.json", "preds.jsonl",
                             "vis/img_00000.png"})
      if (!fs::exists(root / want)) {
        ok = false;
        detail = std::string("missing artifact: ") + want;
      }
  }

  if (ok) {  // clobber refusal without --overwrite
    if (run("generate --out " + d + " --count 4") == 0) {
      ok = false;
      detail = "non-empty output directory was clobbered";
    }
  }

  if (ok) {  // byte-identical rerun of generate and eval
    const std::string ann1 = slurp(root / "data/annotations.jsonl");
    const std::string img1 = slurp(root / "data/img_00000.png");
    const std::string rep1 = slurp(root / "report.json");
    step("generate rerun", "generate --out " + d + " --count 4 --overwrite");
    step("eval rerun", "eval --checkpoint " + r + "/final.ckpt --data " + d + " --out " +
                           root.string() + "/report.json --overwrite");
    if (ok && (slurp(root / "data/annotations.jsonl") != ann1 ||
               slurp(root / "data/img_00000.png") != img1 ||
               slurp(root / "report.json") != rep1)) {
      ok = false;
      detail = "rerun outputs differ";
    }
  }
  report(10, "pipeline smoke", ok, detail);
  fs::remove_all(root);
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli = argc > 1 ? argv[1] : "./spotter";
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criteria78();
  criterion9();
  criterion10(cli);
  std::printf("%s\n", failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES PRESENT");
  return failures == 0 ? 0 : 1;
}
