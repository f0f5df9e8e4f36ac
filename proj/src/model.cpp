#include "spotter/model.hpp"

#include <cmath>

namespace spotter::model {

using namespace spotter::ad;
using json = nlohmann::json;

json ModelConfig::toJson() const {
  json j;
  j["backbone_channels"] = backboneChannels;
  j["hidden"] = hidden;
  j["heads"] = heads;
  j["points"] = points;
  j["ffn_dim"] = ffnDim;
  j["enc_layers"] = encLayers;
  j["dec_layers"] = decLayers;
  j["num_queries"] = numQueries;
  j["max_text_len"] = maxTextLen;
  j["sampling_rows"] = samplingRows;
  j["charset"] = charset;
  j["use_taqi"] = useTAQI;
  j["use_vlc"] = useVLC;
  j["denoise"] = {{"enabled", denoise.enabled},
                  {"groups", denoise.groups},
                  {"shift_ratio", denoise.shiftRatio},
                  {"scale_ratio", denoise.scaleRatio}};
  j["score_threshold"] = scoreThreshold;
  j["prior_prob"] = priorProb;
  j["nms_iou"] = nmsIou;
  j["init_seed"] = initSeed;
  return j;
}

ModelConfig ModelConfig::fromJson(const json& j) {
  ModelConfig c;
  c.backboneChannels = j.value("backbone_channels", c.backboneChannels);
  c.hidden = j.value("hidden", c.hidden);
  c.heads = j.value("heads", c.heads);
  c.points = j.value("points", c.points);
  c.ffnDim = j.value("ffn_dim", c.ffnDim);
  c.encLayers = j.value("enc_layers", c.encLayers);
  c.decLayers = j.value("dec_layers", c.decLayers);
  c.numQueries = j.value("num_queries", c.numQueries);
  c.maxTextLen = j.value("max_text_len", c.maxTextLen);
  c.samplingRows = j.value("sampling_rows", c.samplingRows);
  c.charset = j.value("charset", c.charset);
  c.useTAQI = j.value("use_taqi", c.useTAQI);
  c.useVLC = j.value("use_vlc", c.useVLC);
  if (j.contains("denoise")) {
    const auto& d = j["denoise"];
    c.denoise.enabled = d.value("enabled", c.denoise.enabled);
    c.denoise.groups = d.value("groups", c.denoise.groups);
    c.denoise.shiftRatio = d.value("shift_ratio", c.denoise.shiftRatio);
    c.denoise.scaleRatio = d.value("scale_ratio", c.denoise.scaleRatio);
  }
  c.scoreThreshold = j.value("score_threshold", c.scoreThreshold);
  c.priorProb = j.value("prior_prob", c.priorProb);
  c.nmsIou = j.value("nms_iou", c.nmsIou);
  c.initSeed = j.value("init_seed", c.initSeed);
  return c;
}

double inverseSigmoid(double p) {
  const double q = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(q / (1.0 - q));
}

std::vector<geom::Box> makeNoiseBoxes(const std::vector<geom::Box>& gtBoxes,
                                      std::mt19937_64& rng, double shiftRatio,
                                      double scaleRatio, int groups) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<geom::Box> out;
  out.reserve(gtBoxes.size() * groups);
  for (int g = 0; g < groups; ++g) {
    for (const auto& b : gtBoxes) {
      geom::Box n = b;
      n.cx += u(rng) * shiftRatio * b.w / 2;
      n.cy += u(rng) * shiftRatio * b.h / 2;
      n.w *= 1.0 + u(rng) * scaleRatio;
      n.h *= 1.0 + u(rng) * scaleRatio;
      n.cx = std::clamp(n.cx, 0.0, 1.0);
      n.cy = std::clamp(n.cy, 0.0, 1.0);
      n.w = std::clamp(n.w, 0.0, 1.0);
      n.h = std::clamp(n.h, 0.0, 1.0);
      out.push_back(n);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig config) : cfg(std::move(config)) {
  charset.chars = cfg.charset;
  initParams();
}

namespace {
Tensor convInit(int cout, int cin, int k, std::mt19937_64& rng) {
  const double fanIn = cin * k * k, fanOut = cout * k * k;
  return uniformTensor({cout, cin, k, k}, -std::sqrt(6.0 / (fanIn + fanOut)),
                       std::sqrt(6.0 / (fanIn + fanOut)), rng);
}
}  // namespace

void Model::initParams() {
  std::mt19937_64 rng(cfg.initSeed ^ 0x9e3779b97f4a7c15ull);
  const int C = cfg.hidden;
  const int U = charset.size();
  const auto& bc = cfg.backboneChannels;
  auto lin = [&](const std::string& name, int in, int out) {
    store.make(name + ".w", nn::xavier({in, out}, rng));
    store.make(name + ".b", Tensor::zeros({out}));
  };
  auto ln = [&](const std::string& name, int d) {
    store.make(name + ".g", Tensor::full({d}, 1.0));
    store.make(name + ".b", Tensor::zeros({d}));
  };

  // backbone: stem + stages down to stride 32, then REM to stride 64
  store.make("bb.c0.w", convInit(bc[0], 3, 3, rng));
  store.make("bb.c0.b", Tensor::zeros({bc[0]}));
  store.make("bb.c1.w", convInit(bc[1], bc[0], 3, rng));
  store.make("bb.c1.b", Tensor::zeros({bc[1]}));
  store.make("bb.c2.w", convInit(bc[2], bc[1], 3, rng));
  store.make("bb.c2.b", Tensor::zeros({bc[2]}));
  store.make("bb.c3.w", convInit(bc[3], bc[2], 3, rng));
  store.make("bb.c3.b", Tensor::zeros({bc[3]}));
  store.make("bb.c4.w", convInit(bc[3], bc[3], 3, rng));
  store.make("bb.c4.b", Tensor::zeros({bc[3]}));
  store.make("bb.rem.w", convInit(bc[3], bc[3], 3, rng));
  store.make("bb.rem.b", Tensor::zeros({bc[3]}));
  const int srcCh[kLevels] = {bc[2], bc[3], bc[3], bc[3]};
  for (int l = 0; l < kLevels; ++l) {
    lin("bb.proj" + std::to_string(l), srcCh[l], C);
    ln("bb.norm" + std::to_string(l), C);
  }
  store.make("enc.level_emb", normalTensor({kLevels, C}, 0.0, 0.02, rng));

  // deformable attention parameter block
  auto deform = [&](const std::string& p) {
    const int HLP = cfg.heads * kLevels * cfg.points;
    store.make(p + ".off.w", Tensor::zeros({C, HLP * 2}));
    Tensor offB({HLP * 2});
    for (int h = 0; h < cfg.heads; ++h) {
      const double a = 2.0 * M_PI * h / cfg.heads;
      for (int l = 0; l < kLevels; ++l)
        for (int pt = 0; pt < cfg.points; ++pt) {
          const int i = ((h * kLevels + l) * cfg.points + pt) * 2;
          offB.v[i] = std::cos(a) * (pt + 1);
          offB.v[i + 1] = std::sin(a) * (pt + 1);
        }
    }
    store.make(p + ".off.b", offB);
    store.make(p + ".attn.w", Tensor::zeros({C, HLP}));
    store.make(p + ".attn.b", Tensor::zeros({HLP}));
    lin(p + ".val", C, C);
    lin(p + ".out", C, C);
  };

  for (int l = 0; l < cfg.encLayers; ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    ln(p + ".ln1", C);
    ln(p + ".ln2", C);
    deform(p);
    lin(p + ".ffn.fc1", C, cfg.ffnDim);
    lin(p + ".ffn.fc2", cfg.ffnDim, C);
  }

  // TAQI
  lin("taqi.score", C, 1);
  store.get("taqi.score.b")->val.v[0] = -std::log((1.0 - cfg.priorProb) / cfg.priorProb);
  lin("taqi.det", C, C);
  lin("taqi.box", C, 4);
  if (!cfg.useTAQI) {
    store.make("base.det", normalTensor({cfg.numQueries, C}, 0.0, 0.02, rng));
    store.make("base.rec", normalTensor({cfg.maxTextLen, C}, 0.0, 0.02, rng));
    Tensor anchors = uniformTensor({cfg.numQueries, 4}, 0.1, 0.9, rng);
    for (int i = 0; i < cfg.numQueries; ++i) {
      anchors.v[i * 4 + 2] = 0.15;
      anchors.v[i * 4 + 3] = 0.1;
    }
    for (auto& x : anchors.v) x = inverseSigmoid(x);
    store.make("base.anchor", anchors);
  }

  // denoising box embedding
  lin("dn.emb.fc1", 4, C);
  lin("dn.emb.fc2", C, C);

  // decoder
  store.make("dec.token_emb", normalTensor({cfg.maxTextLen + 1, C}, 0.0, 0.02, rng));
  store.make("vlc.w1", nn::xavier({C, U}, rng));
  store.make("vlc.w2", nn::xavier({U, C}, rng));
  lin("vlc.out", C, C);
  for (int l = 0; l < cfg.decLayers; ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    ln(p + ".vlc.ln", C);
    ln(p + ".intra.ln", C);
    ln(p + ".inter.ln", C);
    ln(p + ".cross.ln", C);
    ln(p + ".ffn.ln", C);
    for (const char* blk : {".intra", ".inter"}) {
      lin(p + blk + std::string(".q"), C, C);
      lin(p + blk + std::string(".k"), C, C);
      lin(p + blk + std::string(".v"), C, C);
      lin(p + blk + std::string(".o"), C, C);
    }
    deform(p + ".cross");
    lin(p + ".ffn.fc1", C, cfg.ffnDim);
    lin(p + ".ffn.fc2", cfg.ffnDim, C);
  }

  // shared prediction heads
  ln("head.norm", C);
  lin("head.cls", C, 1);
  store.get("head.cls.b")->val.v[0] = -std::log((1.0 - cfg.priorProb) / cfg.priorProb);
  lin("head.box", C, 4);
  lin("head.poly", C, 2 * geom::kPolygonPoints);
  Tensor polyB({2 * geom::kPolygonPoints});
  for (int k = 0; k < 8; ++k) {
    const double x = (k / 7.0 - 0.5) * 0.2;
    polyB.v[2 * k] = x;
    polyB.v[2 * k + 1] = -0.05;
    polyB.v[2 * (15 - k)] = x;
    polyB.v[2 * (15 - k) + 1] = 0.05;
  }
  store.get("head.poly.b")->val = polyB;
  lin("head.char", C, charset.numClasses());
}

// ---------------------------------------------------------------------------
// backbone + encoder

namespace {
int padTo(int x, int m) { return (x + m - 1) / m * m; }
}  // namespace

Tensor Model::sinusoidalPos(const MemoryMeta& meta) const {
  const int C = cfg.hidden;
  const int half = C / 2;
  Tensor pe({meta.tokens, C});
  for (int t = 0; t < meta.tokens; ++t) {
    const double x = meta.positions.v[2 * t] * 2 * M_PI;
    const double y = meta.positions.v[2 * t + 1] * 2 * M_PI;
    for (int i = 0; i < half / 2; ++i) {
      const double freq = std::pow(10000.0, 2.0 * i / half);
      pe.v[(int64_t)t * C + 2 * i] = std::sin(x / freq);
      pe.v[(int64_t)t * C + 2 * i + 1] = std::cos(x / freq);
      pe.v[(int64_t)t * C + half + 2 * i] = std::sin(y / freq);
      pe.v[(int64_t)t * C + half + 2 * i + 1] = std::cos(y / freq);
    }
  }
  return pe;
}

ad::Var Model::memoryPosEmbedding(const MemoryMeta& meta) {
  auto pe = constant(sinusoidalPos(meta));
  return add(pe, gatherRows(store.get("enc.level_emb"), meta.levelOf));
}

ad::Var Model::backboneLevels(const data::SpottingSample& sample, MemoryMeta& meta) {
  const int C = cfg.hidden;
  meta.validH = sample.height;
  meta.validW = sample.width;
  meta.paddedH = padTo(sample.height, 64);
  meta.paddedW = padTo(sample.width, 64);

  Tensor img({3, meta.paddedH, meta.paddedW});
  for (int i = 0; i < sample.height; ++i)
    for (int j = 0; j < sample.width; ++j)
      for (int c = 0; c < 3; ++c)
        img.v[((int64_t)c * meta.paddedH + i) * meta.paddedW + j] =
            sample.image[((size_t)i * sample.width + j) * 3 + c];
  auto x = constant(std::move(img));

  auto conv = [&](const ad::Var& in, const std::string& name) {
    return relu(conv2d(in, store.get(name + ".w"), store.get(name + ".b"), 2, 1));
  };
  auto s2 = conv(x, "bb.c0");
  auto s4 = conv(s2, "bb.c1");
  auto s8 = conv(s4, "bb.c2");
  auto s16 = conv(s8, "bb.c3");
  auto s32 = conv(s16, "bb.c4");
  auto s64 = conv(s32, "bb.rem");  // REM: stride-2 conv + norm (below) + relu
  const ad::Var raw[kLevels] = {s8, s16, s32, s64};

  std::vector<ad::Var> levelTokens;
  int tok = 0;
  std::vector<double> positions;
  for (int l = 0; l < kLevels; ++l) {
    const int H = raw[l]->val.shape[1], W = raw[l]->val.shape[2];
    const int Cl = raw[l]->val.shape[0];
    meta.levelH[l] = H;
    meta.levelW[l] = W;
    meta.levelStart[l] = tok;
    auto flat = transpose01(reshape(raw[l], {Cl, H * W}));  // [HW, Cl]
    auto proj = linear(flat, store.get("bb.proj" + std::to_string(l) + ".w"),
                       store.get("bb.proj" + std::to_string(l) + ".b"));
    proj = layerNorm(proj, store.get("bb.norm" + std::to_string(l) + ".g"),
                     store.get("bb.norm" + std::to_string(l) + ".b"));
    levelTokens.push_back(proj);
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        positions.push_back((j + 0.5) / W);
        positions.push_back((i + 0.5) / H);
        meta.levelOf.push_back(l);
      }
    tok += H * W;
  }
  meta.tokens = tok;
  meta.positions = Tensor({tok, 2}, std::move(positions));
  (void)C;
  return concatRows(levelTokens);
}

ad::Var Model::deformableAttention(const std::string& prefix, const ad::Var& queries,
                                   const Tensor& refBoxes, bool pointMode, const ad::Var& memory,
                                   const MemoryMeta& meta, const ad::Var* queryPos) {
  const int C = cfg.hidden;
  const int H = cfg.heads, L = kLevels, P = cfg.points;
  const int Dh = C / H;
  const int K = queries->val.rows();
  auto q = queryPos ? add(queries, *queryPos) : queries;

  auto off = linear(q, store.get(prefix + ".off.w"), store.get(prefix + ".off.b"));
  auto attnLogits = linear(q, store.get(prefix + ".attn.w"), store.get(prefix + ".attn.b"));
  auto val = linear(memory, store.get(prefix + ".val.w"), store.get(prefix + ".val.b"));

  std::vector<ad::Var> levelMaps(L);
  for (int l = 0; l < L; ++l)
    levelMaps[l] = reshape(sliceRows(val, meta.levelStart[l], meta.levelH[l] * meta.levelW[l]),
                           {meta.levelH[l], meta.levelW[l], C});

  std::vector<ad::Var> headOut;
  for (int h = 0; h < H; ++h) {
    auto aw = softmaxLastDim(sliceLastDim(attnLogits, h * L * P, L * P));  // [K, L*P]
    ad::Var acc;
    for (int l = 0; l < L; ++l) {
      auto offs = sliceLastDim(off, ((h * L) + l) * P * 2, P * 2);  // [K, 2P]
      Tensor scaleT({K, 2 * P});
      Tensor refT({K, 2 * P});
      for (int k = 0; k < K; ++k)
        for (int p = 0; p < P; ++p) {
          const double cx = refBoxes.v[(int64_t)k * 4];
          const double cy = refBoxes.v[(int64_t)k * 4 + 1];
          const double bw = refBoxes.v[(int64_t)k * 4 + 2];
          const double bh = refBoxes.v[(int64_t)k * 4 + 3];
          const int64_t i = (int64_t)k * 2 * P + 2 * p;
          refT.v[i] = cx;
          refT.v[i + 1] = cy;
          if (pointMode) {
            scaleT.v[i] = 1.0 / meta.levelW[l];
            scaleT.v[i + 1] = 1.0 / meta.levelH[l];
          } else {
            scaleT.v[i] = bw / (2.0 * P);
            scaleT.v[i + 1] = bh / (2.0 * P);
          }
        }
      auto loc = add(mul(offs, constant(std::move(scaleT))), constant(std::move(refT)));
      auto samp = bilinearSample(sliceLastDim(levelMaps[l], h * Dh, Dh),
                                 reshape(loc, {K * P, 2}));  // [K*P, Dh]
      auto w = sliceLastDim(aw, l * P, P);                   // [K, P]
      auto contrib = sumAxis1(mulBcastLastDim(reshape(samp, {K, P, Dh}), w));
      acc = acc ? add(acc, contrib) : contrib;
    }
    headOut.push_back(acc);
  }
  auto cat = concatLastDim(headOut);
  std::vector<int> outShape = queries->val.shape;
  auto out = linear(cat, store.get(prefix + ".out.w"), store.get(prefix + ".out.b"));
  return reshape(out, outShape);
}

ad::Var Model::encoderLayer(int layer, const ad::Var& tokens, const MemoryMeta& meta,
                            const ad::Var& pos) {
  const std::string p = "enc.l" + std::to_string(layer);
  auto h = layerNorm(tokens, store.get(p + ".ln1.g"), store.get(p + ".ln1.b"));
  const int M = meta.tokens;
  Tensor refs({M, 4});
  for (int t = 0; t < M; ++t) {
    refs.v[(int64_t)t * 4] = meta.positions.v[2 * t];
    refs.v[(int64_t)t * 4 + 1] = meta.positions.v[2 * t + 1];
  }
  auto q = add(h, pos);
  auto x = add(tokens, deformableAttention(p, q, refs, /*pointMode=*/true, h, meta));
  auto h2 = layerNorm(x, store.get(p + ".ln2.g"), store.get(p + ".ln2.b"));
  return add(x, ffn(p + ".ffn", h2));
}

ad::Var Model::ffn(const std::string& prefix, const ad::Var& x) {
  auto h = relu(linear(x, store.get(prefix + ".fc1.w"), store.get(prefix + ".fc1.b")));
  return linear(h, store.get(prefix + ".fc2.w"), store.get(prefix + ".fc2.b"));
}

EncoderOutput Model::extractPyramid(const data::SpottingSample& sample) {
  EncoderOutput out;
  out.memory = backboneLevels(sample, out.meta);
  return out;
}

EncoderOutput Model::encode(const data::SpottingSample& sample) {
  EncoderOutput out = extractPyramid(sample);
  auto pos = memoryPosEmbedding(out.meta);
  for (int l = 0; l < cfg.encLayers; ++l)
    out.memory = encoderLayer(l, out.memory, out.meta, pos);
  return out;
}

// ---------------------------------------------------------------------------
// TAQI

ad::Var Model::scoreMemory(const ad::Var& memory) {
  return linear(memory, store.get("taqi.score.w"), store.get("taqi.score.b"));
}

TaskAwareQueries Model::taskAwareInit(const EncoderOutput& enc, const ad::Var& scores) {
  const int M = enc.meta.tokens;
  const int N = cfg.numQueries;
  if (N > M) throw std::invalid_argument("numQueries exceeds memory token count");

  // top-N by score, ties broken by lower token index (stable sort)
  std::vector<int> order(M);
  for (int i = 0; i < M; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores->val.v[a] > scores->val.v[b];
  });
  std::vector<int> idx(order.begin(), order.begin() + N);

  TaskAwareQueries taq;
  taq.tokenIndices = idx;
  auto feat = gatherRows(enc.memory, idx);
  taq.detection = linear(feat, store.get("taqi.det.w"), store.get("taqi.det.b"));

  Tensor priorLogit({N, 4});
  for (int i = 0; i < N; ++i) {
    const int t = idx[i];
    const int l = enc.meta.levelOf[t];
    priorLogit.v[(int64_t)i * 4] = inverseSigmoid(enc.meta.positions.v[2 * t]);
    priorLogit.v[(int64_t)i * 4 + 1] = inverseSigmoid(enc.meta.positions.v[2 * t + 1]);
    priorLogit.v[(int64_t)i * 4 + 2] = inverseSigmoid(2.0 / enc.meta.levelW[l]);
    priorLogit.v[(int64_t)i * 4 + 3] = inverseSigmoid(2.0 / enc.meta.levelH[l]);
  }
  auto delta = linear(feat, store.get("taqi.box.w"), store.get("taqi.box.b"));
  taq.proposals = sigmoid(add(delta, constant(std::move(priorLogit))));
  taq.recognition = sampleRecognitionQueries(enc, taq.proposals);
  return taq;
}

ad::Var Model::sampleRecognitionQueries(const EncoderOutput& enc, const Tensor& boxes) {
  return sampleRecognitionQueries(enc, constant(boxes));
}

ad::Var Model::sampleRecognitionQueries(const EncoderOutput& enc, const ad::Var& boxes) {
  const int n = boxes->val.shape[0];
  const int T = cfg.maxTextLen, Hs = cfg.samplingRows, C = cfg.hidden;
  auto grid = reshape(sliceRows(enc.memory, enc.meta.levelStart[0],
                                enc.meta.levelH[0] * enc.meta.levelW[0]),
                      {enc.meta.levelH[0], enc.meta.levelW[0], C});
  // sample points are linear in (cx,cy,w,h): x = cx + w*((c+.5)/T - .5),
  // y = cy + h*((r+.5)/Hs - .5) — so gradients flow into the boxes too
  Tensor A({4, T * Hs * 2});
  int col = 0;
  for (int c = 0; c < T; ++c)
    for (int r = 0; r < Hs; ++r) {
      A.v[(int64_t)0 * T * Hs * 2 + col] = 1.0;
      A.v[(int64_t)2 * T * Hs * 2 + col] = (c + 0.5) / T - 0.5;
      A.v[(int64_t)1 * T * Hs * 2 + col + 1] = 1.0;
      A.v[(int64_t)3 * T * Hs * 2 + col + 1] = (r + 0.5) / Hs - 0.5;
      col += 2;
    }
  auto pts = reshape(matmul(boxes, constant(std::move(A))), {n * T * Hs, 2});
  auto samp = bilinearSample(grid, pts);  // [n*T*Hs, C]
  auto averaged = scale(sumAxis1(reshape(samp, {n * T, Hs, C})), 1.0 / Hs);
  return reshape(averaged, {n, T, C});
}

// ---------------------------------------------------------------------------
// decoder blocks

std::pair<ad::Var, ad::Var> Model::languageConversion(const ad::Var& S) {
  const auto& s = S->val.shape;  // [B, T+1, C]
  const int B = s[0], T1 = s[1], C = s[2];
  auto St = transpose01(S);  // [T+1, B, C]
  auto G = sliceRows(St, 0, 1);
  // keep the matmul rows instance-major so batch slots stay contiguous
  auto R = reshape(transpose01(sliceRows(St, 1, T1 - 1)), {B * (T1 - 1), C});
  auto P = softmaxLastDim(matmul(R, store.get("vlc.w1")));  // [B(T), U]
  auto Lr = transpose01(reshape(matmul(P, store.get("vlc.w2")), {B, T1 - 1, C}));
  auto L = transpose01(concatRows({G, Lr}));  // [B, T+1, C], token 0 = G
  return {L, P};
}

ad::Var Model::visionLanguageAttention(const ad::Var& S, const ad::Var& L, Tensor* saveWeights) {
  const int T1 = S->val.shape[1];
  Tensor mask({T1, T1});
  for (int i = 0; i < T1; ++i)
    mask.v[(int64_t)i * T1 + i] = -std::numeric_limits<double>::infinity();
  auto tokEmb = sliceRows(store.get("dec.token_emb"), 0, T1);
  auto q = addTileRows(S, tokEmb);
  auto k = addTileRows(L, tokEmb);
  auto f = multiheadAttention(q, k, L, cfg.heads, &mask, saveWeights);
  return reshape(linear(f, store.get("vlc.out.w"), store.get("vlc.out.b")), S->val.shape);
}

ad::Var Model::intraGroupAttention(int layer, const ad::Var& S) {
  const std::string p = "dec.l" + std::to_string(layer) + ".intra";
  const int T1 = S->val.shape[1];
  auto tokEmb = sliceRows(store.get("dec.token_emb"), 0, T1);
  auto withPos = addTileRows(S, tokEmb);
  auto q = linear(withPos, store.get(p + ".q.w"), store.get(p + ".q.b"));
  auto k = linear(withPos, store.get(p + ".k.w"), store.get(p + ".k.b"));
  auto v = linear(S, store.get(p + ".v.w"), store.get(p + ".v.b"));
  auto o = multiheadAttention(q, k, v, cfg.heads);
  return reshape(linear(o, store.get(p + ".o.w"), store.get(p + ".o.b")), S->val.shape);
}

ad::Var Model::interGroupAttention(int layer, const ad::Var& S, const Tensor* isolationMask) {
  const std::string p = "dec.l" + std::to_string(layer) + ".inter";
  // projections run in instance-major layout, attention in token-major
  auto q = transpose01(linear(S, store.get(p + ".q.w"), store.get(p + ".q.b")));
  auto k = transpose01(linear(S, store.get(p + ".k.w"), store.get(p + ".k.b")));
  auto v = transpose01(linear(S, store.get(p + ".v.w"), store.get(p + ".v.b")));
  auto o = transpose01(multiheadAttention(q, k, v, cfg.heads, isolationMask));
  return linear(o, store.get(p + ".o.w"), store.get(p + ".o.b"));
}

LayerPrediction Model::predictHeads(const ad::Var& S, const Tensor& refs) {
  const int B = S->val.shape[0], T1 = S->val.shape[1], C = S->val.shape[2];
  const int T = T1 - 1;
  auto h = layerNorm(S, store.get("head.norm.g"), store.get("head.norm.b"));
  auto ht = transpose01(h);  // [T+1, B, C]
  auto G = reshape(sliceRows(ht, 0, 1), {B, C});
  auto R = reshape(sliceRows(ht, 1, T), {T * B, C});

  LayerPrediction pred;
  pred.classLogits = linear(G, store.get("head.cls.w"), store.get("head.cls.b"));
  auto delta = linear(G, store.get("head.box.w"), store.get("head.box.b"));
  Tensor refLogit({B, 4});
  for (int64_t i = 0; i < refLogit.size(); ++i) refLogit.v[i] = inverseSigmoid(refs.v[i]);
  pred.boxes = sigmoid(add(delta, constant(std::move(refLogit))));

  auto offsets = linear(G, store.get("head.poly.w"), store.get("head.poly.b"));
  // spread (cx,cy) into the 32-vector layout via a constant matrix
  Tensor spread({4, 2 * geom::kPolygonPoints});
  for (int k = 0; k < geom::kPolygonPoints; ++k) {
    spread.v[0 * 2 * geom::kPolygonPoints + 2 * k] = 1.0;
    spread.v[1 * 2 * geom::kPolygonPoints + 2 * k + 1] = 1.0;
  }
  pred.polygons = add(offsets, matmul(pred.boxes, constant(std::move(spread))));

  auto Rslot = reshape(transpose01(reshape(R, {T, B, C})), {B * T, C});
  auto charLin = linear(Rslot, store.get("head.char.w"), store.get("head.char.b"));
  pred.charLogits = reshape(charLin, {B, T, charset.numClasses()});
  return pred;
}

// ---------------------------------------------------------------------------

ForwardResult Model::forward(const data::SpottingSample& sample, bool training,
                             const std::vector<data::Instance>* gts, std::mt19937_64* rng) {
  const int C = cfg.hidden, T = cfg.maxTextLen, N = cfg.numQueries;
  ForwardResult res;
  EncoderOutput enc = encode(sample);
  res.meta = enc.meta;
  res.encScores = scoreMemory(enc.memory);

  ad::Var G, R, proposals;
  if (cfg.useTAQI) {
    auto taq = taskAwareInit(enc, res.encScores);
    G = taq.detection;
    R = taq.recognition;
    proposals = taq.proposals;
    res.encTokens = taq.tokenIndices;
  } else {
    G = store.get("base.det");
    R = addTileRows(constant(Tensor::zeros({N, T, C})), store.get("base.rec"));
    proposals = sigmoid(store.get("base.anchor"));
  }
  res.encProposals = proposals;
  res.numMatching = N;

  // denoising groups, prepended along the instance axis
  std::unique_ptr<Tensor> isolationMask;
  const bool wantDenoise =
      training && cfg.denoise.enabled && gts != nullptr && !gts->empty() && rng != nullptr;
  if (wantDenoise) {
    std::vector<geom::Box> gtBoxes;
    for (const auto& g : *gts) gtBoxes.push_back(g.box);
    auto noise = makeNoiseBoxes(gtBoxes, *rng, cfg.denoise.shiftRatio, cfg.denoise.scaleRatio,
                                cfg.denoise.groups);
    const int Dn = (int)noise.size();
    res.numDenoise = Dn;
    Tensor nb({Dn, 4});
    for (int i = 0; i < Dn; ++i) {
      nb.v[(int64_t)i * 4] = noise[i].cx;
      nb.v[(int64_t)i * 4 + 1] = noise[i].cy;
      nb.v[(int64_t)i * 4 + 2] = noise[i].w;
      nb.v[(int64_t)i * 4 + 3] = noise[i].h;
      res.denoiseTargets.push_back(i % (int)gts->size());
    }
    auto nbVar = constant(nb);
    auto emb = relu(linear(nbVar, store.get("dn.emb.fc1.w"), store.get("dn.emb.fc1.b")));
    auto dnG = linear(emb, store.get("dn.emb.fc2.w"), store.get("dn.emb.fc2.b"));
    auto dnR = sampleRecognitionQueries(enc, nb);
    G = concatRows({dnG, G});
    R = concatRows({dnR, R});
    proposals = concatRows({nbVar, proposals});

    // instance-level isolation: matching queries see only matching queries,
    // each denoising group sees only itself
    const int NT = Dn + N;
    const int perGroup = (int)gts->size();
    isolationMask = std::make_unique<Tensor>(std::vector<int>{NT, NT});
    auto groupOf = [&](int i) { return i < Dn ? i / perGroup : -1; };
    for (int i = 0; i < NT; ++i)
      for (int j = 0; j < NT; ++j)
        if (groupOf(i) != groupOf(j))
          isolationMask->v[(int64_t)i * NT + j] = -std::numeric_limits<double>::infinity();
  }

  const int NT = res.numDenoise + N;
  // S = [G | R] along the token axis
  auto Sa = concatRows({reshape(G, {1, NT, C}), transpose01(R)});
  auto S = transpose01(Sa);  // [NT, T+1, C]

  Tensor refs = proposals->val;  // detached reference boxes
  for (int layer = 0; layer < cfg.decLayers; ++layer) {
    const std::string p = "dec.l" + std::to_string(layer);
    if (cfg.useVLC) {
      auto Sn = layerNorm(S, store.get(p + ".vlc.ln.g"), store.get(p + ".vlc.ln.b"));
      auto [L, Pmat] = languageConversion(Sn);
      S = add(S, visionLanguageAttention(Sn, L));
    }
    {
      auto Sn = layerNorm(S, store.get(p + ".intra.ln.g"), store.get(p + ".intra.ln.b"));
      S = add(S, intraGroupAttention(layer, Sn));
    }
    {
      auto Sn = layerNorm(S, store.get(p + ".inter.ln.g"), store.get(p + ".inter.ln.b"));
      S = add(S, interGroupAttention(layer, Sn, isolationMask.get()));
    }
    {
      auto Sn = layerNorm(S, store.get(p + ".cross.ln.g"), store.get(p + ".cross.ln.b"));
      Tensor refTok({NT * (cfg.maxTextLen + 1), 4});
      for (int i = 0; i < NT; ++i)
        for (int t = 0; t <= cfg.maxTextLen; ++t)
          for (int d = 0; d < 4; ++d)
            refTok.v[((int64_t)i * (cfg.maxTextLen + 1) + t) * 4 + d] = refs.v[(int64_t)i * 4 + d];
      auto q = reshape(Sn, {NT * (cfg.maxTextLen + 1), C});
      auto out = deformableAttention(p + ".cross", q, refTok, /*pointMode=*/false, enc.memory,
                                     enc.meta);
      S = add(S, reshape(out, S->val.shape));
    }
    {
      auto Sn = layerNorm(S, store.get(p + ".ffn.ln.g"), store.get(p + ".ffn.ln.b"));
      S = add(S, ffn(p + ".ffn", Sn));
    }
    auto pred = predictHeads(S, refs);
    refs = pred.boxes->val;  // iterative refinement, detached between layers
    res.layers.push_back(std::move(pred));
  }
  res.queries = S;
  return res;
}

std::vector<InstancePrediction> Model::infer(const data::SpottingSample& sample,
                                             double scoreThreshold) {
  if (scoreThreshold < 0) scoreThreshold = cfg.scoreThreshold;
  auto res = forward(sample, /*training=*/false);
  const auto& last = res.layers.back();
  std::vector<InstancePrediction> out;
  const int T = cfg.maxTextLen, U2 = charset.numClasses();
  for (int i = 0; i < res.numMatching; ++i) {
    const int slot = res.numDenoise + i;
    const double score = 1.0 / (1.0 + std::exp(-last.classLogits->val.v[slot]));
    if (score < scoreThreshold) continue;
    InstancePrediction p;
    p.score = score;
    p.box = {last.boxes->val.v[(int64_t)slot * 4], last.boxes->val.v[(int64_t)slot * 4 + 1],
             last.boxes->val.v[(int64_t)slot * 4 + 2], last.boxes->val.v[(int64_t)slot * 4 + 3]};
    for (int k = 0; k < geom::kPolygonPoints; ++k)
      p.polygon[k] = {last.polygons->val.v[(int64_t)slot * 32 + 2 * k],
                      last.polygons->val.v[(int64_t)slot * 32 + 2 * k + 1]};
    std::vector<int> ids;
    for (int t = 0; t < T; ++t) {
      const double* row = last.charLogits->val.v.data() + ((int64_t)slot * T + t) * U2;
      int best = 0;
      for (int u = 1; u < U2; ++u)
        if (row[u] > row[best]) best = u;
      ids.push_back(best);
    }
    p.transcript = data::decodeTranscript(ids, charset);
    out.push_back(std::move(p));
  }
  // duplicate suppression: keep the best-scoring instance of each overlapping
  // cluster (stable under the slot order for equal scores)
  std::stable_sort(out.begin(), out.end(),
                   [](const InstancePrediction& a, const InstancePrediction& b) {
                     return a.score > b.score;
                   });
  std::vector<InstancePrediction> kept;
  for (auto& p : out) {
    bool dup = false;
    for (const auto& k : kept)
      if (geom::polygonIou(p.polygon, k.polygon) > cfg.nmsIou) {
        dup = true;
        break;
      }
    if (!dup) kept.push_back(std::move(p));
  }
  return kept;
}

void Model::save(const std::string& path) const {
  nn::saveCheckpoint(path, cfg.toJson().dump(), store);
}

std::unique_ptr<Model> Model::load(const std::string& path) {
  nn::ParamStore probe;
  const std::string configJson = nn::loadCheckpoint(path, probe);
  auto cfg = ModelConfig::fromJson(json::parse(configJson));
  auto m = std::make_unique<Model>(cfg);
  // shape/name check against the freshly constructed model
  for (const auto& [name, p] : m->store.params) {
    if (!probe.has(name))
      throw std::runtime_error("checkpoint missing parameter " + name +
                               " (config mismatch: " + configJson + ")");
    if (probe.get(name)->val.shape != p->val.shape)
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    p->val = probe.get(name)->val;
  }
  for (const auto& [name, p] : probe.params)
    if (!m->store.has(name))
      throw std::runtime_error("checkpoint has extra parameter " + name + " (config mismatch)");
  return m;
}

}  // namespace spotter::model
