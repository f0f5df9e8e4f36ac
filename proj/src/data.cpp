#include "spotter/data.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace spotter::data {

int Charset::idOf(char c) const {
  auto pos = chars.find(c);
  if (pos == std::string::npos)
    throw std::invalid_argument(std::string("character not in charset: '") + c + "'");
  return (int)pos;
}

std::vector<int> encodeTranscript(const std::string& s, const Charset& cs, int maxLen) {
  if ((int)s.size() > maxLen - 1)
    throw std::invalid_argument("transcript too long for T=" + std::to_string(maxLen) + ": " + s);
  std::vector<int> ids;
  ids.reserve(maxLen);
  for (char c : s) ids.push_back(cs.idOf(c));
  ids.push_back(cs.eosId());
  while ((int)ids.size() < maxLen) ids.push_back(cs.padId());
  return ids;
}

std::string decodeTranscript(const std::vector<int>& ids, const Charset& cs) {
  std::string out;
  for (int id : ids) {
    if (id == cs.eosId() || id == cs.padId()) break;
    if (id >= 0 && id < cs.size()) out.push_back(cs.chars[id]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stroke font: per-character line segments in a unit box, y down.

namespace {

using Seg = std::array<double, 4>;  // x1,y1,x2,y2

// 7-segment style skeleton positions.
const Seg T{0, 0, 1, 0}, TL{0, 0, 0, 0.5}, TR{1, 0, 1, 0.5}, M{0, 0.5, 1, 0.5};
const Seg BL{0, 0.5, 0, 1}, BR{1, 0.5, 1, 1}, B{0, 1, 1, 1}, V{0.5, 0, 0.5, 1};

const std::map<char, std::vector<Seg>>& glyphTable() {
  static const std::map<char, std::vector<Seg>> table = {
      {'a', {{0, 1, 0.5, 0}, {0.5, 0, 1, 1}, {0.25, 0.55, 0.75, 0.55}}},
      {'b', {TL, BL, T, M, B, BR}},
      {'c', {T, TL, BL, B}},
      {'d', {TR, BR, M, B, {0, 0.5, 0, 1}}},
      {'e', {T, TL, M, BL, B}},
      {'f', {T, TL, M, BL}},
      {'g', {T, TL, BL, B, BR, {0.6, 0.6, 1, 0.6}}},
      {'h', {TL, BL, TR, BR, M}},
      {'i', {T, B, V}},
      {'j', {TR, BR, B, BL}},
      {'k', {TL, BL, {0, 0.5, 1, 0}, {0, 0.5, 1, 1}}},
      {'l', {TL, BL, B}},
      {'m', {TL, BL, TR, BR, {0, 0, 0.5, 0.5}, {0.5, 0.5, 1, 0}}},
      {'n', {TL, BL, TR, BR, {0, 0, 1, 1}}},
      {'o', {T, TL, TR, BL, BR, B}},
      {'p', {T, TL, TR, M, BL}},
      {'q', {T, TL, TR, BL, BR, B, {0.6, 0.6, 1.1, 1.1}}},
      {'r', {T, TL, TR, M, BL, {0.3, 0.5, 1, 1}}},
      {'s', {T, TL, M, BR, B, {0.35, 0.25, 0.65, 0.25}}},
      {'t', {T, V}},
      {'u', {TL, BL, TR, BR, B}},
      {'v', {{0, 0, 0.5, 1}, {1, 0, 0.5, 1}}},
      {'w', {TL, BL, TR, BR, {0, 1, 0.5, 0.5}, {0.5, 0.5, 1, 1}}},
      {'x', {{0, 0, 1, 1}, {1, 0, 0, 1}}},
      {'y', {{0, 0, 0.5, 0.5}, {1, 0, 0.5, 0.5}, {0.5, 0.5, 0.5, 1}}},
      {'z', {T, {1, 0, 0, 1}, B}},
      {'0', {T, TL, TR, BL, BR, B, {1, 0.15, 0, 0.85}}},
      {'1', {TR, BR, {0.6, 0.15, 1, 0}}},
      {'2', {T, TR, M, BL, B}},
      {'3', {T, TR, M, BR, B}},
      {'4', {TL, M, TR, BR}},
      {'5', {T, TL, M, BR, B}},
      {'6', {T, TL, M, BL, BR, B}},
      {'7', {T, TR, BR}},
      {'8', {T, TL, TR, M, BL, BR, B}},
      {'9', {T, TL, TR, M, BR, B}},
  };
  return table;
}

struct Vec2 {
  double x, y;
};
Vec2 tangentOf(double a) { return {std::cos(a), std::sin(a)}; }
Vec2 upOf(double a) { return {std::sin(a), -std::cos(a)}; }

// Baseline path: straight line or circular arc, arc length parameterized.
struct WordPath {
  Vec2 p0;
  double theta;       // tangent angle at s=0
  double curvature;   // signed 1/R, 0 = straight

  Vec2 pos(double s) const {
    if (curvature == 0.0) {
      const Vec2 t = tangentOf(theta);
      return {p0.x + t.x * s, p0.y + t.y * s};
    }
    const double R = 1.0 / std::fabs(curvature);
    const double sc = curvature > 0 ? 1.0 : -1.0;
    const Vec2 u0 = upOf(theta);
    const Vec2 c{p0.x + sc * R * u0.x, p0.y + sc * R * u0.y};
    const Vec2 u = upOf(angle(s));
    return {c.x - sc * R * u.x, c.y - sc * R * u.y};
  }
  double angle(double s) const { return theta - curvature * s; }
};

}  // namespace

SpottingSample generateSample(std::mt19937_64& rng, const GenConfig& cfg) {
  const int H = cfg.height, W = cfg.width;
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // Textured background: base color, smooth gradient, per-pixel noise.
  cv::Mat img(H, W, CV_8UC3);
  double base[3], gradX[3], gradY[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 70 + 120 * u01(rng);
    gradX[c] = (u01(rng) - 0.5) * 60;
    gradY[c] = (u01(rng) - 0.5) * 60;
  }
  std::uniform_real_distribution<double> noise(-10.0, 10.0);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      auto& px = img.at<cv::Vec3b>(i, j);
      for (int c = 0; c < 3; ++c) {
        const double v = base[c] + gradX[c] * j / W + gradY[c] * i / H + noise(rng);
        px[c] = (uchar)std::clamp(v, 0.0, 255.0);
      }
    }

  SpottingSample sample;
  sample.height = H;
  sample.width = W;

  std::uniform_int_distribution<int> instCount(cfg.minInstances, cfg.maxInstances);
  std::uniform_int_distribution<int> wordLen(cfg.minLen, cfg.maxLen);
  std::uniform_int_distribution<int> charPick(0, cfg.charset.size() - 1);
  const int wanted = instCount(rng);

  for (int inst = 0; inst < wanted; ++inst) {
    const int len = wordLen(rng);
    std::string word;
    for (int i = 0; i < len; ++i) word.push_back(cfg.charset.chars[charPick(rng)]);

    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      const double h = (0.10 + 0.12 * u01(rng)) * std::min(H, W);
      const double cw = 0.62 * h, adv = 0.85 * h;
      const double total = (len - 1) * adv + cw;

      WordPath path;
      path.theta = (u01(rng) * 2 - 1) * cfg.maxSkewDeg * M_PI / 180.0;
      path.curvature = 0;
      if (u01(rng) < cfg.maxCurvature) {
        const double bend = (0.3 + 0.6 * u01(rng)) * (u01(rng) < 0.5 ? 1 : -1);
        path.curvature = bend / total;
      }
      path.p0 = {h + u01(rng) * (W - total - 2 * h), h + u01(rng) * (H - 2.5 * h)};

      // polygon: 8 top points left->right, 8 bottom right->left
      const double pad = 0.15 * h;
      geom::Polygon16 poly;
      bool inBounds = true;
      for (int k = 0; k < 8; ++k) {
        const double s = -pad + (total + 2 * pad) * k / 7.0;
        const Vec2 p = path.pos(s);
        const Vec2 up = upOf(path.angle(s));
        poly[k] = {p.x + up.x * (h + pad), p.y + up.y * (h + pad)};
        poly[15 - k] = {p.x - up.x * pad, p.y - up.y * pad};
      }
      for (const auto& pt : poly)
        if (pt.x < 2 || pt.x > W - 2 || pt.y < 2 || pt.y > H - 2) inBounds = false;
      if (!inBounds) continue;

      geom::CornerBox bounds = geom::polygonBounds(geom::toRing(poly));
      bool overlaps = false;
      for (const auto& other : sample.instances) {
        geom::CornerBox ob = geom::boxToCorners(other.box);
        geom::CornerBox pb{bounds.x0 / W, bounds.y0 / H, bounds.x1 / W, bounds.y1 / H};
        if (geom::iou(ob, pb) > 0.02) overlaps = true;
      }
      if (overlaps) continue;

      // ink color with contrast against the base
      const bool dark = base[0] + base[1] + base[2] > 3 * 128;
      cv::Scalar ink = dark ? cv::Scalar(10 + 40 * u01(rng), 10 + 40 * u01(rng), 10 + 40 * u01(rng))
                            : cv::Scalar(200 + 55 * u01(rng), 200 + 55 * u01(rng), 200 + 55 * u01(rng));
      const int thick = std::max(1, (int)std::lround(h / 9));
      for (int i = 0; i < len; ++i) {
        const double s0 = i * adv;
        const Vec2 origin = path.pos(s0);
        const double a = path.angle(s0);
        const Vec2 t = tangentOf(a), up = upOf(a);
        auto mapPt = [&](double gx, double gy) {
          const double lx = gx * cw, ly = (1.0 - gy) * h;
          return cv::Point2d(origin.x + t.x * lx + up.x * ly, origin.y + t.y * lx + up.y * ly);
        };
        for (const auto& seg : glyphTable().at(word[i])) {
          cv::line(img, mapPt(seg[0], seg[1]), mapPt(seg[2], seg[3]), ink, thick, cv::LINE_AA);
        }
      }

      Instance instance;
      for (int k = 0; k < 16; ++k) instance.polygon[k] = {poly[k].x / W, poly[k].y / H};
      instance.box = geom::cornersToBox(geom::polygonBounds(geom::toRing(instance.polygon)));
      instance.transcript = word;
      sample.instances.push_back(instance);
      placed = true;
    }
  }

  sample.image.resize((size_t)H * W * 3);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      const auto& px = img.at<cv::Vec3b>(i, j);
      for (int c = 0; c < 3; ++c) sample.image[((size_t)i * W + j) * 3 + c] = px[c] / 255.0f;
    }
  return sample;
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

cv::Mat toMat(const SpottingSample& s) {
  cv::Mat m(s.height, s.width, CV_32FC3);
  std::memcpy(m.data, s.image.data(), s.image.size() * sizeof(float));
  return m;
}

void fromMat(const cv::Mat& m, SpottingSample& s) {
  s.height = m.rows;
  s.width = m.cols;
  s.image.resize((size_t)m.rows * m.cols * 3);
  if (m.isContinuous()) std::memcpy(s.image.data(), m.data, s.image.size() * sizeof(float));
  else
    for (int i = 0; i < m.rows; ++i)
      std::memcpy(s.image.data() + (size_t)i * m.cols * 3, m.ptr<float>(i),
                  (size_t)m.cols * 3 * sizeof(float));
}

}  // namespace

AugmentConfig paperAugmentConfig() {
  AugmentConfig cfg;
  for (int s = 640; s <= 896; s += 32) cfg.shorterSides.push_back(s);
  cfg.maxLongSide = 1600;
  cfg.maxRotationDeg = 45.0;
  cfg.crop = true;
  return cfg;
}

SpottingSample augment(const SpottingSample& in, std::mt19937_64& rng, const AugmentConfig& cfg) {
  SpottingSample s = in;
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // 1) random resize: shorter side from the configured set, long side capped.
  if (!cfg.shorterSides.empty()) {
    std::uniform_int_distribution<int> pick(0, (int)cfg.shorterSides.size() - 1);
    const int target = cfg.shorterSides[pick(rng)];
    double scale = (double)target / std::min(s.width, s.height);
    if (std::max(s.width, s.height) * scale > cfg.maxLongSide)
      scale = (double)cfg.maxLongSide / std::max(s.width, s.height);
    const int nw = std::max(1, (int)std::lround(s.width * scale));
    const int nh = std::max(1, (int)std::lround(s.height * scale));
    if (nw != s.width || nh != s.height) {
      cv::Mat m = toMat(s), out;
      cv::resize(m, out, cv::Size(nw, nh), 0, 0, cv::INTER_LINEAR);
      fromMat(out, s);  // normalized coordinates are scale-invariant
    }
  }

  // 2) text-preserving crop.
  if (cfg.crop && !s.instances.empty()) {
    double px0 = 1, py0 = 1, px1 = 0, py1 = 0;
    for (const auto& inst : s.instances)
      for (const auto& p : inst.polygon) {
        px0 = std::min(px0, p.x);
        py0 = std::min(py0, p.y);
        px1 = std::max(px1, p.x);
        py1 = std::max(py1, p.y);
      }
    if (px0 >= 0 && py0 >= 0 && px1 <= 1 && py1 <= 1) {
      const int bx0 = (int)std::floor(px0 * s.width), by0 = (int)std::floor(py0 * s.height);
      const int bx1 = (int)std::ceil(px1 * s.width), by1 = (int)std::ceil(py1 * s.height);
      std::uniform_int_distribution<int> dx0(0, std::max(0, bx0)), dy0(0, std::max(0, by0));
      std::uniform_int_distribution<int> dx1(std::min(bx1, s.width), s.width);
      std::uniform_int_distribution<int> dy1(std::min(by1, s.height), s.height);
      const int cx0 = dx0(rng), cy0 = dy0(rng), cx1 = dx1(rng), cy1 = dy1(rng);
      if (cx1 - cx0 >= 32 && cy1 - cy0 >= 32) {
        cv::Mat m = toMat(s);
        cv::Mat roi = m(cv::Rect(cx0, cy0, cx1 - cx0, cy1 - cy0)).clone();
        const double ow = s.width, oh = s.height;
        fromMat(roi, s);
        for (auto& inst : s.instances) {
          for (auto& p : inst.polygon) {
            p.x = (p.x * ow - cx0) / (cx1 - cx0);
            p.y = (p.y * oh - cy0) / (cy1 - cy0);
          }
          inst.box = geom::cornersToBox(geom::polygonBounds(geom::toRing(inst.polygon)));
        }
      }
    }
  }

  // 3) random rotation about the image center; polygons transformed exactly.
  if (cfg.maxRotationDeg > 0) {
    const double deg = (u01(rng) * 2 - 1) * cfg.maxRotationDeg;
    const cv::Point2f center(s.width / 2.0f, s.height / 2.0f);
    cv::Mat rot = cv::getRotationMatrix2D(center, deg, 1.0);
    cv::Mat m = toMat(s), out;
    cv::warpAffine(m, out, rot, m.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
    fromMat(out, s);
    const double* r = rot.ptr<double>(0);
    const double* r2 = rot.ptr<double>(1);
    for (auto& inst : s.instances) {
      for (auto& p : inst.polygon) {
        const double x = p.x * s.width, y = p.y * s.height;
        p.x = (r[0] * x + r[1] * y + r[2]) / s.width;
        p.y = (r2[0] * x + r2[1] * y + r2[2]) / s.height;
      }
      inst.box = geom::cornersToBox(geom::polygonBounds(geom::toRing(inst.polygon)));
    }
  }

  return s;
}

// ---------------------------------------------------------------------------
// Dataset IO

void writeImagePng(const std::string& path, const SpottingSample& s) {
  cv::Mat m(s.height, s.width, CV_8UC3);
  for (int i = 0; i < s.height; ++i)
    for (int j = 0; j < s.width; ++j) {
      auto& px = m.at<cv::Vec3b>(i, j);
      for (int c = 0; c < 3; ++c)
        px[c] = (uchar)std::clamp(
            std::lround(s.image[((size_t)i * s.width + j) * 3 + c] * 255.0f), 0l, 255l);
    }
  if (!cv::imwrite(path, m)) throw std::runtime_error("failed to write " + path);
}

void writeDataset(const std::string& dir, const std::vector<SpottingSample>& samples,
                  bool overwrite) {
  fs::path root(dir);
  if (fs::exists(root) && !fs::is_empty(root) && !overwrite)
    throw std::runtime_error("output directory not empty (use overwrite): " + dir);
  fs::create_directories(root);

  std::ofstream ann(root / "annotations.jsonl");
  char name[32];
  for (size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "img_%05zu.png", i);
    writeImagePng((root / name).string(), samples[i]);
    json rec;
    rec["image"] = name;
    rec["width"] = samples[i].width;
    rec["height"] = samples[i].height;
    json insts = json::array();
    for (const auto& inst : samples[i].instances) {
      json j;
      json poly = json::array();
      for (const auto& p : inst.polygon) {
        poly.push_back(p.x);
        poly.push_back(p.y);
      }
      j["polygon"] = poly;
      j["box"] = {inst.box.cx, inst.box.cy, inst.box.w, inst.box.h};
      j["transcript"] = inst.transcript;
      j["ignore"] = inst.ignore;
      insts.push_back(j);
    }
    rec["instances"] = insts;
    ann << rec.dump() << "\n";
  }
}

std::vector<SpottingSample> loadDataset(const std::string& dir) {
  fs::path root(dir);
  std::ifstream ann(root / "annotations.jsonl");
  if (!ann) throw std::runtime_error("cannot open " + (root / "annotations.jsonl").string());
  std::vector<SpottingSample> out;
  std::string line;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    SpottingSample s;
    cv::Mat img = cv::imread((root / rec["image"].get<std::string>()).string(), cv::IMREAD_COLOR);
    if (img.empty()) throw std::runtime_error("cannot read image " + rec["image"].get<std::string>());
    s.height = img.rows;
    s.width = img.cols;
    s.image.resize((size_t)img.rows * img.cols * 3);
    for (int i = 0; i < img.rows; ++i)
      for (int j = 0; j < img.cols; ++j) {
        const auto& px = img.at<cv::Vec3b>(i, j);
        for (int c = 0; c < 3; ++c) s.image[((size_t)i * img.cols + j) * 3 + c] = px[c] / 255.0f;
      }
    for (const auto& j : rec["instances"]) {
      Instance inst;
      const auto& poly = j["polygon"];
      for (int k = 0; k < 16; ++k) inst.polygon[k] = {poly[2 * k].get<double>(), poly[2 * k + 1].get<double>()};
      inst.box = {j["box"][0].get<double>(), j["box"][1].get<double>(), j["box"][2].get<double>(),
                  j["box"][3].get<double>()};
      inst.transcript = j["transcript"].get<std::string>();
      inst.ignore = j.value("ignore", false);
      s.instances.push_back(inst);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace spotter::data
