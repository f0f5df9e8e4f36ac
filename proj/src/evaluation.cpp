#include "spotter/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>

namespace spotter::eval {

using json = nlohmann::json;

std::string normalizeText(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::isspace((unsigned char)c)) continue;
    out.push_back((char)std::tolower((unsigned char)c));
  }
  return out;
}

int editDistance(const std::string& a, const std::string& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> row(m + 1);
  std::iota(row.begin(), row.end(), 0);
  for (size_t i = 1; i <= n; ++i) {
    int diag = row[0];
    row[0] = (int)i;
    for (size_t j = 1; j <= m; ++j) {
      const int cur = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = cur;
    }
  }
  return row[m];
}

std::string lexiconCorrect(const std::string& word, const std::vector<std::string>& lexicon) {
  if (lexicon.empty()) throw std::invalid_argument("lexicon correction with an empty lexicon");
  const std::string w = normalizeText(word);
  int bestDist = std::numeric_limits<int>::max();
  std::string best;
  for (const auto& entry : lexicon) {
    const std::string e = normalizeText(entry);
    const int d = editDistance(w, e);
    if (d < bestDist || (d == bestDist && e < best)) {
      bestDist = d;
      best = e;
    }
  }
  if (bestDist > (int)((w.size() + 1) / 2)) return w;
  return best;
}

ImageMatch matchImage(const ImagePreds& preds, const ImageGts& gts, double iouThreshold) {
  ImageMatch m;
  m.predToGt.assign(preds.size(), -1);
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return preds[a].score > preds[b].score; });
  std::vector<bool> taken(gts.size(), false);
  for (int pi : order) {
    int bestGt = -1;
    double bestIou = iouThreshold;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double ov = geom::polygonIou(preds[pi].polygon, gts[g].polygon);
      if (ov >= bestIou && (bestGt < 0 || ov > bestIou)) {
        bestIou = ov;
        bestGt = (int)g;
      }
    }
    if (bestGt >= 0) {
      taken[bestGt] = true;
      m.predToGt[pi] = gts[bestGt].ignore ? -2 : bestGt;
    }
  }
  return m;
}

namespace {

PRH makePRH(double tp, double numPreds, double numGts) {
  PRH r;
  r.precision = numPreds > 0 ? tp / numPreds : 0.0;
  r.recall = numGts > 0 ? tp / numGts : 0.0;
  r.hmean = (r.precision + r.recall) > 0
                ? 2 * r.precision * r.recall / (r.precision + r.recall)
                : 0.0;
  return r;
}

void checkSizes(const std::vector<ImagePreds>& preds, const std::vector<ImageGts>& gts) {
  if (preds.size() != gts.size())
    throw std::invalid_argument("evaluation: prediction/ground-truth image count mismatch");
}

}  // namespace

PRH detectionPRH(const std::vector<ImagePreds>& preds, const std::vector<ImageGts>& gts,
                 double iouThreshold) {
  checkSizes(preds, gts);
  double tp = 0, np = 0, ng = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    auto m = matchImage(preds[i], gts[i], iouThreshold);
    for (int a : m.predToGt) {
      if (a == -2) continue;  // matched an ignored region: dropped entirely
      np += 1;
      if (a >= 0) tp += 1;
    }
    for (const auto& g : gts[i])
      if (!g.ignore) ng += 1;
  }
  return makePRH(tp, np, ng);
}

PRH e2eHmean(const std::vector<ImagePreds>& preds, const std::vector<ImageGts>& gts,
             const std::vector<std::string>* lexicon, double iouThreshold) {
  checkSizes(preds, gts);
  if (lexicon && lexicon->empty())
    throw std::invalid_argument("e2e evaluation: lexicon mode with an empty lexicon");
  double tp = 0, np = 0, ng = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    auto m = matchImage(preds[i], gts[i], iouThreshold);
    for (size_t pi = 0; pi < preds[i].size(); ++pi) {
      const int a = m.predToGt[pi];
      if (a == -2) continue;
      np += 1;
      if (a < 0) continue;
      std::string text = normalizeText(preds[i][pi].transcript);
      if (lexicon) text = lexiconCorrect(text, *lexicon);
      if (text == normalizeText(gts[i][a].transcript)) tp += 1;
    }
    for (const auto& g : gts[i])
      if (!g.ignore) ng += 1;
  }
  return makePRH(tp, np, ng);
}

double oneMinusNed(const std::vector<ImagePreds>& preds, const std::vector<ImageGts>& gts,
                   double iouThreshold) {
  checkSizes(preds, gts);
  double sum = 0;
  double count = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    auto m = matchImage(preds[i], gts[i], iouThreshold);
    std::vector<bool> gtMatched(gts[i].size(), false);
    for (size_t pi = 0; pi < preds[i].size(); ++pi) {
      const int a = m.predToGt[pi];
      if (a == -2) continue;
      if (a < 0) {
        sum += 1.0;
        count += 1;
        continue;
      }
      gtMatched[a] = true;
      const std::string p = normalizeText(preds[i][pi].transcript);
      const std::string g = normalizeText(gts[i][a].transcript);
      const size_t len = std::max(p.size(), g.size());
      sum += len == 0 ? 0.0 : (double)editDistance(p, g) / (double)len;
      count += 1;
    }
    for (size_t g = 0; g < gts[i].size(); ++g)
      if (!gts[i][g].ignore && !gtMatched[g]) {
        sum += 1.0;
        count += 1;
      }
  }
  return count == 0 ? 1.0 : 1.0 - sum / count;
}

nlohmann::json EvalReport::toJson() const {
  auto prh = [](const PRH& p) {
    return json{{"precision", p.precision}, {"recall", p.recall}, {"hmean", p.hmean}};
  };
  json j;
  j["detection"] = prh(detection);
  j["e2e"] = {{"none", prh(e2eNone)}};
  if (e2eLexicon) j["e2e"]["lexicon"] = prh(*e2eLexicon);
  j["one_minus_ned"] = oneMinusNed;
  json ms = json::array();
  for (const auto& m : matches) ms.push_back(m.predToGt);
  j["matches"] = ms;
  return j;
}

EvalReport evaluate(const std::vector<ImagePreds>& preds, const std::vector<ImageGts>& gts,
                    const std::vector<std::string>* lexicon, double iouThreshold) {
  EvalReport r;
  r.detection = detectionPRH(preds, gts, iouThreshold);
  r.e2eNone = e2eHmean(preds, gts, nullptr, iouThreshold);
  if (lexicon) r.e2eLexicon = e2eHmean(preds, gts, lexicon, iouThreshold);
  r.oneMinusNed = oneMinusNed(preds, gts, iouThreshold);
  for (size_t i = 0; i < preds.size(); ++i)
    r.matches.push_back(matchImage(preds[i], gts[i], iouThreshold));
  return r;
}

void writePredictions(const std::string& path, const std::vector<ImagePreds>& preds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& img : preds) {
    json rec = json::array();
    for (const auto& p : img) {
      std::vector<double> poly;
      for (const auto& pt : p.polygon) {
        poly.push_back(pt.x);
        poly.push_back(pt.y);
      }
      rec.push_back({{"polygon", poly}, {"score", p.score}, {"transcript", p.transcript}});
    }
    out << rec.dump() << "\n";
  }
}

std::vector<ImagePreds> loadPredictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<ImagePreds> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    ImagePreds img;
    for (const auto& p : rec) {
      PredRecord r;
      const auto& poly = p.at("polygon");
      if (poly.size() != 2 * geom::kPolygonPoints)
        throw std::runtime_error("prediction polygon must have 32 coordinates");
      for (int k = 0; k < geom::kPolygonPoints; ++k)
        r.polygon[k] = {poly[2 * k].get<double>(), poly[2 * k + 1].get<double>()};
      r.score = p.at("score").get<double>();
      r.transcript = p.at("transcript").get<std::string>();
      img.push_back(std::move(r));
    }
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<std::string> loadLexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  return words;
}

}  // namespace spotter::eval
