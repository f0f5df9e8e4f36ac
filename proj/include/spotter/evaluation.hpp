#pragma once

#include <nlohmann/json.hpp>
#include <optional>

#include "spotter/data.hpp"

namespace spotter::eval {

struct PredRecord {
  geom::Polygon16 polygon;
  double score = 0;
  std::string transcript;
};

using ImagePreds = std::vector<PredRecord>;
using ImageGts = std::vector<data::Instance>;

struct PRH {
  double precision = 0, recall = 0, hmean = 0;
};

// prediction index -> gt index; -1 unmatched, -2 matched an ignored gt
// (removed from both counts)
struct ImageMatch {
  std::vector<int> predToGt;
};

std::string normalizeText(const std::string& s);  // case-fold, strip whitespace
int editDistance(const std::string& a, const std::string& b);

// Nearest lexicon word by edit distance (ties -> lexicographically smallest);
// keeps the raw word when the best distance exceeds ceil(|word|/2).
std::string lexiconCorrect(const std::string& word, const std::vector<std::string>& lexicon);

// Greedy one-to-one matching by descending confidence; each prediction takes
// the unmatched gt of highest polygon IoU >= threshold.
ImageMatch matchImage(const ImagePreds& preds, const ImageGts& gts, double iouThreshold);

PRH detectionPRH(const std::vector<ImagePreds>& preds, const std::vector<ImageGts>& gts,
                 double iouThreshold = 0.5);
PRH e2eHmean(const std::vector<ImagePreds>& preds, const std::vector<ImageGts>& gts,
             const std::vector<std::string>* lexicon = nullptr, double iouThreshold = 0.5);
double oneMinusNed(const std::vector<ImagePreds>& preds, const std::vector<ImageGts>& gts,
                   double iouThreshold = 0.5);

struct EvalReport {
  PRH detection;
  PRH e2eNone;
  std::optional<PRH> e2eLexicon;
  double oneMinusNed = 0;
  std::vector<ImageMatch> matches;

  nlohmann::json toJson() const;
};

EvalReport evaluate(const std::vector<ImagePreds>& preds, const std::vector<ImageGts>& gts,
                    const std::vector<std::string>* lexicon = nullptr,
                    double iouThreshold = 0.5);

// JSON-lines, one record per image: [{"polygon": [32 floats], "score": s,
// "transcript": t}, ...]
void writePredictions(const std::string& path, const std::vector<ImagePreds>& preds);
std::vector<ImagePreds> loadPredictions(const std::string& path);

// one word per line
std::vector<std::string> loadLexicon(const std::string& path);

}  // namespace spotter::eval
