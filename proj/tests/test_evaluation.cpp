#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "spotter/evaluation.hpp"

using namespace spotter;
using namespace spotter::eval;

namespace {

geom::Polygon16 squarePoly(double x0, double y0, double x1, double y1) {
  geom::Polygon16 p;
  for (int k = 0; k < 8; ++k) {
    const double t = k / 7.0;
    p[k] = {x0 + t * (x1 - x0), y0};
    p[15 - k] = {x0 + t * (x1 - x0), y1};
  }
  return p;
}

data::Instance gtAt(double x0, double y0, double x1, double y1, const std::string& text,
                    bool ignore = false) {
  data::Instance g;
  g.polygon = squarePoly(x0, y0, x1, y1);
  g.box = {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
  g.transcript = text;
  g.ignore = ignore;
  return g;
}

PredRecord predAt(double x0, double y0, double x1, double y1, const std::string& text,
                  double score = 0.9) {
  return {squarePoly(x0, y0, x1, y1), score, text};
}

}  // namespace

TEST_CASE("edit distance hand values") {
  CHECK(editDistance("", "") == 0);
  CHECK(editDistance("abc", "abc") == 0);
  CHECK(editDistance("abc", "abd") == 1);
  CHECK(editDistance("kitten", "sitting") == 3);
  CHECK(editDistance("", "xyz") == 3);
}

TEST_CASE("text normalization folds case and strips whitespace") {
  CHECK(normalizeText("Hello World") == "helloworld");
  CHECK(normalizeText("  AbC\t1 ") == "abc1");
}

TEST_CASE("identical predictions give perfect detection scores") {
  std::vector<ImageGts> gts = {{gtAt(0.1, 0.1, 0.4, 0.3, "abc"), gtAt(0.5, 0.5, 0.9, 0.7, "de")}};
  std::vector<ImagePreds> preds = {
      {predAt(0.1, 0.1, 0.4, 0.3, "abc"), predAt(0.5, 0.5, 0.9, 0.7, "de")}};
  auto prh = detectionPRH(preds, gts);
  CHECK(prh.precision == 1.0);
  CHECK(prh.recall == 1.0);
  CHECK(prh.hmean == 1.0);
}

TEST_CASE("no predictions: zero-by-convention precision, zero recall") {
  std::vector<ImageGts> gts = {{gtAt(0.1, 0.1, 0.4, 0.3, "abc")}};
  std::vector<ImagePreds> preds = {{}};
  auto prh = detectionPRH(preds, gts);
  CHECK(prh.precision == 0.0);
  CHECK(prh.recall == 0.0);
  CHECK(prh.hmean == 0.0);
}

TEST_CASE("two of three predictions match two gts: P=2/3 R=1 H=0.8") {
  std::vector<ImageGts> gts = {{gtAt(0.1, 0.1, 0.4, 0.3, "abc"), gtAt(0.5, 0.5, 0.9, 0.7, "de")}};
  std::vector<ImagePreds> preds = {{predAt(0.1, 0.1, 0.4, 0.3, "abc"),
                                    predAt(0.5, 0.5, 0.9, 0.7, "de"),
                                    predAt(0.0, 0.6, 0.2, 0.9, "zz")}};
  auto prh = detectionPRH(preds, gts);
  CHECK(prh.precision == doctest::Approx(2.0 / 3));
  CHECK(prh.recall == doctest::Approx(1.0));
  CHECK(prh.hmean == doctest::Approx(0.8));
}

TEST_CASE("predictions over ignored regions vanish from both counts") {
  std::vector<ImageGts> gts = {
      {gtAt(0.1, 0.1, 0.4, 0.3, "abc"), gtAt(0.5, 0.5, 0.9, 0.7, "##", true)}};
  std::vector<ImagePreds> preds = {
      {predAt(0.1, 0.1, 0.4, 0.3, "abc"), predAt(0.5, 0.5, 0.9, 0.7, "xx")}};
  auto prh = detectionPRH(preds, gts);
  CHECK(prh.precision == 1.0);  // the ignored-region prediction is not an FP
  CHECK(prh.recall == 1.0);
}

TEST_CASE("higher-confidence prediction claims the contested gt") {
  std::vector<ImageGts> gts = {{gtAt(0.1, 0.1, 0.5, 0.5, "abc")}};
  std::vector<ImagePreds> preds = {
      {predAt(0.1, 0.1, 0.5, 0.5, "low", 0.3), predAt(0.12, 0.1, 0.5, 0.5, "high", 0.9)}};
  auto m = matchImage(preds[0], gts[0], 0.5);
  CHECK(m.predToGt[1] == 0);
  CHECK(m.predToGt[0] == -1);
}

TEST_CASE("end-to-end requires transcript equality after case folding") {
  std::vector<ImageGts> gts = {{gtAt(0.1, 0.1, 0.4, 0.3, "Hello")}};
  std::vector<ImagePreds> okPreds = {{predAt(0.1, 0.1, 0.4, 0.3, "hello")}};
  std::vector<ImagePreds> badPreds = {{predAt(0.1, 0.1, 0.4, 0.3, "hel1o")}};
  CHECK(e2eHmean(okPreds, gts).hmean == 1.0);
  CHECK(e2eHmean(badPreds, gts).hmean == 0.0);
}

TEST_CASE("lexicon correction rescues near-miss transcripts") {
  std::vector<ImageGts> gts = {{gtAt(0.1, 0.1, 0.4, 0.3, "hello")}};
  std::vector<ImagePreds> preds = {{predAt(0.1, 0.1, 0.4, 0.3, "hel1o")}};
  std::vector<std::string> lex = {"hello", "world"};
  CHECK(e2eHmean(preds, gts, &lex).hmean == 1.0);
  CHECK(e2eHmean(preds, gts).hmean == 0.0);
}

TEST_CASE("lexicon ties break lexicographically, far misses keep the raw word") {
  std::vector<std::string> lex = {"bat", "cat", "art"};
  CHECK(lexiconCorrect("aat", lex) == "art");  // art/bat/cat all at distance 1 -> smallest
  CHECK(lexiconCorrect("zzzzzzzz", lex) == "zzzzzzzz");  // distance 8 > ceil(8/2)
  CHECK_THROWS_AS(lexiconCorrect("a", {}), std::invalid_argument);
  std::vector<ImageGts> gts = {{gtAt(0.1, 0.1, 0.4, 0.3, "x")}};
  std::vector<ImagePreds> preds = {{predAt(0.1, 0.1, 0.4, 0.3, "x")}};
  std::vector<std::string> empty;
  CHECK_THROWS_AS(e2eHmean(preds, gts, &empty), std::invalid_argument);
}

TEST_CASE("1-NED hand values") {
  std::vector<ImageGts> gts = {{gtAt(0.1, 0.1, 0.4, 0.3, "abc")}};
  std::vector<ImagePreds> exact = {{predAt(0.1, 0.1, 0.4, 0.3, "abc")}};
  CHECK(oneMinusNed(exact, gts) == 1.0);
  std::vector<ImagePreds> off = {{predAt(0.1, 0.1, 0.4, 0.3, "abd")}};
  CHECK(oneMinusNed(off, gts) == doctest::Approx(2.0 / 3));
  std::vector<ImagePreds> none = {{}};
  CHECK(oneMinusNed(none, gts) == 0.0);
}

TEST_CASE("e2e hmean never exceeds detection hmean") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.05, 0.6);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ImageGts> gts(1);
    std::vector<ImagePreds> preds(1);
    const int G = std::uniform_int_distribution<int>(1, 4)(rng);
    const int P = std::uniform_int_distribution<int>(0, 5)(rng);
    const std::string words[] = {"abc", "def", "gg", "hij"};
    for (int g = 0; g < G; ++g) {
      const double x = u(rng), y = u(rng);
      gts[0].push_back(gtAt(x, y, x + 0.25, y + 0.15, words[g % 4]));
    }
    for (int p = 0; p < P; ++p) {
      const double x = u(rng), y = u(rng);
      preds[0].push_back(predAt(x, y, x + 0.25, y + 0.15, words[(p + 1) % 4],
                                std::uniform_real_distribution<double>(0.1, 1.0)(rng)));
    }
    CHECK(e2eHmean(preds, gts).hmean <= detectionPRH(preds, gts).hmean + 1e-12);
  }
}

TEST_CASE("prediction files round trip and reproduce the report bit-for-bit") {
  std::vector<ImageGts> gts = {{gtAt(0.1, 0.1, 0.4, 0.3, "abc"), gtAt(0.5, 0.5, 0.9, 0.7, "de")},
                               {gtAt(0.2, 0.2, 0.6, 0.4, "xyz")}};
  std::vector<ImagePreds> preds = {
      {predAt(0.1, 0.1, 0.4, 0.3, "abc", 0.77), predAt(0.52, 0.5, 0.9, 0.72, "dd", 0.4)},
      {predAt(0.2, 0.2, 0.61, 0.4, "xyz", 0.9)}};
  const std::string path = "/tmp/spotter_preds_test.jsonl";
  writePredictions(path, preds);
  auto loaded = loadPredictions(path);
  REQUIRE(loaded.size() == preds.size());
  auto r1 = evaluate(preds, gts);
  auto r2 = evaluate(loaded, gts);
  CHECK(r1.toJson() == r2.toJson());
  CHECK(r1.detection.hmean == r2.detection.hmean);
  std::filesystem::remove(path);
}

TEST_CASE("lexicon file loading skips blank lines and CR endings") {
  const std::string path = "/tmp/spotter_lex_test.txt";
  {
    std::ofstream out(path);
    out << "hello\r\n\nworld\n";
  }
  auto lex = loadLexicon(path);
  REQUIRE(lex.size() == 2);
  CHECK(lex[0] == "hello");
  CHECK(lex[1] == "world");
  std::filesystem::remove(path);
}
