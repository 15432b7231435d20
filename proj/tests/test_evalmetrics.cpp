#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "gocnet/error.hpp"
#include "gocnet/evalmetrics.hpp"
#include "gocnet/rng.hpp"
#include "support.hpp"

using namespace gocnet;
using namespace gocnet::testing;

namespace {

ScoreSet make(std::vector<double> pos, std::vector<double> neg) {
  ScoreSet s;
  for (double p : pos) s.add(p, 1);
  for (double n : neg) s.add(n, 0);
  return s;
}

// Pairwise Mann-Whitney count over the same denominator as the sweep.
double brute_auc(const ScoreSet& s) {
  std::uint64_t twice = 0, P = 0, N = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.labels[i] != 1) continue;
    ++P;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s.labels[j] != 0) continue;
      twice += s.scores[i] > s.scores[j] ? 2 : (s.scores[i] == s.scores[j] ? 1 : 0);
    }
  }
  for (int l : s.labels) N += l == 0;
  return static_cast<double>(twice) / (2.0 * static_cast<double>(P) * static_cast<double>(N));
}

// Scores on a coarse grid so ties occur; both classes forced present.
ScoreSet random_set(Rng& rng, std::size_t n, int grid) {
  std::uniform_int_distribution<int> q(0, grid);
  std::bernoulli_distribution b(0.4);
  ScoreSet s;
  for (std::size_t i = 0; i < n; ++i) s.add(q(rng) / static_cast<double>(grid), b(rng) ? 1 : 0);
  s.labels[0] = 1;
  s.labels[1] = 0;
  return s;
}

ScoreSet mapped(const ScoreSet& s, double (*f)(double)) {
  ScoreSet out = s;
  for (double& v : out.scores) v = f(v);
  return out;
}

}  // namespace

TEST_CASE("accuracy: hand cases and direct count") {
  CHECK(accuracy(make({0.9, 0.7}, {0.1, 0.3})) == 1.0);
  ScoreSet s;
  s.add(0.4, 1);
  s.add(0.6, 0);
  CHECK(accuracy(s) == 0.0);
  // Threshold is inclusive.
  CHECK(accuracy(make({0.5}, {0.49999})) == 1.0);

  Rng rng(3);
  const ScoreSet r = random_set(rng, 1000, 997);
  std::size_t count = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const bool predicted_fake = r.scores[i] >= 0.5;
    if (predicted_fake == (r.labels[i] == 1)) ++count;
  }
  CHECK(accuracy(r) == static_cast<double>(count) / 1000.0);
  CHECK_THROWS_AS(accuracy(ScoreSet{}), UsageError);
}

TEST_CASE("auc: hand cases") {
  CHECK(auc(make({0.9, 0.8}, {0.1, 0.2})) == 1.0);
  CHECK(auc(make({0.8, 0.4}, {0.6, 0.2})) == 0.75);
  CHECK(auc(make({0.3, 0.3, 0.3}, {0.3, 0.3})) == 0.5);
  CHECK(auc(make({0.1}, {0.9})) == 0.0);
  CHECK_THROWS_AS(auc(make({0.1, 0.2}, {})), UsageError);
  CHECK_THROWS_AS(auc(make({}, {0.1})), UsageError);
}

TEST_CASE("auc: sweep equals pairwise brute force exactly") {
  Rng rng(17);
  std::uniform_int_distribution<std::size_t> len(2, 1000);
  std::uniform_int_distribution<int> grids(1, 400);
  for (int t = 0; t < 150; ++t) {
    const ScoreSet s = random_set(rng, len(rng), grids(rng));
    CAPTURE(t);
    CHECK(auc(s) == brute_auc(s));
  }
}

TEST_CASE("auc and eer: invariant under strictly increasing maps") {
  Rng rng(5);
  double (*maps[])(double) = {[](double x) { return std::exp(3.0 * x); },
                              [](double x) { return x * x * x + x; },
                              [](double x) { return std::log1p(x) - 7.0; }};
  for (int t = 0; t < 40; ++t) {
    const ScoreSet s = random_set(rng, 300, 100);
    const double a = auc(s);
    const double e = eer(s).eer;
    for (auto f : maps) {
      const ScoreSet m = mapped(s, f);
      CHECK(auc(m) == a);
      CHECK(eer(m).eer == doctest::Approx(e).epsilon(1e-12));
    }
  }
}

TEST_CASE("auc: negated scores complement on tie-free sets") {
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    ScoreSet s;
    for (int i = 0; i < 200; ++i) s.add(u(rng), i % 3 == 0 ? 1 : 0);
    const ScoreSet neg = mapped(s, [](double x) { return -x; });
    CHECK(auc(s) + auc(neg) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("eer: hand cases") {
  CHECK(eer(make({0.9, 0.8}, {0.1, 0.2})).eer == 0.0);
  CHECK(eer(make({0.8, 0.4}, {0.6, 0.2})).eer == 0.5);
  CHECK_THROWS_AS(eer(make({0.1}, {})), UsageError);

  // Inverting both scores and labels leaves the EER unchanged.
  ScoreSet inv;
  for (double p : {0.8, 0.4}) inv.add(1.0 - p, 0);
  for (double n : {0.6, 0.2}) inv.add(1.0 - n, 1);
  CHECK(eer(inv).eer == 0.5);
}

TEST_CASE("eer: relabeling symmetry and sweep bound") {
  Rng rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 60; ++t) {
    ScoreSet s;
    const int n = 20 + t * 7;
    for (int i = 0; i < n; ++i) s.add(u(rng), i % 2);
    ScoreSet inv = s;
    for (std::size_t i = 0; i < inv.size(); ++i) {
      inv.scores[i] = -inv.scores[i];
      inv.labels[i] = 1 - inv.labels[i];
    }
    const double e = eer(s).eer;
    CHECK(eer(inv).eer == doctest::Approx(e).epsilon(1e-12));

    double best = 1.0;
    for (const auto& p : roc_points(s)) best = std::min(best, std::max(p.far, p.frr));
    CHECK(e <= best + 1.0 / n);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
  }
}

TEST_CASE("roc points are monotone and bracket the sweep") {
  Rng rng(4);
  const ScoreSet s = random_set(rng, 500, 50);
  const auto pts = roc_points(s);
  REQUIRE(pts.size() >= 2);
  CHECK(pts.front().far == 1.0);
  CHECK(pts.front().frr == 0.0);
  CHECK(std::isinf(pts.back().threshold));
  CHECK(pts.back().far == 0.0);
  CHECK(pts.back().frr == 1.0);
  for (std::size_t k = 1; k < pts.size(); ++k) {
    CHECK(pts[k].threshold > pts[k - 1].threshold);
    CHECK(pts[k].far <= pts[k - 1].far);
    CHECK(pts[k].frr >= pts[k - 1].frr);
  }
}

TEST_CASE("evaluate: report contents and serialization") {
  const ScoreSet s = make({0.8, 0.4}, {0.6, 0.2});
  const EvalReport r = evaluate(s);
  CHECK(r.acc == 0.5);
  CHECK(r.auc == 0.75);
  CHECK(r.eer == 0.5);
  CHECK(r.positives == 2);
  CHECK(r.negatives == 2);
  CHECK(r.correct == 2);

  const auto j = nlohmann::json::parse(report_json(r));
  for (const char* k : {"acc", "auc", "eer", "eer_threshold", "positives", "negatives", "correct", "roc"}) {
    CHECK(j.contains(k));
  }
  CHECK(j["auc"].get<double>() == 0.75);
  CHECK(j["roc"].size() == r.roc.size());
  CHECK(j["roc"].back()["threshold"].is_null());

  const std::string svg = roc_svg(r);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
}

TEST_CASE("validation rejects malformed sets") {
  ScoreSet s = make({0.5}, {0.2});
  s.scores[0] = std::nan("");
  CHECK_THROWS_AS(evaluate(s), UsageError);
  ScoreSet bad = make({0.5}, {0.2});
  bad.labels[1] = 2;
  CHECK_THROWS_AS(auc(bad), UsageError);
  ScoreSet uneven = make({0.5}, {0.2});
  uneven.labels.pop_back();
  CHECK_THROWS_AS(accuracy(uneven), UsageError);
}

TEST_CASE("score csv: parsing and errors name the line") {
  const auto dir = scratch_dir("evalmetrics_csv");
  const auto good = dir / "good.csv";
  std::ofstream(good) << "score,label\n0.8,1\r\n\n0.25,0\n";
  const ScoreSet s = load_scores_csv(good);
  REQUIRE(s.size() == 2);
  CHECK(s.scores[0] == 0.8);
  CHECK(s.labels[0] == 1);
  CHECK(s.scores[1] == 0.25);
  CHECK(s.labels[1] == 0);

  const auto bad = dir / "bad.csv";
  std::ofstream(bad) << "0.8,1\n0.3,yes\n";
  try {
    load_scores_csv(bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  const auto junk = dir / "junk.csv";
  std::ofstream(junk) << "0.8x,1\n";
  CHECK_THROWS_AS(load_scores_csv(junk), DataError);
  CHECK_THROWS_AS(load_scores_csv(dir / "absent.csv"), DataError);
}
