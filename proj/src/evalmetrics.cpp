#include "gocnet/evalmetrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "gocnet/error.hpp"

namespace gocnet {

void validate(const ScoreSet& set, bool need_both) {
  if (set.scores.empty()) throw UsageError("score set is empty");
  if (set.scores.size() != set.labels.size()) throw UsageError("score set: scores and labels differ in length");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!std::isfinite(set.scores[i])) throw UsageError("score set: non-finite score at index " + std::to_string(i));
    if (set.labels[i] != 0 && set.labels[i] != 1) throw UsageError("score set: label must be 0 or 1");
    pos += static_cast<std::size_t>(set.labels[i]);
  }
  if (need_both && (pos == 0 || pos == set.size())) {
    throw UsageError("score set needs at least one positive and one negative sample");
  }
}

double accuracy(const ScoreSet& set, double threshold) {
  validate(set, false);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) correct += (set.scores[i] >= threshold) == (set.labels[i] == 1);
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

namespace {

struct Group {
  double score;
  std::uint64_t pos = 0;
  std::uint64_t neg = 0;
};

// Distinct scores ascending with per-class counts.
std::vector<Group> grouped(const ScoreSet& set) {
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return set.scores[a] < set.scores[b]; });
  std::vector<Group> groups;
  for (std::size_t i : order) {
    if (groups.empty() || groups.back().score != set.scores[i]) groups.push_back({set.scores[i]});
    (set.labels[i] == 1 ? groups.back().pos : groups.back().neg) += 1;
  }
  return groups;
}

}  // namespace

double auc(const ScoreSet& set) {
  validate(set, true);
  const auto groups = grouped(set);
  // Each trapezoid contributes (neg below)*pos + pos*neg/2; kept doubled so the sum is an integer.
  std::uint64_t twice_area = 0;
  std::uint64_t neg_below = 0;
  std::uint64_t P = 0;
  for (const auto& g : groups) {
    twice_area += 2 * neg_below * g.pos + g.pos * g.neg;
    neg_below += g.neg;
    P += g.pos;
  }
  return static_cast<double>(twice_area) / (2.0 * static_cast<double>(P) * static_cast<double>(neg_below));
}

std::vector<RocPoint> roc_points(const ScoreSet& set) {
  validate(set, true);
  const auto groups = grouped(set);
  std::uint64_t P = 0, N = 0;
  for (const auto& g : groups) {
    P += g.pos;
    N += g.neg;
  }
  std::vector<RocPoint> pts;
  std::uint64_t neg_at_or_above = N;
  std::uint64_t pos_below = 0;
  for (const auto& g : groups) {
    pts.push_back({g.score, static_cast<double>(neg_at_or_above) / N, static_cast<double>(pos_below) / P});
    neg_at_or_above -= g.neg;
    pos_below += g.pos;
  }
  pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return pts;
}

EerResult eer(const ScoreSet& set) {
  const auto pts = roc_points(set);
  double prev_d = pts[0].far - pts[0].frr;
  if (prev_d <= 0.0) return {pts[0].far, pts[0].threshold};
  for (std::size_t k = 1; k < pts.size(); ++k) {
    const double d = pts[k].far - pts[k].frr;
    if (d > 0.0) {
      prev_d = d;
      continue;
    }
    if (d == 0.0) return {pts[k].far, pts[k].threshold};
    const double lambda = prev_d / (prev_d - d);
    const auto& a = pts[k - 1];
    const auto& b = pts[k];
    const double rate = a.far + lambda * (b.far - a.far);
    const double thr = std::isfinite(b.threshold) ? a.threshold + lambda * (b.threshold - a.threshold) : a.threshold;
    return {rate, thr};
  }
  return {pts.back().far, pts.back().threshold};  // unreachable: the last point has FAR - FRR = -1
}

EvalReport evaluate(const ScoreSet& set) {
  validate(set, true);
  EvalReport r;
  r.acc = accuracy(set);
  r.auc = auc(set);
  const auto e = eer(set);
  r.eer = e.eer;
  r.eer_threshold = e.threshold;
  for (std::size_t i = 0; i < set.size(); ++i) {
    (set.labels[i] == 1 ? r.positives : r.negatives) += 1;
    r.correct += (set.scores[i] >= 0.5) == (set.labels[i] == 1);
  }
  r.roc = roc_points(set);
  return r;
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["acc"] = report.acc;
  j["auc"] = report.auc;
  j["eer"] = report.eer;
  j["eer_threshold"] = report.eer_threshold;
  j["positives"] = report.positives;
  j["negatives"] = report.negatives;
  j["correct"] = report.correct;
  auto roc = nlohmann::json::array();
  for (const auto& p : report.roc) {
    // JSON has no infinity; the final sweep point is written with a null threshold.
    roc.push_back({{"threshold", std::isfinite(p.threshold) ? nlohmann::json(p.threshold) : nlohmann::json(nullptr)},
                   {"far", p.far},
                   {"frr", p.frr}});
  }
  j["roc"] = roc;
  return j.dump(2);
}

std::string roc_svg(const EvalReport& report) {
  constexpr double size = 400.0;
  constexpr double margin = 40.0;
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  const double W = size + 2 * margin;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << W << "\">\n";
  os << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << size << "\" height=\"" << size
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << margin << "\" y1=\"" << margin + size << "\" x2=\"" << margin + size << "\" y2=\"" << margin
     << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  // Sweep points run from (1,1) down to (0,0); draw them in that order.
  for (const auto& p : report.roc) {
    const double x = margin + p.far * size;
    const double y = margin + p.frr * size;  // TPR = 1 - FRR, SVG y grows downward
    os << x << ',' << y << ' ';
  }
  os << "\"/>\n";
  os << "<text x=\"" << margin << "\" y=\"" << margin - 12 << "\" font-family=\"monospace\" font-size=\"13\">"
     << "AUC " << report.auc << "  EER " << report.eer << "  ACC " << report.acc << "</text>\n";
  os << "<text x=\"" << margin + size / 2 - 15 << "\" y=\"" << W - 10
     << "\" font-family=\"monospace\" font-size=\"12\">FAR</text>\n";
  os << "<text x=\"6\" y=\"" << margin + size / 2 << "\" font-family=\"monospace\" font-size=\"12\">TPR</text>\n";
  os << "</svg>\n";
  return os.str();
}

ScoreSet load_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open score file: " + path.string());
  ScoreSet set;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line == "score,label") continue;
    const auto comma = line.find(',');
    auto fail = [&] { throw DataError(path.string() + " line " + std::to_string(lineno) + ": expected score,label"); };
    if (comma == std::string::npos) fail();
    try {
      std::size_t used = 0;
      const std::string s = line.substr(0, comma);
      const double score = std::stod(s, &used);
      if (used != s.size()) fail();
      const std::string l = line.substr(comma + 1);
      if (l != "0" && l != "1") fail();
      set.add(score, l == "1" ? 1 : 0);
    } catch (const std::logic_error&) {
      fail();
    }
  }
  return set;
}

}  // namespace gocnet
