#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace gocnet {

/// Scores are fake-class probabilities; label 1 is fake (the positive class).
struct ScoreSet {
  std::vector<double> scores;
  std::vector<int> labels;

  void add(double score, int label) {
    scores.push_back(score);
    labels.push_back(label);
  }
  std::size_t size() const { return scores.size(); }
};

/// Throws UsageError for an empty set, mismatched lengths, non-finite scores
/// or labels outside {0,1}; with need_both, also when a class is missing.
void validate(const ScoreSet& set, bool need_both);

/// Fraction of samples with (score >= threshold) == (label == 1).
double accuracy(const ScoreSet& set, double threshold = 0.5);

/// Area under the ROC curve by a threshold sweep with trapezoids over tied
/// groups; equal to P(pos > neg) + P(tie)/2.
double auc(const ScoreSet& set);

struct RocPoint {
  double threshold;
  double far;  // negatives with score >= threshold
  double frr;  // positives with score < threshold
};

/// Sweep points at every distinct score (ascending) plus +infinity.
std::vector<RocPoint> roc_points(const ScoreSet& set);

struct EerResult {
  double eer;
  double threshold;
};

/// FAR = FRR crossing, linearly interpolated between the two adjacent sweep
/// points where FAR - FRR changes sign.
EerResult eer(const ScoreSet& set);

struct EvalReport {
  double acc = 0.0;
  double auc = 0.0;
  double eer = 0.0;
  double eer_threshold = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t correct = 0;
  std::vector<RocPoint> roc;
};

EvalReport evaluate(const ScoreSet& set);

/// JSON object with acc, auc, eer, eer_threshold, counts and ROC points.
std::string report_json(const EvalReport& report);

/// ROC curve (TPR = 1 - FRR against FAR) as a standalone SVG document.
std::string roc_svg(const EvalReport& report);

/// Reads `score,label` rows; a `score,label` header is optional.
ScoreSet load_scores_csv(const std::filesystem::path& path);

}  // namespace gocnet
