#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fcad/error.hpp"
#include "fcad/window.hpp"

namespace fcad {

class EvalError : public Error {
 public:
  explicit EvalError(const std::string& message) : Error("eval", message) {}
};

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Predicts anomalous iff score >= threshold.
ConfusionCounts confusion(std::span<const double> scores, std::span<const Label> labels, double threshold);

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Zero-denominator ratios are reported as 0.
PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c);
double accuracy(const ConfusionCounts& c);

/// Mann-Whitney formulation with average ranks for ties. Throws when only one
/// class is present.
double roc_auc(std::span<const double> scores, std::span<const Label> labels);

/// Accuracy over {windows tagged t} u {all normal windows} per attack type t
/// present in `tags`.
std::map<AttackType, double> per_attack_accuracy(std::span<const double> scores, std::span<const Label> labels,
                                                 std::span<const AttackType> tags, double threshold);

/// Threshold maximising F1 on (scores, labels). Placed midway between the
/// lowest flagged score and the next lower distinct score. Falls back to 0.5
/// when there are no positive labels.
double select_threshold(std::span<const double> scores, std::span<const Label> labels);

struct MetricsRecord {
  std::size_t context = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;
  double accuracy = 0.0;
  std::map<AttackType, double> per_attack;
  double threshold = 0.5;
  ConfusionCounts counts;
};

/// Full record for scored windows; AUC is omitted when a class is missing.
MetricsRecord score_metrics(std::span<const double> scores, std::span<const Window> windows, double threshold,
                            std::size_t context);

}  // namespace fcad
