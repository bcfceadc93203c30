#include "fcad/eval.hpp"

#include <algorithm>
#include <numeric>

namespace fcad {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw EvalError(std::string(what) + ": " + std::to_string(a) + " scores for " + std::to_string(b) + " labels");
  }
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionCounts confusion(std::span<const double> scores, std::span<const Label> labels, double threshold) {
  check_lengths(scores.size(), labels.size(), "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool flagged = scores[i] >= threshold;
    const bool positive = labels[i] == Label::anomalous;
    if (flagged && positive) ++c.tp;
    else if (flagged) ++c.fp;
    else if (positive) ++c.fn;
    else ++c.tn;
  }
  return c;
}

PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c) {
  PrecisionRecallF1 m;
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

double accuracy(const ConfusionCounts& c) { return ratio(c.tp + c.tn, c.total()); }

double roc_auc(std::span<const double> scores, std::span<const Label> labels) {
  check_lengths(scores.size(), labels.size(), "roc_auc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j share their average.
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == Label::anomalous) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) throw EvalError("roc_auc undefined: labels contain a single class");
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

std::map<AttackType, double> per_attack_accuracy(std::span<const double> scores, std::span<const Label> labels,
                                                 std::span<const AttackType> tags, double threshold) {
  check_lengths(scores.size(), labels.size(), "per_attack_accuracy");
  check_lengths(scores.size(), tags.size(), "per_attack_accuracy tags");
  std::size_t normals = 0;
  std::size_t normals_correct = 0;
  std::map<AttackType, std::pair<std::size_t, std::size_t>> tagged;  // type -> (count, correct)
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool flagged = scores[i] >= threshold;
    if (labels[i] == Label::normal) {
      ++normals;
      if (!flagged) ++normals_correct;
    } else if (tags[i] != AttackType::none) {
      auto& [count, correct] = tagged[tags[i]];
      ++count;
      if (flagged) ++correct;
    }
  }
  std::map<AttackType, double> out;
  for (const auto& [type, cc] : tagged) {
    out[type] = ratio(cc.second + normals_correct, cc.first + normals);
  }
  return out;
}

double select_threshold(std::span<const double> scores, std::span<const Label> labels) {
  check_lengths(scores.size(), labels.size(), "select_threshold");
  const auto positives = static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), Label::anomalous));
  if (positives == 0) return 0.5;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Sweep thresholds from high to low; each distinct score is a candidate.
  std::size_t tp = 0;
  std::size_t fp = 0;
  double best_f1 = -1.0;
  std::size_t best_end = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == Label::anomalous ? tp : fp) += 1;
      ++j;
    }
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(tp + fp + positives);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_end = j;
    }
    i = j;
  }
  const double chosen = scores[order[best_end - 1]];
  if (best_end == order.size()) return chosen;
  return 0.5 * (chosen + scores[order[best_end]]);
}

MetricsRecord score_metrics(std::span<const double> scores, std::span<const Window> windows, double threshold,
                            std::size_t context) {
  check_lengths(scores.size(), windows.size(), "score_metrics");
  std::vector<Label> labels;
  std::vector<AttackType> tags;
  labels.reserve(windows.size());
  tags.reserve(windows.size());
  for (const Window& w : windows) {
    labels.push_back(w.label);
    tags.push_back(w.attack);
  }
  MetricsRecord r;
  r.context = context;
  r.threshold = threshold;
  r.counts = confusion(scores, labels, threshold);
  const auto prf = precision_recall_f1(r.counts);
  r.precision = prf.precision;
  r.recall = prf.recall;
  r.f1 = prf.f1;
  r.accuracy = accuracy(r.counts);
  r.per_attack = per_attack_accuracy(scores, labels, tags, threshold);
  const bool has_both = r.counts.tp + r.counts.fn > 0 && r.counts.tn + r.counts.fp > 0;
  if (has_both) r.auc = roc_auc(scores, labels);
  return r;
}

}  // namespace fcad
