#include "fcad/objective.hpp"

#include <cmath>

namespace fcad {

void ObjectiveConfig::validate() const {
  if (!(lambda_class >= 0.0)) throw ObjectiveError("lambda_class must be >= 0");
  if (!(lambda_prox >= 0.0)) throw ObjectiveError("lambda_prox must be >= 0");
  if (!(learning_rate > 0.0)) throw ObjectiveError("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ObjectiveError("momentum must be in [0, 1)");
  if (batch_size < 1) throw ObjectiveError("batch_size must be >= 1");
  if (!(clip_norm > 0.0)) throw ObjectiveError("clip_norm must be > 0");
}

Expr cross_entropy(const Expr& logits, std::span<const Label> labels) {
  const Eigen::Index n = logits.rows();
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw ObjectiveError("cross_entropy: " + std::to_string(n) + " logit rows for " + std::to_string(labels.size()) +
                         " labels");
  }
  if (n == 0) throw ObjectiveError("cross_entropy on an empty batch");
  if (logits.cols() != 2) throw ObjectiveError("cross_entropy expects 2 logit columns");
  std::vector<std::pair<Eigen::Index, Eigen::Index>> picked;
  picked.reserve(labels.size());
  for (Eigen::Index i = 0; i < n; ++i) picked.emplace_back(i, label_value(labels[static_cast<std::size_t>(i)]));

  Expr shift = row_max_detached(logits);
  Expr lse = log(row_sum(exp(logits - shift))) + shift;
  return scale(sum(lse - gather(logits, std::move(picked))), 1.0 / static_cast<double>(n));
}

double cross_entropy(const Tensor& logits, std::span<const Label> labels) {
  Graph g;
  return cross_entropy(g.constant(logits), labels).scalar();
}

Expr proximal_term(const BoundModel& local, const ModelParams& global, double lambda) {
  if (local.spec.fingerprint() != global.fingerprint()) {
    throw ObjectiveError("proximal_term: local and global fingerprints differ");
  }
  if (local.tensors.empty()) throw ObjectiveError("proximal_term: model has no tensors");
  Graph& g = local.tensors.front().graph();
  std::optional<Expr> acc;
  for (std::size_t i = 0; i < local.tensors.size(); ++i) {
    Expr d = l2norm_squared(local.tensors[i] - g.constant(global.tensor(i)));
    acc = acc ? *acc + d : d;
  }
  return scale(*acc, lambda);
}

double proximal_term(const ModelParams& local, const ModelParams& global, double lambda) {
  Graph g;
  return proximal_term(bind(g, local, false), global, lambda).scalar();
}

Expr total_loss(const std::optional<Expr>& contrastive, const Expr& classification,
                const std::optional<Expr>& proximal, double lambda_class) {
  Expr total = scale(classification, lambda_class);
  if (contrastive) total = *contrastive + total;
  if (proximal) total = total + *proximal;
  return total;
}

double clip_global_norm(std::vector<double>& grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (double& g : grads) g *= f;
  }
  return norm;
}

StepResult sgd_step(const ModelParams& params, std::span<const double> grads, std::span<const double> velocity,
                    const ObjectiveConfig& cfg) {
  if (grads.size() != params.size() || velocity.size() != params.size()) {
    throw ObjectiveError("sgd_step: length mismatch (params " + std::to_string(params.size()) + ", grads " +
                         std::to_string(grads.size()) + ", velocity " + std::to_string(velocity.size()) + ")");
  }
  std::vector<double> v(velocity.begin(), velocity.end());
  std::vector<double> theta(params.flat().begin(), params.flat().end());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    v[i] = cfg.momentum * v[i] + grads[i];
    theta[i] -= cfg.learning_rate * v[i];
  }
  return {params.with_flat(std::move(theta)), std::move(v)};
}

}  // namespace fcad
