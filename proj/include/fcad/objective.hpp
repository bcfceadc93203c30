#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fcad/autodiff.hpp"
#include "fcad/error.hpp"
#include "fcad/model.hpp"
#include "fcad/window.hpp"

namespace fcad {

class ObjectiveError : public Error {
 public:
  explicit ObjectiveError(const std::string& message) : Error("objective", message) {}
};

struct ObjectiveConfig {
  double lambda_class = 1.0;
  double lambda_prox = 0.1;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t local_epochs = 4;
  std::size_t batch_size = 32;
  /// Global-norm gradient clip applied before every step.
  double clip_norm = 1.0;

  void validate() const;
};

/// Mean over rows of -log softmax(logits)[label], log-sum-exp stabilised by
/// the row max.
Expr cross_entropy(const Expr& logits, std::span<const Label> labels);
double cross_entropy(const Tensor& logits, std::span<const Label> labels);

/// lambda * |theta_local - theta_global|^2; theta_global enters as constants.
Expr proximal_term(const BoundModel& local, const ModelParams& global, double lambda);
double proximal_term(const ModelParams& local, const ModelParams& global, double lambda);

/// contrastive + lambda_class * classification + proximal. Absent terms are
/// left out of the graph entirely.
Expr total_loss(const std::optional<Expr>& contrastive, const Expr& classification,
                const std::optional<Expr>& proximal, double lambda_class);

/// Scales grads in place so their L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_global_norm(std::vector<double>& grads, double max_norm);

struct StepResult {
  ModelParams params;
  std::vector<double> velocity;
};

/// v <- momentum * v + g; theta <- theta - lr * v.
StepResult sgd_step(const ModelParams& params, std::span<const double> grads, std::span<const double> velocity,
                    const ObjectiveConfig& cfg);

}  // namespace fcad
