#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fcad/autodiff.hpp"
#include "fcad/error.hpp"
#include "fcad/window.hpp"

namespace fcad {

class ModelError : public Error {
 public:
  explicit ModelError(const std::string& message) : Error("model", message) {}
};

/// MLP shape: input -> hidden... (relu) -> embedding (linear) -> classes.
struct LayerSpec {
  std::size_t input = 0;
  std::vector<std::size_t> hidden = {64, 32};
  std::size_t embedding = 16;
  std::size_t classes = 2;

  void validate() const;
  std::uint64_t fingerprint() const;
  std::string describe() const;
  bool operator==(const LayerSpec&) const = default;
};

struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const TensorSlot&) const = default;
};

/// Shape table for a spec: per layer `layerK.weight` (fan_in x fan_out) and
/// `layerK.bias` (1 x fan_out); the last pair is `classifier.*`.
std::vector<TensorSlot> layout_for(const LayerSpec& spec);

/// Flat parameter vector plus its shape table. Immutable once built.
class ModelParams {
 public:
  ModelParams(LayerSpec spec, std::vector<double> flat);

  static ModelParams from_tensors(const LayerSpec& spec, const std::vector<Tensor>& tensors);

  const LayerSpec& spec() const { return spec_; }
  std::uint64_t fingerprint() const { return fingerprint_; }
  const std::vector<TensorSlot>& layout() const { return layout_; }
  std::span<const double> flat() const { return flat_; }
  std::size_t size() const { return flat_.size(); }

  Tensor tensor(std::size_t slot) const;
  std::vector<Tensor> unflatten() const;

  /// Same layout, new values.
  ModelParams with_flat(std::vector<double> flat) const;

  bool operator==(const ModelParams& other) const;

 private:
  LayerSpec spec_;
  std::vector<TensorSlot> layout_;
  std::uint64_t fingerprint_ = 0;
  std::vector<double> flat_;
};

/// Glorot-uniform weights, zero biases. Deterministic given (spec, seed).
ModelParams init_params(const LayerSpec& spec, std::uint64_t seed);

/// Parameter tensors entered into a graph, in layout order.
struct BoundModel {
  LayerSpec spec;
  std::vector<Expr> tensors;
};

/// Enters params as parameter leaves (trainable) or constants.
BoundModel bind(Graph& graph, const ModelParams& params, bool trainable);

/// Embeddings for a batch (rows x input) through the encoder; the norm guard
/// is applied to the output rows.
Expr encode(const BoundModel& model, const Expr& input);
Expr classify(const BoundModel& model, const Expr& embeddings);

/// Parameter gradients of a bound model, flattened in layout order.
std::vector<double> flatten_gradients(const BoundModel& model, const Gradients& grads);

/// Stacks window features into a batch matrix, checking the width.
Tensor stack_features(std::span<const Window> windows, std::size_t width);

struct EmbeddingBatch {
  Tensor embeddings;
  std::vector<Label> labels;
};

EmbeddingBatch encode(const ModelParams& params, std::span<const Window> windows);
Tensor classify(const ModelParams& params, const EmbeddingBatch& batch);

/// P(anomalous) per window from the softmax of the classifier logits.
std::vector<double> anomaly_scores(const ModelParams& params, std::span<const Window> windows);

inline constexpr char kCheckpointMagic[4] = {'F', 'C', 'A', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);
/// Loads and rejects a checkpoint whose fingerprint differs from `expected`.
ModelParams load_checkpoint(const std::filesystem::path& path, const LayerSpec& expected);

}  // namespace fcad
