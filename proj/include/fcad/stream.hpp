#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fcad/contrastive.hpp"
#include "fcad/eval.hpp"
#include "fcad/federation.hpp"
#include "fcad/model.hpp"
#include "fcad/objective.hpp"

namespace fcad {

struct StreamConfig {
  FederationConfig federation;
  ObjectiveConfig objective;
  ContrastiveConfig contrastive;
  /// Federated rounds run on each chunk after it has been scored.
  std::size_t rounds_per_chunk = 1;
  /// Fixed decision threshold; a stream has no validation split to tune on.
  double threshold = 0.5;
};

struct StreamResult {
  std::vector<MetricsRecord> records;
  ModelParams final_params;
};

/// Prequential (test-then-train) evaluation: each chunk is scored with the
/// current global model, then partitioned across clients and trained on.
StreamResult prequential_stream(const ModelParams& initial, std::span<const std::vector<Window>> chunks,
                                const StreamConfig& cfg);

/// Splits windows into consecutive chunks of `chunk_size` (last one may be
/// shorter).
std::vector<std::vector<Window>> make_chunks(const std::vector<Window>& windows, std::size_t chunk_size);

/// Trailing moving average with window `width` (shorter at the start).
std::vector<double> moving_average(std::span<const double> values, std::size_t width);

}  // namespace fcad
