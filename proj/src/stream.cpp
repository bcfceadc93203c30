#include "fcad/stream.hpp"

#include <algorithm>

#include "fcad/rng.hpp"

namespace fcad {

StreamResult prequential_stream(const ModelParams& initial, std::span<const std::vector<Window>> chunks,
                                const StreamConfig& cfg) {
  StreamResult out{{}, initial};
  out.records.reserve(chunks.size());
  ModelParams global = initial;
  std::size_t round = 0;
  for (std::size_t k = 0; k < chunks.size(); ++k) {
    const std::vector<Window>& chunk = chunks[k];
    if (chunk.empty()) throw EvalError("prequential_stream: chunk " + std::to_string(k) + " is empty");
    out.records.push_back(score_metrics(anomaly_scores(global, chunk), chunk, cfg.threshold, k));
    if (cfg.rounds_per_chunk == 0) continue;

    const auto shards = partition(chunk, cfg.federation.partition, cfg.federation.clients,
                                  derive_seed({cfg.federation.seed, k, 0x73747265616dull}));
    for (std::size_t r = 0; r < cfg.rounds_per_chunk; ++r) {
      global = run_round(global, shards, ++round, cfg.federation, cfg.objective, cfg.contrastive).global;
    }
  }
  out.final_params = global;
  return out;
}

std::vector<std::vector<Window>> make_chunks(const std::vector<Window>& windows, std::size_t chunk_size) {
  if (chunk_size < 1) throw EvalError("make_chunks: chunk size must be >= 1");
  std::vector<std::vector<Window>> chunks;
  for (std::size_t begin = 0; begin < windows.size(); begin += chunk_size) {
    const std::size_t end = std::min(windows.size(), begin + chunk_size);
    chunks.emplace_back(windows.begin() + static_cast<std::ptrdiff_t>(begin),
                        windows.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return chunks;
}

std::vector<double> moving_average(std::span<const double> values, std::size_t width) {
  if (width < 1) throw EvalError("moving_average: width must be >= 1");
  std::vector<double> out;
  out.reserve(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= width) acc -= values[i - width];
    out.push_back(acc / static_cast<double>(std::min(i + 1, width)));
  }
  return out;
}

}  // namespace fcad
