#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fcad/config.hpp"
#include "fcad/data.hpp"
#include "fcad/federation.hpp"
#include "fcad/model.hpp"
#include "fcad/stream.hpp"

namespace fcad {

/// Chronologically split, train-normalised windows.
struct Dataset {
  std::vector<Window> train;
  std::vector<Window> validation;
  std::vector<Window> test;
  NormStats stats;
  std::size_t input_width = 0;

  EvalSplits splits() const { return {validation, test}; }
};

/// Seed tags; every random stream of an experiment derives from cfg.seed.
enum class SeedTag : std::uint64_t { generator = 1, plan = 2, init = 3, partition = 4, stream = 5 };
std::uint64_t experiment_seed(const ExperimentConfig& cfg, SeedTag tag, std::uint64_t extra = 0);

/// Generator settings for one synthetic series; `zone` picks a per-zone seed.
GeneratorConfig generator_config(const ExperimentConfig& cfg, std::size_t duration, std::size_t attacks,
                                 SeedTag tag, std::optional<int> zone = std::nullopt);

/// One series, or one per zone when the partition is by zone.
std::vector<Series> training_series(const ExperimentConfig& cfg);

Dataset build_dataset(const ExperimentConfig& cfg);
LayerSpec layer_spec(const ExperimentConfig& cfg, std::size_t input_width);
FederationConfig federation_config(const ExperimentConfig& cfg);

/// Stream windows normalised with the training statistics.
std::vector<Window> stream_windows(const ExperimentConfig& cfg, const NormStats& stats);

// Metric lines ---------------------------------------------------------------

struct MetricsLine {
  std::string type;
  MetricsRecord metrics;
  std::optional<EpochLosses> losses;
  std::vector<double> personalized_f1;
};

nlohmann::ordered_json metrics_to_json(const MetricsRecord& m);
nlohmann::ordered_json losses_to_json(const EpochLosses& l);
MetricsLine parse_metrics_line(const std::string& line);
std::vector<MetricsLine> read_metrics_file(const std::filesystem::path& path);

/// Client-mean of per-client epoch-mean losses.
EpochLosses mean_losses(const std::vector<ClientStats>& clients);

// Subcommands ----------------------------------------------------------------

struct GenerateOutput {
  std::vector<std::filesystem::path> csv;
  std::vector<std::filesystem::path> stats;
};
GenerateOutput cmd_generate(const ExperimentConfig& cfg);

struct TrainOutput {
  FederationResult result;
  std::filesystem::path metrics;
  std::filesystem::path checkpoint;
};
TrainOutput cmd_train(const ExperimentConfig& cfg);

/// Threshold from the validation split unless `threshold` is given.
MetricsRecord cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                           std::optional<double> threshold = std::nullopt);

/// Starts from `checkpoint` when given, else from the seeded initial model.
StreamResult cmd_stream(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& checkpoint);

/// Appends a type "error" record to `path`.
void write_error_record(const std::filesystem::path& path, const std::string& message);

}  // namespace fcad
