#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "fcad/contrastive.hpp"
#include "fcad/data.hpp"
#include "fcad/error.hpp"
#include "fcad/federation.hpp"
#include "fcad/objective.hpp"

namespace fcad {

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

struct SplitFractions {
  double train = 0.7;
  double validation = 0.1;
  double test = 0.2;
  bool operator==(const SplitFractions&) const = default;
};

struct CsvSource {
  std::string path;
  CsvSchema schema;
};

struct DataSettings {
  enum class Source { synthetic, csv };
  Source source = Source::synthetic;
  std::size_t window = 20;
  std::size_t stride = 10;
  SplitFractions split;
  CsvSource csv;
};

struct GeneratorSettings {
  std::size_t channels = 8;
  std::size_t zones = 4;
  std::size_t duration = 114300;
  /// Equal bounds put every channel on one shared process cycle; 97 is not a
  /// multiple of the default stride.
  double period_min = 97.0;
  double period_max = 97.0;
  double noise_std = 0.1;
  /// Off-diagonal coupling between channels of the same zone.
  double coupling = 0.1;
  AttackPlan plan;
  /// Explicit schedule; when non-empty it replaces the planned attacks.
  std::vector<AttackSpec> schedule;
};

struct StreamSettings {
  std::size_t duration = 48000;
  std::size_t attacks = 210;
  std::size_t chunk_windows = 160;
  std::size_t rounds_per_chunk = 1;
  double threshold = 0.5;
};

struct ModelSettings {
  std::vector<std::size_t> hidden = {64, 32};
  std::size_t embedding = 16;
};

struct FederationSettings {
  std::size_t clients = 4;
  std::size_t rounds = 30;
  PartitionScheme partition;
  std::size_t parallelism = 1;
};

/// Every tunable of an experiment, defaults included. parse_config fills
/// every field; nothing downstream carries its own default.
struct ExperimentConfig {
  std::uint64_t seed = 20250101;
  ModelSettings model;
  ContrastiveConfig contrastive;
  ObjectiveConfig objective;
  FederationSettings federation;
  DataSettings data;
  GeneratorSettings generator;
  StreamSettings stream;
  std::string output_dir = "out";

  void validate() const;
};

ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_json(const nlohmann::json& tree);
/// Fully materialised tree; parse_config_json(config_to_json(c)) == c.
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace fcad
