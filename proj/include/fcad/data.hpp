#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fcad/autodiff.hpp"
#include "fcad/error.hpp"
#include "fcad/window.hpp"

namespace fcad {

class DataError : public Error {
 public:
  explicit DataError(const std::string& message) : Error("data", message) {}
};

enum class ChannelRole : unsigned char { sensor, actuator };

/// Multichannel telemetry, one row per sample.
struct Series {
  std::vector<std::string> names;
  std::vector<int> zones;
  std::vector<ChannelRole> roles;
  /// Nominal oscillation period per channel in samples; 0 when unknown.
  std::vector<double> periods;
  Tensor samples;
  std::vector<Label> labels;
  std::vector<AttackType> tags;
  /// Set when the whole series belongs to one functional zone.
  std::optional<int> zone;

  std::size_t length() const { return static_cast<std::size_t>(samples.rows()); }
  std::size_t channels() const { return static_cast<std::size_t>(samples.cols()); }
  void validate() const;
};

struct AttackSpec {
  AttackType type = AttackType::command_injection;
  std::size_t start = 0;
  std::size_t length = 0;
  double strength = 1.0;
};

/// Per-type default strengths; replay and dos ignore strength.
struct AttackStrengths {
  double command_injection = 3.0;
  double sensor_tampering = 2.0;
  double replay = 1.0;
  double dos = 1.0;
  double timing = 1.0;

  double of(AttackType type) const;
};

struct GeneratorConfig {
  std::size_t channels = 8;
  std::size_t zones = 4;
  std::size_t duration = 114300;
  double period_min = 97.0;
  double period_max = 97.0;
  double noise_std = 0.1;
  /// channels x channels; entry (i, j) weights channel j at t-1 into channel i.
  Tensor coupling;
  std::vector<AttackSpec> attacks;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Off-diagonal `weight` between channels sharing a zone, zero elsewhere.
Tensor zone_coupling(std::size_t channels, std::size_t zones, double weight);

/// Zone of a channel when `channels` are split evenly across `zones`.
int zone_of(std::size_t channel, std::size_t channels, std::size_t zones);

/// Evenly spaced attack slots cycling through the five injectable types.
struct AttackPlan {
  std::size_t count = 500;
  std::size_t min_length = 20;
  std::size_t max_length = 80;
  AttackStrengths strengths;
};

std::vector<AttackSpec> plan_attacks(const AttackPlan& plan, std::size_t duration, std::uint64_t seed);

/// Sinusoid per channel + lag-one coupling + gaussian noise, all normal.
Series generate_normal(const GeneratorConfig& cfg);

/// generate_normal followed by every scheduled attack, in schedule order.
Series generate(const GeneratorConfig& cfg);

Series inject_attack(const Series& series, AttackType type, std::size_t start, std::size_t length, double strength,
                     std::uint64_t seed);

/// Windows at starts 0, stride, 2*stride, ...; anomalous iff any sample is.
std::vector<Window> windowize(const Series& series, std::size_t window_len, std::size_t stride);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
};

inline constexpr double kStdFloor = 1e-8;

NormStats fit_normalizer(std::span<const Window> train);
void apply_normalizer(const NormStats& stats, std::vector<Window>& windows);

/// Fits on train, then z-scores train and every list in `others` in place.
NormStats normalize(std::vector<Window>& train, std::span<std::vector<Window>* const> others = {});

struct CsvSchema {
  std::string timestamp_column = "Timestamp";
  std::string label_column = "Normal/Attack";
  std::string normal_value = "Normal";
  std::string attack_value = "Attack";
  /// Empty: every column other than timestamp, label and attack tag.
  std::vector<std::string> channels;
  /// Optional per-row attack type; used when present in the header.
  std::string attack_column = "AttackType";
};

Series load_swat_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Writes the CSV layout read by load_swat_csv, including the attack column.
void write_series_csv(const Series& series, const std::filesystem::path& path, const CsvSchema& schema = {});

/// Maximal runs of anomalous samples as [begin, end) pairs.
std::vector<std::pair<std::size_t, std::size_t>> anomalous_runs(std::span<const Label> labels);

}  // namespace fcad
