#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fcad {

enum class Label : unsigned char { normal = 0, anomalous = 1 };

/// Attack taxonomy of the synthetic generator. `unknown` marks anomalous
/// samples loaded from real datasets whose labels carry no attack type.
enum class AttackType : unsigned char {
  none,
  command_injection,
  sensor_tampering,
  replay,
  dos,
  timing,
  unknown,
};

inline constexpr AttackType kInjectableAttacks[] = {
    AttackType::command_injection, AttackType::sensor_tampering, AttackType::replay,
    AttackType::dos, AttackType::timing,
};

std::string_view attack_name(AttackType type);
/// Inverse of attack_name; std::nullopt for unrecognised names.
std::optional<AttackType> parse_attack(std::string_view name);

inline int label_value(Label l) { return l == Label::anomalous ? 1 : 0; }

/// A fixed-length multivariate slice, flattened time-major
/// (features[t * channels + c]).
struct Window {
  std::vector<double> features;
  Label label = Label::normal;
  AttackType attack = AttackType::none;
  std::size_t start = 0;
  std::optional<int> zone;
};

}  // namespace fcad
