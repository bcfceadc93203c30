#include "fcad/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "fcad/rng.hpp"

namespace fcad {

std::string_view attack_name(AttackType type) {
  switch (type) {
    case AttackType::none: return "none";
    case AttackType::command_injection: return "command_injection";
    case AttackType::sensor_tampering: return "sensor_tampering";
    case AttackType::replay: return "replay";
    case AttackType::dos: return "dos";
    case AttackType::timing: return "timing";
    case AttackType::unknown: return "unknown";
  }
  return "unknown";
}

std::optional<AttackType> parse_attack(std::string_view name) {
  for (AttackType t : {AttackType::none, AttackType::command_injection, AttackType::sensor_tampering,
                       AttackType::replay, AttackType::dos, AttackType::timing, AttackType::unknown}) {
    if (attack_name(t) == name) return t;
  }
  return std::nullopt;
}

void Series::validate() const {
  const std::size_t c = channels();
  if (names.size() != c || zones.size() != c || roles.size() != c || periods.size() != c) {
    throw DataError("series channel metadata does not match channel count");
  }
  if (labels.size() != length() || tags.size() != length()) {
    throw DataError("series label/tag vectors do not match sample count");
  }
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if ((labels[t] == Label::anomalous) != (tags[t] != AttackType::none)) {
      throw DataError("label/tag disagreement at sample " + std::to_string(t));
    }
  }
}

double AttackStrengths::of(AttackType type) const {
  switch (type) {
    case AttackType::command_injection: return command_injection;
    case AttackType::sensor_tampering: return sensor_tampering;
    case AttackType::replay: return replay;
    case AttackType::dos: return dos;
    case AttackType::timing: return timing;
    default: return 1.0;
  }
}

void GeneratorConfig::validate() const {
  if (channels < 1) throw DataError("generator: channels must be >= 1");
  if (zones < 1 || zones > channels) throw DataError("generator: zones must be in [1, channels]");
  if (duration < 2) throw DataError("generator: duration must be >= 2");
  if (!(period_min > 0.0) || !(period_max >= period_min)) {
    throw DataError("generator: sinusoid periods must be positive with period_min <= period_max");
  }
  if (!(noise_std >= 0.0)) throw DataError("generator: noise_std must be >= 0");
  if (coupling.size() != 0 && (static_cast<std::size_t>(coupling.rows()) != channels ||
                               static_cast<std::size_t>(coupling.cols()) != channels)) {
    throw DataError("generator: coupling must be channels x channels");
  }
  for (const AttackSpec& a : attacks) {
    if (a.length < 1 || a.start + a.length > duration) {
      throw DataError("generator: attack interval [" + std::to_string(a.start) + ", " +
                      std::to_string(a.start + a.length) + ") outside duration");
    }
    if (!(a.strength > 0.0)) throw DataError("generator: attack strengths must be > 0");
    if (a.type == AttackType::none || a.type == AttackType::unknown) {
      throw DataError("generator: attack type must be injectable");
    }
  }
}

int zone_of(std::size_t channel, std::size_t channels, std::size_t zones) {
  return static_cast<int>(channel * zones / channels);
}

Tensor zone_coupling(std::size_t channels, std::size_t zones, double weight) {
  Tensor k = Tensor::Zero(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(channels));
  for (std::size_t i = 0; i < channels; ++i) {
    for (std::size_t j = 0; j < channels; ++j) {
      if (i != j && zone_of(i, channels, zones) == zone_of(j, channels, zones)) {
        k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = weight;
      }
    }
  }
  return k;
}

std::vector<AttackSpec> plan_attacks(const AttackPlan& plan, std::size_t duration, std::uint64_t seed) {
  std::vector<AttackSpec> out;
  if (plan.count == 0) return out;
  if (plan.min_length < 1 || plan.max_length < plan.min_length) {
    throw DataError("attack plan: need 1 <= min_length <= max_length");
  }
  const std::size_t slot = duration / plan.count;
  const std::size_t margin = slot / 10;
  if (slot < plan.max_length + 2 * margin + 1) {
    throw DataError("attack plan: " + std::to_string(plan.count) + " attacks of up to " +
                    std::to_string(plan.max_length) + " samples do not fit in duration " + std::to_string(duration));
  }
  std::mt19937_64 rng(derive_seed({seed, 0x61747461636bull}));
  for (std::size_t k = 0; k < plan.count; ++k) {
    AttackSpec a;
    a.type = kInjectableAttacks[k % std::size(kInjectableAttacks)];
    a.length = std::uniform_int_distribution<std::size_t>(plan.min_length, plan.max_length)(rng);
    const std::size_t lo = k * slot + margin;
    const std::size_t hi = (k + 1) * slot - margin - a.length;
    a.start = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    a.strength = plan.strengths.of(a.type);
    out.push_back(a);
  }
  return out;
}

Series generate_normal(const GeneratorConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  const std::size_t n = cfg.duration;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> period_dist(cfg.period_min, cfg.period_max);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);

  Series s;
  s.periods.resize(c);
  std::vector<double> phase(c);
  for (std::size_t j = 0; j < c; ++j) {
    s.periods[j] = period_dist(rng);
    phase[j] = phase_dist(rng);
  }
  std::map<int, int> per_zone_index;
  for (std::size_t j = 0; j < c; ++j) {
    const int zone = zone_of(j, c, cfg.zones);
    const int idx = per_zone_index[zone]++;
    const ChannelRole role = (idx % 2 == 0) ? ChannelRole::sensor : ChannelRole::actuator;
    s.zones.push_back(zone);
    s.roles.push_back(role);
    s.names.push_back(std::string(role == ChannelRole::sensor ? "LIT" : "MV") + std::to_string(zone + 1) +
                      (idx / 2 + 1 < 10 ? "0" : "") + std::to_string(idx / 2 + 1));
  }

  const Tensor coupling =
      cfg.coupling.size() == 0 ? Tensor::Zero(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c)) : cfg.coupling;
  std::normal_distribution<double> noise(0.0, 1.0);
  s.samples.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
  for (std::size_t t = 0; t < n; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    for (std::size_t j = 0; j < c; ++j) {
      const auto ji = static_cast<Eigen::Index>(j);
      double v = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / s.periods[j] + phase[j]);
      if (t > 0) {
        for (std::size_t k = 0; k < c; ++k) {
          const double w = coupling(ji, static_cast<Eigen::Index>(k));
          if (w != 0.0) v += w * s.samples(ti - 1, static_cast<Eigen::Index>(k));
        }
      }
      // Draw unconditionally so the noise stream does not depend on noise_std.
      const double e = noise(rng);
      s.samples(ti, ji) = v + cfg.noise_std * e;
    }
  }
  s.labels.assign(n, Label::normal);
  s.tags.assign(n, AttackType::none);
  return s;
}

Series generate(const GeneratorConfig& cfg) {
  Series s = generate_normal(cfg);
  for (std::size_t i = 0; i < cfg.attacks.size(); ++i) {
    const AttackSpec& a = cfg.attacks[i];
    s = inject_attack(s, a.type, a.start, a.length, a.strength, derive_seed({cfg.seed, i, 0x696e6a656374ull}));
  }
  return s;
}

namespace {

double normal_std(const Series& s, std::size_t channel) {
  double sum = 0.0;
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < s.length(); ++t) {
    if (s.labels[t] != Label::normal) continue;
    const double v = s.samples(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(channel));
    sum += v;
    sq += v * v;
    ++n;
  }
  if (n == 0) return 0.0;
  const double mean = sum / static_cast<double>(n);
  return std::sqrt(std::max(0.0, sq / static_cast<double>(n) - mean * mean));
}

std::size_t pick_channel(const Series& s, std::optional<ChannelRole> role, std::mt19937_64& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t j = 0; j < s.channels(); ++j) {
    if (!role || s.roles[j] == *role) candidates.push_back(j);
  }
  if (candidates.empty()) {
    for (std::size_t j = 0; j < s.channels(); ++j) candidates.push_back(j);
  }
  return candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
}

bool all_normal(const Series& s, std::size_t begin, std::size_t end) {
  for (std::size_t t = begin; t < end; ++t) {
    if (s.labels[t] != Label::normal) return false;
  }
  return true;
}

}  // namespace

Series inject_attack(const Series& series, AttackType type, std::size_t start, std::size_t length, double strength,
                     std::uint64_t seed) {
  if (type == AttackType::none || type == AttackType::unknown) {
    throw DataError("inject_attack: type must be one of the injectable attacks");
  }
  if (length < 1 || start + length > series.length()) {
    throw DataError("inject_attack: interval [" + std::to_string(start) + ", " + std::to_string(start + length) +
                    ") outside series of length " + std::to_string(series.length()));
  }
  if (!(strength >= 0.0) || !std::isfinite(strength)) throw DataError("inject_attack: strength must be >= 0");
  if (!all_normal(series, start, start + length)) {
    throw DataError("inject_attack: interval [" + std::to_string(start) + ", " + std::to_string(start + length) +
                    ") overlaps an existing attack");
  }
  if (series.channels() == 0) throw DataError("inject_attack: series has no channels");

  Series out = series;
  std::mt19937_64 rng(seed);
  const auto begin = static_cast<Eigen::Index>(start);
  const auto len = static_cast<Eigen::Index>(length);

  switch (type) {
    case AttackType::command_injection: {
      const std::size_t ch = pick_channel(series, ChannelRole::actuator, rng);
      const double step = strength * normal_std(series, ch);
      const auto ci = static_cast<Eigen::Index>(ch);
      for (Eigen::Index t = begin; t < begin + len; ++t) out.samples(t, ci) += step;
      break;
    }
    case AttackType::sensor_tampering: {
      const std::size_t ch = pick_channel(series, ChannelRole::sensor, rng);
      const double peak = strength * normal_std(series, ch);
      const auto ci = static_cast<Eigen::Index>(ch);
      for (Eigen::Index k = 0; k < len; ++k) {
        out.samples(begin + k, ci) += peak * static_cast<double>(k + 1) / static_cast<double>(len);
      }
      break;
    }
    case AttackType::replay: {
      if (start < length) {
        throw DataError("inject_attack: replay at " + std::to_string(start) + " has no earlier segment of length " +
                        std::to_string(length));
      }
      const std::size_t last = start - length;
      std::optional<std::size_t> source;
      std::uniform_int_distribution<std::size_t> dist(0, last);
      for (int attempt = 0; attempt < 64 && !source; ++attempt) {
        const std::size_t s0 = dist(rng);
        if (all_normal(series, s0, s0 + length)) source = s0;
      }
      for (std::size_t s0 = last + 1; !source && s0-- > 0;) {
        if (all_normal(series, s0, s0 + length)) source = s0;
      }
      if (!source) throw DataError("inject_attack: replay found no normal source segment");
      const auto ci = static_cast<Eigen::Index>(pick_channel(series, ChannelRole::sensor, rng));
      out.samples.col(ci).segment(begin, len) =
          series.samples.col(ci).segment(static_cast<Eigen::Index>(*source), len);
      break;
    }
    case AttackType::dos: {
      const auto ci = static_cast<Eigen::Index>(pick_channel(series, std::nullopt, rng));
      const double held = series.samples(begin, ci);
      for (Eigen::Index t = begin; t < begin + len; ++t) out.samples(t, ci) = held;
      break;
    }
    case AttackType::timing: {
      std::vector<std::size_t> periodic;
      for (std::size_t j = 0; j < series.channels(); ++j) {
        if (series.periods[j] > 0.0) periodic.push_back(j);
      }
      if (periodic.empty()) throw DataError("inject_attack: timing needs a channel with a known period");
      const std::size_t ch = periodic[std::uniform_int_distribution<std::size_t>(0, periodic.size() - 1)(rng)];
      const auto delay = static_cast<std::size_t>(
          std::max<long long>(1, std::llround(strength * series.periods[ch] / 8.0)));
      if (start < delay) throw DataError("inject_attack: timing shift reaches before the series start");
      const auto ci = static_cast<Eigen::Index>(ch);
      const auto d = static_cast<Eigen::Index>(delay);
      for (Eigen::Index t = begin; t < begin + len; ++t) out.samples(t, ci) = series.samples(t - d, ci);
      break;
    }
    default:
      break;
  }

  for (std::size_t t = start; t < start + length; ++t) {
    out.labels[t] = Label::anomalous;
    out.tags[t] = type;
  }
  return out;
}

std::vector<Window> windowize(const Series& series, std::size_t window_len, std::size_t stride) {
  if (window_len < 1 || stride < 1) throw DataError("windowize: window length and stride must be >= 1");
  if (series.length() < window_len) {
    throw DataError("windowize: series of length " + std::to_string(series.length()) + " is shorter than window " +
                    std::to_string(window_len));
  }
  const std::size_t c = series.channels();
  const std::size_t count = (series.length() - window_len) / stride + 1;
  std::vector<Window> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Window w;
    w.start = k * stride;
    w.zone = series.zone;
    w.features.resize(window_len * c);
    for (std::size_t t = 0; t < window_len; ++t) {
      const auto row = static_cast<Eigen::Index>(w.start + t);
      for (std::size_t j = 0; j < c; ++j) {
        w.features[t * c + j] = series.samples(row, static_cast<Eigen::Index>(j));
      }
      if (w.label == Label::normal && series.labels[w.start + t] == Label::anomalous) {
        w.label = Label::anomalous;
        w.attack = series.tags[w.start + t];
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

NormStats fit_normalizer(std::span<const Window> train) {
  if (train.empty()) throw DataError("normalize: training list is empty");
  const std::size_t f = train.front().features.size();
  NormStats st;
  st.mean.assign(f, 0.0);
  st.std.assign(f, 0.0);
  for (const Window& w : train) {
    if (w.features.size() != f) throw DataError("normalize: inconsistent feature lengths");
    for (std::size_t i = 0; i < f; ++i) st.mean[i] += w.features[i];
  }
  const auto n = static_cast<double>(train.size());
  for (double& m : st.mean) m /= n;
  for (const Window& w : train) {
    for (std::size_t i = 0; i < f; ++i) {
      const double d = w.features[i] - st.mean[i];
      st.std[i] += d * d;
    }
  }
  for (double& s : st.std) s = std::max(std::sqrt(s / n), kStdFloor);
  return st;
}

void apply_normalizer(const NormStats& stats, std::vector<Window>& windows) {
  for (Window& w : windows) {
    if (w.features.size() != stats.mean.size()) throw DataError("normalize: feature length does not match stats");
    for (std::size_t i = 0; i < w.features.size(); ++i) {
      w.features[i] = (w.features[i] - stats.mean[i]) / stats.std[i];
    }
  }
}

NormStats normalize(std::vector<Window>& train, std::span<std::vector<Window>* const> others) {
  NormStats st = fit_normalizer(train);
  apply_normalizer(st, train);
  for (std::vector<Window>* list : others) apply_normalizer(st, *list);
  return st;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_real(std::string_view cell) {
  cell = trim(cell);
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) return std::nullopt;
  return v;
}

std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw DataError("failed to format a sample value");
  return std::string(buf, ptr);
}

}  // namespace

Series load_swat_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV " + path.string() + " has no header row");
  // Real exports pad header names with spaces (" Timestamp").
  std::vector<std::string> header = split_csv(line);
  for (std::string& h : header) h = std::string(trim(h));

  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  };
  const auto ts_col = find(schema.timestamp_column);
  if (!ts_col) throw DataError("CSV is missing configured column '" + schema.timestamp_column + "'");
  const auto label_col = find(schema.label_column);
  if (!label_col) throw DataError("CSV is missing configured column '" + schema.label_column + "'");
  const std::size_t no_col = header.size();
  const std::size_t tag_col = schema.attack_column.empty() ? no_col : find(schema.attack_column).value_or(no_col);

  std::vector<std::size_t> channel_cols;
  std::vector<std::string> names;
  if (schema.channels.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i == *ts_col || i == *label_col || i == tag_col) continue;
      channel_cols.push_back(i);
      names.push_back(header[i]);
    }
  } else {
    for (const std::string& name : schema.channels) {
      const auto col = find(name);
      if (!col) throw DataError("CSV is missing configured column '" + name + "'");
      channel_cols.push_back(*col);
      names.push_back(name);
    }
  }
  if (channel_cols.empty()) throw DataError("CSV has no channel columns");

  std::vector<double> values;
  std::vector<Label> labels;
  std::vector<AttackType> tags;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const auto cells = split_csv(line);
    const std::string where = "row " + std::to_string(row) + " (line " + std::to_string(row + 1) + ")";
    if (cells.size() != header.size()) {
      throw DataError(where + ": expected " + std::to_string(header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    }
    for (std::size_t k = 0; k < channel_cols.size(); ++k) {
      const auto v = parse_real(cells[channel_cols[k]]);
      if (!v) {
        throw DataError(where + ": column '" + names[k] + "' value '" + cells[channel_cols[k]] + "' is not numeric");
      }
      values.push_back(*v);
    }
    const std::string label(trim(cells[*label_col]));
    if (label == schema.normal_value) {
      labels.push_back(Label::normal);
      tags.push_back(AttackType::none);
    } else if (label == schema.attack_value) {
      labels.push_back(Label::anomalous);
      AttackType tag = AttackType::unknown;
      if (tag_col != no_col) {
        const auto parsed = parse_attack(trim(cells[tag_col]));
        if (parsed && *parsed != AttackType::none) tag = *parsed;
      }
      tags.push_back(tag);
    } else {
      throw DataError(where + ": label '" + label + "' is neither '" + schema.normal_value + "' nor '" +
                      schema.attack_value + "'");
    }
  }
  if (row == 0) throw DataError("CSV " + path.string() + " has no data rows");

  Series s;
  const auto c = static_cast<Eigen::Index>(channel_cols.size());
  s.samples = Eigen::Map<const Tensor>(values.data(), static_cast<Eigen::Index>(row), c);
  s.names = std::move(names);
  s.zones.assign(channel_cols.size(), 0);
  s.roles.assign(channel_cols.size(), ChannelRole::sensor);
  s.periods.assign(channel_cols.size(), 0.0);
  s.labels = std::move(labels);
  s.tags = std::move(tags);
  return s;
}

void write_series_csv(const Series& series, const std::filesystem::path& path, const CsvSchema& schema) {
  series.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << schema.timestamp_column;
  for (const std::string& n : series.names) out << ',' << n;
  out << ',' << schema.label_column << ',' << schema.attack_column << '\n';
  for (std::size_t t = 0; t < series.length(); ++t) {
    out << t;
    for (std::size_t j = 0; j < series.channels(); ++j) {
      out << ',' << format_real(series.samples(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)));
    }
    out << ',' << (series.labels[t] == Label::normal ? schema.normal_value : schema.attack_value) << ','
        << attack_name(series.tags[t]) << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<std::pair<std::size_t, std::size_t>> anomalous_runs(std::span<const Label> labels) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  std::size_t t = 0;
  while (t < labels.size()) {
    if (labels[t] != Label::anomalous) {
      ++t;
      continue;
    }
    const std::size_t begin = t;
    while (t < labels.size() && labels[t] == Label::anomalous) ++t;
    runs.emplace_back(begin, t);
  }
  return runs;
}

}  // namespace fcad
