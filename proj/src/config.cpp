#include "fcad/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace fcad {

namespace {

using nlohmann::json;

// Walks one object of the config tree; every key must be consumed.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError("'" + where() + "' must be an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    consumed_.insert(key);
    auto it = node_.find(key);
    if (it == node_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("field '" + name(key) + "' has the wrong type");
    }
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  Section child(const std::string& key) {
    consumed_.insert(key);
    static const json empty = json::object();
    auto it = node_.find(key);
    return Section(it == node_.end() ? empty : *it, name(key));
  }

  const json* raw(const std::string& key) {
    consumed_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!consumed_.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where());
    }
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  const json& node_;
  std::string path_;
  std::set<std::string> consumed_;
};

AttackType attack_from(const std::string& name, const std::string& field) {
  const auto t = parse_attack(name);
  if (!t || *t == AttackType::none || *t == AttackType::unknown) {
    throw ConfigError("field '" + field + "' has unknown attack type '" + name + "'");
  }
  return *t;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void ExperimentConfig::validate() const {
  for (std::size_t h : model.hidden) require(h >= 1, "field 'model.hidden' widths must be >= 1");
  require(model.embedding >= 2, "field 'model.embedding' must be >= 2");
  require(contrastive.temperature > 0.0, "field 'contrastive.temperature' must be > 0");
  require(contrastive.max_anchors >= 1, "field 'contrastive.max_anchors' must be >= 1");
  require(objective.lambda_class >= 0.0, "field 'objective.lambda_class' must be >= 0");
  require(objective.lambda_prox >= 0.0, "field 'objective.lambda_prox' must be >= 0");
  require(objective.learning_rate > 0.0, "field 'objective.learning_rate' must be > 0");
  require(objective.momentum >= 0.0 && objective.momentum < 1.0, "field 'objective.momentum' must be in [0, 1)");
  require(objective.batch_size >= 1, "field 'objective.batch_size' must be >= 1");
  require(objective.clip_norm > 0.0, "field 'objective.clip_norm' must be > 0");
  require(federation.clients >= 1, "field 'federation.clients' must be >= 1");
  require(federation.parallelism >= 1, "field 'federation.parallelism' must be >= 1");
  require(federation.partition.alpha > 0.0, "field 'federation.alpha' must be > 0");
  require(data.window >= 1, "field 'data.window' must be >= 1");
  require(data.stride >= 1, "field 'data.stride' must be >= 1");

  const SplitFractions& s = data.split;
  require(s.train > 0.0 && s.validation > 0.0 && s.test > 0.0,
          "fields 'data.split.train', 'data.split.validation', 'data.split.test' must all be positive");
  const double total = s.train + s.validation + s.test;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("fields 'data.split.train', 'data.split.validation', 'data.split.test' sum to " +
                      std::to_string(total) + ", expected 1");
  }
  if (data.source == DataSettings::Source::csv) {
    require(!data.csv.path.empty(), "field 'data.csv.path' is required when data.source is csv");
    require(std::filesystem::path(data.csv.path).lexically_normal() !=
                std::filesystem::path(output_dir).lexically_normal(),
            "fields 'data.csv.path' and 'output.dir' must be distinct paths");
  }
  require(!output_dir.empty(), "field 'output.dir' must not be empty");

  const GeneratorSettings& g = generator;
  require(g.channels >= 1, "field 'generator.channels' must be >= 1");
  require(g.zones >= 1 && g.zones <= g.channels, "field 'generator.zones' must be in [1, generator.channels]");
  require(g.duration >= data.window, "field 'generator.duration' must be >= data.window");
  require(g.period_min > 0.0 && g.period_max >= g.period_min,
          "fields 'generator.period_min' and 'generator.period_max' must satisfy 0 < min <= max");
  require(g.noise_std >= 0.0, "field 'generator.noise_std' must be >= 0");
  const AttackStrengths& st = g.plan.strengths;
  require(st.command_injection > 0.0 && st.sensor_tampering > 0.0 && st.replay > 0.0 && st.dos > 0.0 &&
              st.timing > 0.0,
          "fields 'generator.attacks.strengths.*' must be > 0");
  for (const AttackSpec& a : g.schedule) {
    require(a.length >= 1 && a.start + a.length <= g.duration,
            "field 'generator.schedule' has an interval outside generator.duration");
    require(a.strength > 0.0, "field 'generator.schedule' strengths must be > 0");
  }
  require(stream.chunk_windows >= 1, "field 'stream.chunk_windows' must be >= 1");
  require(stream.duration >= data.window, "field 'stream.duration' must be >= data.window");
}

ExperimentConfig parse_config_json(const json& tree) {
  ExperimentConfig c;
  Section root(tree, "");
  root.read("seed", c.seed);

  {
    Section m = root.child("model");
    m.read("hidden", c.model.hidden);
    m.read("embedding", c.model.embedding);
    m.finish();
  }
  {
    Section s = root.child("contrastive");
    s.read("temperature", c.contrastive.temperature);
    s.read("max_anchors", c.contrastive.max_anchors);
    s.finish();
  }
  {
    Section s = root.child("objective");
    s.read("lambda_class", c.objective.lambda_class);
    s.read("lambda_prox", c.objective.lambda_prox);
    s.read("learning_rate", c.objective.learning_rate);
    s.read("momentum", c.objective.momentum);
    s.read("local_epochs", c.objective.local_epochs);
    s.read("batch_size", c.objective.batch_size);
    s.read("clip_norm", c.objective.clip_norm);
    s.finish();
  }
  {
    Section s = root.child("federation");
    s.read("clients", c.federation.clients);
    s.read("rounds", c.federation.rounds);
    std::string scheme = "dirichlet";
    s.read("partition", scheme);
    if (scheme == "dirichlet") {
      c.federation.partition.kind = PartitionScheme::Kind::dirichlet;
    } else if (scheme == "by_zone") {
      c.federation.partition.kind = PartitionScheme::Kind::by_zone;
    } else {
      throw ConfigError("field 'federation.partition' must be 'dirichlet' or 'by_zone', got '" + scheme + "'");
    }
    s.read("alpha", c.federation.partition.alpha);
    s.read("parallelism", c.federation.parallelism);
    s.finish();
  }
  {
    Section s = root.child("data");
    std::string source = "synthetic";
    s.read("source", source);
    if (source == "synthetic") {
      c.data.source = DataSettings::Source::synthetic;
    } else if (source == "csv") {
      c.data.source = DataSettings::Source::csv;
    } else {
      throw ConfigError("field 'data.source' must be 'synthetic' or 'csv', got '" + source + "'");
    }
    s.read("window", c.data.window);
    s.read("stride", c.data.stride);
    Section split = s.child("split");
    split.read("train", c.data.split.train);
    split.read("validation", c.data.split.validation);
    split.read("test", c.data.split.test);
    split.finish();
    Section csv = s.child("csv");
    csv.read("path", c.data.csv.path);
    csv.read("timestamp_column", c.data.csv.schema.timestamp_column);
    csv.read("label_column", c.data.csv.schema.label_column);
    csv.read("normal_value", c.data.csv.schema.normal_value);
    csv.read("attack_value", c.data.csv.schema.attack_value);
    csv.read("channels", c.data.csv.schema.channels);
    csv.read("attack_column", c.data.csv.schema.attack_column);
    csv.finish();
    s.finish();
  }
  {
    Section g = root.child("generator");
    g.read("channels", c.generator.channels);
    g.read("zones", c.generator.zones);
    g.read("duration", c.generator.duration);
    g.read("period_min", c.generator.period_min);
    g.read("period_max", c.generator.period_max);
    g.read("noise_std", c.generator.noise_std);
    g.read("coupling", c.generator.coupling);
    Section a = g.child("attacks");
    a.read("count", c.generator.plan.count);
    a.read("min_length", c.generator.plan.min_length);
    a.read("max_length", c.generator.plan.max_length);
    Section st = a.child("strengths");
    st.read("command_injection", c.generator.plan.strengths.command_injection);
    st.read("sensor_tampering", c.generator.plan.strengths.sensor_tampering);
    st.read("replay", c.generator.plan.strengths.replay);
    st.read("dos", c.generator.plan.strengths.dos);
    st.read("timing", c.generator.plan.strengths.timing);
    st.finish();
    a.finish();
    if (const json* sched = g.raw("schedule")) {
      if (!sched->is_array()) throw ConfigError("field 'generator.schedule' must be an array");
      for (std::size_t i = 0; i < sched->size(); ++i) {
        Section e((*sched)[i], "generator.schedule[" + std::to_string(i) + "]");
        std::string type;
        AttackSpec spec;
        e.read("type", type);
        e.read("start", spec.start);
        e.read("length", spec.length);
        spec.strength = -1.0;
        e.read("strength", spec.strength);
        spec.type = attack_from(type, e.name("type"));
        if (spec.strength < 0.0) spec.strength = c.generator.plan.strengths.of(spec.type);
        e.finish();
        c.generator.schedule.push_back(spec);
      }
    }
    g.finish();
  }
  {
    Section s = root.child("stream");
    s.read("duration", c.stream.duration);
    s.read("attacks", c.stream.attacks);
    s.read("chunk_windows", c.stream.chunk_windows);
    s.read("rounds_per_chunk", c.stream.rounds_per_chunk);
    s.read("threshold", c.stream.threshold);
    s.finish();
  }
  {
    Section s = root.child("output");
    s.read("dir", c.output_dir);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json tree;
  try {
    tree = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config_json(tree);
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["model"] = {{"hidden", c.model.hidden}, {"embedding", c.model.embedding}};
  j["contrastive"] = {{"temperature", c.contrastive.temperature}, {"max_anchors", c.contrastive.max_anchors}};
  j["objective"] = {{"lambda_class", c.objective.lambda_class},   {"lambda_prox", c.objective.lambda_prox},
                    {"learning_rate", c.objective.learning_rate}, {"momentum", c.objective.momentum},
                    {"local_epochs", c.objective.local_epochs},   {"batch_size", c.objective.batch_size},
                    {"clip_norm", c.objective.clip_norm}};
  j["federation"] = {
      {"clients", c.federation.clients},
      {"rounds", c.federation.rounds},
      {"partition", c.federation.partition.kind == PartitionScheme::Kind::by_zone ? "by_zone" : "dirichlet"},
      {"alpha", c.federation.partition.alpha},
      {"parallelism", c.federation.parallelism}};
  const CsvSchema& sc = c.data.csv.schema;
  j["data"] = {{"source", c.data.source == DataSettings::Source::csv ? "csv" : "synthetic"},
               {"window", c.data.window},
               {"stride", c.data.stride},
               {"split",
                {{"train", c.data.split.train}, {"validation", c.data.split.validation}, {"test", c.data.split.test}}},
               {"csv",
                {{"path", c.data.csv.path},
                 {"timestamp_column", sc.timestamp_column},
                 {"label_column", sc.label_column},
                 {"normal_value", sc.normal_value},
                 {"attack_value", sc.attack_value},
                 {"channels", sc.channels},
                 {"attack_column", sc.attack_column}}}};
  const AttackStrengths& st = c.generator.plan.strengths;
  nlohmann::ordered_json schedule = nlohmann::ordered_json::array();
  for (const AttackSpec& a : c.generator.schedule) {
    schedule.push_back(
        {{"type", attack_name(a.type)}, {"start", a.start}, {"length", a.length}, {"strength", a.strength}});
  }
  j["generator"] = {{"channels", c.generator.channels},
                    {"zones", c.generator.zones},
                    {"duration", c.generator.duration},
                    {"period_min", c.generator.period_min},
                    {"period_max", c.generator.period_max},
                    {"noise_std", c.generator.noise_std},
                    {"coupling", c.generator.coupling},
                    {"attacks",
                     {{"count", c.generator.plan.count},
                      {"min_length", c.generator.plan.min_length},
                      {"max_length", c.generator.plan.max_length},
                      {"strengths",
                       {{"command_injection", st.command_injection},
                        {"sensor_tampering", st.sensor_tampering},
                        {"replay", st.replay},
                        {"dos", st.dos},
                        {"timing", st.timing}}}}},
                    {"schedule", schedule}};
  j["stream"] = {{"duration", c.stream.duration},
                 {"attacks", c.stream.attacks},
                 {"chunk_windows", c.stream.chunk_windows},
                 {"rounds_per_chunk", c.stream.rounds_per_chunk},
                 {"threshold", c.stream.threshold}};
  j["output"] = {{"dir", c.output_dir}};
  return j;
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  // The materialised tree covers every field.
  return config_to_json(a) == config_to_json(b);
}

}  // namespace fcad
