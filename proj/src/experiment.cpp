#include "fcad/experiment.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "fcad/rng.hpp"

namespace fcad {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory " + dir.string());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

struct Split {
  std::vector<Window> train, validation, test;
};

Split split_chronological(const std::vector<Window>& windows, const SplitFractions& f) {
  const std::size_t n = windows.size();
  const auto n_train = static_cast<std::size_t>(std::floor(f.train * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::floor(f.validation * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw DataError("split of " + std::to_string(n) + " windows leaves an empty train, validation or test part");
  }
  const auto b = windows.begin();
  const auto t = static_cast<std::ptrdiff_t>(n_train);
  const auto v = static_cast<std::ptrdiff_t>(n_train + n_val);
  return {{b, b + t}, {b + t, b + v}, {b + v, windows.end()}};
}

void append(std::vector<Window>& to, std::vector<Window>&& from) {
  to.insert(to.end(), std::make_move_iterator(from.begin()), std::make_move_iterator(from.end()));
}

std::string csv_row(std::size_t context, const MetricsRecord& m) {
  std::ostringstream row;
  row << context << ',' << format_double(m.precision) << ',' << format_double(m.recall) << ','
      << format_double(m.f1) << ',' << (m.auc ? format_double(*m.auc) : "") << ',' << format_double(m.accuracy)
      << ',' << format_double(m.threshold);
  for (AttackType t : kInjectableAttacks) {
    row << ',';
    if (auto it = m.per_attack.find(t); it != m.per_attack.end()) row << format_double(it->second);
  }
  return row.str();
}

std::string csv_header(const std::string& context) {
  std::string h = context + ",precision,recall,f1,auc,accuracy,threshold";
  for (AttackType t : kInjectableAttacks) h += ",acc_" + std::string(attack_name(t));
  return h;
}

ordered_json client_json(const ClientStats& s, std::optional<double> personalized) {
  ordered_json j;
  j["client_id"] = s.client_id;
  j["samples"] = s.samples;
  j["batches"] = s.batches;
  j["dropped_anchors"] = s.dropped_anchors;
  j["contrastive_skipped"] = s.contrastive_skipped;
  j["losses"] = losses_to_json(s.mean());
  if (personalized) j["personalized_f1"] = *personalized;
  return j;
}

ordered_json round_json(std::size_t round, const MetricsRecord& m, const std::vector<ClientStats>& clients,
                        const std::vector<double>& personalized) {
  ordered_json j;
  j["type"] = "round";
  j["round"] = round;
  j.update(metrics_to_json(m));
  j["losses"] = losses_to_json(mean_losses(clients));
  ordered_json cl = ordered_json::array();
  for (std::size_t i = 0; i < clients.size(); ++i) {
    cl.push_back(client_json(clients[i], i < personalized.size() ? std::optional(personalized[i]) : std::nullopt));
  }
  j["clients"] = cl;
  return j;
}

}  // namespace

std::uint64_t experiment_seed(const ExperimentConfig& cfg, SeedTag tag, std::uint64_t extra) {
  return derive_seed({cfg.seed, static_cast<std::uint64_t>(tag), extra});
}

GeneratorConfig generator_config(const ExperimentConfig& cfg, std::size_t duration, std::size_t attacks,
                                 SeedTag tag, std::optional<int> zone) {
  const GeneratorSettings& g = cfg.generator;
  const std::uint64_t extra = zone ? static_cast<std::uint64_t>(*zone) + 1 : 0;
  GeneratorConfig gc;
  gc.channels = g.channels;
  gc.zones = g.zones;
  gc.duration = duration;
  gc.period_min = g.period_min;
  gc.period_max = g.period_max;
  gc.noise_std = g.noise_std;
  gc.coupling = zone_coupling(g.channels, g.zones, g.coupling);
  gc.seed = experiment_seed(cfg, tag, extra);
  if (tag == SeedTag::generator && !zone && !g.schedule.empty()) {
    gc.attacks = g.schedule;
  } else {
    AttackPlan plan = g.plan;
    plan.count = attacks;
    gc.attacks = plan_attacks(plan, duration, experiment_seed(cfg, SeedTag::plan, static_cast<std::uint64_t>(tag) * 1000 + extra));
  }
  return gc;
}

std::vector<Series> training_series(const ExperimentConfig& cfg) {
  std::vector<Series> out;
  if (cfg.data.source == DataSettings::Source::csv) {
    out.push_back(load_swat_csv(cfg.data.csv.path, cfg.data.csv.schema));
    return out;
  }
  const GeneratorSettings& g = cfg.generator;
  if (cfg.federation.partition.kind == PartitionScheme::Kind::by_zone) {
    if (!g.schedule.empty()) throw ConfigError("field 'generator.schedule' is not supported with by_zone partitioning");
    for (std::size_t z = 0; z < g.zones; ++z) {
      const int zone = static_cast<int>(z);
      Series s = generate(generator_config(cfg, g.duration / g.zones, g.plan.count / g.zones, SeedTag::generator, zone));
      s.zone = zone;
      out.push_back(std::move(s));
    }
    return out;
  }
  out.push_back(generate(generator_config(cfg, g.duration, g.plan.count, SeedTag::generator)));
  return out;
}

Dataset build_dataset(const ExperimentConfig& cfg) {
  Dataset d;
  for (const Series& s : training_series(cfg)) {
    Split part = split_chronological(windowize(s, cfg.data.window, cfg.data.stride), cfg.data.split);
    append(d.train, std::move(part.train));
    append(d.validation, std::move(part.validation));
    append(d.test, std::move(part.test));
  }
  std::vector<Window>* others[] = {&d.validation, &d.test};
  d.stats = normalize(d.train, others);
  d.input_width = d.train.front().features.size();
  return d;
}

LayerSpec layer_spec(const ExperimentConfig& cfg, std::size_t input_width) {
  LayerSpec spec;
  spec.input = input_width;
  spec.hidden = cfg.model.hidden;
  spec.embedding = cfg.model.embedding;
  spec.classes = 2;
  spec.validate();
  return spec;
}

FederationConfig federation_config(const ExperimentConfig& cfg) {
  FederationConfig f;
  f.clients = cfg.federation.clients;
  f.rounds = cfg.federation.rounds;
  f.partition = cfg.federation.partition;
  f.parallelism = cfg.federation.parallelism;
  f.seed = cfg.seed;
  return f;
}

std::vector<Window> stream_windows(const ExperimentConfig& cfg, const NormStats& stats) {
  if (cfg.data.source == DataSettings::Source::csv) {
    throw ConfigError("field 'data.source': the stream subcommand needs the synthetic source");
  }
  const GeneratorConfig gc = generator_config(cfg, cfg.stream.duration, cfg.stream.attacks, SeedTag::stream);
  std::vector<Window> windows = windowize(generate(gc), cfg.data.window, cfg.data.stride);
  apply_normalizer(stats, windows);
  return windows;
}

// Metric lines ---------------------------------------------------------------

ordered_json metrics_to_json(const MetricsRecord& m) {
  ordered_json j;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  if (m.auc) j["auc"] = *m.auc;
  j["accuracy"] = m.accuracy;
  j["threshold"] = m.threshold;
  ordered_json pa = ordered_json::object();
  for (const auto& [type, acc] : m.per_attack) pa[std::string(attack_name(type))] = acc;
  j["per_attack"] = pa;
  j["counts"] = {{"tp", m.counts.tp}, {"fp", m.counts.fp}, {"tn", m.counts.tn}, {"fn", m.counts.fn}};
  return j;
}

ordered_json losses_to_json(const EpochLosses& l) {
  return {{"contrastive", l.contrastive},
          {"classification", l.classification},
          {"proximal", l.proximal},
          {"total", l.total}};
}

MetricsLine parse_metrics_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("metrics line is not valid JSON: ") + e.what());
  }
  MetricsLine out;
  try {
    out.type = j.at("type").get<std::string>();
    if (out.type == "error") return out;
    MetricsRecord& m = out.metrics;
    for (const char* key : {"round", "chunk", "context"}) {
      if (j.contains(key)) m.context = j.at(key).get<std::size_t>();
    }
    m.precision = j.at("precision").get<double>();
    m.recall = j.at("recall").get<double>();
    m.f1 = j.at("f1").get<double>();
    if (j.contains("auc")) m.auc = j.at("auc").get<double>();
    m.accuracy = j.at("accuracy").get<double>();
    m.threshold = j.at("threshold").get<double>();
    for (const auto& [name, acc] : j.at("per_attack").items()) {
      const auto type = parse_attack(name);
      if (!type) throw ConfigError("metrics line has unknown attack type '" + name + "'");
      m.per_attack[*type] = acc.get<double>();
    }
    const json& c = j.at("counts");
    m.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                c.at("fn").get<std::size_t>()};
    if (j.contains("losses")) {
      const json& l = j.at("losses");
      out.losses = EpochLosses{l.at("contrastive").get<double>(), l.at("classification").get<double>(),
                               l.at("proximal").get<double>(), l.at("total").get<double>()};
    }
    if (j.contains("clients")) {
      for (const json& c2 : j.at("clients")) {
        if (c2.contains("personalized_f1")) out.personalized_f1.push_back(c2.at("personalized_f1").get<double>());
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed metrics line: ") + e.what());
  }
  return out;
}

std::vector<MetricsLine> read_metrics_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::vector<MetricsLine> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_metrics_line(line));
  }
  return out;
}

EpochLosses mean_losses(const std::vector<ClientStats>& clients) {
  EpochLosses acc;
  if (clients.empty()) return acc;
  for (const ClientStats& c : clients) {
    const EpochLosses m = c.mean();
    acc.contrastive += m.contrastive;
    acc.classification += m.classification;
    acc.proximal += m.proximal;
    acc.total += m.total;
  }
  const double n = static_cast<double>(clients.size());
  return {acc.contrastive / n, acc.classification / n, acc.proximal / n, acc.total / n};
}

// Subcommands ----------------------------------------------------------------

GenerateOutput cmd_generate(const ExperimentConfig& cfg) {
  if (cfg.data.source == DataSettings::Source::csv) {
    throw ConfigError("field 'data.source': generate needs the synthetic source");
  }
  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);
  GenerateOutput out;
  const std::vector<Series> series = training_series(cfg);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const Series& s = series[i];
    const std::string stem = s.zone ? "dataset.zone" + std::to_string(*s.zone) : "dataset";
    const fs::path csv = dir / (stem + ".csv");
    const fs::path stats = dir / (stem + ".stats.json");
    write_series_csv(s, csv, cfg.data.csv.schema);

    const auto runs = anomalous_runs(s.labels);
    std::map<std::string, std::size_t> samples_per_attack;
    for (AttackType t : s.tags) {
      if (t != AttackType::none) ++samples_per_attack[std::string(attack_name(t))];
    }
    ordered_json j;
    j["samples"] = s.length();
    j["channels"] = s.names;
    if (s.zone) j["zone"] = *s.zone;
    j["anomalous_samples"] = std::count(s.labels.begin(), s.labels.end(), Label::anomalous);
    j["anomalous_runs"] = runs.size();
    j["samples_per_attack"] = samples_per_attack;
    ordered_json periods = ordered_json::array();
    for (double p : s.periods) periods.push_back(p);
    j["periods"] = periods;
    open_out(stats) << j.dump(2) << '\n';

    out.csv.push_back(csv);
    out.stats.push_back(stats);
  }
  return out;
}

TrainOutput cmd_train(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);
  const fs::path metrics_path = dir / "metrics.jsonl";
  const fs::path checkpoint_path = dir / "model.ckpt";

  const Dataset data = build_dataset(cfg);
  const LayerSpec spec = layer_spec(cfg, data.input_width);
  const ModelParams init = init_params(spec, experiment_seed(cfg, SeedTag::init));
  const FederationConfig fed = federation_config(cfg);
  const auto shards = partition(data.train, fed.partition, fed.clients, experiment_seed(cfg, SeedTag::partition));
  spdlog::info("train: {} train / {} validation / {} test windows, {} clients, model {}", data.train.size(),
               data.validation.size(), data.test.size(), shards.size(), spec.describe());

  std::ofstream jsonl = open_out(metrics_path);
  std::ofstream csv = open_out(dir / "metrics.csv");
  csv << csv_header("round") << '\n';
  const auto emit = [&](std::size_t round, const MetricsRecord& m, const std::vector<ClientStats>& clients,
                        const std::vector<double>& personalized) {
    jsonl << round_json(round, m, clients, personalized).dump() << '\n';
    csv << csv_row(round, m) << '\n';
    jsonl.flush();
    csv.flush();
  };

  const RoundCallback on_round = [&](const RoundReport& r) {
    emit(r.round, r.global, r.clients, r.personalized_f1);
    spdlog::info("round {}: f1 {:.4f} auc {} threshold {:.4f}", r.round, r.global.f1,
                 r.global.auc ? format_double(*r.global.auc) : "n/a", r.global.threshold);
  };

  // Round 0 is written before training so an aborted run keeps it.
  const MetricsRecord initial = evaluate_model(init, data.splits(), 0);
  emit(0, initial, {}, {});
  FederationResult result = fed.rounds == 0
                                ? FederationResult{initial, {}, init}
                                : run_federation(init, shards, fed, cfg.objective, cfg.contrastive, data.splits(), on_round);
  save_checkpoint(result.final_params, checkpoint_path);
  open_out(dir / "config.json") << config_to_json(cfg).dump(2) << '\n';
  return TrainOutput{std::move(result), metrics_path, checkpoint_path};
}

MetricsRecord cmd_evaluate(const ExperimentConfig& cfg, const fs::path& checkpoint, std::optional<double> threshold) {
  const Dataset data = build_dataset(cfg);
  const ModelParams params = load_checkpoint(checkpoint, layer_spec(cfg, data.input_width));
  MetricsRecord m;
  if (threshold) {
    m = score_metrics(anomaly_scores(params, data.test), data.test, *threshold, 0);
  } else {
    m = evaluate_model(params, data.splits(), 0);
  }
  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);
  ordered_json j;
  j["type"] = "evaluate";
  j["checkpoint"] = checkpoint.string();
  j.update(metrics_to_json(m));
  open_out(dir / "evaluate.jsonl") << j.dump() << '\n';
  return m;
}

StreamResult cmd_stream(const ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint) {
  const Dataset data = build_dataset(cfg);
  const LayerSpec spec = layer_spec(cfg, data.input_width);
  const ModelParams start =
      checkpoint ? load_checkpoint(*checkpoint, spec) : init_params(spec, experiment_seed(cfg, SeedTag::init));
  const auto chunks = make_chunks(stream_windows(cfg, data.stats), cfg.stream.chunk_windows);

  StreamConfig sc;
  sc.federation = federation_config(cfg);
  if (sc.federation.partition.kind == PartitionScheme::Kind::by_zone) {
    throw ConfigError("field 'federation.partition': the stream subcommand needs dirichlet partitioning");
  }
  sc.objective = cfg.objective;
  sc.contrastive = cfg.contrastive;
  sc.rounds_per_chunk = cfg.stream.rounds_per_chunk;
  sc.threshold = cfg.stream.threshold;
  StreamResult result = prequential_stream(start, chunks, sc);

  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);
  std::ofstream jsonl = open_out(dir / "stream.jsonl");
  std::ofstream csv = open_out(dir / "stream.csv");
  csv << csv_header("chunk") << '\n';
  for (const MetricsRecord& m : result.records) {
    ordered_json j;
    j["type"] = "chunk";
    j["chunk"] = m.context;
    j["windows"] = chunks[m.context].size();
    j.update(metrics_to_json(m));
    jsonl << j.dump() << '\n';
    csv << csv_row(m.context, m) << '\n';
  }
  return result;
}

void write_error_record(const fs::path& path, const std::string& message) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) return;
  ordered_json j;
  j["type"] = "error";
  j["message"] = message;
  out << j.dump() << '\n';
}

}  // namespace fcad
