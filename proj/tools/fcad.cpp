// fcad: command-line front end for the federated contrastive detector.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "fcad/config.hpp"
#include "fcad/experiment.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> parallelism;
  std::optional<std::string> out;
  std::optional<double> threshold;
  std::optional<std::string> checkpoint;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("fcad");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("FCAD_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

fcad::ExperimentConfig load(const Options& o) {
  fcad::ExperimentConfig cfg = o.config.empty() ? fcad::ExperimentConfig{} : fcad::parse_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.parallelism) cfg.federation.parallelism = *o.parallelism;
  if (o.out) cfg.output_dir = *o.out;
  cfg.validate();
  return cfg;
}

// Every failure emits exactly one error record on stderr, mirrored into the
// subcommand's metrics sink when it has one.
int fail(const std::string& message, const std::string& out_dir, const std::string& sink) {
  nlohmann::ordered_json j;
  j["type"] = "error";
  j["message"] = message;
  std::cerr << j.dump() << '\n';
  if (!sink.empty() && !out_dir.empty()) fcad::write_error_record(std::filesystem::path(out_dir) / sink, message);
  return 1;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Override the config seed");
  cmd->add_option("--parallelism", o.parallelism, "Client training threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Federated contrastive anomaly detection simulator"};
  app.require_subcommand(1);
  Options o;

  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset as CSV");
  auto* train = app.add_subcommand("train", "Run federated training and write round metrics");
  auto* evaluate = app.add_subcommand("evaluate", "Score the test split with a checkpoint");
  auto* stream = app.add_subcommand("stream", "Prequential evaluation on a generated stream");
  auto* print = app.add_subcommand("print-config", "Print the fully materialised config");
  for (auto* cmd : {generate, train, evaluate, stream, print}) add_common(cmd, o);
  evaluate->add_option("--threshold", o.threshold, "Fixed decision threshold");
  evaluate->add_option("--checkpoint", o.checkpoint, "Checkpoint (default <out>/model.ckpt)");
  stream->add_option("--checkpoint", o.checkpoint, "Starting checkpoint (default: seeded init)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail(e.what(), "", "");
  }

  std::string sink;
  if (train->parsed()) sink = "metrics.jsonl";
  if (evaluate->parsed()) sink = "evaluate.jsonl";
  if (stream->parsed()) sink = "stream.jsonl";
  std::string out_dir = o.out.value_or(fcad::ExperimentConfig{}.output_dir);

  try {
    const fcad::ExperimentConfig cfg = load(o);
    out_dir = cfg.output_dir;
    if (print->parsed()) {
      std::cout << fcad::config_to_json(cfg).dump(2) << '\n';
    } else if (generate->parsed()) {
      for (const auto& p : fcad::cmd_generate(cfg).csv) std::cout << p.string() << '\n';
    } else if (train->parsed()) {
      const auto r = fcad::cmd_train(cfg);
      std::cout << r.metrics.string() << '\n' << r.checkpoint.string() << '\n';
    } else if (evaluate->parsed()) {
      const std::string ckpt = o.checkpoint.value_or((std::filesystem::path(cfg.output_dir) / "model.ckpt").string());
      const auto m = fcad::cmd_evaluate(cfg, ckpt, o.threshold);
      std::cout << fcad::metrics_to_json(m).dump() << '\n';
    } else if (stream->parsed()) {
      std::optional<std::filesystem::path> ckpt;
      if (o.checkpoint) ckpt = *o.checkpoint;
      const auto r = fcad::cmd_stream(cfg, ckpt);
      std::cout << r.records.size() << " chunk records\n";
    }
  } catch (const std::exception& e) {
    return fail(e.what(), out_dir, sink);
  }
  return 0;
}
