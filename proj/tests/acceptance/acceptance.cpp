// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fcad/experiment.hpp"
#include "fcad/rng.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace fcad;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path g_root;

std::vector<Window> random_batch(std::size_t n, std::size_t width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<Window> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].label = (i % 3 == 1) ? Label::anomalous : Label::normal;
    for (std::size_t k = 0; k < width; ++k) out[i].features.push_back(d(rng));
  }
  return out;
}

// Redraws any input row with a first-layer preactivation within 1e-2 of the
// relu kink, where central differences are meaningless.
std::vector<Window> kink_free_batch(const ModelParams& model, std::size_t n, std::uint64_t seed) {
  const std::size_t width = model.spec().input;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  const Tensor w = model.tensor(0);
  const Tensor b = model.tensor(1);
  std::vector<Window> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].label = (i % 3 == 1) ? Label::anomalous : Label::normal;
    Tensor x(1, static_cast<Eigen::Index>(width));
    do {
      for (Eigen::Index k = 0; k < x.cols(); ++k) x(0, k) = d(rng);
    } while (((x * w) + b).cwiseAbs().minCoeff() <= 1e-2);
    out[i].features.assign(x.data(), x.data() + x.size());
  }
  return out;
}

// 1. Autodiff gradients of every loss term against central differences.
Outcome gradients() {
  const LayerSpec spec{8, {16}, 8, 2};
  const ModelParams local = init_params(spec, 101);
  const ModelParams global = init_params(spec, 202);
  const std::vector<Window> batch = kink_free_batch(local, 16, 303);
  std::vector<Label> labels;
  for (const Window& w : batch) labels.push_back(w.label);
  std::mt19937_64 rng(404);
  const PairSet pairs = build_pairs(labels, rng, {});

  const std::vector<std::string> terms = {"nt_xent", "cross_entropy", "proximal", "composite"};
  double worst = 0.0;
  double fine = 0.0;
  std::string detail;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    Graph g;
    const BoundModel m = bind(g, local, true);
    const Expr z = encode(m, g.constant(stack_features(batch, 8)));
    const Expr con = nt_xent(z, pairs, 0.5);
    const Expr ce = cross_entropy(classify(m, z), labels);
    const Expr prox = proximal_term(m, global, 0.1);
    const Expr root = t == 0 ? con : t == 1 ? ce : t == 2 ? prox : total_loss(con, ce, prox, 1.0);
    const double err = check_gradient(g, root, 1e-3).max_error;
    worst = std::max(worst, err);
    fine = std::max(fine, check_gradient(g, root, 1e-4).max_error);
    detail += fmt("%s %.2e; ", terms[t].c_str(), err);
  }
  // Reported only: truncation error shrinks as step^2 when the gradient is right.
  return {worst < 1e-4, detail + fmt("limit 1e-4; worst at step 1e-4 %.2e", fine)};
}

// 2. Closed-form loss values.
Outcome closed_forms() {
  Tensor z(3, 2);
  z << 1, 0, 1, 0, 0, 1;
  PairSet one;
  one.records.push_back({0, 1, {2}});
  PairSet alone;
  alone.records.push_back({0, 1, {}});
  auto logits = [](double a, double b) {
    Tensor t(1, 2);
    t << a, b;
    return t;
  };
  const Label n[] = {Label::normal};
  const Label a[] = {Label::anomalous};
  std::vector<double> zero(10, 0.0), diff(10, 0.0);
  diff[0] = 3;
  diff[1] = 4;
  const LayerSpec tiny{1, {}, 2, 2};
  const ModelParams g0(tiny, zero), g1(tiny, diff);

  const std::vector<std::pair<double, double>> checks = {
      {nt_xent(z, alone, 0.5), 0.0},
      {nt_xent(z, one, 1.0), 0.31326169},
      {nt_xent(z, one, 0.5), 0.12692801},
      {cross_entropy(logits(30, -30), n), 0.0},
      {cross_entropy(logits(0, 0), a), 0.69314718},
      {cross_entropy(logits(1, 0), a), 1.31326169},
      {proximal_term(g0, g0, 0.1), 0.0},
      {proximal_term(g1, g0, 1.0), 25.0},
      {proximal_term(g1, g0, 0.1), 2.5},
  };
  double worst = 0.0;
  for (const auto& [got, want] : checks) worst = std::max(worst, std::abs(got - want));
  return {worst <= 1e-8, fmt("%zu values, max deviation %.2e", checks.size(), worst)};
}

// 3. Weighted aggregation: worked examples plus random properties.
Outcome aggregation() {
  const LayerSpec tiny{1, {}, 2, 2};
  auto upd = [&](std::size_t id, double v, std::size_t size) {
    return ClientUpdate{id, ModelParams(tiny, std::vector<double>(10, v)), size};
  };
  bool ok = true;
  std::string failures;
  const ClientUpdate two[] = {upd(0, 0.0, 1), upd(1, 4.0, 3)};
  const ClientUpdate three[] = {upd(0, 1.0, 2), upd(1, 2.0, 3), upd(2, 3.0, 5)};
  if (aggregate(two).flat()[0] != 3.0) ok = false, failures += "two-client example; ";
  if (std::abs(aggregate(three).flat()[0] - 2.3) > 1e-15) ok = false, failures += "three-client example; ";

  const LayerSpec spec{3, {4}, 2, 2};
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> clients(1, 8), size(1, 5000);
  std::normal_distribution<double> value(0.0, 3.0);
  const std::size_t n_params = init_params(spec, 0).size();
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    std::vector<ClientUpdate> u;
    const std::size_t k = clients(rng);
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> flat(n_params);
      for (double& v : flat) v = value(rng);
      u.push_back({c * 3 + 1, ModelParams(spec, flat), size(rng)});
    }
    const auto w = aggregation_weights(u);
    if (std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) > 1e-15) ok = false, failures += "weight sum; ";
    const ModelParams agg = aggregate(u);
    for (std::size_t i = 0; i < n_params; ++i) {
      double lo = INFINITY, hi = -INFINITY;
      for (const ClientUpdate& x : u) lo = std::min(lo, x.params.flat()[i]), hi = std::max(hi, x.params.flat()[i]);
      if (agg.flat()[i] < lo || agg.flat()[i] > hi) {
        ok = false;
        failures += "convex bound; ";
        break;
      }
    }
    const ClientUpdate single[] = {u[0]};
    if (!(aggregate(single) == u[0].params)) ok = false, failures += "single-client identity; ";
    std::shuffle(u.begin(), u.end(), rng);
    if (!(aggregate(u) == agg)) ok = false, failures += "order invariance; ";
  }
  return {ok, ok ? "examples exact, 1000 random cases hold" : failures};
}

nlohmann::json small_config(const fs::path& out) {
  nlohmann::json j = nlohmann::json::parse(R"({
    "seed": 11,
    "model": {"hidden": [32, 16], "embedding": 8},
    "objective": {"local_epochs": 2},
    "federation": {"clients": 4, "rounds": 3},
    "generator": {"duration": 12000, "attacks": {"count": 50}}
  })");
  j["output"] = {{"dir", out.string()}};
  return j;
}

// 4. Byte-identical outputs across repeats and parallelism.
Outcome determinism() {
  const fs::path dir = g_root / "determinism";
  fs::create_directories(dir);
  const fs::path cfg = dir / "config.json";
  std::ofstream(cfg) << small_config(dir / "unused").dump(2);
  const std::vector<std::pair<std::string, std::string>> runs = {{"a", "1"}, {"b", "1"}, {"c", "4"}};
  for (const auto& [name, par] : runs) {
    const int status = oracle::run_cli("train --config " + cfg.string() + " --parallelism " + par + " --out " +
                                       (dir / name).string());
    if (status != 0) return {false, "train run " + name + " exited with " + std::to_string(status)};
  }
  for (const char* file : {"metrics.jsonl", "metrics.csv", "model.ckpt"}) {
    const std::string a = oracle::read_file(dir / "a" / file);
    if (a.empty() || a != oracle::read_file(dir / "b" / file)) return {false, std::string(file) + " differs across repeats"};
    if (a != oracle::read_file(dir / "c" / file)) return {false, std::string(file) + " differs across parallelism"};
  }
  return {true, "metrics.jsonl, metrics.csv, model.ckpt identical (repeat, parallelism 1 vs 4)"};
}

struct DefaultRun {
  bool ok = false;
  std::string error;
  double seconds = 0.0;
  std::vector<MetricsLine> lines;
};

DefaultRun& default_run() {
  static DefaultRun run = [] {
    DefaultRun r;
    const fs::path out = g_root / "default";
    const auto t0 = std::chrono::steady_clock::now();
    const int status = oracle::run_cli("train --out " + out.string());
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (status != 0) {
      r.error = "train exited with " + std::to_string(status);
      return r;
    }
    r.lines = read_metrics_file(out / "metrics.jsonl");
    r.ok = r.lines.size() >= 2;
    if (!r.ok) r.error = "metrics file has fewer than two records";
    return r;
  }();
  return run;
}

// Model-free reference: per-channel z-scores, threshold from validation.
double oracle_f1(const Dataset& data, std::size_t channels) {
  const oracle::ZScoreDetector det(data.train, channels);
  std::vector<Label> val_labels, test_labels;
  for (const Window& w : data.validation) val_labels.push_back(w.label);
  for (const Window& w : data.test) test_labels.push_back(w.label);
  const double t = select_threshold(det.scores(data.validation), val_labels);
  return precision_recall_f1(confusion(det.scores(data.test), test_labels, t)).f1;
}

// 5. End-to-end detection on the default synthetic configuration.
Outcome detection() {
  DefaultRun& r = default_run();
  if (!r.ok) return {false, r.error};
  const MetricsRecord& first = r.lines.front().metrics;
  const MetricsRecord& last = r.lines.back().metrics;
  const double auc = last.auc.value_or(0.0);
  const ExperimentConfig cfg;
  const double reference = oracle_f1(build_dataset(cfg), cfg.generator.channels);
  const bool pass = last.f1 >= 0.85 && auc >= 0.90 && last.f1 > first.f1 && r.seconds < 300.0;
  return {pass, fmt("round %zu F1 %.4f (round 0 %.4f), AUC %.4f, precision %.4f, recall %.4f, %.1f s; "
                    "z-score reference F1 %.4f",
                    last.context, last.f1, first.f1, auc, last.precision, last.recall, r.seconds, reference)};
}

// 6. Per-attack ordering plus the generator's model-free ordering.
Outcome attack_ordering() {
  DefaultRun& r = default_run();
  if (!r.ok) return {false, r.error};
  const auto& acc = r.lines.back().metrics.per_attack;
  auto get = [&](AttackType t) {
    const auto it = acc.find(t);
    return it == acc.end() ? NAN : it->second;
  };
  const double ci = get(AttackType::command_injection), st = get(AttackType::sensor_tampering),
               rp = get(AttackType::replay), dos = get(AttackType::dos), tm = get(AttackType::timing);
  const bool learned = ci >= st && st >= rp && std::min(dos, tm) <= rp;

  ExperimentConfig cfg;
  const std::vector<Window> windows = windowize(training_series(cfg).at(0), cfg.data.window, cfg.data.stride);
  const std::size_t fit_end = static_cast<std::size_t>(static_cast<double>(windows.size()) * cfg.data.split.train);
  const oracle::ZScoreDetector det(std::span<const Window>(windows).first(fit_end), cfg.generator.channels);
  std::map<AttackType, std::pair<double, double>> sums;
  for (const Window& w : windows) {
    sums[w.attack].first += det.score(w);
    sums[w.attack].second += 1.0;
  }
  const double ci_mean = sums[AttackType::command_injection].first / sums[AttackType::command_injection].second;
  const double tm_mean = sums[AttackType::timing].first / sums[AttackType::timing].second;
  const bool data_order = ci_mean > tm_mean;
  return {learned && data_order,
          fmt("command %.4f, tampering %.4f, replay %.4f, dos %.4f, timing %.4f; "
              "z-score mean command %.3f > timing %.3f: %s",
              ci, st, rp, dos, tm, ci_mean, tm_mean, data_order ? "yes" : "no")};
}

// 7. Rising moving-average accuracy on the default stream.
Outcome stream_trend() {
  const fs::path out = g_root / "stream";
  if (const int status = oracle::run_cli("stream --out " + out.string()); status != 0) {
    return {false, "stream exited with " + std::to_string(status)};
  }
  std::vector<double> acc;
  for (const MetricsLine& l : read_metrics_file(out / "stream.jsonl")) acc.push_back(l.metrics.accuracy);
  if (acc.size() < 4) return {false, "fewer than four chunks"};
  const std::vector<double> ma = moving_average(acc, 4);
  const std::size_t q = ma.size() / 4;
  const double head = std::accumulate(ma.begin(), ma.begin() + static_cast<std::ptrdiff_t>(q), 0.0) / static_cast<double>(q);
  const double tail = std::accumulate(ma.end() - static_cast<std::ptrdiff_t>(q), ma.end(), 0.0) / static_cast<double>(q);
  return {tail > head, fmt("%zu chunks, first-quarter mean %.4f, last-quarter mean %.4f", acc.size(), head, tail)};
}

// 8. Ablation identities.
Outcome ablations() {
  const LayerSpec spec{8, {16}, 8, 2};
  const ModelParams global = init_params(spec, 5);
  ClientDataset data{0, random_batch(64, 8, 6), {}};
  ObjectiveConfig obj;
  obj.lambda_prox = 0.0;
  obj.local_epochs = 2;
  obj.batch_size = 16;
  LocalTrainOptions without;
  without.build_proximal = false;
  const LocalResult a = local_train({0, 77}, global, data, obj, {});
  const LocalResult b = local_train({0, 77}, global, data, obj, {}, without);
  const bool prox_identity = a.params == b.params;

  // All-normal shard of two batches: nothing but lambda1 * CE + proximal may
  // drive the steps.
  ClientDataset normal{0, random_batch(8, 8, 9), {}};
  for (Window& w : normal.windows) w.label = Label::normal;
  ObjectiveConfig o2;
  o2.lambda_class = 0.7;
  o2.lambda_prox = 0.5;
  o2.local_epochs = 1;
  o2.batch_size = 4;
  const std::uint64_t seed = 31;
  const LocalResult trained = local_train({0, seed}, global, normal, o2, {});

  std::vector<std::size_t> order(8);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  ModelParams theta = global;
  std::vector<double> velocity(global.size(), 0.0);
  for (std::size_t begin = 0; begin < 8; begin += 4) {
    std::vector<Window> batch;
    std::vector<Label> labels;
    for (std::size_t k = begin; k < begin + 4; ++k) {
      batch.push_back(normal.windows[order[k]]);
      labels.push_back(Label::normal);
    }
    Graph g;
    const BoundModel m = bind(g, theta, true);
    const Expr z = encode(m, g.constant(stack_features(batch, 8)));
    const Expr loss = o2.lambda_class * cross_entropy(classify(m, z), labels) + proximal_term(m, global, o2.lambda_prox);
    std::vector<double> grads = flatten_gradients(m, g.backward(loss));
    clip_global_norm(grads, o2.clip_norm);
    StepResult s = sgd_step(theta, grads, velocity, o2);
    theta = std::move(s.params);
    velocity = std::move(s.velocity);
  }
  const bool empty_pairs = trained.params == theta && trained.stats.contrastive_skipped == 2 &&
                           trained.stats.epochs.at(0).contrastive == 0.0;
  return {prox_identity && empty_pairs,
          fmt("lambda2=0 vs no proximal node: %s; all-normal batches match lambda1*CE + proximal steps: %s",
              prox_identity ? "bit-identical" : "differ", empty_pairs ? "bit-identical" : "differ")};
}

// 9. README statement and the SWaT-layout fixture.
Outcome real_data_scope() {
  const fs::path src = FCAD_SOURCE_DIR;
  const std::string readme = oracle::read_file(src / "README.md");
  const bool stated = readme.find("not reproduced") != std::string::npos && readme.find("SWaT") != std::string::npos;

  const Series s = load_swat_csv(src / "tests" / "fixtures" / "swat_layout.csv", {});
  const auto runs = anomalous_runs(s.labels);
  const bool loaded = s.length() == 40 && s.channels() == 8 && s.names.front() == "FIT101" && runs.size() == 1 &&
                      runs[0] == std::pair<std::size_t, std::size_t>{24, 30} && s.tags[24] == AttackType::unknown &&
                      s.samples(39, 1) == 539.5;
  const auto windows = windowize(s, 10, 5);
  const bool windowed = windows.size() == 7 && windows[4].label == Label::anomalous && windows[0].label == Label::normal;
  return {stated && loaded && windowed,
          fmt("README statement %s; fixture %zu rows x %zu channels, %zu attack run, %zu windows",
              stated ? "present" : "missing", s.length(), s.channels(), runs.size(), windows.size())};
}

// 10. Metric functions against brute force and worked examples.
Outcome metric_oracles() {
  std::mt19937_64 rng(99);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 200)(rng);
    std::uniform_int_distribution<int> level(0, 15);
    std::vector<double> scores(n);
    std::vector<Label> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = (rng() % 3 == 0) ? Label::anomalous : Label::normal;
      scores[i] = level(rng) / 15.0;
    }
    labels[0] = Label::anomalous;
    labels[1] = Label::normal;
    worst = std::max(worst, std::abs(roc_auc(scores, labels) - oracle::brute_force_auc(scores, labels)));
  }
  ConfusionCounts c;
  c.tp = 9;
  c.fp = 1;
  c.fn = 2;
  const auto prf = precision_recall_f1(c);
  ConfusionCounts none;
  none.fn = 3;
  const bool worked = std::abs(prf.precision - 0.9) < 1e-12 && std::abs(prf.recall - 0.81818) < 1e-5 &&
                      std::abs(prf.f1 - 0.85714) < 1e-5 && precision_recall_f1(none).precision == 0.0;
  const double s4[] = {0.1, 0.4, 0.35, 0.8};
  const Label l4[] = {Label::normal, Label::normal, Label::anomalous, Label::anomalous};
  const bool auc_example = std::abs(roc_auc(s4, l4) - 0.75) < 1e-12;
  return {worst <= 1e-12 && worked && auc_example,
          fmt("500 AUC cases, max deviation %.2e; P/R/F1 %.5f/%.5f/%.5f", worst, prf.precision, prf.recall, prf.f1)};
}

}  // namespace

int main() {
  g_root = oracle::scratch_dir("acceptance");
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, gradients},   {2, closed_forms},    {3, aggregation},  {4, determinism}, {5, detection},
      {6, attack_ordering}, {7, stream_trend}, {8, ablations}, {9, real_data_scope}, {10, metric_oracles},
  };
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d: %s (%.1f s) %s\n", id, o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
