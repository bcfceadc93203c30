#include "fcad/federation.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <exception>
#include <map>
#include <numeric>
#include <random>
#include <thread>

#include "fcad/rng.hpp"

namespace fcad {

namespace {

std::vector<ClientDataset> single_shard(const std::vector<Window>& windows) {
  ClientDataset d;
  d.client_id = 0;
  d.windows = windows;
  return {std::move(d)};
}

std::vector<ClientDataset> partition_dirichlet(const std::vector<Window>& windows, double alpha,
                                               std::size_t n_clients, std::uint64_t seed) {
  if (!(alpha > 0.0)) throw FederationError("partition: dirichlet alpha must be > 0");
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < windows.size(); ++i) by_class[label_value(windows[i].label)].push_back(i);

  for (int attempt = 0; attempt <= kPartitionRetries; ++attempt) {
    std::mt19937_64 rng(derive_seed({seed, static_cast<std::uint64_t>(attempt), 0x646972ull}));
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<std::vector<std::size_t>> assigned(n_clients);
    for (auto members : by_class) {
      std::shuffle(members.begin(), members.end(), rng);
      std::vector<double> p(n_clients);
      for (double& v : p) v = gamma(rng);
      const double total = std::accumulate(p.begin(), p.end(), 0.0);
      if (!(total > 0.0)) {
        // All draws underflowed (tiny alpha): the whole class goes to one client.
        std::fill(p.begin(), p.end(), 0.0);
        p[std::uniform_int_distribution<std::size_t>(0, n_clients - 1)(rng)] = 1.0;
      } else {
        for (double& v : p) v /= total;
      }
      const auto n = static_cast<double>(members.size());
      double cumulative = 0.0;
      std::size_t begin = 0;
      for (std::size_t c = 0; c < n_clients; ++c) {
        cumulative += p[c];
        const std::size_t end =
            c + 1 == n_clients ? members.size() : std::min(members.size(), static_cast<std::size_t>(std::llround(cumulative * n)));
        for (std::size_t k = begin; k < std::max(begin, end); ++k) assigned[c].push_back(members[k]);
        begin = std::max(begin, end);
      }
    }
    if (std::any_of(assigned.begin(), assigned.end(), [](const auto& a) { return a.empty(); })) continue;

    std::vector<ClientDataset> out(n_clients);
    for (std::size_t c = 0; c < n_clients; ++c) {
      std::sort(assigned[c].begin(), assigned[c].end());
      out[c].client_id = c;
      out[c].windows.reserve(assigned[c].size());
      for (std::size_t i : assigned[c]) out[c].windows.push_back(windows[i]);
    }
    return out;
  }
  throw FederationError("partition: dirichlet(alpha=" + std::to_string(alpha) + ") left a client empty after " +
                        std::to_string(kPartitionRetries) + " redraws (" + std::to_string(windows.size()) +
                        " windows, " + std::to_string(n_clients) + " clients)");
}

std::vector<ClientDataset> partition_by_zone(const std::vector<Window>& windows, std::size_t n_clients) {
  std::map<int, std::vector<std::size_t>> zones;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (!windows[i].zone) throw FederationError("partition: by-zone requires every window to carry a zone tag");
    zones[*windows[i].zone].push_back(i);
  }
  if (zones.size() < n_clients) {
    throw FederationError("partition: " + std::to_string(zones.size()) + " zones cannot cover " +
                          std::to_string(n_clients) + " clients");
  }
  std::vector<ClientDataset> out(n_clients);
  std::size_t k = 0;
  for (const auto& [zone, members] : zones) {
    ClientDataset& d = out[k % n_clients];
    d.client_id = k % n_clients;
    d.zone = (k < n_clients) ? std::optional<int>(zone) : std::nullopt;
    for (std::size_t i : members) d.windows.push_back(windows[i]);
    ++k;
  }
  for (ClientDataset& d : out) {
    std::sort(d.windows.begin(), d.windows.end(), [](const Window& a, const Window& b) { return a.start < b.start; });
  }
  return out;
}

std::exception_ptr with_client(std::size_t client_id, std::exception_ptr e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    return std::make_exception_ptr(FederationError("client " + std::to_string(client_id) + ": " + ex.what()));
  } catch (...) {
    return std::make_exception_ptr(FederationError("client " + std::to_string(client_id) + ": unknown error"));
  }
}

}  // namespace

std::vector<ClientDataset> partition(const std::vector<Window>& windows, const PartitionScheme& scheme,
                                     std::size_t n_clients, std::uint64_t seed) {
  if (n_clients < 1) throw FederationError("partition: need at least one client");
  if (windows.empty()) throw FederationError("partition: no windows to distribute");
  if (n_clients == 1) return single_shard(windows);
  if (scheme.kind == PartitionScheme::Kind::by_zone) return partition_by_zone(windows, n_clients);
  return partition_dirichlet(windows, scheme.alpha, n_clients, seed);
}

EpochLosses ClientStats::mean() const {
  EpochLosses m;
  if (epochs.empty()) return m;
  for (const EpochLosses& e : epochs) {
    m.contrastive += e.contrastive;
    m.classification += e.classification;
    m.proximal += e.proximal;
    m.total += e.total;
  }
  const auto n = static_cast<double>(epochs.size());
  m.contrastive /= n;
  m.classification /= n;
  m.proximal /= n;
  m.total /= n;
  return m;
}

LocalResult local_train(const ClientState& client, const ModelParams& global, const ClientDataset& data,
                        const ObjectiveConfig& obj, const ContrastiveConfig& con, const LocalTrainOptions& opts) {
  obj.validate();
  con.validate();
  if (data.windows.empty()) throw FederationError("client " + std::to_string(client.client_id) + ": empty shard");

  LocalResult result{global, {}};
  result.stats.client_id = client.client_id;
  result.stats.samples = data.size();
  std::vector<double> velocity(global.size(), 0.0);
  std::mt19937_64 rng(client.rng_seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t width = global.spec().input;

  std::vector<Window> batch;
  std::vector<Label> labels;
  for (std::size_t epoch = 0; epoch < obj.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLosses sums;
    std::size_t contrastive_batches = 0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += obj.batch_size) {
      const std::size_t end = std::min(order.size(), begin + obj.batch_size);
      batch.clear();
      labels.clear();
      for (std::size_t k = begin; k < end; ++k) {
        batch.push_back(data.windows[order[k]]);
        labels.push_back(batch.back().label);
      }

      Graph g;
      const BoundModel bound = bind(g, result.params, true);
      const Expr z = encode(bound, g.constant(stack_features(batch, width)));
      const Expr logits = classify(bound, z);
      const PairSet pairs = build_pairs(labels, rng, con);
      result.stats.dropped_anchors += pairs.dropped;
      std::optional<Expr> contrastive;
      if (pairs.empty()) {
        ++result.stats.contrastive_skipped;
      } else {
        contrastive = nt_xent(z, pairs, con.temperature);
        sums.contrastive += contrastive->scalar();
        ++contrastive_batches;
      }
      const Expr ce = cross_entropy(logits, labels);
      std::optional<Expr> prox;
      if (opts.build_proximal) prox = proximal_term(bound, global, obj.lambda_prox);
      const Expr total = total_loss(contrastive, ce, prox, obj.lambda_class);

      sums.classification += ce.scalar();
      if (prox) sums.proximal += prox->scalar();
      sums.total += total.scalar();
      ++batches;

      std::vector<double> grads = flatten_gradients(bound, g.backward(total));
      clip_global_norm(grads, obj.clip_norm);
      StepResult step = sgd_step(result.params, grads, velocity, obj);
      result.params = std::move(step.params);
      velocity = std::move(step.velocity);
    }
    EpochLosses mean;
    mean.contrastive = contrastive_batches ? sums.contrastive / static_cast<double>(contrastive_batches) : 0.0;
    mean.classification = sums.classification / static_cast<double>(batches);
    mean.proximal = sums.proximal / static_cast<double>(batches);
    mean.total = sums.total / static_cast<double>(batches);
    result.stats.epochs.push_back(mean);
    result.stats.batches += batches;
  }
  return result;
}

std::vector<double> aggregation_weights(std::span<const ClientUpdate> updates) {
  std::vector<const ClientUpdate*> sorted;
  for (const ClientUpdate& u : updates) sorted.push_back(&u);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->client_id < b->client_id; });
  double total = 0.0;
  for (const ClientUpdate* u : sorted) total += static_cast<double>(u->size);
  std::vector<double> w;
  for (const ClientUpdate* u : sorted) w.push_back(static_cast<double>(u->size) / total);
  return w;
}

ModelParams aggregate(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw FederationError("aggregate: no client updates");
  std::vector<const ClientUpdate*> sorted;
  for (const ClientUpdate& u : updates) sorted.push_back(&u);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->client_id < b->client_id; });

  const ModelParams& first = sorted.front()->params;
  double total = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const ClientUpdate& u = *sorted[i];
    if (i > 0 && u.client_id == sorted[i - 1]->client_id) {
      throw FederationError("aggregate: duplicate update from client " + std::to_string(u.client_id));
    }
    if (u.params.fingerprint() != first.fingerprint()) {
      throw FederationError("aggregate: client " + std::to_string(u.client_id) + " fingerprint mismatch");
    }
    if (u.size < 1) throw FederationError("aggregate: client " + std::to_string(u.client_id) + " reports size 0");
    total += static_cast<double>(u.size);
  }

  std::vector<double> out(first.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double v0 = first.flat()[k];
    double lo = v0;
    double hi = v0;
    double acc = 0.0;
    for (const ClientUpdate* u : sorted) {
      const double v = u->params.flat()[k];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      acc += static_cast<double>(u->size) * v;
    }
    // Exact when every client agrees; otherwise clamp rounding back into the
    // convex hull of the inputs.
    out[k] = (lo == hi) ? v0 : std::clamp(acc / total, lo, hi);
  }
  return first.with_flat(std::move(out));
}

RoundOutcome run_round(const ModelParams& global, std::span<const ClientDataset> shards, std::size_t round,
                       const FederationConfig& fed, const ObjectiveConfig& obj, const ContrastiveConfig& con) {
  if (shards.empty()) throw FederationError("run_round: no clients");
  std::vector<std::optional<LocalResult>> results(shards.size());
  std::vector<std::exception_ptr> errors(shards.size());

  auto work = [&](std::size_t i) {
    const ClientDataset& shard = shards[i];
    ClientState state{shard.client_id, derive_seed({fed.seed, shard.client_id, round})};
    try {
      results[i] = local_train(state, global, shard, obj, con, fed.local);
    } catch (...) {
      errors[i] = with_client(shard.client_id, std::current_exception());
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(fed.parallelism, 1, shards.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < shards.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < shards.size(); i = next++) work(i);
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  RoundOutcome out{global, {}, {}};
  std::vector<ClientUpdate> updates;
  updates.reserve(shards.size());
  for (std::size_t i = 0; i < shards.size(); ++i) {
    updates.push_back({shards[i].client_id, results[i]->params, shards[i].size()});
    out.clients.push_back(results[i]->stats);
    out.client_params.push_back(results[i]->params);
  }
  out.global = aggregate(updates);
  return out;
}

MetricsRecord evaluate_model(const ModelParams& params, const EvalSplits& splits, std::size_t context) {
  std::vector<Label> val_labels;
  for (const Window& w : splits.validation) val_labels.push_back(w.label);
  const double threshold = select_threshold(anomaly_scores(params, splits.validation), val_labels);
  return score_metrics(anomaly_scores(params, splits.test), splits.test, threshold, context);
}

FederationResult run_federation(const ModelParams& init, std::span<const ClientDataset> shards,
                                const FederationConfig& fed, const ObjectiveConfig& obj,
                                const ContrastiveConfig& con, const EvalSplits& splits, const RoundCallback& on_round) {
  FederationResult result{evaluate_model(init, splits, 0), {}, init};
  ServerState server{init, 0, {}};
  for (const ClientDataset& s : shards) server.clients.push_back(s.client_id);

  for (std::size_t r = 1; r <= fed.rounds; ++r) {
    RoundOutcome outcome{init, {}, {}};
    try {
      outcome = run_round(server.global, shards, r, fed, obj, con);
    } catch (const std::exception& e) {
      throw FederationAborted("round " + std::to_string(r) + " aborted: " + e.what(), result.reports);
    }
    server.global = std::move(outcome.global);
    server.round = r;

    RoundReport report;
    report.round = r;
    report.clients = std::move(outcome.clients);
    report.global = evaluate_model(server.global, splits, r);
    for (const ModelParams& local : outcome.client_params) {
      report.personalized_f1.push_back(evaluate_model(local, splits, r).f1);
    }
    if (on_round) on_round(report);
    result.reports.push_back(std::move(report));
  }
  result.final_params = server.global;
  return result;
}

}  // namespace fcad
