#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fcad/contrastive.hpp"
#include "fcad/error.hpp"
#include "fcad/eval.hpp"
#include "fcad/model.hpp"
#include "fcad/objective.hpp"
#include "fcad/window.hpp"

namespace fcad {

class FederationError : public Error {
 public:
  explicit FederationError(const std::string& message) : Error("federation", message) {}
};

/// One node's private shard. Windows never leave the client side.
struct ClientDataset {
  std::size_t client_id = 0;
  std::vector<Window> windows;
  std::optional<int> zone;

  std::size_t size() const { return windows.size(); }
};

struct PartitionScheme {
  enum class Kind { dirichlet, by_zone };
  Kind kind = Kind::dirichlet;
  double alpha = 0.5;
};

/// Maximum redraws when a Dirichlet draw leaves a client without windows.
inline constexpr int kPartitionRetries = 10;

/// Disjoint cover of `windows`. Each shard keeps its windows in input order.
std::vector<ClientDataset> partition(const std::vector<Window>& windows, const PartitionScheme& scheme,
                                     std::size_t n_clients, std::uint64_t seed);

struct ClientState {
  std::size_t client_id = 0;
  /// Seeds shuffling and positive sampling for one round.
  std::uint64_t rng_seed = 0;
};

struct EpochLosses {
  double contrastive = 0.0;
  double classification = 0.0;
  double proximal = 0.0;
  double total = 0.0;
};

struct ClientStats {
  std::size_t client_id = 0;
  std::size_t samples = 0;
  std::vector<EpochLosses> epochs;
  std::size_t batches = 0;
  std::size_t dropped_anchors = 0;
  /// Batches whose pair set was empty, so the contrastive term was skipped.
  std::size_t contrastive_skipped = 0;

  /// Mean over epochs; zero when no epoch ran.
  EpochLosses mean() const;
};

struct LocalTrainOptions {
  /// When false the proximal term is never put into the graph.
  bool build_proximal = true;
};

struct LocalResult {
  ModelParams params;
  ClientStats stats;
};

/// Starts from theta_global; per epoch shuffles the shard with the client's
/// stream and takes one clipped momentum-SGD step per batch on the total loss.
LocalResult local_train(const ClientState& client, const ModelParams& global, const ClientDataset& data,
                        const ObjectiveConfig& obj, const ContrastiveConfig& con, const LocalTrainOptions& opts = {});

/// The only thing a client sends to the server.
struct ClientUpdate {
  std::size_t client_id = 0;
  ModelParams params;
  std::size_t size = 0;
};

/// |D_i| / sum_j |D_j| in ascending client-id order.
std::vector<double> aggregation_weights(std::span<const ClientUpdate> updates);

/// Dataset-size-weighted mean of the client parameter vectors, summed in
/// ascending client-id order.
ModelParams aggregate(std::span<const ClientUpdate> updates);

struct ServerState {
  ModelParams global;
  std::size_t round = 0;
  std::vector<std::size_t> clients;
};

struct RoundOutcome {
  ModelParams global;
  std::vector<ClientStats> clients;
  std::vector<ModelParams> client_params;
};

struct FederationConfig {
  std::size_t clients = 4;
  std::size_t rounds = 30;
  PartitionScheme partition;
  std::size_t parallelism = 1;
  std::uint64_t seed = 0;
  LocalTrainOptions local;
};

/// Broadcast, local training on every shard (optionally in parallel),
/// ordered aggregation. `round` feeds the per-client stream seeds.
RoundOutcome run_round(const ModelParams& global, std::span<const ClientDataset> shards, std::size_t round,
                       const FederationConfig& fed, const ObjectiveConfig& obj, const ContrastiveConfig& con);

struct RoundReport {
  std::size_t round = 0;
  std::vector<ClientStats> clients;
  MetricsRecord global;
  /// F1 of each client's local model on the test split (same order as clients).
  std::vector<double> personalized_f1;
};

struct EvalSplits {
  std::span<const Window> validation;
  std::span<const Window> test;
};

/// Threshold chosen on validation, metrics on test.
MetricsRecord evaluate_model(const ModelParams& params, const EvalSplits& splits, std::size_t context);

struct FederationResult {
  MetricsRecord initial;
  std::vector<RoundReport> reports;
  ModelParams final_params;
};

class FederationAborted : public FederationError {
 public:
  FederationAborted(const std::string& message, std::vector<RoundReport> completed)
      : FederationError(message), completed_(std::move(completed)) {}
  const std::vector<RoundReport>& completed() const { return completed_; }

 private:
  std::vector<RoundReport> completed_;
};

using RoundCallback = std::function<void(const RoundReport&)>;

FederationResult run_federation(const ModelParams& init, std::span<const ClientDataset> shards,
                                const FederationConfig& fed, const ObjectiveConfig& obj,
                                const ContrastiveConfig& con, const EvalSplits& splits,
                                const RoundCallback& on_round = {});

}  // namespace fcad
