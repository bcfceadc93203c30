#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "fcad/autodiff.hpp"
#include "fcad/error.hpp"
#include "fcad/window.hpp"

namespace fcad {

class ContrastiveError : public Error {
 public:
  explicit ContrastiveError(const std::string& message) : Error("contrastive", message) {}
};

struct ContrastiveConfig {
  double temperature = 0.5;
  /// Upper bound on anchor records per batch; eligible anchors beyond it are
  /// subsampled uniformly.
  std::size_t max_anchors = 256;

  void validate() const;
};

struct AnchorRecord {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  /// Every batch member whose label differs from the anchor's, ascending.
  std::vector<std::size_t> negatives;
};

struct PairSet {
  std::vector<AnchorRecord> records;
  /// Anchors skipped for lacking a same-label peer or a differing-label peer.
  std::size_t dropped = 0;

  bool empty() const { return records.empty(); }
};

/// dot(a, b) / (|a| |b|), with the embedding norm guard applied to each side.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// One uniformly drawn same-label positive per eligible anchor; negatives are
/// all differing-label members. Returns an empty set when the batch has fewer
/// than two members or a single distinct label.
PairSet build_pairs(std::span<const Label> labels, std::mt19937_64& rng, const ContrastiveConfig& cfg);

/// Mean over anchor records of
///   -log( exp(sim(z, z+)/tau) / sum_{z' in {z+} u negatives} exp(sim(z, z')/tau) ).
/// The log-sum-exp is shifted by the (detached) per-anchor maximum.
Expr nt_xent(const Expr& embeddings, const PairSet& pairs, double temperature);

/// Value-only convenience over a constant embedding matrix.
double nt_xent(const Tensor& embeddings, const PairSet& pairs, double temperature);

}  // namespace fcad
