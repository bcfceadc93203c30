#include "fcad/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fcad {

namespace {

// Pushes non-member logits far below any member so they vanish under exp.
constexpr double kExcluded = -1e6;

}  // namespace

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0)) throw ContrastiveError("temperature must be > 0");
  if (max_anchors < 1) throw ContrastiveError("max_anchors must be >= 1");
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ContrastiveError("cosine_similarity length mismatch: " + std::to_string(a.size()) + " vs " +
                           std::to_string(b.size()));
  }
  if (a.empty()) throw ContrastiveError("cosine_similarity of empty vectors");
  auto guarded = [](std::span<const double> v) {
    std::vector<double> out(v.begin(), v.end());
    double n2 = std::inner_product(out.begin(), out.end(), out.begin(), 0.0);
    if (std::sqrt(n2) < kNormGuardEpsilon) out[0] += kNormGuardEpsilon;
    return out;
  };
  const auto ga = guarded(a);
  const auto gb = guarded(b);
  const double ab = std::inner_product(ga.begin(), ga.end(), gb.begin(), 0.0);
  const double aa = std::inner_product(ga.begin(), ga.end(), ga.begin(), 0.0);
  const double bb = std::inner_product(gb.begin(), gb.end(), gb.begin(), 0.0);
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

PairSet build_pairs(std::span<const Label> labels, std::mt19937_64& rng, const ContrastiveConfig& cfg) {
  cfg.validate();
  PairSet out;
  const std::size_t n = labels.size();
  if (n < 2) {
    out.dropped = n;
    return out;
  }

  std::vector<AnchorRecord> eligible;
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<std::size_t> peers;
    AnchorRecord rec;
    rec.anchor = a;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      (labels[j] == labels[a] ? peers : rec.negatives).push_back(j);
    }
    if (peers.empty() || rec.negatives.empty()) {
      ++out.dropped;
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, peers.size() - 1);
    rec.positive = peers[pick(rng)];
    eligible.push_back(std::move(rec));
  }

  if (eligible.size() > cfg.max_anchors) {
    std::vector<std::size_t> order(eligible.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(cfg.max_anchors);
    std::sort(order.begin(), order.end());
    std::vector<AnchorRecord> kept;
    kept.reserve(order.size());
    for (std::size_t i : order) kept.push_back(std::move(eligible[i]));
    eligible = std::move(kept);
  }
  out.records = std::move(eligible);
  return out;
}

Expr nt_xent(const Expr& embeddings, const PairSet& pairs, double temperature) {
  if (pairs.empty()) throw ContrastiveError("nt_xent on an empty pair set");
  if (!(temperature > 0.0)) throw ContrastiveError("temperature must be > 0");
  Graph& g = embeddings.graph();
  const Eigen::Index n = embeddings.rows();
  const Eigen::Index k = static_cast<Eigen::Index>(pairs.records.size());

  Tensor offsets = Tensor::Constant(k, n, kExcluded);
  std::vector<Eigen::Index> anchors;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> positives;
  anchors.reserve(pairs.records.size());
  for (Eigen::Index i = 0; i < k; ++i) {
    const AnchorRecord& r = pairs.records[static_cast<std::size_t>(i)];
    const auto a = static_cast<Eigen::Index>(r.anchor);
    const auto p = static_cast<Eigen::Index>(r.positive);
    if (a >= n || p >= n || a == p) throw ContrastiveError("anchor record indexes outside the batch");
    anchors.push_back(a);
    positives.emplace_back(a, p);
    offsets(i, p) = 0.0;
    for (std::size_t neg : r.negatives) {
      if (static_cast<Eigen::Index>(neg) >= n) throw ContrastiveError("negative index outside the batch");
      offsets(i, static_cast<Eigen::Index>(neg)) = 0.0;
    }
  }
  Tensor member = (offsets.array() == 0.0).cast<double>().matrix();

  Expr z = norm_guard(embeddings);
  Expr unit = z * power(row_sum(z * z), -0.5);
  Expr sim = scale(matmul(unit, transpose(unit)), 1.0 / temperature);
  Expr logits = select_rows(sim, anchors) + g.constant(std::move(offsets));
  Expr shift = row_max_detached(logits);
  Expr denom = row_sum(exp(logits - shift) * g.constant(std::move(member)));
  Expr per_anchor = (log(denom) + shift) - gather(sim, std::move(positives));
  return scale(sum(per_anchor), 1.0 / static_cast<double>(k));
}

double nt_xent(const Tensor& embeddings, const PairSet& pairs, double temperature) {
  Graph g;
  return nt_xent(g.constant(embeddings), pairs, temperature).scalar();
}

}  // namespace fcad
