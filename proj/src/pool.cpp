#include "dpal/pool.hpp"

#include <algorithm>
#include <unordered_set>

namespace dpal {

PoolState PoolState::over(std::vector<int> universe) {
  std::sort(universe.begin(), universe.end());
  if (std::adjacent_find(universe.begin(), universe.end()) != universe.end())
    raise(Err::Internal, "pool universe contains duplicate indices");
  PoolState pool;
  pool.unlabeled = std::move(universe);
  return pool;
}

bool PoolState::is_unlabeled(int index) const {
  return std::binary_search(unlabeled.begin(), unlabeled.end(), index);
}

std::vector<int> PoolState::labeled_indices() const {
  std::vector<int> out;
  out.reserve(labeled.size());
  for (const auto& [idx, label] : labeled) out.push_back(idx);
  return out;
}

void PoolState::check_invariants() const {
  std::unordered_set<int> seen;
  for (const auto& [idx, label] : labeled) {
    if (!seen.insert(idx).second) raise(Err::Internal, "duplicate index in labeled set");
    if (is_unlabeled(idx)) raise(Err::Internal, "index both labeled and unlabeled");
  }
  for (size_t i = 1; i < unlabeled.size(); ++i)
    if (unlabeled[i - 1] >= unlabeled[i]) raise(Err::Internal, "unlabeled set not strictly ascending");
  std::unordered_set<int> pseudo_seen;
  for (const auto& [idx, label] : pseudo) {
    if (!pseudo_seen.insert(idx).second) raise(Err::Internal, "duplicate index in pseudo set");
    if (!is_unlabeled(idx)) raise(Err::Internal, "pseudo-labeled index is not unlabeled");
  }
}

PoolState commit_round(const PoolState& pool, std::span<const IndexLabel> newly_labeled,
                       std::span<const IndexLabel> new_pseudo) {
  std::unordered_set<int> fresh;
  for (const auto& [idx, label] : newly_labeled) {
    if (!pool.is_unlabeled(idx))
      raise(Err::OverlapError, "newly labeled index " + std::to_string(idx) + " is not unlabeled");
    if (!fresh.insert(idx).second)
      raise(Err::OverlapError, "duplicate index " + std::to_string(idx) + " in newly labeled set");
  }
  std::unordered_set<int> pseudo_idx;
  for (const auto& [idx, label] : new_pseudo) {
    if (!pool.is_unlabeled(idx) || fresh.count(idx))
      raise(Err::OverlapError,
            "pseudo index " + std::to_string(idx) + " overlaps the labeled set");
    if (!pseudo_idx.insert(idx).second)
      raise(Err::OverlapError, "duplicate index " + std::to_string(idx) + " in pseudo set");
  }

  PoolState next;
  next.round = pool.round + 1;
  next.labeled = pool.labeled;
  next.labeled.insert(next.labeled.end(), newly_labeled.begin(), newly_labeled.end());
  next.unlabeled.reserve(pool.unlabeled.size());
  for (int idx : pool.unlabeled)
    if (!fresh.count(idx)) next.unlabeled.push_back(idx);
  next.pseudo.assign(new_pseudo.begin(), new_pseudo.end());
  std::sort(next.pseudo.begin(), next.pseudo.end());
  next.check_invariants();
  return next;
}

std::vector<IndexLabel> AnnotationOracle::annotate(const PoolState& pool,
                                                   std::span<const int> indices) {
  std::unordered_set<int> batch;
  for (int idx : indices) {
    if (idx < 0 || idx >= ds_->num_samples())
      raise(Err::IndexOutOfRange, "annotation index " + std::to_string(idx) + " out of range");
    if (!pool.is_unlabeled(idx))
      raise(Err::AlreadyLabeled,
            "index " + std::to_string(idx) + " is not available for annotation");
    if (!batch.insert(idx).second)
      raise(Err::AlreadyLabeled, "duplicate annotation request for index " + std::to_string(idx));
  }
  std::vector<IndexLabel> out;
  out.reserve(indices.size());
  for (int idx : indices) out.emplace_back(idx, ds_->true_labels[idx]);
  queries_ += indices.size();
  return out;
}

}  // namespace dpal
