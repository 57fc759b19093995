#pragma once

#include <span>
#include <utility>
#include <vector>

#include "dpal/dataset.hpp"

namespace dpal {

using IndexLabel = std::pair<int, int>;  // (sample index, label)

// Round-r partition of the candidate pool. labeled and unlabeled are disjoint
// and together cover the universe the pool was built over; pseudo-labeled
// samples stay inside unlabeled (they remain candidates for annotation).
struct PoolState {
  int round = 0;
  std::vector<IndexLabel> labeled;  // S_L, in annotation order
  std::vector<IndexLabel> pseudo;   // S_U, ascending by index
  std::vector<int> unlabeled;       // ascending

  static PoolState over(std::vector<int> universe);

  size_t universe_size() const { return labeled.size() + unlabeled.size(); }
  bool is_unlabeled(int index) const;
  std::vector<int> labeled_indices() const;

  // Throws Internal if the partition or pseudo-subset invariants are broken.
  void check_invariants() const;
};

// Advances the pool one round: extends S_L, replaces S_U, shrinks the
// unlabeled set. The pseudo set is replaced, not accumulated, because it is
// re-mined from a re-initialized model every round. Throws OverlapError on
// any set violation.
PoolState commit_round(const PoolState& pool, std::span<const IndexLabel> newly_labeled,
                       std::span<const IndexLabel> new_pseudo);

// Simulated human annotator. Returns true labels for currently-unlabeled
// indices and counts every query; the pool itself is not modified.
class AnnotationOracle {
 public:
  explicit AnnotationOracle(const FeatureDataset& ds) : ds_(&ds) {}

  std::vector<IndexLabel> annotate(const PoolState& pool, std::span<const int> indices);
  uint64_t query_count() const { return queries_; }

 private:
  const FeatureDataset* ds_;
  uint64_t queries_ = 0;
};

}  // namespace dpal
