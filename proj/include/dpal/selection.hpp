#pragma once

#include <span>
#include <utility>
#include <vector>

#include "dpal/model.hpp"

namespace dpal {

// Strategy identifiers accepted in configs and on the CLI.
inline const std::vector<std::string>& strategy_names() {
  static const std::vector<std::string> names = {"ours",   "random",  "entropy",
                                                 "margin", "coreset", "badge"};
  return names;
}
bool is_known_strategy(const std::string& name);

struct ScoredSample {
  int index = 0;
  int pseudo_label = 0;
  double clean_prob = 0;   // sigma(clean_logit), clamped away from {0, 1}
  double clean_logit = 0;  // ranking key; monotone in clean_prob, never saturates
  std::vector<double> class_probs;
};

struct SelectionBudget {
  int total = 0;
  int classes = 0;
};

// One ScoredSample per unlabeled index, ascending by index. Pure given the
// model state.
std::vector<ScoredSample> score_pool(const ModelState& state, const FeatureDataset& ds,
                                     std::span<const int> unlabeled, double tau);

// Per-pseudo-class floor(B/C) lowest-p_clean picks; deficits from small
// classes and the B mod C remainder are filled globally in ascending p_clean.
// Ties break by ascending sample index. Returns ascending indices, size
// min(B, |scored|).
std::vector<int> select_uncertain(std::span<const ScoredSample> scored, SelectionBudget budget);

// Up to `per_class` highest-p_clean samples per pseudo-class; the next
// round's pseudo-labeled set. Ascending by index.
std::vector<IndexLabel> mine_confident(std::span<const ScoredSample> scored, int per_class);

// Nearest-anchor classification over `candidates`; per predicted class the
// `per_class` samples with the highest anchor-softmax probability.
std::vector<IndexLabel> zero_shot_init(const FeatureDataset& ds, std::span<const int> candidates,
                                       int per_class, double tau);

std::vector<int> baseline_random(std::span<const int> unlabeled, int budget, RngStream rng);
std::vector<int> baseline_entropy(std::span<const ScoredSample> scored, int budget);
std::vector<int> baseline_margin(std::span<const ScoredSample> scored, int budget);

// Greedy k-center on raw features (Euclidean). Labeled samples are the
// initial centers; with no labeled sample the first pick is the candidate
// farthest from the candidate centroid. Returns picks in selection order.
std::vector<int> baseline_coreset(const DenseMatrix& features, std::span<const int> labeled,
                                  std::span<const int> candidates, int budget);

// k-means++ seeding over gradient embeddings g = (p - onehot(y_hat)) (x) v(x).
// First seed uniform, then proportional to min squared distance. Returns
// picks in selection order.
std::vector<int> baseline_badge(const ModelState& state, std::span<const ScoredSample> scored,
                                const DenseMatrix& features, int budget, RngStream rng);

}  // namespace dpal
