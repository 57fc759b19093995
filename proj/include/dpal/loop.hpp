#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dpal/selection.hpp"

namespace dpal {

struct ExperimentConfig {
  // dataset source: a DPAL file when set, otherwise the synthetic generator
  std::string dataset_path;
  SyntheticSpec synthetic;
  uint64_t data_seed = 42;

  // the test split stands in for a dataset's standard split: derived from
  // split_seed only, so it is shared by every experiment seed and strategy
  uint64_t split_seed = 7;
  double test_fraction = 0.2;

  int rounds = 6;
  double budget_fraction = 0.01;
  std::string strategy = "ours";
  std::vector<uint64_t> seeds = {1, 2, 3};
  int init_per_class = 16;  // K, zero-shot bootstrap of S_U^(0)
  int mine_per_class = 16;  // k, confident mining per round
  TrainConfig train;
  int parallel_seeds = 1;

  void validate() const;
};

struct RoundReport {
  int round = 0;
  uint64_t seed = 0;
  std::string strategy;
  double accuracy = 0;  // held-out test accuracy of this round's model
  int n_labeled = 0;    // |S_L| the model trained on
  int n_pseudo = 0;     // |S_U| the model trained on
  double pseudo_precision = 0;
  double mean_pclean = 0, min_pclean = 0, max_pclean = 0;
  std::vector<int> selected;  // queried this round, in strategy order
  int64_t wall_ms = 0;        // console diagnostic; report files carry 0
};

// Hooks for observing round internals (model re-initialization checks).
struct RoundObserver {
  std::function<void(int round, const ModelState& fresh)> on_init;
  std::function<void(int round, const ModelState& trained)> on_trained;
};

// ceil(fraction * n) guarded against binary-fraction round-up (0.01 * 800
// must stay 8).
int budget_per_round(double fraction, size_t n);

// Seeded per-class holdout; returns (pool_indices, test_indices), both
// ascending.
std::pair<std::vector<int>, std::vector<int>> stratified_split(const FeatureDataset& ds,
                                                               double test_fraction,
                                                               RngStream rng);

double evaluate_accuracy(const ModelState& state, const FeatureDataset& ds,
                         std::span<const int> test_indices, double tau);

struct RoundOutcome {
  PoolState pool;
  ModelState model;
  RoundReport report;
};

// One full round: re-init, train, score, query, annotate, mine, commit,
// evaluate. Throws PoolExhausted when no unlabeled sample remains.
RoundOutcome run_round(int round, const PoolState& pool, const FeatureDataset& ds,
                       std::span<const int> test_indices, AnnotationOracle& oracle,
                       const ExperimentConfig& cfg, RngStream round_rng,
                       const RoundObserver* observer = nullptr);

struct SeedRunResult {
  uint64_t seed = 0;
  std::vector<RoundReport> reports;
  PoolState final_pool;
  uint64_t oracle_queries = 0;
  std::vector<int> pool_indices, test_indices;
};

SeedRunResult run_seed(const FeatureDataset& ds, const ExperimentConfig& cfg, uint64_t seed,
                       const RoundObserver* observer = nullptr);

struct RoundSummary {
  int round = 0;
  double accuracy_mean = 0;
  double accuracy_std = 0;  // sample std over seeds; 0 for a single seed
};

struct ExperimentResult {
  std::vector<SeedRunResult> per_seed;  // seeds-list order
  std::vector<RoundSummary> summary;
};

FeatureDataset resolve_dataset(const ExperimentConfig& cfg);
ExperimentResult run_experiment(const FeatureDataset& ds, const ExperimentConfig& cfg);

// Report files. Deterministic byte-for-byte under a fixed config: the
// wall_ms column is emitted as 0 (timings go to the console instead).
std::string reports_to_csv(const ExperimentResult& result);
std::string summary_to_json(const ExperimentResult& result, const std::string& config_echo_json);
std::string report_basename(const ExperimentConfig& cfg);

}  // namespace dpal
