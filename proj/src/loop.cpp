#include "dpal/loop.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>

#include <json.hpp>

namespace dpal {

void ExperimentConfig::validate() const {
  if (rounds < 1) raise(Err::InvalidConfig, "rounds must be >= 1");
  if (!(budget_fraction > 0.0) || budget_fraction > 1.0)
    raise(Err::InvalidConfig, "budget_fraction must lie in (0, 1]");
  if (seeds.empty()) raise(Err::InvalidConfig, "seeds must be nonempty");
  if (!is_known_strategy(strategy)) raise(Err::InvalidConfig, "unknown strategy: " + strategy);
  if (init_per_class < 0 || mine_per_class < 0)
    raise(Err::InvalidConfig, "init_per_class and mine_per_class must be >= 0");
  if (!(test_fraction > 0.0) || test_fraction >= 1.0)
    raise(Err::InvalidConfig, "test_fraction must lie in (0, 1)");
  if (parallel_seeds < 1) raise(Err::InvalidConfig, "parallel_seeds must be >= 1");
  train.validate();
}

int budget_per_round(double fraction, size_t n) {
  return int(std::ceil(fraction * double(n) - 1e-9));
}

std::pair<std::vector<int>, std::vector<int>> stratified_split(const FeatureDataset& ds,
                                                               double test_fraction,
                                                               RngStream rng) {
  if (!(test_fraction > 0.0) || test_fraction >= 1.0)
    raise(Err::InvalidConfig, "test_fraction must lie in (0, 1)");
  std::vector<std::vector<int>> by_class(ds.num_classes());
  for (int i = 0; i < ds.num_samples(); ++i) by_class[ds.true_labels[i]].push_back(i);

  std::vector<int> pool, test;
  for (int k = 0; k < ds.num_classes(); ++k) {
    auto& members = by_class[k];
    auto r = rng.child(uint64_t(k));
    r.shuffle(members);
    size_t n_test = size_t(double(members.size()) * test_fraction);
    for (size_t i = 0; i < members.size(); ++i)
      (i < n_test ? test : pool).push_back(members[i]);
  }
  std::sort(pool.begin(), pool.end());
  std::sort(test.begin(), test.end());
  return {std::move(pool), std::move(test)};
}

double evaluate_accuracy(const ModelState& state, const FeatureDataset& ds,
                         std::span<const int> test_indices, double tau) {
  if (test_indices.empty()) raise(Err::EmptyTestSet, "cannot evaluate on an empty test set");
  int correct = 0;
  for (int idx : test_indices) {
    std::vector<double> logits = class_logits(state, ds.features.row(idx), tau);
    if (argmax(logits) == ds.true_labels[idx]) ++correct;
  }
  return double(correct) / double(test_indices.size());
}

namespace {

std::vector<int> dispatch_query(const std::string& strategy, const ModelState& model,
                                const FeatureDataset& ds, const PoolState& pool,
                                std::span<const ScoredSample> scored, int budget,
                                RngStream query_rng) {
  if (strategy == "ours")
    return select_uncertain(scored, SelectionBudget{budget, ds.num_classes()});
  if (strategy == "random") return baseline_random(pool.unlabeled, budget, query_rng);
  if (strategy == "entropy") return baseline_entropy(scored, budget);
  if (strategy == "margin") return baseline_margin(scored, budget);
  if (strategy == "coreset") {
    std::vector<int> centers = pool.labeled_indices();
    return baseline_coreset(ds.features, centers, pool.unlabeled, budget);
  }
  if (strategy == "badge") return baseline_badge(model, scored, ds.features, budget, query_rng);
  raise(Err::InvalidConfig, "unknown strategy: " + strategy);
}

}  // namespace

RoundOutcome run_round(int round, const PoolState& pool, const FeatureDataset& ds,
                       std::span<const int> test_indices, AnnotationOracle& oracle,
                       const ExperimentConfig& cfg, RngStream round_rng,
                       const RoundObserver* observer) {
  if (pool.unlabeled.empty()) raise(Err::PoolExhausted, "no unlabeled samples left to query");
  auto t0 = std::chrono::steady_clock::now();
  const double tau = cfg.train.temperature;

  // (1) fresh parameters every round: prior rounds leak nothing but the pool
  ModelState model = init_model(ds, cfg.train, round_rng.child("init"));
  if (observer && observer->on_init) observer->on_init(round, model);

  // (2) train on S_L and S_U
  if (!pool.labeled.empty() || !pool.pseudo.empty())
    model = train(std::move(model), pool, ds, cfg.train, round_rng.child("train"));
  if (observer && observer->on_trained) observer->on_trained(round, model);

  // (3) pseudo-label and score all remaining unlabeled samples
  std::vector<ScoredSample> scored = score_pool(model, ds, pool.unlabeled, tau);

  // (4)-(5) query under the fixed per-round budget, annotate
  int budget = budget_per_round(cfg.budget_fraction, pool.universe_size());
  budget = std::min<int>(budget, int(pool.unlabeled.size()));
  std::vector<int> queried =
      dispatch_query(cfg.strategy, model, ds, pool, scored, budget, round_rng.child("query"));
  std::vector<IndexLabel> annotated = oracle.annotate(pool, queried);

  // (6) mine next round's pseudo set; human labels win on overlap
  std::vector<IndexLabel> mined = mine_confident(scored, cfg.mine_per_class);
  std::vector<char> is_queried(ds.num_samples(), 0);
  for (int idx : queried) is_queried[idx] = 1;
  std::erase_if(mined, [&](const IndexLabel& il) { return is_queried[il.first]; });

  // (7) advance the pool
  PoolState next = commit_round(pool, annotated, mined);

  // (8) held-out evaluation and report
  RoundReport report;
  report.round = round;
  report.strategy = cfg.strategy;
  report.accuracy = evaluate_accuracy(model, ds, test_indices, tau);
  report.n_labeled = int(pool.labeled.size());
  report.n_pseudo = int(pool.pseudo.size());
  report.selected = queried;
  if (!pool.pseudo.empty()) {
    int hits = 0;
    for (const auto& [idx, y] : pool.pseudo)
      if (ds.true_labels[idx] == y) ++hits;
    report.pseudo_precision = double(hits) / double(pool.pseudo.size());
  }
  if (!scored.empty()) {
    double sum = 0.0, lo = 1.0, hi = 0.0;
    for (const auto& s : scored) {
      sum += s.clean_prob;
      lo = std::min(lo, s.clean_prob);
      hi = std::max(hi, s.clean_prob);
    }
    report.mean_pclean = sum / double(scored.size());
    report.min_pclean = lo;
    report.max_pclean = hi;
  }
  report.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  return RoundOutcome{std::move(next), std::move(model), std::move(report)};
}

SeedRunResult run_seed(const FeatureDataset& ds, const ExperimentConfig& cfg, uint64_t seed,
                       const RoundObserver* observer) {
  cfg.validate();
  auto [pool_indices, test_indices] =
      stratified_split(ds, cfg.test_fraction, RngStream(cfg.split_seed).child("split"));
  if (pool_indices.empty()) raise(Err::InvalidConfig, "empty training pool after split");

  PoolState pool = PoolState::over(pool_indices);
  pool.pseudo = zero_shot_init(ds, pool.unlabeled, cfg.init_per_class, cfg.train.temperature);
  pool.check_invariants();

  AnnotationOracle oracle(ds);
  SeedRunResult result;
  result.seed = seed;
  result.pool_indices = pool_indices;
  result.test_indices = test_indices;

  RngStream run_rng = RngStream(seed).child("rounds");
  for (int r = 0; r < cfg.rounds; ++r) {
    if (pool.unlabeled.empty()) break;  // everything annotated
    RoundOutcome outcome =
        run_round(r, pool, ds, test_indices, oracle, cfg, run_rng.child(uint64_t(r)), observer);
    pool = std::move(outcome.pool);
    outcome.report.seed = seed;
    result.reports.push_back(std::move(outcome.report));
  }
  result.final_pool = std::move(pool);
  result.oracle_queries = oracle.query_count();
  return result;
}

FeatureDataset resolve_dataset(const ExperimentConfig& cfg) {
  if (!cfg.dataset_path.empty()) return load_dataset(cfg.dataset_path);
  return generate_synthetic(cfg.synthetic, RngStream(cfg.data_seed).child("synthetic"));
}

ExperimentResult run_experiment(const FeatureDataset& ds, const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  result.per_seed.resize(cfg.seeds.size());

  int workers = std::min<int>(cfg.parallel_seeds, int(cfg.seeds.size()));
  if (workers <= 1) {
    for (size_t i = 0; i < cfg.seeds.size(); ++i)
      result.per_seed[i] = run_seed(ds, cfg, cfg.seeds[i]);
  } else {
    // seeds are independent runs; results land in seed-list order regardless
    // of completion order
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= cfg.seeds.size()) return;
        try {
          result.per_seed[i] = run_seed(ds, cfg, cfg.seeds[i]);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  int max_rounds = 0;
  for (const auto& sr : result.per_seed) max_rounds = std::max<int>(max_rounds, int(sr.reports.size()));
  for (int r = 0; r < max_rounds; ++r) {
    std::vector<double> accs;
    for (const auto& sr : result.per_seed)
      if (r < int(sr.reports.size())) accs.push_back(sr.reports[r].accuracy);
    RoundSummary s;
    s.round = r;
    double mean = 0.0;
    for (double a : accs) mean += a;
    mean /= double(accs.size());
    s.accuracy_mean = mean;
    if (accs.size() > 1) {
      double var = 0.0;
      for (double a : accs) var += (a - mean) * (a - mean);
      s.accuracy_std = std::sqrt(var / double(accs.size() - 1));
    }
    result.summary.push_back(s);
  }
  return result;
}

namespace {

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string reports_to_csv(const ExperimentResult& result) {
  std::string out = "round,seed,strategy,accuracy,n_labeled,n_pseudo,pseudo_precision,mean_pclean,wall_ms\n";
  for (const auto& sr : result.per_seed) {
    for (const auto& rep : sr.reports) {
      out += std::to_string(rep.round) + ',' + std::to_string(rep.seed) + ',' + rep.strategy +
             ',' + fmt6(rep.accuracy) + ',' + std::to_string(rep.n_labeled) + ',' +
             std::to_string(rep.n_pseudo) + ',' + fmt6(rep.pseudo_precision) + ',' +
             fmt6(rep.mean_pclean) + ",0\n";  // wall time stays out of report files
    }
  }
  return out;
}

std::string summary_to_json(const ExperimentResult& result, const std::string& config_echo_json) {
  nlohmann::json j;
  j["config"] = nlohmann::json::parse(config_echo_json);
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& s : result.summary) {
    rounds.push_back({{"round", s.round},
                      {"accuracy_mean", s.accuracy_mean},
                      {"accuracy_std", s.accuracy_std}});
  }
  j["per_round"] = rounds;
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& sr : result.per_seed) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& rep : sr.reports) {
      rows.push_back({{"round", rep.round},
                      {"accuracy", rep.accuracy},
                      {"n_labeled", rep.n_labeled},
                      {"n_pseudo", rep.n_pseudo},
                      {"pseudo_precision", rep.pseudo_precision},
                      {"mean_pclean", rep.mean_pclean},
                      {"min_pclean", rep.min_pclean},
                      {"max_pclean", rep.max_pclean},
                      {"selected", rep.selected}});
    }
    seeds.push_back({{"seed", sr.seed},
                     {"oracle_queries", sr.oracle_queries},
                     {"n_pool", sr.pool_indices.size()},
                     {"n_test", sr.test_indices.size()},
                     {"rounds", rows}});
  }
  j["per_seed"] = seeds;
  return j.dump(2) + "\n";
}

std::string report_basename(const ExperimentConfig& cfg) {
  std::string name = "report_" + cfg.strategy + "_seeds";
  for (size_t i = 0; i < cfg.seeds.size(); ++i) {
    if (i) name += '-';
    name += std::to_string(cfg.seeds[i]);
  }
  return name;
}

}  // namespace dpal
