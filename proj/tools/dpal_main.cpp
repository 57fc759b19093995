// dpal: dataset generation, round-based experiments, gradient checking and
// dataset inspection, driven by a flat JSON config.
//
// Exit codes: 0 success, 2 usage/config error, 3 data error,
// 4 internal invariant violation.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpal/config.hpp"
#include "dpal/loop.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitInternal = 4;

int classify_error(const dpal::Error& e) {
  switch (e.kind()) {
    case dpal::Err::FormatError:
    case dpal::Err::NormError:
      return kExitData;
    case dpal::Err::InvalidConfig:
    case dpal::Err::InvalidTemperature:
      return kExitConfig;
    default:
      return kExitInternal;
  }
}

dpal::CliConfig load_with_overrides(const std::string& config_path,
                                    const std::vector<std::string>& overrides) {
  dpal::CliConfig cfg =
      config_path.empty() ? dpal::default_config() : dpal::load_config_file(config_path);
  for (const auto& kv : overrides) dpal::apply_override(cfg, kv);
  if (const char* env = std::getenv("DPAL_SEED")) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0' || env[0] == '-')
      dpal::raise(dpal::Err::InvalidConfig, "DPAL_SEED must be an unsigned integer");
    cfg.exp.seeds = {uint64_t(v)};
  }
  return cfg;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) dpal::raise(dpal::Err::InvalidConfig, "cannot write: " + path.string());
  os << text;
  if (!os) dpal::raise(dpal::Err::InvalidConfig, "write failed: " + path.string());
}

int cmd_gen_synth(const std::string& config_path, const std::vector<std::string>& overrides,
                  const std::string& out_path) {
  try {
    dpal::CliConfig cfg = load_with_overrides(config_path, overrides);
    dpal::FeatureDataset ds = dpal::generate_synthetic(
        cfg.exp.synthetic, dpal::RngStream(cfg.exp.data_seed).child("synthetic"));
    dpal::save_dataset(ds, out_path);
    std::vector<int> all(ds.num_samples());
    std::iota(all.begin(), all.end(), 0);
    double zs = dpal::nearest_anchor_accuracy(ds, all);
    std::printf("wrote %s\n", out_path.c_str());
    std::printf("N=%d D=%d C=%d\n", ds.num_samples(), ds.dim(), ds.num_classes());
    std::printf("zero-shot accuracy (nearest anchor): %.4f\n", zs);
    return kExitOk;
  } catch (const dpal::Error& e) {
    std::fprintf(stderr, "gen-synth: %s\n", e.what());
    return kExitConfig;  // generation failures are config/usage problems
  }
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            const std::string& out_dir, int parallel_seeds) {
  dpal::CliConfig cfg;
  try {
    cfg = load_with_overrides(config_path, overrides);
    if (parallel_seeds > 0) cfg.exp.parallel_seeds = parallel_seeds;
    cfg.exp.validate();
  } catch (const dpal::Error& e) {
    std::fprintf(stderr, "run: %s\n", e.what());
    return kExitConfig;
  }

  dpal::FeatureDataset ds;
  try {
    ds = dpal::resolve_dataset(cfg.exp);
  } catch (const dpal::Error& e) {
    std::fprintf(stderr, "run: dataset error: %s\n", e.what());
    return classify_error(e) == kExitConfig ? kExitConfig : kExitData;
  }

  try {
    dpal::ExperimentResult result = dpal::run_experiment(ds, cfg.exp);

    // self-check: budget accounting and pool partition must hold exactly
    for (const auto& sr : result.per_seed) {
      sr.final_pool.check_invariants();
      size_t expected = 0;
      int budget = dpal::budget_per_round(cfg.exp.budget_fraction, sr.pool_indices.size());
      size_t remaining = sr.pool_indices.size();
      for (size_t r = 0; r < sr.reports.size(); ++r) {
        size_t take = std::min<size_t>(size_t(budget), remaining);
        expected += take;
        remaining -= take;
      }
      if (sr.final_pool.labeled.size() != expected || sr.oracle_queries != expected)
        dpal::raise(dpal::Err::Internal, "budget accounting self-check failed");
      if (sr.final_pool.universe_size() != sr.pool_indices.size())
        dpal::raise(dpal::Err::Internal, "pool partition self-check failed");
    }

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) dpal::raise(dpal::Err::InvalidConfig, "cannot create out-dir: " + out_dir);
    std::string base = dpal::report_basename(cfg.exp);
    std::filesystem::path csv_path = std::filesystem::path(out_dir) / (base + ".csv");
    std::filesystem::path json_path =
        std::filesystem::path(out_dir) / (base + ".summary.json");
    write_text_file(csv_path, dpal::reports_to_csv(result));
    write_text_file(json_path, dpal::summary_to_json(result, dpal::config_echo(cfg)));

    for (const auto& sr : result.per_seed) {
      for (const auto& rep : sr.reports)
        std::printf("seed %llu round %d  acc %.4f  |S_L| %d  |S_U| %d  pclean mean %.4f  [%lld ms]\n",
                    (unsigned long long)sr.seed, rep.round, rep.accuracy, rep.n_labeled,
                    rep.n_pseudo, rep.mean_pclean, (long long)rep.wall_ms);
    }
    for (const auto& s : result.summary)
      std::printf("round %d  mean acc %.4f  std %.4f\n", s.round, s.accuracy_mean,
                  s.accuracy_std);
    std::printf("wrote %s\nwrote %s\n", csv_path.c_str(), json_path.c_str());
    return kExitOk;
  } catch (const dpal::Error& e) {
    std::fprintf(stderr, "run: %s\n", e.what());
    return classify_error(e);
  }
}

int cmd_grad_check(const std::string& config_path, const std::vector<std::string>& overrides) {
  try {
    dpal::CliConfig cfg = load_with_overrides(config_path, overrides);
    if (cfg.grad_eps < 1e-5 || cfg.grad_eps > 1e-3) {
      std::fprintf(stderr, "grad-check: grad_eps must lie in [1e-5, 1e-3]\n");
      return kExitConfig;
    }
    if (cfg.grad_batch < 1) {
      std::fprintf(stderr, "grad-check: grad_batch must be >= 1\n");
      return kExitConfig;
    }

    // small random instance: synthetic data, noisy parameters, mixed batch
    dpal::SyntheticSpec spec = cfg.exp.synthetic;
    spec.n_per_class = std::max(2, cfg.grad_batch);
    dpal::RngStream rng(cfg.grad_seed);
    dpal::FeatureDataset ds = dpal::generate_synthetic(spec, rng.child("data"));
    dpal::ModelState state = dpal::init_model(ds, cfg.exp.train, rng.child("init"));
    auto prng = rng.child("params");
    for (double& v : state.bank.ctx_pos) v += 0.1 * prng.next_gaussian();
    for (double& v : state.bank.ctx_neg) v += 0.1 * prng.next_gaussian();
    for (double& v : state.adapter.up) v += 0.1 * prng.next_gaussian();
    for (double& v : state.adapter.down) v += 0.1 * prng.next_gaussian();

    auto brng = rng.child("batch");
    std::vector<int> indices, labels;
    for (int i = 0; i < cfg.grad_batch; ++i) {
      int idx = int(brng.next_below(uint64_t(ds.num_samples())));
      indices.push_back(idx);
      labels.push_back(int(brng.next_below(uint64_t(ds.num_classes()))));
    }
    auto crng = rng.child("complement");
    std::vector<dpal::BatchItem> batch =
        dpal::make_uniform_batch(indices, labels, crng, ds.num_classes());

    double max_rel = dpal::gradient_check(state, ds, batch, cfg.exp.train, cfg.grad_eps);
    std::printf("max relative gradient error: %.3e (eps %.1e, batch %d, D=%d C=%d M=%d r=%d)\n",
                max_rel, cfg.grad_eps, cfg.grad_batch, ds.dim(), ds.num_classes(),
                cfg.exp.train.ctx_tokens, cfg.exp.train.adapter_rank);
    return max_rel < 1e-4 ? kExitOk : 1;
  } catch (const dpal::Error& e) {
    std::fprintf(stderr, "grad-check: %s\n", e.what());
    return classify_error(e);
  }
}

int cmd_inspect(const std::string& dataset_path) {
  try {
    dpal::DatasetInfo info = dpal::inspect_dataset(dataset_path);
    std::printf("file: %s\n", dataset_path.c_str());
    std::printf("N=%u D=%u C=%u\n", info.n, info.d, info.c);
    std::printf("feature norms: [%.6f, %.6f]\n", info.feature_norm_min, info.feature_norm_max);
    std::printf("anchor norms:  [%.6f, %.6f]\n", info.anchor_norm_min, info.anchor_norm_max);
    std::printf("classes:");
    for (const auto& name : info.class_names) std::printf(" %s", name.c_str());
    std::printf("\n");
    return kExitOk;
  } catch (const dpal::Error& e) {
    std::fprintf(stderr, "inspect: %s\n", e.what());
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-prompt active learning on frozen embeddings"};
  app.require_subcommand(1);

  std::string config_path, out_path, out_dir, dataset_path;
  std::vector<std::string> overrides;
  int parallel_seeds = 0;

  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic DPAL dataset file");
  gen->add_option("--config", config_path, "JSON config path");
  gen->add_option("--out", out_path, "output dataset path")->required();
  gen->add_option("--set", overrides, "key=value override (repeatable)");

  auto* run = app.add_subcommand("run", "run an active-learning experiment");
  run->add_option("--config", config_path, "JSON config path");
  run->add_option("--out-dir", out_dir, "report output directory")->required();
  run->add_option("--set", overrides, "key=value override (repeatable)");
  run->add_option("--parallel-seeds", parallel_seeds, "worker threads across seeds");

  auto* grad = app.add_subcommand("grad-check", "finite-difference check of the closed-form gradients");
  grad->add_option("--config", config_path, "JSON config path");
  grad->add_option("--set", overrides, "key=value override (repeatable)");

  auto* inspect = app.add_subcommand("inspect", "print DPAL dataset header metadata");
  inspect->add_option("--dataset", dataset_path, "dataset path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(config_path, overrides, out_path);
    if (run->parsed()) return cmd_run(config_path, overrides, out_dir, parallel_seeds);
    if (grad->parsed()) return cmd_grad_check(config_path, overrides);
    if (inspect->parsed()) return cmd_inspect(dataset_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dpal: %s\n", e.what());
    return kExitInternal;
  }
  return kExitConfig;
}
