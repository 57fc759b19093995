#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dpal/dataset.hpp"
#include "dpal/pool.hpp"
#include "dpal/rng.hpp"

namespace dpal {

struct TrainConfig {
  double temperature = 0.01;  // tau for all similarity logits
  double lambda = 1.0;        // weight of the negative-prompt loss
  double lr = 0.01;
  int epochs = 10;
  int batch_labeled = 16;
  int batch_pseudo = 64;
  int ctx_tokens = 16;  // M context tokens per prompt
  bool shared_ctx = false;
  int adapter_rank = 20;
  bool adapter_enabled = true;
  bool l2_paper_sign = false;  // keep the printed loss form testable
  double init_sigma = 0.02;

  void validate() const;
};

// Per-class positive and negative context-token blocks plus frozen class
// tokens. The composed class embedding is l2_normalize(mean(ctx) + cls).
struct PromptBank {
  int classes = 0;
  int ctx_len = 0;
  int dim = 0;
  bool shared = false;
  std::vector<double> ctx_pos;     // slots x M x D, slots = shared ? 1 : C
  std::vector<double> ctx_neg;     // same shape
  std::vector<double> cls_tokens;  // C x D, frozen after init

  int ctx_slots() const { return shared ? 1 : classes; }
  int slot_of(int class_k) const { return shared ? 0 : class_k; }
  std::span<double> ctx_token(bool positive, int class_k, int token);
  std::span<const double> ctx_token(bool positive, int class_k, int token) const;
  std::span<const double> cls_token(int class_k) const;
};

// Low-rank residual on the frozen feature: v(x) = normalize(x + up * (down * x)).
// up starts at zero so an untouched adapter is the identity on the sphere.
struct VisualAdapter {
  int dim = 0;
  int rank = 0;
  bool enabled = true;
  std::vector<double> up;    // D x rank
  std::vector<double> down;  // rank x D
};

struct ModelState {
  PromptBank bank;
  VisualAdapter adapter;
  int64_t step = 0;
};

// Fresh parameters: context tokens ~ N(0, init_sigma^2), cls tokens copied
// from the dataset anchors, adapter up = 0, down ~ N(0, init_sigma^2).
ModelState init_model(const FeatureDataset& ds, const TrainConfig& cfg, RngStream rng);

std::vector<double> compose_text(const PromptBank& bank, int class_k, bool positive);
std::vector<double> visual_embed(const VisualAdapter& adapter, std::span<const float> x);

// logit_k = sim(v(x), t+(c_k)) / tau
std::vector<double> class_logits(const ModelState& state, std::span<const float> x, double tau);

// Two-way softmax between the positive and negative similarity of one class.
double clean_prob_from_sims(double sim_pos, double sim_neg, double tau);
double p_clean(const ModelState& state, std::span<const float> x, int label, double tau);
// The raw logit (sim+ - sim-)/tau; sigma of it equals p_clean. Used for
// saturation-free ranking.
double clean_logit(const ModelState& state, std::span<const float> x, int label, double tau);

double loss_l1(const ModelState& state, std::span<const float> x, int label, double tau);
double loss_l2(const ModelState& state, std::span<const float> x, int label, int complement,
               double tau, bool paper_sign);

struct BatchItem {
  int sample_index = 0;
  int label = 0;       // human label or pseudo-label
  int complement = 0;  // freshly drawn class != label
  double weight = 0;   // contribution to the batch objective; weights sum to 1
};

std::vector<BatchItem> make_uniform_batch(std::span<const int> indices,
                                          std::span<const int> labels, RngStream& complement_rng,
                                          int num_classes);

// Weighted sum over the batch of (l1 + lambda * l2).
double total_loss(const ModelState& state, const FeatureDataset& ds,
                  std::span<const BatchItem> batch, const TrainConfig& cfg);

double cosine_lr(double base_lr, int64_t step, int64_t total_steps);

// One SGD update of ctx_pos, ctx_neg and the adapter from the closed-form
// gradient of total_loss; cls tokens stay frozen. Advances state.step.
void grad_step(ModelState& state, const FeatureDataset& ds, std::span<const BatchItem> batch,
               const TrainConfig& cfg, int64_t total_steps);

// Epoch loop over interleaved labeled/pseudo mini-batches; the two stream
// losses are averaged with equal weight inside each step. Throws
// EmptyTrainingSet when both pools are empty.
ModelState train(ModelState state, const PoolState& pool, const FeatureDataset& ds,
                 const TrainConfig& cfg, RngStream rng);

// Max relative error (unit-floored denominator) between analytic gradients
// and central finite differences over every learnable scalar.
double gradient_check(const ModelState& state, const FeatureDataset& ds,
                      std::span<const BatchItem> batch, const TrainConfig& cfg, double eps);

// "DPMS" checkpoint: shape metadata + float32 payloads. Debug format; doubles
// are quantized on write.
std::vector<uint8_t> serialize_model(const ModelState& state);
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace dpal
