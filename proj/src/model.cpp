#include "dpal/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dpal {

void TrainConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    raise(Err::InvalidTemperature, "temperature must be positive and finite");
  if (lambda < 0.0 || !std::isfinite(lambda)) raise(Err::InvalidConfig, "lambda must be >= 0");
  if (!(lr > 0.0)) raise(Err::InvalidConfig, "lr must be positive");
  if (epochs < 1) raise(Err::InvalidConfig, "epochs must be >= 1");
  if (batch_labeled < 1 || batch_pseudo < 1) raise(Err::InvalidConfig, "batch sizes must be >= 1");
  if (ctx_tokens < 1) raise(Err::InvalidConfig, "ctx_tokens must be >= 1");
  if (adapter_enabled && adapter_rank < 1)
    raise(Err::InvalidConfig, "adapter_rank must be >= 1 when the adapter is enabled");
  if (init_sigma < 0.0) raise(Err::InvalidConfig, "init_sigma must be >= 0");
}

std::span<double> PromptBank::ctx_token(bool positive, int class_k, int token) {
  auto& block = positive ? ctx_pos : ctx_neg;
  size_t off = (size_t(slot_of(class_k)) * ctx_len + token) * dim;
  return {block.data() + off, size_t(dim)};
}

std::span<const double> PromptBank::ctx_token(bool positive, int class_k, int token) const {
  const auto& block = positive ? ctx_pos : ctx_neg;
  size_t off = (size_t(slot_of(class_k)) * ctx_len + token) * dim;
  return {block.data() + off, size_t(dim)};
}

std::span<const double> PromptBank::cls_token(int class_k) const {
  return {cls_tokens.data() + size_t(class_k) * dim, size_t(dim)};
}

ModelState init_model(const FeatureDataset& ds, const TrainConfig& cfg, RngStream rng) {
  cfg.validate();
  ModelState state;
  PromptBank& bank = state.bank;
  bank.classes = ds.num_classes();
  bank.ctx_len = cfg.ctx_tokens;
  bank.dim = ds.dim();
  bank.shared = cfg.shared_ctx;

  size_t ctx_size = size_t(bank.ctx_slots()) * bank.ctx_len * bank.dim;
  bank.ctx_pos.resize(ctx_size);
  bank.ctx_neg.resize(ctx_size);
  auto pos_rng = rng.child("ctx_pos");
  auto neg_rng = rng.child("ctx_neg");
  for (double& v : bank.ctx_pos) v = cfg.init_sigma * pos_rng.next_gaussian();
  for (double& v : bank.ctx_neg) v = cfg.init_sigma * neg_rng.next_gaussian();

  bank.cls_tokens.resize(size_t(bank.classes) * bank.dim);
  for (int k = 0; k < bank.classes; ++k) {
    auto anchor = ds.anchors.row(k);
    for (int i = 0; i < bank.dim; ++i) bank.cls_tokens[size_t(k) * bank.dim + i] = anchor[i];
  }

  VisualAdapter& ad = state.adapter;
  ad.dim = bank.dim;
  ad.rank = cfg.adapter_rank;
  ad.enabled = cfg.adapter_enabled;
  ad.up.assign(size_t(ad.dim) * ad.rank, 0.0);  // identity start
  ad.down.resize(size_t(ad.rank) * ad.dim);
  auto adapter_rng = rng.child("adapter");
  for (double& v : ad.down) v = cfg.init_sigma * adapter_rng.next_gaussian();
  return state;
}

namespace {

// Pre-normalized class embedding m = mean(ctx tokens) + cls token.
std::vector<double> compose_raw(const PromptBank& bank, int class_k, bool positive) {
  if (class_k < 0 || class_k >= bank.classes) raise(Err::IndexOutOfRange, "class index out of range");
  std::vector<double> m(bank.dim, 0.0);
  for (int t = 0; t < bank.ctx_len; ++t) {
    auto tok = bank.ctx_token(positive, class_k, t);
    for (int i = 0; i < bank.dim; ++i) m[i] += tok[i];
  }
  for (int i = 0; i < bank.dim; ++i) m[i] /= bank.ctx_len;
  auto cls = bank.cls_token(class_k);
  for (int i = 0; i < bank.dim; ++i) m[i] += cls[i];
  return m;
}

struct TextCache {
  // per class and polarity: unit embedding t and the pre-normalization norm
  std::vector<std::vector<double>> t_pos, t_neg;
  std::vector<double> norm_pos, norm_neg;
};

TextCache compose_all(const PromptBank& bank) {
  TextCache tc;
  tc.t_pos.resize(bank.classes);
  tc.t_neg.resize(bank.classes);
  tc.norm_pos.resize(bank.classes);
  tc.norm_neg.resize(bank.classes);
  for (int k = 0; k < bank.classes; ++k) {
    for (bool positive : {true, false}) {
      std::vector<double> m = compose_raw(bank, k, positive);
      double nm = norm(std::span<const double>(m));
      if (nm <= kNormEpsilon) raise(Err::ZeroVector, "degenerate composed class embedding");
      for (double& v : m) v /= nm;
      (positive ? tc.t_pos : tc.t_neg)[k] = std::move(m);
      (positive ? tc.norm_pos : tc.norm_neg)[k] = nm;
    }
  }
  return tc;
}

struct VisualForward {
  std::vector<double> u;  // down * x (empty when the adapter is off)
  std::vector<double> v;  // unit adapted feature
  double norm_a = 1.0;    // norm of the pre-normalized residual sum
};

VisualForward visual_forward(const VisualAdapter& ad, std::span<const float> x) {
  VisualForward f;
  int d = int(x.size());
  std::vector<double> a(d);
  for (int i = 0; i < d; ++i) a[i] = x[i];
  if (ad.enabled && ad.rank > 0) {
    if (ad.dim != d) raise(Err::Internal, "adapter dimension mismatch");
    f.u.assign(ad.rank, 0.0);
    for (int r = 0; r < ad.rank; ++r) {
      double acc = 0.0;
      const double* row = ad.down.data() + size_t(r) * d;
      for (int i = 0; i < d; ++i) acc += row[i] * x[i];
      f.u[r] = acc;
    }
    for (int i = 0; i < d; ++i) {
      double acc = 0.0;
      const double* row = ad.up.data() + size_t(i) * ad.rank;
      for (int r = 0; r < ad.rank; ++r) acc += row[r] * f.u[r];
      a[i] += acc;
    }
  }
  f.norm_a = norm(std::span<const double>(a));
  if (f.norm_a <= kNormEpsilon) raise(Err::ZeroVector, "adapted feature collapsed to zero");
  for (double& v : a) v /= f.norm_a;
  f.v = std::move(a);
  return f;
}

struct Gradients {
  std::vector<double> ctx_pos, ctx_neg, up, down;
};

void check_item(const BatchItem& item, int classes, int samples, bool need_complement) {
  if (item.sample_index < 0 || item.sample_index >= samples)
    raise(Err::IndexOutOfRange, "batch sample index out of range");
  if (item.label < 0 || item.label >= classes)
    raise(Err::IndexOutOfRange, "batch label out of range");
  if (need_complement) {
    if (item.complement < 0 || item.complement >= classes)
      raise(Err::IndexOutOfRange, "batch complement label out of range");
    if (item.complement == item.label)
      raise(Err::ComplementEqualsLabel, "complement label equals the assigned label");
  }
}

// Shared forward/backward. With grads == nullptr this is just the loss.
double batch_loss_and_grad(const ModelState& state, const FeatureDataset& ds,
                           std::span<const BatchItem> batch, const TrainConfig& cfg,
                           Gradients* grads) {
  if (batch.empty()) raise(Err::Internal, "empty batch");
  const PromptBank& bank = state.bank;
  const VisualAdapter& ad = state.adapter;
  const int c = bank.classes, d = bank.dim, m = bank.ctx_len;
  const double tau = cfg.temperature, lam = cfg.lambda;
  const bool use_l2 = lam != 0.0;
  const bool adapter_active = ad.enabled && ad.rank > 0;
  TextCache tc = compose_all(bank);

  // dL/dt accumulated across the batch, backpropagated through the composer
  // once at the end (the text embeddings are constant within a step).
  std::vector<std::vector<double>> dt_pos, dt_neg;
  if (grads) {
    dt_pos.assign(c, std::vector<double>(d, 0.0));
    dt_neg.assign(c, std::vector<double>(d, 0.0));
  }

  double loss = 0.0;
  std::vector<double> logits(c), spos(c), dv(d), da(d), du;
  for (const BatchItem& item : batch) {
    check_item(item, c, ds.num_samples(), use_l2);
    auto x = ds.features.row(item.sample_index);
    VisualForward vf = visual_forward(ad, x);
    const std::vector<double>& v = vf.v;

    for (int k = 0; k < c; ++k) {
      spos[k] = dot(std::span<const double>(v), std::span<const double>(tc.t_pos[k]));
      logits[k] = spos[k] / tau;
    }
    double lse = log_sum_exp(logits);
    double l1 = lse - logits[item.label];

    double l2 = 0.0, zy = 0.0, zt = 0.0, sneg_y = 0.0, sneg_t = 0.0;
    if (use_l2) {
      sneg_y = dot(std::span<const double>(v), std::span<const double>(tc.t_neg[item.label]));
      sneg_t = dot(std::span<const double>(v), std::span<const double>(tc.t_neg[item.complement]));
      zy = (spos[item.label] - sneg_y) / tau;
      zt = (spos[item.complement] - sneg_t) / tau;
      // corrected form: -log p_clean(y) - log(1 - p_clean(y~));
      // paper form keeps the printed plus sign on the second term.
      l2 = softplus(-zy) + (cfg.l2_paper_sign ? -softplus(zt) : softplus(zt));
    }
    const double w = item.weight;
    loss += w * (l1 + lam * l2);
    if (!grads) continue;

    // dL/ds+ and dL/ds- per class for this item
    std::vector<double> probs = softmax(logits, 1.0);
    std::vector<double> gpos(c);
    for (int k = 0; k < c; ++k) gpos[k] = w * (probs[k] - (k == item.label ? 1.0 : 0.0)) / tau;
    double gneg_y = 0.0, gneg_t = 0.0;
    if (use_l2) {
      double sy = sigmoid(zy), st = sigmoid(zt);
      double sign = cfg.l2_paper_sign ? -1.0 : 1.0;
      gpos[item.label] += w * lam * (sy - 1.0) / tau;
      gneg_y = -w * lam * (sy - 1.0) / tau;
      gpos[item.complement] += sign * w * lam * st / tau;
      gneg_t = -sign * w * lam * st / tau;
    }

    std::fill(dv.begin(), dv.end(), 0.0);
    for (int k = 0; k < c; ++k) {
      if (gpos[k] == 0.0) continue;
      const auto& t = tc.t_pos[k];
      for (int i = 0; i < d; ++i) {
        dt_pos[k][i] += gpos[k] * v[i];
        dv[i] += gpos[k] * t[i];
      }
    }
    if (use_l2) {
      const auto& ty = tc.t_neg[item.label];
      const auto& tt = tc.t_neg[item.complement];
      for (int i = 0; i < d; ++i) {
        dt_neg[item.label][i] += gneg_y * v[i];
        dt_neg[item.complement][i] += gneg_t * v[i];
        dv[i] += gneg_y * ty[i] + gneg_t * tt[i];
      }
    }

    if (adapter_active) {
      // back through v = a / |a|
      double vdv = dot(std::span<const double>(v), std::span<const double>(dv));
      for (int i = 0; i < d; ++i) da[i] = (dv[i] - vdv * v[i]) / vf.norm_a;
      // a = x + up * u, u = down * x
      du.assign(ad.rank, 0.0);
      for (int i = 0; i < d; ++i) {
        double* gup = grads->up.data() + size_t(i) * ad.rank;
        const double* uprow = ad.up.data() + size_t(i) * ad.rank;
        for (int r = 0; r < ad.rank; ++r) {
          gup[r] += da[i] * vf.u[r];
          du[r] += uprow[r] * da[i];
        }
      }
      for (int r = 0; r < ad.rank; ++r) {
        double* gdown = grads->down.data() + size_t(r) * d;
        for (int i = 0; i < d; ++i) gdown[i] += du[r] * double(x[i]);
      }
    }
  }

  if (grads) {
    // t = m / |m| with m = mean(ctx) + cls; each of the M tokens receives
    // dm / M, the cls token is frozen.
    for (int k = 0; k < c; ++k) {
      for (bool positive : {true, false}) {
        const auto& t = positive ? tc.t_pos[k] : tc.t_neg[k];
        const auto& dt = positive ? dt_pos[k] : dt_neg[k];
        double nm = positive ? tc.norm_pos[k] : tc.norm_neg[k];
        double tdt = dot(std::span<const double>(t), std::span<const double>(dt));
        auto& gctx = positive ? grads->ctx_pos : grads->ctx_neg;
        size_t slot_base = size_t(bank.slot_of(k)) * m * d;
        for (int i = 0; i < d; ++i) {
          double dm = (dt[i] - tdt * t[i]) / (nm * m);
          if (dm == 0.0) continue;
          for (int tok = 0; tok < m; ++tok) gctx[slot_base + size_t(tok) * d + i] += dm;
        }
      }
    }
  }
  return loss;
}

}  // namespace

std::vector<double> compose_text(const PromptBank& bank, int class_k, bool positive) {
  std::vector<double> m = compose_raw(bank, class_k, positive);
  l2_normalize(std::span<double>(m));
  return m;
}

std::vector<double> visual_embed(const VisualAdapter& adapter, std::span<const float> x) {
  return visual_forward(adapter, x).v;
}

std::vector<double> class_logits(const ModelState& state, std::span<const float> x, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    raise(Err::InvalidTemperature, "temperature must be positive and finite");
  std::vector<double> v = visual_embed(state.adapter, x);
  std::vector<double> logits(state.bank.classes);
  for (int k = 0; k < state.bank.classes; ++k) {
    std::vector<double> t = compose_text(state.bank, k, true);
    logits[k] = dot(std::span<const double>(v), std::span<const double>(t)) / tau;
  }
  return logits;
}

double clean_prob_from_sims(double sim_pos, double sim_neg, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    raise(Err::InvalidTemperature, "temperature must be positive and finite");
  return sigmoid((sim_pos - sim_neg) / tau);
}

double clean_logit(const ModelState& state, std::span<const float> x, int label, double tau) {
  if (label < 0 || label >= state.bank.classes)
    raise(Err::IndexOutOfRange, "p_clean label out of range");
  if (!(tau > 0.0) || !std::isfinite(tau))
    raise(Err::InvalidTemperature, "temperature must be positive and finite");
  std::vector<double> v = visual_embed(state.adapter, x);
  std::vector<double> tp = compose_text(state.bank, label, true);
  std::vector<double> tn = compose_text(state.bank, label, false);
  double sp = dot(std::span<const double>(v), std::span<const double>(tp));
  double sn = dot(std::span<const double>(v), std::span<const double>(tn));
  return (sp - sn) / tau;
}

double p_clean(const ModelState& state, std::span<const float> x, int label, double tau) {
  return sigmoid(clean_logit(state, x, label, tau));
}

double loss_l1(const ModelState& state, std::span<const float> x, int label, double tau) {
  if (label < 0 || label >= state.bank.classes)
    raise(Err::IndexOutOfRange, "loss_l1 label out of range");
  std::vector<double> logits = class_logits(state, x, tau);
  return log_sum_exp(logits) - logits[label];
}

double loss_l2(const ModelState& state, std::span<const float> x, int label, int complement,
               double tau, bool paper_sign) {
  if (label < 0 || label >= state.bank.classes)
    raise(Err::IndexOutOfRange, "loss_l2 label out of range");
  if (complement == label)
    raise(Err::ComplementEqualsLabel, "complement label equals the assigned label");
  if (complement < 0 || complement >= state.bank.classes)
    raise(Err::IndexOutOfRange, "loss_l2 complement out of range");
  double zy = clean_logit(state, x, label, tau);
  double zt = clean_logit(state, x, complement, tau);
  return softplus(-zy) + (paper_sign ? -softplus(zt) : softplus(zt));
}

std::vector<BatchItem> make_uniform_batch(std::span<const int> indices,
                                          std::span<const int> labels, RngStream& complement_rng,
                                          int num_classes) {
  if (indices.size() != labels.size()) raise(Err::Internal, "index/label size mismatch");
  std::vector<BatchItem> batch(indices.size());
  double w = indices.empty() ? 0.0 : 1.0 / double(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    int y = labels[i];
    int comp = int((y + 1 + complement_rng.next_below(uint64_t(num_classes - 1))) % num_classes);
    batch[i] = BatchItem{indices[i], y, comp, w};
  }
  return batch;
}

double total_loss(const ModelState& state, const FeatureDataset& ds,
                  std::span<const BatchItem> batch, const TrainConfig& cfg) {
  return batch_loss_and_grad(state, ds, batch, cfg, nullptr);
}

double cosine_lr(double base_lr, int64_t step, int64_t total_steps) {
  if (total_steps <= 0) raise(Err::InvalidConfig, "total_steps must be positive");
  double t = std::clamp(double(step) / double(total_steps), 0.0, 1.0);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

void grad_step(ModelState& state, const FeatureDataset& ds, std::span<const BatchItem> batch,
               const TrainConfig& cfg, int64_t total_steps) {
  cfg.validate();
  Gradients g;
  g.ctx_pos.assign(state.bank.ctx_pos.size(), 0.0);
  g.ctx_neg.assign(state.bank.ctx_neg.size(), 0.0);
  g.up.assign(state.adapter.up.size(), 0.0);
  g.down.assign(state.adapter.down.size(), 0.0);
  batch_loss_and_grad(state, ds, batch, cfg, &g);

  double lr = cosine_lr(cfg.lr, state.step, total_steps);
  for (size_t i = 0; i < g.ctx_pos.size(); ++i) state.bank.ctx_pos[i] -= lr * g.ctx_pos[i];
  for (size_t i = 0; i < g.ctx_neg.size(); ++i) state.bank.ctx_neg[i] -= lr * g.ctx_neg[i];
  if (state.adapter.enabled && state.adapter.rank > 0) {
    for (size_t i = 0; i < g.up.size(); ++i) state.adapter.up[i] -= lr * g.up[i];
    for (size_t i = 0; i < g.down.size(); ++i) state.adapter.down[i] -= lr * g.down[i];
  }
  ++state.step;
}

ModelState train(ModelState state, const PoolState& pool, const FeatureDataset& ds,
                 const TrainConfig& cfg, RngStream rng) {
  cfg.validate();
  if (pool.labeled.empty() && pool.pseudo.empty())
    raise(Err::EmptyTrainingSet, "no labeled or pseudo-labeled samples to train on");

  const int c = ds.num_classes();
  auto batches_of = [](size_t n, int batch) { return int((n + batch - 1) / batch); };
  const int n_lab = batches_of(pool.labeled.size(), cfg.batch_labeled);
  const int n_pse = batches_of(pool.pseudo.size(), cfg.batch_pseudo);
  const int steps_per_epoch = std::max(1, std::max(n_lab, n_pse));
  const int64_t total_steps = int64_t(cfg.epochs) * steps_per_epoch;

  std::vector<BatchItem> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto erng = rng.child("epoch").child(uint64_t(epoch));
    std::vector<IndexLabel> lab = pool.labeled;
    std::vector<IndexLabel> pse = pool.pseudo;
    {
      auto r = erng.child("labeled");
      r.shuffle(lab);
    }
    {
      auto r = erng.child("pseudo");
      r.shuffle(pse);
    }
    auto crng = erng.child("complement");

    for (int s = 0; s < steps_per_epoch; ++s) {
      size_t lab_begin = size_t(s) * cfg.batch_labeled;
      size_t lab_end = std::min(lab.size(), lab_begin + cfg.batch_labeled);
      size_t pse_begin = size_t(s) * cfg.batch_pseudo;
      size_t pse_end = std::min(pse.size(), pse_begin + cfg.batch_pseudo);
      size_t lab_n = lab_begin < lab_end ? lab_end - lab_begin : 0;
      size_t pse_n = pse_begin < pse_end ? pse_end - pse_begin : 0;
      if (lab_n == 0 && pse_n == 0) continue;

      // The labeled and pseudo sub-batch losses enter with equal weight when
      // both streams are present in a step.
      double w_lab = lab_n ? (pse_n ? 0.5 / double(lab_n) : 1.0 / double(lab_n)) : 0.0;
      double w_pse = pse_n ? (lab_n ? 0.5 / double(pse_n) : 1.0 / double(pse_n)) : 0.0;

      batch.clear();
      auto push = [&](const IndexLabel& il, double w) {
        int comp = int((il.second + 1 + crng.next_below(uint64_t(c - 1))) % c);
        batch.push_back(BatchItem{il.first, il.second, comp, w});
      };
      for (size_t i = lab_begin; i < lab_end; ++i) push(lab[i], w_lab);
      for (size_t i = pse_begin; i < pse_end; ++i) push(pse[i], w_pse);
      grad_step(state, ds, batch, cfg, total_steps);
    }
  }
  return state;
}

double gradient_check(const ModelState& state, const FeatureDataset& ds,
                      std::span<const BatchItem> batch, const TrainConfig& cfg, double eps) {
  if (eps < 1e-5 || eps > 1e-3)
    raise(Err::InvalidConfig, "gradient check epsilon must lie in [1e-5, 1e-3]");
  Gradients g;
  g.ctx_pos.assign(state.bank.ctx_pos.size(), 0.0);
  g.ctx_neg.assign(state.bank.ctx_neg.size(), 0.0);
  g.up.assign(state.adapter.up.size(), 0.0);
  g.down.assign(state.adapter.down.size(), 0.0);
  batch_loss_and_grad(state, ds, batch, cfg, &g);

  ModelState work = state;
  double max_rel = 0.0;
  auto sweep = [&](std::vector<double>& params, const std::vector<double>& analytic) {
    for (size_t i = 0; i < params.size(); ++i) {
      double orig = params[i];
      params[i] = orig + eps;
      double lp = total_loss(work, ds, batch, cfg);
      params[i] = orig - eps;
      double lm = total_loss(work, ds, batch, cfg);
      params[i] = orig;
      double fd = (lp - lm) / (2.0 * eps);
      double denom = std::max({1.0, std::abs(fd), std::abs(analytic[i])});
      max_rel = std::max(max_rel, std::abs(fd - analytic[i]) / denom);
    }
  };
  sweep(work.bank.ctx_pos, g.ctx_pos);
  sweep(work.bank.ctx_neg, g.ctx_neg);
  if (state.adapter.enabled && state.adapter.rank > 0) {
    sweep(work.adapter.up, g.up);
    sweep(work.adapter.down, g.down);
  }
  return max_rel;
}

// ---- checkpoint I/O ----

namespace {

constexpr char kModelMagic[4] = {'D', 'P', 'M', 'S'};
constexpr uint32_t kModelVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  const uint8_t* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + 4);
}

void put_f32_block(std::vector<uint8_t>& out, const std::vector<double>& values) {
  for (double v : values) {
    float f = float(v);
    const uint8_t* p = reinterpret_cast<const uint8_t*>(&f);
    out.insert(out.end(), p, p + 4);
  }
}

}  // namespace

std::vector<uint8_t> serialize_model(const ModelState& state) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kModelMagic, kModelMagic + 4);
  put_u32(out, kModelVersion);
  put_u32(out, uint32_t(state.bank.classes));
  put_u32(out, uint32_t(state.bank.ctx_len));
  put_u32(out, uint32_t(state.bank.dim));
  put_u32(out, uint32_t(state.adapter.rank));
  uint32_t flags = (state.adapter.enabled ? 1u : 0u) | (state.bank.shared ? 2u : 0u);
  put_u32(out, flags);
  uint64_t step = uint64_t(state.step);
  const uint8_t* p = reinterpret_cast<const uint8_t*>(&step);
  out.insert(out.end(), p, p + 8);
  put_f32_block(out, state.bank.ctx_pos);
  put_f32_block(out, state.bank.ctx_neg);
  put_f32_block(out, state.bank.cls_tokens);
  put_f32_block(out, state.adapter.up);
  put_f32_block(out, state.adapter.down);
  return out;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  std::vector<uint8_t> bytes = serialize_model(state);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) raise(Err::FormatError, "cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!os) raise(Err::FormatError, "write failed: " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Err::FormatError, "cannot open checkpoint: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  size_t off = 0;
  auto need = [&](size_t n) {
    if (off + n > bytes.size()) raise(Err::FormatError, "truncated checkpoint");
  };
  need(4);
  if (std::memcmp(bytes.data(), kModelMagic, 4) != 0) raise(Err::FormatError, "bad checkpoint magic");
  off = 4;
  auto get_u32 = [&]() {
    need(4);
    uint32_t v;
    std::memcpy(&v, bytes.data() + off, 4);
    off += 4;
    return v;
  };
  if (get_u32() != kModelVersion) raise(Err::FormatError, "unsupported checkpoint version");
  ModelState state;
  state.bank.classes = int(get_u32());
  state.bank.ctx_len = int(get_u32());
  state.bank.dim = int(get_u32());
  state.adapter.rank = int(get_u32());
  uint32_t flags = get_u32();
  state.adapter.enabled = flags & 1u;
  state.bank.shared = flags & 2u;
  need(8);
  uint64_t step;
  std::memcpy(&step, bytes.data() + off, 8);
  off += 8;
  state.step = int64_t(step);
  state.adapter.dim = state.bank.dim;

  auto get_block = [&](std::vector<double>& dst, size_t count) {
    need(count * 4);
    dst.resize(count);
    for (size_t i = 0; i < count; ++i) {
      float f;
      std::memcpy(&f, bytes.data() + off, 4);
      off += 4;
      dst[i] = double(f);
    }
  };
  size_t ctx = size_t(state.bank.ctx_slots()) * state.bank.ctx_len * state.bank.dim;
  get_block(state.bank.ctx_pos, ctx);
  get_block(state.bank.ctx_neg, ctx);
  get_block(state.bank.cls_tokens, size_t(state.bank.classes) * state.bank.dim);
  get_block(state.adapter.up, size_t(state.bank.dim) * state.adapter.rank);
  get_block(state.adapter.down, size_t(state.adapter.rank) * state.bank.dim);
  if (off != bytes.size()) raise(Err::FormatError, "trailing bytes in checkpoint");
  return state;
}

}  // namespace dpal
