#include <doctest.h>

#include <cmath>

#include "dpal/model.hpp"
#include "test_util.hpp"

using namespace dpal;

namespace {

FeatureDataset toy_dataset(uint64_t seed = 3, int classes = 4, int dims = 8) {
  SyntheticSpec spec;
  spec.n_per_class = 20;
  spec.classes = classes;
  spec.dims = dims;
  return generate_synthetic(spec, RngStream(seed));
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.ctx_tokens = 4;
  cfg.adapter_rank = 2;
  return cfg;
}

void zero_ctx(ModelState& state) {
  std::fill(state.bank.ctx_pos.begin(), state.bank.ctx_pos.end(), 0.0);
  std::fill(state.bank.ctx_neg.begin(), state.bank.ctx_neg.end(), 0.0);
}

}  // namespace

TEST_CASE("compose_text: zero context reduces to the normalized class token") {
  FeatureDataset ds = toy_dataset();
  ModelState state = init_model(ds, toy_config(), RngStream(1));
  zero_ctx(state);
  for (int k = 0; k < ds.num_classes(); ++k) {
    auto t = compose_text(state.bank, k, true);
    auto anchor = ds.anchors.row(k);  // unit norm already
    for (int i = 0; i < ds.dim(); ++i) CHECK(t[i] == doctest::Approx(double(anchor[i])).epsilon(1e-6));
  }
}

TEST_CASE("compose_text: M=1 mean is the single token") {
  FeatureDataset ds = toy_dataset();
  TrainConfig cfg = toy_config();
  cfg.ctx_tokens = 1;
  ModelState state = init_model(ds, cfg, RngStream(1));
  // expected: normalize(ctx_token + cls); computed by hand below
  int k = 2;
  std::vector<double> expect(ds.dim());
  for (int i = 0; i < ds.dim(); ++i)
    expect[i] = state.bank.ctx_token(true, k, 0)[i] + state.bank.cls_token(k)[i];
  double n = norm(std::span<const double>(expect));
  auto t = compose_text(state.bank, k, true);
  for (int i = 0; i < ds.dim(); ++i) CHECK(t[i] == doctest::Approx(expect[i] / n).epsilon(1e-12));
}

TEST_CASE("compose_text: hand-computed 3-dim example") {
  // two classes, two context tokens, three dims; all values chosen by hand
  PromptBank bank;
  bank.classes = 2;
  bank.ctx_len = 2;
  bank.dim = 3;
  bank.shared = false;
  bank.ctx_pos = {0.2, 0.0, 0.0, 0.4, 0.0, 0.0,   // class 0: tokens (0.2,0,0), (0.4,0,0)
                  0.0, 0.0, 0.0, 0.0, 0.0, 0.0};  // class 1: zeros
  bank.ctx_neg = std::vector<double>(12, 0.0);
  bank.cls_tokens = {0.0, 1.0, 0.0, 0.0, 0.0, 1.0};
  // class 0: mean(ctx) = (0.3, 0, 0); m = (0.3, 1, 0); |m| = sqrt(1.09)
  auto t = compose_text(bank, 0, true);
  double n = std::sqrt(1.09);
  CHECK(t[0] == doctest::Approx(0.3 / n).epsilon(1e-12));
  CHECK(t[1] == doctest::Approx(1.0 / n).epsilon(1e-12));
  CHECK(t[2] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("visual_embed: zero-initialized residual is the identity") {
  FeatureDataset ds = toy_dataset();
  ModelState state = init_model(ds, toy_config(), RngStream(1));
  // init_model zero-fills `up`, so v(x) == x exactly
  auto x = ds.features.row(5);
  auto v = visual_embed(state.adapter, x);
  for (int i = 0; i < ds.dim(); ++i) CHECK(v[i] == doctest::Approx(double(x[i])).epsilon(1e-7));
}

TEST_CASE("visual_embed: disabled adapter bypasses, random adapter keeps unit norm") {
  FeatureDataset ds = toy_dataset();
  TrainConfig cfg = toy_config();
  cfg.adapter_enabled = false;
  ModelState off = init_model(ds, cfg, RngStream(1));
  auto x = ds.features.row(3);
  auto v = visual_embed(off.adapter, x);
  for (int i = 0; i < ds.dim(); ++i) CHECK(v[i] == doctest::Approx(double(x[i])));

  cfg.adapter_enabled = true;
  ModelState on = init_model(ds, cfg, RngStream(1));
  RngStream noise(9);
  for (double& w : on.adapter.up) w = 0.3 * noise.next_gaussian();
  for (double& w : on.adapter.down) w = 0.3 * noise.next_gaussian();
  for (int row = 0; row < 10; ++row) {
    auto u = visual_embed(on.adapter, ds.features.row(row));
    CHECK(std::abs(norm(std::span<const double>(u)) - 1.0) < 1e-9);
  }
}

TEST_CASE("class_logits: self-match scores 1/tau, temperature scales linearly") {
  FeatureDataset ds = toy_dataset();
  TrainConfig cfg = toy_config();
  cfg.adapter_enabled = false;
  ModelState state = init_model(ds, cfg, RngStream(1));
  zero_ctx(state);
  // craft x equal to t+(c_1) = anchor 1
  std::vector<float> x(ds.dim());
  for (int i = 0; i < ds.dim(); ++i) x[i] = ds.anchors.at(1, i);

  auto logits = class_logits(state, std::span<const float>(x), 1.0);
  CHECK(logits[1] == doctest::Approx(1.0).epsilon(1e-6));
  for (int k = 0; k < 4; ++k)
    if (k != 1) CHECK(logits[k] < logits[1]);

  auto halved = class_logits(state, std::span<const float>(x), 0.5);
  for (int k = 0; k < 4; ++k) CHECK(halved[k] == doctest::Approx(2.0 * logits[k]).epsilon(1e-9));
  CHECK(argmax(std::span<const double>(halved)) == argmax(std::span<const double>(logits)));
}

TEST_CASE("class_logits: argmax invariant to positive rescaling of the feature") {
  // the adapter residual is linear in x, so v(alpha x) == v(x) exactly
  FeatureDataset ds = toy_dataset();
  ModelState state = init_model(ds, toy_config(), RngStream(2));
  RngStream noise(3);
  for (double& v : state.adapter.up) v = 0.2 * noise.next_gaussian();
  auto x = ds.features.row(11);
  std::vector<float> scaled(x.begin(), x.end());
  for (float& v : scaled) v *= 7.5f;
  auto a = class_logits(state, x, 0.01);
  auto b = class_logits(state, std::span<const float>(scaled), 0.01);
  CHECK(argmax(std::span<const double>(a)) == argmax(std::span<const double>(b)));
  // float32 rounding of the scaled input leaves ~1e-7 relative noise
  for (size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-6));
}

TEST_CASE("p_clean: symmetric case gives exactly one half") {
  FeatureDataset ds = toy_dataset();
  ModelState state = init_model(ds, toy_config(), RngStream(1));
  zero_ctx(state);  // t+ == t- == normalized cls, so sim+ == sim-
  auto x = ds.features.row(0);
  for (int k = 0; k < ds.num_classes(); ++k)
    CHECK(p_clean(state, x, k, 0.01) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("p_clean: frozen logistic values") {
  // sigma(0.02 / 0.01) = sigma(2); direct evaluation as the oracle
  double expect2 = 1.0 / (1.0 + std::exp(-2.0));
  CHECK(clean_prob_from_sims(0.52, 0.50, 0.01) == doctest::Approx(expect2).epsilon(1e-9));
  CHECK(clean_prob_from_sims(0.52, 0.50, 0.01) == doctest::Approx(0.8808).epsilon(1e-4));
  // sigma(1) = e / (e + 1)
  double expect1 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  CHECK(clean_prob_from_sims(1.0, 0.0, 1.0) == doctest::Approx(expect1).epsilon(1e-9));
  CHECK(clean_prob_from_sims(1.0, 0.0, 1.0) == doctest::Approx(0.7311).epsilon(1e-4));
}

TEST_CASE("p_clean: strictly increasing in sim+ and complement sums to one") {
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    double sim_pos = -1.0 + 2.0 * double(i) / 100.0;
    double p = clean_prob_from_sims(sim_pos, 0.1, 0.05);
    CHECK(p > prev);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
    // the two-way softmax complement is 1-p by construction
    double comp = clean_prob_from_sims(0.1, sim_pos, 0.05);
    CHECK(std::abs(p + comp - 1.0) < 1e-12);
    prev = p;
  }
}

TEST_CASE("loss_l1: uniform logits give ln C") {
  // all class tokens identical -> every logit equal regardless of x
  FeatureDataset ds = toy_dataset();
  ModelState state = init_model(ds, toy_config(), RngStream(1));
  zero_ctx(state);
  for (int k = 0; k < ds.num_classes(); ++k)
    for (int i = 0; i < ds.dim(); ++i)
      state.bank.cls_tokens[size_t(k) * ds.dim() + i] = ds.anchors.at(0, i);
  auto x = ds.features.row(7);
  CHECK(loss_l1(state, x, 2, 0.01) == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("loss_l1: frozen two-class value -log(e/(e+1))") {
  // construct logits (1, 0) at tau=1 through raw sims: x = t+(c_0),
  // t+(c_1) orthogonal to x
  PromptBank bank;
  bank.classes = 2;
  bank.ctx_len = 1;
  bank.dim = 2;
  bank.ctx_pos = std::vector<double>(4, 0.0);
  bank.ctx_neg = std::vector<double>(4, 0.0);
  bank.cls_tokens = {1.0, 0.0, 0.0, 1.0};
  ModelState state;
  state.bank = bank;
  state.adapter.dim = 2;
  state.adapter.rank = 0;
  state.adapter.enabled = false;
  std::vector<float> x{1.0f, 0.0f};
  double got = loss_l1(state, std::span<const float>(x), 0, 1.0);
  double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(got == doctest::Approx(expect).epsilon(1e-9));
  CHECK(got == doctest::Approx(0.3133).epsilon(1e-4));
  CHECK(got >= 0.0);
}

TEST_CASE("loss_l2: symmetric untrained state gives 2 ln 2") {
  FeatureDataset ds = toy_dataset();
  ModelState state = init_model(ds, toy_config(), RngStream(1));
  zero_ctx(state);
  auto x = ds.features.row(0);
  CHECK(loss_l2(state, x, 0, 1, 0.01, false) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("loss_l2: corrected form vanishes at its optimum") {
  // p_clean(y) -> 1 and p_clean(y~) -> 0 drive the corrected loss to 0
  CHECK(softplus(-40.0) + softplus(-40.0) < 1e-12);  // the two loss terms at the optimum
  PromptBank bank;
  bank.classes = 2;
  bank.ctx_len = 1;
  bank.dim = 2;
  // class 0: t+ = e1, t- = e2; class 1: t+ = e2, t- = e1 (via ctx = cls swap)
  bank.ctx_pos = {0.0, 0.0, 0.0, 0.0};
  bank.ctx_neg = {-1.0, 1.0, 1.0, -1.0};  // cls + ctx flips the axis
  bank.cls_tokens = {1.0, 0.0, 0.0, 1.0};
  ModelState state;
  state.bank = bank;
  state.adapter.dim = 2;
  state.adapter.enabled = false;
  std::vector<float> x{1.0f, 0.0f};
  // sim+(c0)=1, sim-(c0)=0 -> z_y = 1/tau; sim+(c1)=0, sim-(c1)=1 -> z_t = -1/tau
  double loss = loss_l2(state, std::span<const float>(x), 0, 1, 0.01, false);
  CHECK(loss < 1e-10);
}

TEST_CASE("loss_l2: complement equal to the label is rejected") {
  FeatureDataset ds = toy_dataset();
  ModelState state = init_model(ds, toy_config(), RngStream(1));
  try {
    loss_l2(state, ds.features.row(0), 1, 1, 0.01, false);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == Err::ComplementEqualsLabel);
  }
}

TEST_CASE("loss_l2 gradient pushes p_clean of the complement downward") {
  // finite-difference sign check: nudging parameters along -grad must lower
  // p_clean(x, y~) through the corrected L2 term
  FeatureDataset ds = toy_dataset();
  TrainConfig cfg = toy_config();
  cfg.lambda = 1.0;
  ModelState state = init_model(ds, cfg, RngStream(4));
  std::vector<BatchItem> batch{{0, ds.true_labels[0], (ds.true_labels[0] + 1) % 4, 1.0}};
  double before = p_clean(state, ds.features.row(0), batch[0].complement, cfg.temperature);
  ModelState stepped = state;
  grad_step(stepped, ds, batch, cfg, 1000000);  // tiny effective lr step at t=0
  double after = p_clean(stepped, ds.features.row(0), batch[0].complement, cfg.temperature);
  CHECK(after < before);
}

TEST_CASE("total_loss: lambda 0 equals mean l1; single item; lambda linearity") {
  FeatureDataset ds = toy_dataset();
  TrainConfig cfg = toy_config();
  ModelState state = init_model(ds, cfg, RngStream(5));
  RngStream crng(17);
  std::vector<int> idx{0, 21, 43, 61};
  std::vector<int> labels{0, 1, 2, 3};
  auto batch = make_uniform_batch(idx, labels, crng, 4);

  cfg.lambda = 0.0;
  double l0 = total_loss(state, ds, batch, cfg);
  double mean_l1 = 0.0;
  for (const auto& item : batch)
    mean_l1 += loss_l1(state, ds.features.row(item.sample_index), item.label, cfg.temperature);
  mean_l1 /= double(batch.size());
  CHECK(l0 == doctest::Approx(mean_l1).epsilon(1e-9));

  std::vector<BatchItem> single{batch[0]};
  single[0].weight = 1.0;
  cfg.lambda = 0.7;
  double ls = total_loss(state, ds, single, cfg);
  double expect = loss_l1(state, ds.features.row(single[0].sample_index), single[0].label,
                          cfg.temperature) +
                  0.7 * loss_l2(state, ds.features.row(single[0].sample_index), single[0].label,
                                single[0].complement, cfg.temperature, false);
  CHECK(ls == doctest::Approx(expect).epsilon(1e-9));

  // doubling lambda adds exactly mean(l2)
  cfg.lambda = 1.0;
  double l1w = total_loss(state, ds, batch, cfg);
  cfg.lambda = 2.0;
  double l2w = total_loss(state, ds, batch, cfg);
  double mean_l2 = 0.0;
  for (const auto& item : batch)
    mean_l2 += loss_l2(state, ds.features.row(item.sample_index), item.label, item.complement,
                       cfg.temperature, false);
  mean_l2 /= double(batch.size());
  CHECK(l2w - l1w == doctest::Approx(mean_l2).epsilon(1e-7));
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(cosine_lr(0.03, 0, 100) == doctest::Approx(0.03).epsilon(1e-12));
  CHECK(cosine_lr(0.03, 100, 100) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cosine_lr(0.03, 50, 100) == doctest::Approx(0.015).epsilon(1e-9));
}

TEST_CASE("train: empty pools are rejected") {
  FeatureDataset ds = toy_dataset();
  PoolState pool = PoolState::over(testutil::all_indices(ds));
  ModelState state = init_model(ds, toy_config(), RngStream(1));
  try {
    train(std::move(state), pool, ds, toy_config(), RngStream(2));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == Err::EmptyTrainingSet);
  }
}

TEST_CASE("train: labeled-only works and is deterministic") {
  FeatureDataset ds = toy_dataset();
  PoolState pool = PoolState::over(testutil::all_indices(ds));
  std::vector<IndexLabel> fresh;
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 3; ++j) {
      int idx = k * 20 + j;
      fresh.emplace_back(idx, ds.true_labels[idx]);
    }
  pool = commit_round(pool, fresh, {});

  TrainConfig cfg = toy_config();
  cfg.epochs = 3;
  ModelState a = train(init_model(ds, cfg, RngStream(1)), pool, ds, cfg, RngStream(2));
  ModelState b = train(init_model(ds, cfg, RngStream(1)), pool, ds, cfg, RngStream(2));
  CHECK(serialize_model(a) == serialize_model(b));
  ModelState c = train(init_model(ds, cfg, RngStream(1)), pool, ds, cfg, RngStream(3));
  CHECK(serialize_model(a) != serialize_model(c));
}

TEST_CASE("train: improves over zero-shot on separable data") {
  SyntheticSpec spec;
  spec.n_per_class = 40;
  spec.classes = 4;
  spec.dims = 16;
  spec.class_sep = 3.0;    // nearly separable
  spec.anchor_noise = 1.5; // but mediocre anchors
  FeatureDataset ds = generate_synthetic(spec, RngStream(6));
  auto indices = testutil::all_indices(ds);

  PoolState pool = PoolState::over(indices);
  std::vector<IndexLabel> fresh;
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 8; ++j) fresh.emplace_back(k * 40 + j, k);
  pool = commit_round(pool, fresh, {});

  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.lr = 0.03;
  ModelState state = init_model(ds, cfg, RngStream(7));

  auto training_accuracy = [&](const ModelState& s) {
    int hits = 0;
    for (int idx : indices) {
      auto logits = class_logits(s, ds.features.row(idx), cfg.temperature);
      if (argmax(std::span<const double>(logits)) == ds.true_labels[idx]) ++hits;
    }
    return double(hits) / double(indices.size());
  };
  double before = training_accuracy(state);
  state = train(std::move(state), pool, ds, cfg, RngStream(8));
  double after = training_accuracy(state);
  CHECK(after > before);
}

TEST_CASE("train: lambda 0 never touches ctx_neg") {
  FeatureDataset ds = toy_dataset();
  PoolState pool = PoolState::over(testutil::all_indices(ds));
  std::vector<IndexLabel> fresh{{0, 0}, {25, 1}, {45, 2}, {65, 3}};
  pool = commit_round(pool, fresh, {});
  TrainConfig cfg = toy_config();
  cfg.lambda = 0.0;
  cfg.epochs = 2;
  ModelState before = init_model(ds, cfg, RngStream(1));
  std::vector<double> neg_snapshot = before.bank.ctx_neg;
  std::vector<double> pos_snapshot = before.bank.ctx_pos;
  ModelState after = train(std::move(before), pool, ds, cfg, RngStream(2));
  CHECK(after.bank.ctx_neg == neg_snapshot);  // bit-exact
  CHECK(after.bank.ctx_pos != pos_snapshot);
}

TEST_CASE("re-initialization with the same seed reproduces parameters exactly") {
  FeatureDataset ds = toy_dataset();
  ModelState a = init_model(ds, toy_config(), RngStream(123).child("init"));
  ModelState b = init_model(ds, toy_config(), RngStream(123).child("init"));
  CHECK(a.bank.ctx_pos == b.bank.ctx_pos);
  CHECK(a.bank.ctx_neg == b.bank.ctx_neg);
  CHECK(a.adapter.down == b.adapter.down);
  CHECK(serialize_model(a) == serialize_model(b));
}

TEST_CASE("checkpoint: save/load round trip") {
  testutil::TempDir tmp("ckpt");
  FeatureDataset ds = toy_dataset();
  TrainConfig cfg = toy_config();
  cfg.shared_ctx = true;
  ModelState state = init_model(ds, cfg, RngStream(2));
  state.step = 77;
  auto path = tmp.path / "model.dpms";
  save_checkpoint(state, path);
  ModelState loaded = load_checkpoint(path);
  CHECK(loaded.bank.classes == state.bank.classes);
  CHECK(loaded.bank.shared == state.bank.shared);
  CHECK(loaded.step == 77);
  CHECK(serialize_model(loaded) == serialize_model(state));
}

TEST_CASE("checkpoint: truncated or corrupted files raise FormatError") {
  testutil::TempDir tmp("ckpt");
  FeatureDataset ds = toy_dataset();
  ModelState state = init_model(ds, toy_config(), RngStream(2));
  auto path = tmp.path / "model.dpms";
  save_checkpoint(state, path);
  std::string bytes = testutil::read_file(path);
  auto expect_format_error = [&](const std::string& data) {
    auto broken = tmp.path / "broken.dpms";
    std::ofstream(broken, std::ios::binary).write(data.data(), std::streamsize(data.size()));
    try {
      load_checkpoint(broken);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.kind() == Err::FormatError);
    }
  };
  expect_format_error(bytes.substr(0, bytes.size() / 2));  // truncated payload
  expect_format_error(bytes.substr(0, 6));                 // truncated header
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  expect_format_error(bad_magic);
  std::string trailing = bytes + "junk";
  expect_format_error(trailing);
}

TEST_CASE("composed embeddings are unit norm for random parameters") {
  FeatureDataset ds = toy_dataset();
  ModelState state = init_model(ds, toy_config(), RngStream(6));
  RngStream noise(7);
  for (double& v : state.bank.ctx_pos) v += 0.5 * noise.next_gaussian();
  for (double& v : state.bank.ctx_neg) v += 0.5 * noise.next_gaussian();
  for (int k = 0; k < ds.num_classes(); ++k)
    for (bool positive : {true, false}) {
      auto t = compose_text(state.bank, k, positive);
      CHECK(std::abs(norm(std::span<const double>(t)) - 1.0) < 1e-6);
    }
}

TEST_CASE("shared context tokens collapse the slot dimension") {
  FeatureDataset ds = toy_dataset();
  TrainConfig cfg = toy_config();
  cfg.shared_ctx = true;
  ModelState state = init_model(ds, cfg, RngStream(1));
  CHECK(state.bank.ctx_pos.size() == size_t(cfg.ctx_tokens) * ds.dim());
  // same context block feeds every class
  auto t0 = state.bank.ctx_token(true, 0, 1);
  auto t3 = state.bank.ctx_token(true, 3, 1);
  CHECK(t0.data() == t3.data());
}
