#include "dpal/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace dpal {

bool is_known_strategy(const std::string& name) {
  const auto& names = strategy_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

std::vector<ScoredSample> score_pool(const ModelState& state, const FeatureDataset& ds,
                                     std::span<const int> unlabeled, double tau) {
  std::vector<int> order(unlabeled.begin(), unlabeled.end());
  std::sort(order.begin(), order.end());

  const PromptBank& bank = state.bank;
  std::vector<std::vector<double>> t_pos(bank.classes), t_neg(bank.classes);
  for (int k = 0; k < bank.classes; ++k) {
    t_pos[k] = compose_text(bank, k, true);
    t_neg[k] = compose_text(bank, k, false);
  }

  std::vector<ScoredSample> out;
  out.reserve(order.size());
  std::vector<double> logits(bank.classes);
  for (int idx : order) {
    std::vector<double> v = visual_embed(state.adapter, ds.features.row(idx));
    for (int k = 0; k < bank.classes; ++k)
      logits[k] = dot(std::span<const double>(v), std::span<const double>(t_pos[k])) / tau;
    ScoredSample s;
    s.index = idx;
    s.class_probs = softmax(logits, 1.0);
    s.pseudo_label = argmax(s.class_probs);
    double sneg =
        dot(std::span<const double>(v), std::span<const double>(t_neg[s.pseudo_label])) / tau;
    s.clean_logit = logits[s.pseudo_label] - sneg;
    s.clean_prob = std::clamp(sigmoid(s.clean_logit), 1e-12, 1.0 - 1e-12);
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

// positions into `scored`, grouped by pseudo-label
std::vector<std::vector<int>> group_by_class(std::span<const ScoredSample> scored, int classes) {
  std::vector<std::vector<int>> groups(classes);
  for (int i = 0; i < int(scored.size()); ++i) {
    int y = scored[i].pseudo_label;
    if (y < 0 || y >= classes) raise(Err::IndexOutOfRange, "pseudo-label out of range");
    groups[y].push_back(i);
  }
  return groups;
}

}  // namespace

std::vector<int> select_uncertain(std::span<const ScoredSample> scored, SelectionBudget budget) {
  if (budget.total < 0 || budget.classes < 1)
    raise(Err::InvalidConfig, "selection budget needs total >= 0 and classes >= 1");
  const int take = std::min<int>(budget.total, int(scored.size()));
  if (take == 0) return {};

  auto more_uncertain = [&](int a, int b) {
    if (scored[a].clean_logit != scored[b].clean_logit)
      return scored[a].clean_logit < scored[b].clean_logit;
    return scored[a].index < scored[b].index;
  };

  std::vector<char> picked(scored.size(), 0);
  int quota = budget.total / budget.classes;
  int n_picked = 0;
  auto groups = group_by_class(scored, budget.classes);
  for (auto& group : groups) {
    std::sort(group.begin(), group.end(), more_uncertain);
    int limit = std::min<int>(quota, int(group.size()));
    for (int i = 0; i < limit; ++i) {
      picked[group[i]] = 1;
      ++n_picked;
    }
  }

  // remainder pass: B mod C plus any deficit from under-populated classes
  if (n_picked < take) {
    std::vector<int> rest;
    rest.reserve(scored.size() - n_picked);
    for (int i = 0; i < int(scored.size()); ++i)
      if (!picked[i]) rest.push_back(i);
    std::sort(rest.begin(), rest.end(), more_uncertain);
    for (int i = 0; n_picked < take; ++i, ++n_picked) picked[rest[i]] = 1;
  }

  std::vector<int> out;
  out.reserve(take);
  for (int i = 0; i < int(scored.size()); ++i)
    if (picked[i]) out.push_back(scored[i].index);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<IndexLabel> mine_confident(std::span<const ScoredSample> scored, int per_class) {
  if (per_class < 0) raise(Err::InvalidConfig, "per_class must be >= 0");
  if (per_class == 0 || scored.empty()) return {};
  int classes = 0;
  for (const auto& s : scored) classes = std::max(classes, s.pseudo_label + 1);
  auto groups = group_by_class(scored, classes);
  auto more_confident = [&](int a, int b) {
    if (scored[a].clean_logit != scored[b].clean_logit)
      return scored[a].clean_logit > scored[b].clean_logit;
    return scored[a].index < scored[b].index;
  };
  std::vector<IndexLabel> out;
  for (auto& group : groups) {
    std::sort(group.begin(), group.end(), more_confident);
    int limit = std::min<int>(per_class, int(group.size()));
    for (int i = 0; i < limit; ++i)
      out.emplace_back(scored[group[i]].index, scored[group[i]].pseudo_label);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<IndexLabel> zero_shot_init(const FeatureDataset& ds, std::span<const int> candidates,
                                       int per_class, double tau) {
  if (per_class < 0) raise(Err::InvalidConfig, "per_class must be >= 0");
  if (per_class == 0 || candidates.empty()) return {};
  std::vector<int> order(candidates.begin(), candidates.end());
  std::sort(order.begin(), order.end());

  const int c = ds.num_classes();
  struct Pick {
    int index;
    double margin;  // logit(top-class softmax probability); monotone, unsaturated
  };
  std::vector<std::vector<Pick>> per(c);
  std::vector<double> logits(c), others;
  for (int idx : order) {
    auto x = ds.features.row(idx);
    for (int k = 0; k < c; ++k) logits[k] = dot(x, ds.anchors.row(k)) / tau;
    int best = argmax(logits);
    others.clear();
    for (int k = 0; k < c; ++k)
      if (k != best) others.push_back(logits[k]);
    per[best].push_back({idx, logits[best] - log_sum_exp(others)});
  }

  std::vector<IndexLabel> out;
  for (int k = 0; k < c; ++k) {
    auto& picks = per[k];
    std::sort(picks.begin(), picks.end(), [](const Pick& a, const Pick& b) {
      if (a.margin != b.margin) return a.margin > b.margin;
      return a.index < b.index;
    });
    int limit = std::min<int>(per_class, int(picks.size()));
    for (int i = 0; i < limit; ++i) out.emplace_back(picks[i].index, k);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> baseline_random(std::span<const int> unlabeled, int budget, RngStream rng) {
  if (budget < 0) raise(Err::InvalidConfig, "budget must be >= 0");
  std::vector<int> pool(unlabeled.begin(), unlabeled.end());
  std::sort(pool.begin(), pool.end());
  int take = std::min<int>(budget, int(pool.size()));
  for (int i = 0; i < take; ++i) {
    size_t j = i + size_t(rng.next_below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
  std::sort(pool.begin(), pool.end());
  return pool;
}

namespace {

std::vector<int> top_by_key(std::span<const ScoredSample> scored, int budget,
                            const std::vector<double>& key, bool descending) {
  int take = std::min<int>(budget, int(scored.size()));
  std::vector<int> order(scored.size());
  for (int i = 0; i < int(order.size()); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (key[a] != key[b]) return descending ? key[a] > key[b] : key[a] < key[b];
    return scored[a].index < scored[b].index;
  });
  std::vector<int> out(take);
  for (int i = 0; i < take; ++i) out[i] = scored[order[i]].index;
  return out;
}

}  // namespace

std::vector<int> baseline_entropy(std::span<const ScoredSample> scored, int budget) {
  if (budget < 0) raise(Err::InvalidConfig, "budget must be >= 0");
  std::vector<double> entropy(scored.size(), 0.0);
  for (size_t i = 0; i < scored.size(); ++i) {
    double h = 0.0;
    for (double p : scored[i].class_probs)
      if (p > 0.0) h -= p * std::log(p);
    entropy[i] = h;
  }
  return top_by_key(scored, budget, entropy, /*descending=*/true);
}

std::vector<int> baseline_margin(std::span<const ScoredSample> scored, int budget) {
  if (budget < 0) raise(Err::InvalidConfig, "budget must be >= 0");
  std::vector<double> margin(scored.size(), 0.0);
  for (size_t i = 0; i < scored.size(); ++i) {
    const auto& p = scored[i].class_probs;
    if (p.size() < 2) raise(Err::InvalidConfig, "margin needs at least two classes");
    double top1 = -1.0, top2 = -1.0;
    for (double v : p) {
      if (v > top1) {
        top2 = top1;
        top1 = v;
      } else if (v > top2) {
        top2 = v;
      }
    }
    margin[i] = top1 - top2;
  }
  return top_by_key(scored, budget, margin, /*descending=*/false);
}

namespace {

double sq_dist(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  return acc;
}

}  // namespace

std::vector<int> baseline_coreset(const DenseMatrix& features, std::span<const int> labeled,
                                  std::span<const int> candidates, int budget) {
  if (budget < 0) raise(Err::InvalidConfig, "budget must be >= 0");
  std::vector<int> cand(candidates.begin(), candidates.end());
  std::sort(cand.begin(), cand.end());
  int take = std::min<int>(budget, int(cand.size()));
  if (take == 0) return {};

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> min_dist(cand.size(), kInf);
  std::vector<char> taken(cand.size(), 0);
  std::vector<int> picks;
  picks.reserve(take);

  auto absorb_center = [&](std::span<const float> center) {
    for (size_t i = 0; i < cand.size(); ++i) {
      if (taken[i]) continue;
      min_dist[i] = std::min(min_dist[i], sq_dist(features.row(cand[i]), center));
    }
  };
  auto farthest = [&]() {
    int best = -1;
    for (size_t i = 0; i < cand.size(); ++i) {
      if (taken[i]) continue;
      if (best < 0 || min_dist[i] > min_dist[best]) best = int(i);
    }
    return best;  // ties keep the lowest candidate index (first seen)
  };

  if (labeled.empty()) {
    // no centers yet: seed with the candidate farthest from the centroid
    std::vector<float> centroid(features.cols(), 0.0f);
    std::vector<double> acc(features.cols(), 0.0);
    for (int idx : cand) {
      auto row = features.row(idx);
      for (int i = 0; i < features.cols(); ++i) acc[i] += row[i];
    }
    for (int i = 0; i < features.cols(); ++i) centroid[i] = float(acc[i] / double(cand.size()));
    for (size_t i = 0; i < cand.size(); ++i) min_dist[i] = sq_dist(features.row(cand[i]), centroid);
    int first = farthest();
    taken[first] = 1;
    picks.push_back(cand[first]);
    std::fill(min_dist.begin(), min_dist.end(), kInf);
    absorb_center(features.row(cand[first]));
  } else {
    for (int idx : labeled) absorb_center(features.row(idx));
  }

  while (int(picks.size()) < take) {
    int next = farthest();
    taken[next] = 1;
    picks.push_back(cand[next]);
    absorb_center(features.row(cand[next]));
  }
  return picks;
}

std::vector<int> baseline_badge(const ModelState& state, std::span<const ScoredSample> scored,
                                const DenseMatrix& features, int budget, RngStream rng) {
  if (budget < 0) raise(Err::InvalidConfig, "budget must be >= 0");
  int take = std::min<int>(budget, int(scored.size()));
  if (take == 0) return {};

  const int c = state.bank.classes, d = state.bank.dim;
  // gradient embedding of the cross-entropy last layer: (p - onehot) (x) v(x)
  std::vector<std::vector<double>> emb(scored.size());
  for (size_t i = 0; i < scored.size(); ++i) {
    const ScoredSample& s = scored[i];
    std::vector<double> v = visual_embed(state.adapter, features.row(s.index));
    std::vector<double>& g = emb[i];
    g.resize(size_t(c) * d);
    for (int k = 0; k < c; ++k) {
      double coef = s.class_probs[k] - (k == s.pseudo_label ? 1.0 : 0.0);
      for (int j = 0; j < d; ++j) g[size_t(k) * d + j] = coef * v[j];
    }
  }

  auto emb_dist = [&](size_t a, size_t b) {
    double acc = 0.0;
    for (size_t i = 0; i < emb[a].size(); ++i) {
      double diff = emb[a][i] - emb[b][i];
      acc += diff * diff;
    }
    return acc;
  };

  std::vector<char> taken(scored.size(), 0);
  std::vector<double> min_dist(scored.size(), 0.0);
  std::vector<int> picks;
  picks.reserve(take);

  size_t first = size_t(rng.next_below(scored.size()));
  taken[first] = 1;
  picks.push_back(scored[first].index);
  for (size_t i = 0; i < scored.size(); ++i)
    if (!taken[i]) min_dist[i] = emb_dist(i, first);

  while (int(picks.size()) < take) {
    double total = 0.0;
    for (size_t i = 0; i < scored.size(); ++i)
      if (!taken[i]) total += min_dist[i];
    size_t chosen = scored.size();
    if (total > 0.0) {
      double u = rng.next_double() * total;
      double cum = 0.0;
      for (size_t i = 0; i < scored.size(); ++i) {
        if (taken[i]) continue;
        cum += min_dist[i];
        if (u < cum) {
          chosen = i;
          break;
        }
      }
      if (chosen == scored.size()) {  // float round-off at the far end
        for (size_t i = scored.size(); i-- > 0;)
          if (!taken[i]) {
            chosen = i;
            break;
          }
      }
    } else {
      // every remaining point coincides with a center; fall back to index order
      for (size_t i = 0; i < scored.size(); ++i)
        if (!taken[i]) {
          chosen = i;
          break;
        }
    }
    taken[chosen] = 1;
    picks.push_back(scored[chosen].index);
    for (size_t i = 0; i < scored.size(); ++i)
      if (!taken[i]) min_dist[i] = std::min(min_dist[i], emb_dist(i, chosen));
  }
  return picks;
}

}  // namespace dpal
