#include "dpal/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace dpal {

DenseMatrix::DenseMatrix(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) raise(Err::InvalidConfig, "negative matrix shape");
  data_.assign(size_t(rows) * size_t(cols), 0.0f);
}

bool DenseMatrix::all_finite() const {
  for (float x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) raise(Err::Internal, "dot: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) raise(Err::Internal, "dot: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }
double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

namespace {

template <typename T>
void normalize_impl(std::span<T> v) {
  double n = norm(std::span<const T>(v.data(), v.size()));
  if (n <= kNormEpsilon) raise(Err::ZeroVector, "cannot normalize a (near-)zero vector");
  if (std::abs(n - 1.0) < 1e-6) return;  // idempotent on already-unit rows
  for (T& x : v) x = static_cast<T>(double(x) / n);
}

template <typename T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
  double na = norm(a), nb = norm(b);
  if (na <= kNormEpsilon || nb <= kNormEpsilon)
    raise(Err::ZeroVector, "cosine similarity of a (near-)zero vector");
  double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace

void l2_normalize(std::span<float> v) { normalize_impl(v); }
void l2_normalize(std::span<double> v) { normalize_impl(v); }

double cosine_sim(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }
double cosine_sim(std::span<const double> a, std::span<const double> b) {
  return cosine_impl(a, b);
}

std::vector<double> softmax(std::span<const double> logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    raise(Err::InvalidTemperature, "softmax temperature must be positive and finite");
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / tau);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) raise(Err::Internal, "log_sum_exp of empty vector");
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  if (z > 30.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

int argmax(std::span<const double> v) {
  if (v.empty()) raise(Err::Internal, "argmax of empty vector");
  int best = 0;
  for (int i = 1; i < int(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace dpal
