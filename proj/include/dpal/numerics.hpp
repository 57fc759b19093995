#pragma once

#include <span>
#include <vector>

#include "dpal/errors.hpp"

namespace dpal {

// Row-major dense matrix, float32 storage. Reductions over rows are done in
// double by the free functions below.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(int rows, int cols);

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  std::span<float> row(int i) { return {data_.data() + size_t(i) * cols_, size_t(cols_)}; }
  std::span<const float> row(int i) const {
    return {data_.data() + size_t(i) * cols_, size_t(cols_)};
  }

  float& at(int r, int c) { return data_[size_t(r) * cols_ + c]; }
  float at(int r, int c) const { return data_[size_t(r) * cols_ + c]; }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool all_finite() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<float> data_;
};

inline constexpr double kNormEpsilon = 1e-12;

double dot(std::span<const float> a, std::span<const float> b);
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const float> v);
double norm(std::span<const double> v);

// In-place scaling to unit Euclidean norm. Throws ZeroVector when the norm is
// at or below kNormEpsilon. Vectors already within 1e-6 of unit norm are left
// untouched so that repeated normalization is byte-stable.
void l2_normalize(std::span<float> v);
void l2_normalize(std::span<double> v);

double cosine_sim(std::span<const float> a, std::span<const float> b);
double cosine_sim(std::span<const double> a, std::span<const double> b);

// Temperature softmax with max-subtraction. Throws InvalidTemperature if
// tau <= 0 or not finite.
std::vector<double> softmax(std::span<const double> logits, double tau);

double log_sum_exp(std::span<const double> v);

// Numerically stable sigmoid and softplus log(1 + e^x).
double sigmoid(double z);
double softplus(double z);

// Index of the largest entry, lowest index on ties.
int argmax(std::span<const double> v);

}  // namespace dpal
