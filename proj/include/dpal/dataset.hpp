#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dpal/numerics.hpp"
#include "dpal/rng.hpp"

namespace dpal {

// Frozen-embedding dataset. Feature and anchor rows are unit-norm after load.
// true_labels exist for the annotation oracle and held-out evaluation only;
// query strategies never see them.
struct FeatureDataset {
  DenseMatrix features;                  // N x D
  std::vector<int> true_labels;          // length N, values in [0, C)
  DenseMatrix anchors;                   // C x D, the zero-shot class embeddings
  std::vector<std::string> class_names;  // length C

  int num_samples() const { return features.rows(); }
  int dim() const { return features.cols(); }
  int num_classes() const { return anchors.rows(); }
};

// Checks every FeatureDataset invariant; throws on violation.
void validate_dataset(const FeatureDataset& ds);

// Binary "DPAL" container, little-endian:
//   magic "DPAL" | u32 version=1 | u32 N | u32 D | u32 C
//   | N*D f32 features (row-major) | N u32 labels | C*D f32 anchors
//   | UTF-8 JSON tail {"class_names": [...]}
FeatureDataset load_dataset(const std::filesystem::path& path);
void save_dataset(const FeatureDataset& ds, const std::filesystem::path& path);

// Header metadata plus observed norm ranges, without the strict norm checks
// of load_dataset. Used by the `inspect` subcommand.
struct DatasetInfo {
  uint32_t n = 0, d = 0, c = 0;
  std::vector<std::string> class_names;
  double feature_norm_min = 0, feature_norm_max = 0;
  double anchor_norm_min = 0, anchor_norm_max = 0;
};
DatasetInfo inspect_dataset(const std::filesystem::path& path);

struct SyntheticSpec {
  int n_per_class = 250;
  int classes = 4;
  int dims = 16;
  double class_sep = 1.5;     // pairwise mean cosine = 1 / (1 + class_sep^2)
  double anchor_noise = 1.2;  // anchor tilt ~ atan(anchor_noise); 0 => anchors = class means
};

// Gaussian-on-the-sphere mixture. Class means are built from an orthonormal
// frame so every pair has the same angular separation; sample noise is fixed
// at sigma = 1/sqrt(D) per coordinate, leaving class_sep as the single
// separation knob. Requires dims >= classes + 1.
FeatureDataset generate_synthetic(const SyntheticSpec& spec, RngStream rng);

// Fraction of `indices` whose nearest anchor (cosine) matches the true label.
// Oracle-side diagnostic; not visible to strategies.
double nearest_anchor_accuracy(const FeatureDataset& ds, std::span<const int> indices);

}  // namespace dpal
