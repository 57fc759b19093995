#include "dpal/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "DPAL container I/O assumes a little-endian host");
static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

namespace dpal {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'A', 'L'};
constexpr uint32_t kVersion = 1;
constexpr double kLoadNormTolerance = 1e-3;

struct Cursor {
  const uint8_t* p;
  size_t left;
  void take(void* dst, size_t n, const char* what) {
    if (n > left) raise(Err::FormatError, std::string("truncated dataset file while reading ") + what);
    std::memcpy(dst, p, n);
    p += n;
    left -= n;
  }
  uint32_t u32(const char* what) {
    uint32_t v;
    take(&v, 4, what);
    return v;
  }
};

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Err::FormatError, "cannot open dataset file: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

struct RawDataset {
  uint32_t n, d, c;
  std::vector<float> features, anchors;
  std::vector<uint32_t> labels;
  std::vector<std::string> class_names;
};

RawDataset parse_container(const std::vector<uint8_t>& bytes) {
  Cursor cur{bytes.data(), bytes.size()};
  char magic[4];
  cur.take(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) raise(Err::FormatError, "bad magic bytes, not a DPAL file");
  uint32_t version = cur.u32("version");
  if (version != kVersion)
    raise(Err::FormatError, "unsupported DPAL version " + std::to_string(version));

  RawDataset raw;
  raw.n = cur.u32("N");
  raw.d = cur.u32("D");
  raw.c = cur.u32("C");
  if (raw.n < raw.c || raw.c < 2 || raw.d < 2)
    raise(Err::FormatError, "invalid dimensions: need N >= C >= 2 and D >= 2");

  uint64_t feat_count = uint64_t(raw.n) * raw.d;
  uint64_t anchor_count = uint64_t(raw.c) * raw.d;
  raw.features.resize(feat_count);
  cur.take(raw.features.data(), feat_count * 4, "features");
  raw.labels.resize(raw.n);
  cur.take(raw.labels.data(), uint64_t(raw.n) * 4, "labels");
  raw.anchors.resize(anchor_count);
  cur.take(raw.anchors.data(), anchor_count * 4, "anchors");

  std::string tail(reinterpret_cast<const char*>(cur.p), cur.left);
  nlohmann::json j = nlohmann::json::parse(tail, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("class_names") ||
      !j["class_names"].is_array())
    raise(Err::FormatError, "bad JSON tail: expected {\"class_names\": [...]}");
  for (const auto& name : j["class_names"]) {
    if (!name.is_string()) raise(Err::FormatError, "class_names entries must be strings");
    raw.class_names.push_back(name.get<std::string>());
  }
  if (raw.class_names.size() != raw.c)
    raise(Err::FormatError, "class_names count does not match C");
  return raw;
}

// Norm check then renormalize. Rows far from unit norm signal non-embedding
// data and are rejected rather than silently rescaled.
void check_and_normalize_rows(DenseMatrix& m, const char* what) {
  for (int i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (float x : row)
      if (!std::isfinite(x))
        raise(Err::FormatError, std::string("non-finite value in ") + what);
    double n = norm(std::span<const float>(row.data(), row.size()));
    if (std::abs(n - 1.0) > kLoadNormTolerance)
      raise(Err::NormError, std::string(what) + " row " + std::to_string(i) +
                                " has norm " + std::to_string(n) +
                                ", expected unit-norm embeddings");
    l2_normalize(row);
  }
}

void append_u32(std::vector<uint8_t>& out, uint32_t v) {
  const uint8_t* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + 4);
}

}  // namespace

void validate_dataset(const FeatureDataset& ds) {
  int n = ds.num_samples(), d = ds.dim(), c = ds.num_classes();
  if (n < c || c < 2 || d < 2) raise(Err::FormatError, "dataset dimensions violate N >= C >= 2, D >= 2");
  if (ds.anchors.cols() != d) raise(Err::FormatError, "anchor dimension mismatch");
  if (int(ds.true_labels.size()) != n) raise(Err::FormatError, "label count mismatch");
  if (int(ds.class_names.size()) != c) raise(Err::FormatError, "class name count mismatch");
  for (int label : ds.true_labels)
    if (label < 0 || label >= c) raise(Err::FormatError, "label out of range");
  if (!ds.features.all_finite() || !ds.anchors.all_finite())
    raise(Err::FormatError, "non-finite entries in dataset");
  for (int i = 0; i < n; ++i)
    if (std::abs(norm(ds.features.row(i)) - 1.0) > 1e-5)
      raise(Err::NormError, "feature row " + std::to_string(i) + " is not unit norm");
  for (int k = 0; k < c; ++k)
    if (std::abs(norm(ds.anchors.row(k)) - 1.0) > 1e-5)
      raise(Err::NormError, "anchor row " + std::to_string(k) + " is not unit norm");
}

FeatureDataset load_dataset(const std::filesystem::path& path) {
  RawDataset raw = parse_container(read_file(path));

  FeatureDataset ds;
  ds.features = DenseMatrix(raw.n, raw.d);
  std::memcpy(ds.features.data().data(), raw.features.data(), raw.features.size() * 4);
  ds.anchors = DenseMatrix(raw.c, raw.d);
  std::memcpy(ds.anchors.data().data(), raw.anchors.data(), raw.anchors.size() * 4);
  ds.true_labels.reserve(raw.n);
  for (uint32_t v : raw.labels) {
    if (v >= raw.c) raise(Err::FormatError, "label out of range in dataset file");
    ds.true_labels.push_back(int(v));
  }
  ds.class_names = std::move(raw.class_names);

  check_and_normalize_rows(ds.features, "feature");
  check_and_normalize_rows(ds.anchors, "anchor");
  validate_dataset(ds);
  return ds;
}

void save_dataset(const FeatureDataset& ds, const std::filesystem::path& path) {
  validate_dataset(ds);
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  append_u32(out, kVersion);
  append_u32(out, uint32_t(ds.num_samples()));
  append_u32(out, uint32_t(ds.dim()));
  append_u32(out, uint32_t(ds.num_classes()));
  const uint8_t* f = reinterpret_cast<const uint8_t*>(ds.features.data().data());
  out.insert(out.end(), f, f + ds.features.data().size() * 4);
  for (int label : ds.true_labels) append_u32(out, uint32_t(label));
  const uint8_t* a = reinterpret_cast<const uint8_t*>(ds.anchors.data().data());
  out.insert(out.end(), a, a + ds.anchors.data().size() * 4);
  nlohmann::json tail{{"class_names", ds.class_names}};
  std::string tail_str = tail.dump();
  out.insert(out.end(), tail_str.begin(), tail_str.end());

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) raise(Err::FormatError, "cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
  if (!os) raise(Err::FormatError, "write failed: " + path.string());
}

DatasetInfo inspect_dataset(const std::filesystem::path& path) {
  RawDataset raw = parse_container(read_file(path));
  DatasetInfo info;
  info.n = raw.n;
  info.d = raw.d;
  info.c = raw.c;
  info.class_names = raw.class_names;
  auto norm_range = [&](const std::vector<float>& data, uint32_t rows, double& lo, double& hi) {
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (uint32_t i = 0; i < rows; ++i) {
      std::span<const float> row(data.data() + size_t(i) * raw.d, raw.d);
      double n = norm(row);
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
  };
  norm_range(raw.features, raw.n, info.feature_norm_min, info.feature_norm_max);
  norm_range(raw.anchors, raw.c, info.anchor_norm_min, info.anchor_norm_max);
  return info;
}

FeatureDataset generate_synthetic(const SyntheticSpec& spec, RngStream rng) {
  if (spec.n_per_class < 1 || spec.classes < 2 || spec.dims < 2)
    raise(Err::InvalidConfig, "synthetic generator needs n_per_class >= 1, classes >= 2, dims >= 2");
  if (!(spec.class_sep > 0.0)) raise(Err::InvalidConfig, "class_sep must be positive");
  if (spec.anchor_noise < 0.0) raise(Err::InvalidConfig, "anchor_noise must be non-negative");
  if (spec.dims < spec.classes + 1)
    raise(Err::InvalidConfig, "synthetic generator needs dims >= classes + 1");

  const int c = spec.classes, d = spec.dims, n = spec.n_per_class * spec.classes;

  // Orthonormal frame q_0..q_C via Gram-Schmidt over Gaussian draws; class
  // mean mu_k = (q_0 + s*q_{k+1}) / sqrt(1+s^2) gives every pair the cosine
  // 1/(1+s^2).
  auto mean_rng = rng.child("means");
  std::vector<std::vector<double>> frame;
  while (int(frame.size()) < c + 1) {
    std::vector<double> v(d);
    for (double& x : v) x = mean_rng.next_gaussian();
    for (const auto& q : frame) {
      double proj = dot(std::span<const double>(v), std::span<const double>(q));
      for (int i = 0; i < d; ++i) v[i] -= proj * q[i];
    }
    double nv = norm(std::span<const double>(v));
    if (nv < 1e-6) continue;  // measure-zero degeneracy; redraw
    for (double& x : v) x /= nv;
    frame.push_back(std::move(v));
  }
  const double s = spec.class_sep;
  const double scale = 1.0 / std::sqrt(1.0 + s * s);
  std::vector<std::vector<double>> means(c, std::vector<double>(d));
  for (int k = 0; k < c; ++k)
    for (int i = 0; i < d; ++i) means[k][i] = scale * (frame[0][i] + s * frame[k + 1][i]);

  FeatureDataset ds;
  ds.features = DenseMatrix(n, d);
  ds.true_labels.resize(n);
  const double sigma = 1.0 / std::sqrt(double(d));
  auto sample_rng = rng.child("samples");
  for (int k = 0; k < c; ++k) {
    for (int j = 0; j < spec.n_per_class; ++j) {
      int idx = k * spec.n_per_class + j;
      std::vector<double> x(d);
      for (int i = 0; i < d; ++i) x[i] = means[k][i] + sigma * sample_rng.next_gaussian();
      l2_normalize(std::span<double>(x));
      auto row = ds.features.row(idx);
      for (int i = 0; i < d; ++i) row[i] = float(x[i]);
      ds.true_labels[idx] = k;
    }
  }

  ds.anchors = DenseMatrix(c, d);
  // per-coordinate scale anchor_noise/sqrt(D): the noise VECTOR has expected
  // norm anchor_noise, so the anchor tilt angle ~ atan(anchor_noise) and
  // zero-shot quality degrades smoothly instead of jumping across draws
  const double anchor_sigma = spec.anchor_noise / std::sqrt(double(d));
  auto anchor_rng = rng.child("anchors");
  for (int k = 0; k < c; ++k) {
    std::vector<double> a(d);
    for (int i = 0; i < d; ++i) a[i] = means[k][i] + anchor_sigma * anchor_rng.next_gaussian();
    l2_normalize(std::span<double>(a));
    auto row = ds.anchors.row(k);
    for (int i = 0; i < d; ++i) row[i] = float(a[i]);
  }

  ds.class_names.reserve(c);
  for (int k = 0; k < c; ++k) ds.class_names.push_back("class_" + std::to_string(k));
  validate_dataset(ds);
  return ds;
}

double nearest_anchor_accuracy(const FeatureDataset& ds, std::span<const int> indices) {
  if (indices.empty()) raise(Err::EmptyTestSet, "nearest_anchor_accuracy on empty index set");
  int correct = 0;
  for (int idx : indices) {
    auto x = ds.features.row(idx);
    int best = 0;
    double best_sim = -2.0;
    for (int k = 0; k < ds.num_classes(); ++k) {
      double sim = dot(x, ds.anchors.row(k));
      if (sim > best_sim) {
        best_sim = sim;
        best = k;
      }
    }
    if (best == ds.true_labels[idx]) ++correct;
  }
  return double(correct) / double(indices.size());
}

}  // namespace dpal
