#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "fixnorm/errors.hpp"
#include "fixnorm/tensor.hpp"

namespace fixnorm {

struct Dataset {
  Tensor features;          // [N,D] or [N,C,H,W]
  std::vector<int> labels;  // each in [0, classes)
  int classes = 0;
  std::string split;        // "train" or "val"

  std::size_t size() const { return labels.size(); }
};

/// Synthetic Gaussian-blob task: C isotropic clusters whose means sit on a
/// regular simplex scaled to the requested separation.
struct SynthSpec {
  int classes = 4;
  int dim = 16;
  double separation = 4.0;
  double sigma = 1.0;
  int samples_per_class = 500;
  unsigned long seed = 0;
};

/// Regular simplex with `count` vertices centered at the origin of R^dim,
/// unit pairwise distance. Needs dim >= count-1.
inline std::vector<std::vector<double>> simplex_means(int count, int dim) {
  if (count < 2) throw config_error("simplex_means: need at least 2 vertices");
  if (dim < count - 1) throw config_error("simplex_means: dimension too small for simplex");
  const auto c = static_cast<std::size_t>(count);
  // Centered standard-basis vectors in R^C span the simplex hyperplane;
  // Gram-Schmidt gives coordinates in R^(C-1).
  std::vector<std::vector<double>> u(c, std::vector<double>(c, -1.0 / count));
  for (std::size_t i = 0; i < c; ++i) u[i][i] += 1.0;

  std::vector<std::vector<double>> basis;
  for (std::size_t i = 0; i + 1 < c; ++i) {
    std::vector<double> v = u[i];
    for (const auto& b : basis) {
      double dot = 0.0;
      for (std::size_t t = 0; t < c; ++t) dot += v[t] * b[t];
      for (std::size_t t = 0; t < c; ++t) v[t] -= dot * b[t];
    }
    double nrm = 0.0;
    for (double x : v) nrm += x * x;
    nrm = std::sqrt(nrm);
    for (double& x : v) x /= nrm;
    basis.push_back(std::move(v));
  }

  // pairwise distance between centered basis vectors is sqrt(2)
  const double scale = 1.0 / std::sqrt(2.0);
  std::vector<std::vector<double>> means(c, std::vector<double>(dim, 0.0));
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < basis.size(); ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < c; ++t) dot += u[i][t] * basis[j][t];
      means[i][j] = dot * scale;
    }
  }
  return means;
}

struct DatasetPair {
  Dataset train;
  Dataset val;
};

/// Deterministic blob generator; 80/20 train/val split within each class.
inline DatasetPair gen_blobs(const SynthSpec& spec) {
  if (spec.sigma <= 0.0) throw config_error("gen_blobs: sigma must be positive");
  if (spec.classes < 2) throw config_error("gen_blobs: need at least 2 classes");
  if (spec.samples_per_class < 5) throw config_error("gen_blobs: need at least 5 samples per class");
  const auto d = static_cast<std::size_t>(spec.dim);
  auto means = simplex_means(spec.classes, spec.dim);
  for (auto& m : means) {
    for (double& x : m) x *= spec.separation;
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.sigma);
  const int per = spec.samples_per_class;
  const int val_per = per / 5;
  const int train_per = per - val_per;

  DatasetPair out;
  out.train.features = Tensor({static_cast<std::size_t>(train_per * spec.classes), d});
  out.val.features = Tensor({static_cast<std::size_t>(val_per * spec.classes), d});
  out.train.classes = out.val.classes = spec.classes;
  out.train.split = "train";
  out.val.split = "val";

  std::size_t ti = 0, vi = 0;
  for (int cls = 0; cls < spec.classes; ++cls) {
    for (int s = 0; s < per; ++s) {
      const bool is_train = s < train_per;
      Tensor& dst = is_train ? out.train.features : out.val.features;
      const std::size_t row = is_train ? ti++ : vi++;
      for (std::size_t j = 0; j < d; ++j) {
        dst[row * d + j] = means[cls][j] + noise(rng);
      }
      (is_train ? out.train.labels : out.val.labels).push_back(cls);
    }
  }
  return out;
}

/// Per-feature (rank 2) or per-channel (rank 4) standardization statistics.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline NormStats compute_norm_stats(const Dataset& train) {
  const Tensor& x = train.features;
  const std::size_t n = x.dim(0);
  const std::size_t c = x.dim(1);
  const std::size_t inner = x.size() / (n * c);
  NormStats st{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  const double cnt = static_cast<double>(n * inner);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t j = 0; j < inner; ++j) st.mean[ci] += x[(i * c + ci) * inner + j];
  for (double& m : st.mean) m /= cnt;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t j = 0; j < inner; ++j) {
        const double dlt = x[(i * c + ci) * inner + j] - st.mean[ci];
        st.stddev[ci] += dlt * dlt;
      }
  for (double& s : st.stddev) {
    s = std::sqrt(s / cnt);
    if (s == 0.0) s = 1.0;
  }
  return st;
}

inline void apply_norm_stats(Dataset& ds, const NormStats& st) {
  Tensor& x = ds.features;
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c);
  if (st.mean.size() != c) throw shape_error("apply_norm_stats: channel mismatch");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t j = 0; j < inner; ++j) {
        double& v = x[(i * c + ci) * inner + j];
        v = (v - st.mean[ci]) / st.stddev[ci];
      }
}

/// Reshapes flat [N,D] features to [N,1,k,k] images (D must be a square).
inline Dataset as_images(const Dataset& ds) {
  if (ds.features.rank() == 4) return ds;
  const std::size_t d = ds.features.dim(1);
  const auto k = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d))));
  if (k * k != d) throw config_error("as_images: feature dimension is not a perfect square");
  Dataset out = ds;
  out.features = Tensor({ds.features.dim(0), 1, k, k},
                        {ds.features.data().begin(), ds.features.data().end()});
  return out;
}

// ---------------------------------------------------------------------------
// IDX (MNIST) and CIFAR-10 binary readers. All multi-byte fields big-endian.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open file", path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  if (off + 4 > b.size()) throw format_error("idx: truncated header");
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace detail

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// IDX image file -> [N,1,H,W], pixels scaled to [0,1].
inline Tensor read_idx_images(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (detail::be32(bytes, 0) != kIdxImageMagic) {
    throw format_error("idx: bad image magic in " + path);
  }
  const std::size_t n = detail::be32(bytes, 4);
  const std::size_t h = detail::be32(bytes, 8);
  const std::size_t w = detail::be32(bytes, 12);
  const std::size_t expect = 16 + n * h * w;
  if (bytes.size() < expect) throw format_error("idx: truncated image payload in " + path);
  Tensor out({n, 1, h, w});
  for (std::size_t i = 0; i < n * h * w; ++i) {
    out[i] = static_cast<double>(bytes[16 + i]) / 255.0;
  }
  return out;
}

/// IDX label file -> label vector.
inline std::vector<int> read_idx_labels(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (detail::be32(bytes, 0) != kIdxLabelMagic) {
    throw format_error("idx: bad label magic in " + path);
  }
  const std::size_t n = detail::be32(bytes, 4);
  if (bytes.size() < 8 + n) throw format_error("idx: truncated label payload in " + path);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = bytes[8 + i];
  return labels;
}

inline Dataset read_idx(const std::string& images_path, const std::string& labels_path,
                        const std::string& split) {
  Dataset ds;
  ds.features = read_idx_images(images_path);
  ds.labels = read_idx_labels(labels_path);
  if (ds.features.dim(0) != ds.labels.size()) {
    throw format_error("idx: image/label count mismatch");
  }
  ds.classes = 10;
  ds.split = split;
  for (int y : ds.labels) {
    if (y < 0 || y >= 10) throw format_error("idx: label out of range");
  }
  return ds;
}

/// CIFAR-10 batch file: 3073-byte records, 1 label byte + 3072 channel-major
/// pixels -> [N,3,32,32] scaled to [0,1].
inline Dataset read_cifar10(const std::string& path, const std::string& split) {
  const auto bytes = detail::read_file_bytes(path);
  constexpr std::size_t kRecord = 3073;
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw format_error("cifar10: file size not a multiple of 3073 in " + path);
  }
  const std::size_t n = bytes.size() / kRecord;
  Dataset ds;
  ds.features = Tensor({n, 3, 32, 32});
  ds.labels.resize(n);
  ds.classes = 10;
  ds.split = split;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char lab = bytes[i * kRecord];
    if (lab >= 10) throw format_error("cifar10: label out of range (record " + std::to_string(i) + ")");
    ds.labels[i] = lab;
    for (std::size_t j = 0; j < 3072; ++j) {
      ds.features[i * 3072 + j] = static_cast<double>(bytes[i * kRecord + 1 + j]) / 255.0;
    }
  }
  return ds;
}

/// Keeps the first `limit` samples (0 = all). Used for desk-scale subsets.
inline Dataset truncate_dataset(const Dataset& ds, std::size_t limit) {
  if (limit == 0 || limit >= ds.size()) return ds;
  Dataset out;
  out.classes = ds.classes;
  out.split = ds.split;
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + static_cast<std::ptrdiff_t>(limit));
  std::vector<std::size_t> shape = ds.features.shape();
  const std::size_t row = ds.features.size() / shape[0];
  shape[0] = limit;
  out.features = Tensor(shape, {ds.features.data().begin(),
                                ds.features.data().begin() + static_cast<std::ptrdiff_t>(limit * row)});
  return out;
}

}  // namespace fixnorm
