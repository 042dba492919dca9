#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dccnn/errors.hpp"
#include "dccnn/patches.hpp"

namespace dccnn {

/// Deterministic 64-bit generator (splitmix64); identical streams on every
/// platform, unlike <random> distributions.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  /// Uniform in [0, 1).
  double uniform() { return (next() >> 11) * 0x1.0p-53; }
  /// Uniform in [-1, 1).
  double symmetric() { return 2.0 * uniform() - 1.0; }
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) { return next() % bound; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::uint64_t state_;
};

struct Dataset {
  Matrix inputs;  // n x d0, one sample per row, pixel values in [0, 1]
  Eigen::VectorXi labels;
  int height = 0;
  int width = 0;
  int channels = 1;

  Eigen::Index size() const { return inputs.rows(); }
};

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw TruncatedFile("truncated IDX header in " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Parses an MNIST-style IDX image/label file pair. Pixels are scaled by
/// 1/255; image and label counts must agree.
inline Dataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw InvalidInput("load_idx: cannot open " + images_path);
  const std::uint32_t img_magic = detail::read_be_u32(imgs, images_path);
  if (img_magic != kIdxImagesMagic)
    throw BadMagic("load_idx: bad image magic in " + images_path,
                   kIdxImagesMagic, img_magic);
  const std::uint32_t n = detail::read_be_u32(imgs, images_path);
  const std::uint32_t rows = detail::read_be_u32(imgs, images_path);
  const std::uint32_t cols = detail::read_be_u32(imgs, images_path);

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw InvalidInput("load_idx: cannot open " + labels_path);
  const std::uint32_t lab_magic = detail::read_be_u32(labs, labels_path);
  if (lab_magic != kIdxLabelsMagic)
    throw BadMagic("load_idx: bad label magic in " + labels_path,
                   kIdxLabelsMagic, lab_magic);
  const std::uint32_t n_labels = detail::read_be_u32(labs, labels_path);
  if (n_labels != n)
    throw CountMismatch("load_idx: " + std::to_string(n) + " images but " +
                        std::to_string(n_labels) + " labels");

  Dataset ds;
  ds.height = static_cast<int>(rows);
  ds.width = static_cast<int>(cols);
  ds.channels = 1;
  const std::size_t d0 = std::size_t(rows) * cols;
  ds.inputs = Matrix(n, d0);
  std::vector<unsigned char> buf(d0);
  for (std::uint32_t i = 0; i < n; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(d0));
    if (!imgs)
      throw TruncatedFile("load_idx: image payload truncated at sample " +
                          std::to_string(i));
    for (std::size_t j = 0; j < d0; ++j)
      ds.inputs(i, static_cast<Eigen::Index>(j)) = buf[j] / 255.0;
  }
  ds.labels = Eigen::VectorXi(n);
  std::vector<unsigned char> lbuf(n);
  labs.read(reinterpret_cast<char*>(lbuf.data()),
            static_cast<std::streamsize>(n));
  if (!labs) throw TruncatedFile("load_idx: label payload truncated");
  for (std::uint32_t i = 0; i < n; ++i) ds.labels[i] = lbuf[i];
  return ds;
}

/// Writes a dataset back out as an IDX pair (pixels re-quantized to bytes).
inline void save_idx(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path) {
  std::ofstream imgs(images_path, std::ios::binary);
  if (!imgs) throw InvalidInput("save_idx: cannot open " + images_path);
  detail::write_be_u32(imgs, kIdxImagesMagic);
  detail::write_be_u32(imgs, static_cast<std::uint32_t>(ds.size()));
  detail::write_be_u32(imgs, static_cast<std::uint32_t>(ds.height));
  detail::write_be_u32(imgs, static_cast<std::uint32_t>(ds.width));
  for (Eigen::Index i = 0; i < ds.size(); ++i)
    for (Eigen::Index j = 0; j < ds.inputs.cols(); ++j) {
      const auto byte = static_cast<unsigned char>(
          std::lround(ds.inputs(i, j) * 255.0));
      imgs.write(reinterpret_cast<const char*>(&byte), 1);
    }
  std::ofstream labs(labels_path, std::ios::binary);
  if (!labs) throw InvalidInput("save_idx: cannot open " + labels_path);
  detail::write_be_u32(labs, kIdxLabelsMagic);
  detail::write_be_u32(labs, static_cast<std::uint32_t>(ds.size()));
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    const auto byte = static_cast<unsigned char>(ds.labels[i]);
    labs.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

/// CSV fallback: one sample per row, integer label first, features after.
/// An optional header line is skipped.
inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("load_csv: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        if (used == 0) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (first && !numeric) {
      first = false;
      continue;  // header
    }
    first = false;
    if (!numeric || vals.size() < 2)
      throw InvalidInput("load_csv: malformed row in " + path);
    labels.push_back(static_cast<int>(std::lround(vals[0])));
    vals.erase(vals.begin());
    if (!rows.empty() && rows[0].size() != vals.size())
      throw CountMismatch("load_csv: ragged rows in " + path);
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw EmptyDataset("load_csv: no samples in " + path);
  Dataset ds;
  ds.inputs = Matrix(rows.size(), rows[0].size());
  ds.labels = Eigen::VectorXi(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ds.labels[static_cast<Eigen::Index>(i)] = labels[i];
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      ds.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows[i][j];
  }
  ds.height = 1;
  ds.width = static_cast<int>(rows[0].size());
  return ds;
}

struct BinarySplit {
  Dataset train;  // labels mapped to +1 (class_a) / -1 (class_b)
  Dataset test;
};

/// Deterministic class-filtered split: class_a maps to +1, class_b to -1.
/// With even requested counts each side gets an equal number per class.
inline BinarySplit filter_binary(const Dataset& ds, int class_a, int class_b,
                                 int n_train, int n_test, std::uint64_t seed) {
  if (n_train < 0 || n_test < 0)
    throw InvalidInput("filter_binary: negative counts");
  std::vector<int> idx_a, idx_b;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] == class_a) idx_a.push_back(static_cast<int>(i));
    if (ds.labels[i] == class_b) idx_b.push_back(static_cast<int>(i));
  }
  const int train_a = (n_train + 1) / 2, train_b = n_train - train_a;
  const int test_a = (n_test + 1) / 2, test_b = n_test - test_a;
  if (static_cast<int>(idx_a.size()) < train_a + test_a ||
      static_cast<int>(idx_b.size()) < train_b + test_b)
    throw InsufficientSamples(
        "filter_binary: classes hold " + std::to_string(idx_a.size()) + "/" +
        std::to_string(idx_b.size()) + " samples, need " +
        std::to_string(train_a + test_a) + "/" +
        std::to_string(train_b + test_b));
  SplitMix64 rng(seed);
  rng.shuffle(idx_a);
  rng.shuffle(idx_b);

  auto take = [&](int from_a, int from_b, int off_a, int off_b) {
    std::vector<std::pair<int, int>> picked;  // (source row, mapped label)
    for (int i = 0; i < from_a; ++i) picked.emplace_back(idx_a[off_a + i], 1);
    for (int i = 0; i < from_b; ++i) picked.emplace_back(idx_b[off_b + i], -1);
    rng.shuffle(picked);
    Dataset out;
    out.height = ds.height;
    out.width = ds.width;
    out.channels = ds.channels;
    out.inputs = Matrix(picked.size(), ds.inputs.cols());
    out.labels = Eigen::VectorXi(static_cast<Eigen::Index>(picked.size()));
    for (std::size_t i = 0; i < picked.size(); ++i) {
      out.inputs.row(static_cast<Eigen::Index>(i)) =
          ds.inputs.row(picked[i].first);
      out.labels[static_cast<Eigen::Index>(i)] = picked[i].second;
    }
    return out;
  };

  BinarySplit split;
  split.train = take(train_a, train_b, 0, 0);
  split.test = take(test_a, test_b, train_a, train_b);
  return split;
}

/// 2x2 average downsampling (desk-scale preprocessing); requires even
/// height/width.
inline Dataset downsample_2x2(const Dataset& ds) {
  if (ds.height % 2 != 0 || ds.width % 2 != 0)
    throw InvalidInput("downsample_2x2: dimensions must be even");
  if (ds.channels != 1)
    throw InvalidInput("downsample_2x2: single-channel only");
  Dataset out;
  out.height = ds.height / 2;
  out.width = ds.width / 2;
  out.channels = 1;
  out.labels = ds.labels;
  out.inputs = Matrix(ds.size(), out.height * out.width);
  for (Eigen::Index i = 0; i < ds.size(); ++i)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        const double s = ds.inputs(i, (2 * y) * ds.width + 2 * x) +
                         ds.inputs(i, (2 * y) * ds.width + 2 * x + 1) +
                         ds.inputs(i, (2 * y + 1) * ds.width + 2 * x) +
                         ds.inputs(i, (2 * y + 1) * ds.width + 2 * x + 1);
        out.inputs(i, y * out.width + x) = s / 4.0;
      }
  return out;
}

/// Seed-reproducible miniature instance: unit-norm random patch matrices with
/// labels from a random hyperplane over mean patches (binary) or the argmax
/// of several hyperplanes (multiclass). Regenerated labelings guarantee every
/// class appears.
struct TinyInstance {
  std::uint64_t seed = 0;
  std::vector<PatchMatrix> patches;
  Eigen::VectorXi labels;  // +-1 when class_count == 0, else in [m]
  int class_count = 0;
  int patch_dim = 0;
  int patch_count = 0;
};

inline TinyInstance make_tiny_instance(std::uint64_t seed, int n, int d1,
                                       int p, int class_count = 0) {
  if (n < 1 || d1 < 1 || p < 1)
    throw InvalidInput("make_tiny_instance: sizes must be positive");
  TinyInstance inst;
  inst.seed = seed;
  inst.class_count = class_count;
  inst.patch_dim = d1;
  inst.patch_count = p;
  SplitMix64 rng(seed);
  inst.patches.resize(n);
  Matrix means(d1, n);
  for (int i = 0; i < n; ++i) {
    PatchMatrix Z;
    Z.entries = Matrix(d1, p);
    for (int a = 0; a < d1; ++a)
      for (int b = 0; b < p; ++b) Z.entries(a, b) = rng.symmetric();
    inst.patches[i] = normalize_patches(std::move(Z));
    means.col(i) = inst.patches[i].entries.rowwise().mean();
  }
  inst.labels = Eigen::VectorXi(n);
  const int m = std::max(class_count, 2);
  for (int attempt = 0; attempt < 64; ++attempt) {
    Matrix W(d1, m);
    for (int a = 0; a < d1; ++a)
      for (int k = 0; k < m; ++k) W(a, k) = rng.symmetric();
    std::vector<bool> present(m, false);
    for (int i = 0; i < n; ++i) {
      if (class_count == 0) {
        inst.labels[i] = W.col(0).dot(means.col(i)) >= 0 ? 1 : -1;
        present[inst.labels[i] > 0 ? 0 : 1] = true;
      } else {
        Eigen::Index best;
        (W.transpose() * means.col(i)).maxCoeff(&best);
        inst.labels[i] = static_cast<int>(best) + 1;
        present[best] = true;
      }
    }
    if (std::all_of(present.begin(), present.end(), [](bool b) { return b; }))
      return inst;
  }
  // Random hyperplanes failed to produce every class; assign round-robin.
  for (int i = 0; i < n; ++i)
    inst.labels[i] = class_count == 0 ? (i % 2 == 0 ? 1 : -1) : (i % m) + 1;
  return inst;
}

}  // namespace dccnn
