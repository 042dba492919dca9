#pragma once

#include <Eigen/Dense>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dccnn/errors.hpp"
#include "dccnn/kernels.hpp"
#include "dccnn/losses.hpp"
#include "dccnn/patches.hpp"
#include "dccnn/recovery.hpp"
#include "dccnn/solver.hpp"

namespace dccnn {

struct PoolingDescriptor {
  int pool_width = 2;
  int pool_stride = 2;
};

/// Per-layer architecture knobs; geometry is derived from the incoming map.
struct LayerSpec {
  int filter_width = 5;
  int stride = 1;
  int padding = 0;
  std::optional<PoolingDescriptor> pooling;
};

struct TrainConfig {
  KernelSpec kernel;
  LossSpec loss;
  double c = 1.0;
  double threshold = 0.9;
  SolverOptions solver;
  std::vector<LayerSpec> layers;
  double normalize_eps = 1e-12;
  int class_count = 0;  // 0 = binary labels (+-1), m >= 2 = multiclass in [m]
};

/// One trained convexified layer. Kernel prediction needs K(x_new, x_j)
/// against the layer's training inputs, so they are part of the model.
struct LayerModel {
  KernelSpec kernel;
  PatchGeometry geometry;
  std::optional<PoolingMatrix> pooling;
  DualSolution dual;
  LinearWeight linear_weight;
  Matrix training_inputs;  // n x layer-input-length, one sample per row

  /// Derived: normalized patch matrices of the training inputs (rebuilt, not
  /// serialized).
  std::vector<PatchMatrix> training_patches;

  void rebuild_patches(double eps = 1e-12) {
    const Eigen::Index n = training_inputs.rows();
    training_patches.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      training_patches[static_cast<std::size_t>(i)] = normalize_patches(
          extract_patches(training_inputs.row(i).transpose(), geometry), eps);
  }
};

struct Model {
  std::uint32_t format_version = 1;
  int class_count = 0;  // 0 = binary
  std::vector<LayerModel> layers;

  bool is_multiclass() const { return class_count >= 2; }
  int depth() const { return static_cast<int>(layers.size()); }
};

namespace detail {

inline void parallel_for(Eigen::Index count,
                         const std::function<void(Eigen::Index)>& body) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers =
      static_cast<unsigned>(std::min<Eigen::Index>(hw, count));
  if (workers <= 1 || count < 4) {
    for (Eigen::Index i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> threads;
  std::exception_ptr err;
  std::mutex err_mu;
  for (unsigned w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (Eigen::Index i = w; i < count; i += workers) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (err) std::rethrow_exception(err);
}

/// Propagates one input through a trained layer: conv output from the dual
/// solution, optional pooling, column-major vectorization (each recovered
/// filter's map stays contiguous, so filters become the next layer's
/// channels).
inline Vector layer_forward(const LayerModel& layer,
                            const Eigen::Ref<const Vector>& input,
                            double eps) {
  const PatchMatrix Z =
      normalize_patches(extract_patches(input, layer.geometry), eps);
  ConvOutput out = recover_conv_output(layer.dual, layer.training_patches,
                                       layer.kernel, layer.linear_weight, Z);
  if (layer.pooling) out = apply_pooling(out, *layer.pooling);
  return Eigen::Map<const Vector>(out.values.data(), out.values.size());
}

/// Final-layer score matrix C = (sum_j alpha_j y_j K(x, x_j)) L for binary,
/// or its block form for multiclass; scores are traces against L (slices).
inline Matrix final_layer_scores(const LayerModel& layer,
                                 const Eigen::Ref<const Vector>& input,
                                 double eps) {
  const PatchMatrix Z =
      normalize_patches(extract_patches(input, layer.geometry), eps);
  return recover_conv_output(layer.dual, layer.training_patches, layer.kernel,
                             layer.linear_weight, Z)
      .values;
}

}  // namespace detail

/// Trains a D-layer model layer by layer: solve the dual on the current
/// inputs, recover the linear weight, push every sample's (pooled) conv
/// output forward as the next layer's input. The recovered filter count r of
/// one layer becomes the channel count of the next.
inline Model train_layerwise(const Matrix& inputs, const Eigen::VectorXi& labels,
                             int input_height, int input_width,
                             int input_channels, const TrainConfig& config) {
  if (config.layers.empty())
    throw InvalidInput("train_layerwise: at least one layer required");
  if (inputs.rows() == 0) throw EmptyDataset("train_layerwise: no samples");
  if (!(config.threshold > 0.0) || config.threshold > 1.0)
    throw InvalidInput("train_layerwise: threshold must be in (0, 1]");

  Model model;
  model.class_count = config.class_count;
  Matrix cur = inputs;
  int h = input_height, w = input_width, ch = input_channels;
  const int depth = static_cast<int>(config.layers.size());

  for (int l = 0; l < depth; ++l) {
    const LayerSpec& spec = config.layers[static_cast<std::size_t>(l)];
    LayerModel layer;
    layer.kernel = config.kernel;
    layer.geometry = PatchGeometry{h, w, ch, spec.filter_width, spec.stride,
                                   spec.padding};
    try {
      layer.geometry.validate();
      if (cur.cols() != layer.geometry.input_size())
        throw InvalidInput("layer input length " + std::to_string(cur.cols()) +
                           " does not match geometry (" +
                           std::to_string(layer.geometry.input_size()) + ")");
      layer.training_inputs = cur;
      layer.rebuild_patches(config.normalize_eps);

      if (config.class_count >= 2)
        layer.dual = solve_dual_multiclass(layer.training_patches, labels,
                                           config.kernel, config.loss, config.c,
                                           config.class_count, config.solver);
      else
        layer.dual = solve_dual(layer.training_patches, labels, config.kernel,
                                config.loss, config.c, config.solver);
      layer.linear_weight =
          recover_linear_weight(layer.dual, layer.training_patches,
                                config.kernel, config.threshold);

      if (spec.pooling)
        layer.pooling =
            pooling_matrix(layer.geometry.out_height(),
                           layer.geometry.out_width(), spec.pooling->pool_width,
                           spec.pooling->pool_stride);
    } catch (const NoFiltersRecovered& e) {
      throw NoFiltersRecovered(
          "layer " + std::to_string(l + 1) + ": " + e.what(),
          e.max_eigenvalue);
    } catch (const Error& e) {
      throw Error("layer " + std::to_string(l + 1) + ": " + e.what());
    }

    if (l + 1 < depth) {
      const int r = layer.linear_weight.rank();
      const int map_h =
          layer.pooling ? layer.pooling->out_height : layer.geometry.out_height();
      const int map_w =
          layer.pooling ? layer.pooling->out_width : layer.geometry.out_width();
      Matrix next(cur.rows(), map_h * map_w * r);
      const LayerModel& fixed = layer;
      detail::parallel_for(cur.rows(), [&](Eigen::Index i) {
        next.row(i) = detail::layer_forward(fixed, cur.row(i).transpose(),
                                            config.normalize_eps)
                          .transpose();
      });
      cur = std::move(next);
      h = map_h;
      w = map_w;
      ch = r;
    }
    model.layers.push_back(std::move(layer));
  }
  return model;
}

/// Binary prediction: propagate through layers 1..D-1, then take the sign of
/// the final trace score. sign(0) maps to +1.
inline int predict_binary(const Model& model, const Eigen::Ref<const Vector>& x,
                          double eps = 1e-12) {
  if (model.is_multiclass())
    throw InvalidInput("predict_binary: model is multiclass");
  if (model.layers.empty()) throw InvalidInput("predict_binary: empty model");
  Vector cur = x;
  for (int l = 0; l + 1 < model.depth(); ++l)
    cur = detail::layer_forward(model.layers[static_cast<std::size_t>(l)], cur,
                                eps);
  const LayerModel& last = model.layers.back();
  const Matrix C = detail::final_layer_scores(last, cur, eps);
  const double score = C.cwiseProduct(last.linear_weight.columns).sum();
  return score >= 0.0 ? 1 : -1;
}

/// Multiclass prediction: argmax over per-class trace scores, ties to the
/// smallest class index.
inline int predict_multiclass(const Model& model,
                              const Eigen::Ref<const Vector>& x,
                              double eps = 1e-12) {
  if (!model.is_multiclass())
    throw InvalidInput("predict_multiclass: model is binary");
  Vector cur = x;
  for (int l = 0; l + 1 < model.depth(); ++l)
    cur = detail::layer_forward(model.layers[static_cast<std::size_t>(l)], cur,
                                eps);
  const LayerModel& last = model.layers.back();
  const Matrix C = detail::final_layer_scores(last, cur, eps);
  const int m = model.class_count;
  const int p = last.linear_weight.block_rows;
  int best_k = 0;
  double best_score = 0.0;
  for (int k = 0; k < m; ++k) {
    const double score =
        C.cwiseProduct(last.linear_weight.columns.middleRows(k * p, p)).sum();
    if (k == 0 || score > best_score) {
      best_score = score;
      best_k = k;
    }
  }
  return best_k + 1;
}

/// Predicted label for either task.
inline int predict(const Model& model, const Eigen::Ref<const Vector>& x) {
  return model.is_multiclass() ? predict_multiclass(model, x)
                               : predict_binary(model, x);
}

/// Batch prediction, parallel across inputs.
inline Eigen::VectorXi predict_batch(const Model& model, const Matrix& inputs) {
  Eigen::VectorXi out(inputs.rows());
  detail::parallel_for(inputs.rows(), [&](Eigen::Index i) {
    out[i] = predict(model, inputs.row(i).transpose());
  });
  return out;
}

// ---------------------------------------------------------------------------
// Serialization. Version-1 stream, little-endian u32 counts and IEEE f64:
//   "DCNN" | version | task tag (0 binary / 1 multiclass [+ class count]) |
//   layer count | per layer: kernel (tag + params), geometry (6 counts),
//   pooling (present flag + 4 counts), n, labels (f64*n or u32*n), alpha
//   block, training inputs (row-major f64), linear weight (r, eigenvalues,
//   column-major f64), threshold.
// Prediction state only: solver diagnostics (c, loss, objective) are
// training-time values and are not part of the stream.
// ---------------------------------------------------------------------------

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i)
      bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void raw(const char* data, std::size_t len) {
    bytes.insert(bytes.end(), data, data + len);
  }
  std::vector<std::uint8_t> bytes;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t len)
      : data_(data), len_(len) {}

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8, "f64");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= std::uint64_t(data_[pos_ + static_cast<std::size_t>(i)])
              << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }
  void raw(char* out, std::size_t len) {
    need(len, "bytes");
    std::memcpy(out, data_ + pos_, len);
    pos_ += len;
  }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t len, const char* what) const {
    if (pos_ + len > len_)
      throw CorruptStream(std::string("model stream truncated reading ") + what,
                          pos_);
  }
  const std::uint8_t* data_;
  std::size_t len_;
  std::size_t pos_ = 0;
};

}  // namespace detail

constexpr std::uint32_t kModelFormatVersion = 1;

inline std::vector<std::uint8_t> serialize(const Model& model) {
  detail::ByteWriter w;
  w.raw("DCNN", 4);
  w.u32(kModelFormatVersion);
  if (model.is_multiclass()) {
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(model.class_count));
  } else {
    w.u32(0);
  }
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const LayerModel& layer : model.layers) {
    switch (layer.kernel.kind) {
      case KernelKind::gaussian_rbf:
        w.u32(0);
        w.f64(layer.kernel.gamma);
        break;
      case KernelKind::linear:
        w.u32(1);
        break;
      case KernelKind::polynomial:
        w.u32(2);
        w.u32(static_cast<std::uint32_t>(layer.kernel.degree));
        w.f64(layer.kernel.offset);
        break;
    }
    const PatchGeometry& g = layer.geometry;
    for (int v : {g.input_height, g.input_width, g.channels, g.filter_width,
                  g.stride, g.padding})
      w.u32(static_cast<std::uint32_t>(v));
    if (layer.pooling) {
      w.u32(1);
      w.u32(static_cast<std::uint32_t>(layer.pooling->pool_width));
      w.u32(static_cast<std::uint32_t>(layer.pooling->pool_stride));
      w.u32(static_cast<std::uint32_t>(g.out_height()));
      w.u32(static_cast<std::uint32_t>(g.out_width()));
    } else {
      w.u32(0);
    }
    const auto n = static_cast<std::uint32_t>(layer.dual.alpha.rows());
    w.u32(n);
    if (model.is_multiclass()) {
      for (std::uint32_t i = 0; i < n; ++i)
        w.u32(static_cast<std::uint32_t>(layer.dual.labels[i]));
      for (std::uint32_t i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < layer.dual.alpha.cols(); ++k)
          w.f64(layer.dual.alpha(i, k));
    } else {
      for (std::uint32_t i = 0; i < n; ++i)
        w.f64(static_cast<double>(layer.dual.labels[i]));
      for (std::uint32_t i = 0; i < n; ++i) w.f64(layer.dual.alpha(i, 0));
    }
    for (Eigen::Index i = 0; i < layer.training_inputs.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.training_inputs.cols(); ++j)
        w.f64(layer.training_inputs(i, j));
    const LinearWeight& lw = layer.linear_weight;
    w.u32(static_cast<std::uint32_t>(lw.rank()));
    for (Eigen::Index i = 0; i < lw.eigenvalues_used.size(); ++i)
      w.f64(lw.eigenvalues_used[i]);
    for (Eigen::Index jcol = 0; jcol < lw.columns.cols(); ++jcol)
      for (Eigen::Index irow = 0; irow < lw.columns.rows(); ++irow)
        w.f64(lw.columns(irow, jcol));
    w.f64(lw.threshold_used);
  }
  return w.bytes;
}

inline Model deserialize(const std::uint8_t* data, std::size_t len) {
  detail::ByteReader r(data, len);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "DCNN", 4) != 0)
    throw CorruptStream("model stream has wrong magic bytes", 0);
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion)
    throw UnsupportedVersion(
        "model stream version " + std::to_string(version) +
            " is not supported (expected " +
            std::to_string(kModelFormatVersion) + ")",
        version);
  Model model;
  model.format_version = version;
  const std::uint32_t task = r.u32();
  if (task == 1) {
    model.class_count = static_cast<int>(r.u32());
    if (model.class_count < 2)
      throw CorruptStream("multiclass model with class count < 2", r.offset());
  } else if (task == 0) {
    model.class_count = 0;
  } else {
    throw CorruptStream("unknown task tag " + std::to_string(task), r.offset());
  }
  const std::uint32_t layer_count = r.u32();
  if (layer_count == 0 || layer_count > 1024)
    throw CorruptStream("implausible layer count " + std::to_string(layer_count),
                        r.offset());
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    LayerModel layer;
    const std::uint32_t ktag = r.u32();
    switch (ktag) {
      case 0:
        layer.kernel = KernelSpec::gaussian(r.f64());
        break;
      case 1:
        layer.kernel = KernelSpec::linear();
        break;
      case 2: {
        const int degree = static_cast<int>(r.u32());
        layer.kernel = KernelSpec::polynomial(degree, r.f64());
        break;
      }
      default:
        throw CorruptStream("unknown kernel tag " + std::to_string(ktag),
                            r.offset());
    }
    layer.geometry.input_height = static_cast<int>(r.u32());
    layer.geometry.input_width = static_cast<int>(r.u32());
    layer.geometry.channels = static_cast<int>(r.u32());
    layer.geometry.filter_width = static_cast<int>(r.u32());
    layer.geometry.stride = static_cast<int>(r.u32());
    layer.geometry.padding = static_cast<int>(r.u32());
    layer.geometry.validate();
    const std::uint32_t pooled = r.u32();
    if (pooled == 1) {
      const int pw = static_cast<int>(r.u32());
      const int ps = static_cast<int>(r.u32());
      const int mh = static_cast<int>(r.u32());
      const int mw = static_cast<int>(r.u32());
      if (mh != layer.geometry.out_height() || mw != layer.geometry.out_width())
        throw CorruptStream("pooling map does not match geometry", r.offset());
      layer.pooling = pooling_matrix(mh, mw, pw, ps);
    } else if (pooled != 0) {
      throw CorruptStream("bad pooling flag", r.offset());
    }
    const std::uint32_t n = r.u32();
    if (n == 0 || n > (1u << 26))
      throw CorruptStream("implausible sample count " + std::to_string(n),
                          r.offset());
    const int m = model.class_count;
    layer.dual.class_count = m;
    layer.dual.labels = Eigen::VectorXi(n);
    if (model.is_multiclass()) {
      for (std::uint32_t i = 0; i < n; ++i) {
        layer.dual.labels[i] = static_cast<int>(r.u32());
        if (layer.dual.labels[i] < 1 || layer.dual.labels[i] > m)
          throw CorruptStream("label out of range", r.offset());
      }
      layer.dual.alpha = Matrix(n, m);
      for (std::uint32_t i = 0; i < n; ++i)
        for (int k = 0; k < m; ++k) layer.dual.alpha(i, k) = r.f64();
    } else {
      for (std::uint32_t i = 0; i < n; ++i) {
        const double y = r.f64();
        if (y != 1.0 && y != -1.0)
          throw CorruptStream("binary label must be +-1", r.offset());
        layer.dual.labels[i] = static_cast<int>(y);
      }
      layer.dual.alpha = Matrix(n, 1);
      for (std::uint32_t i = 0; i < n; ++i) layer.dual.alpha(i, 0) = r.f64();
    }
    const Eigen::Index d0 = layer.geometry.input_size();
    layer.training_inputs = Matrix(n, d0);
    for (std::uint32_t i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d0; ++j)
        layer.training_inputs(i, j) = r.f64();
    const std::uint32_t rank = r.u32();
    const int p = layer.geometry.patch_count();
    const Eigen::Index wrows =
        model.is_multiclass() ? Eigen::Index(m) * p : Eigen::Index(p);
    if (rank == 0 || static_cast<Eigen::Index>(rank) > wrows)
      throw CorruptStream("implausible recovered rank " + std::to_string(rank),
                          r.offset());
    LinearWeight& lw = layer.linear_weight;
    lw.block_rows = p;
    lw.eigenvalues_used = Vector(rank);
    for (std::uint32_t i = 0; i < rank; ++i) lw.eigenvalues_used[i] = r.f64();
    lw.columns = Matrix(wrows, rank);
    for (std::uint32_t jcol = 0; jcol < rank; ++jcol)
      for (Eigen::Index irow = 0; irow < wrows; ++irow)
        lw.columns(irow, jcol) = r.f64();
    lw.threshold_used = r.f64();
    layer.rebuild_patches();
    model.layers.push_back(std::move(layer));
  }
  return model;
}

inline Model deserialize(const std::vector<std::uint8_t>& bytes) {
  return deserialize(bytes.data(), bytes.size());
}

inline void save_model(const Model& model, const std::string& path) {
  const std::vector<std::uint8_t> bytes = serialize(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("save_model: cannot open " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("load_model: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace dccnn
