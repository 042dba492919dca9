#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "dccnn/errors.hpp"

namespace dccnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Convolution geometry for square filters with symmetric zero padding.
///
/// Inputs are flat vectors laid out channel-plane by channel-plane, each
/// plane row-major: x[c*H*W + y*W + col].
struct PatchGeometry {
  int input_height = 0;
  int input_width = 0;
  int channels = 1;
  int filter_width = 0;
  int stride = 1;
  int padding = 0;

  int out_height() const {
    return (input_height + 2 * padding - filter_width) / stride + 1;
  }
  int out_width() const {
    return (input_width + 2 * padding - filter_width) / stride + 1;
  }
  /// p: number of sliding-window positions.
  int patch_count() const { return out_height() * out_width(); }
  /// d1: entries per patch.
  int patch_dim() const { return filter_width * filter_width * channels; }
  /// d0: flat input length.
  int input_size() const { return input_height * input_width * channels; }

  void validate() const {
    if (input_height < 1 || input_width < 1 || channels < 1)
      throw InvalidInput("patch geometry: input dimensions must be positive");
    if (filter_width < 1 || stride < 1 || padding < 0)
      throw InvalidInput("patch geometry: bad filter/stride/padding");
    if (input_height + 2 * padding < filter_width ||
        input_width + 2 * padding < filter_width)
      throw InvalidInput("patch geometry: filter larger than padded input");
    if (patch_count() < 1)
      throw InvalidInput("patch geometry: no patch positions");
  }

  bool operator==(const PatchGeometry&) const = default;
};

/// The d1 x p matrix Z whose column j is the j-th patch of one sample.
struct PatchMatrix {
  Matrix entries;
  /// Columns replaced by the canonical unit vector during normalization.
  std::vector<int> degenerate_columns;
};

/// Slices x into its patch matrix. Column j holds the window at the j-th
/// sliding position (positions row-major over the output grid); within a
/// column the order is channel-major, row-major spatially inside each
/// channel. Out-of-image entries are zero.
inline PatchMatrix extract_patches(const Eigen::Ref<const Vector>& x,
                                   const PatchGeometry& geom) {
  geom.validate();
  if (x.size() != geom.input_size())
    throw InvalidInput("extract_patches: input length " +
                       std::to_string(x.size()) + " does not match geometry (" +
                       std::to_string(geom.input_size()) + ")");
  const int f = geom.filter_width;
  const int H = geom.input_height;
  const int W = geom.input_width;
  const int out_w = geom.out_width();
  PatchMatrix Z;
  Z.entries = Matrix::Zero(geom.patch_dim(), geom.patch_count());
  for (int j = 0; j < geom.patch_count(); ++j) {
    const int oy = j / out_w;
    const int ox = j % out_w;
    const int y0 = oy * geom.stride - geom.padding;
    const int x0 = ox * geom.stride - geom.padding;
    for (int c = 0; c < geom.channels; ++c) {
      const int plane = c * H * W;
      const int base = c * f * f;
      for (int wy = 0; wy < f; ++wy) {
        const int y = y0 + wy;
        if (y < 0 || y >= H) continue;
        for (int wx = 0; wx < f; ++wx) {
          const int xc = x0 + wx;
          if (xc < 0 || xc >= W) continue;
          Z.entries(base + wy * f + wx, j) = x[plane + y * W + xc];
        }
      }
    }
  }
  return Z;
}

/// Scales every column to unit Euclidean norm. Columns with norm <= eps
/// cannot be normalized; they are replaced by e1 and reported as degenerate.
inline PatchMatrix normalize_patches(PatchMatrix Z, double eps = 1e-12) {
  Z.degenerate_columns.clear();
  for (int j = 0; j < Z.entries.cols(); ++j) {
    const double norm = Z.entries.col(j).norm();
    if (norm > eps) {
      Z.entries.col(j) /= norm;
    } else {
      Z.entries.col(j).setZero();
      Z.entries(0, j) = 1.0;
      Z.degenerate_columns.push_back(j);
    }
  }
  return Z;
}

/// q x p average pooling matrix G: row s has 1/b at the feature-map entries
/// covered by pooling window s, where b is the window size.
struct PoolingMatrix {
  Matrix entries;
  int pool_width = 0;
  int pool_stride = 0;
  int window_size = 0;  // b
  int out_height = 0;   // pooled map rows
  int out_width = 0;    // pooled map cols
};

/// Builds the pooling matrix for a map of p = map_height*map_width entries
/// (row-major, matching extract_patches' output-position order). Windows must
/// tile the map exactly; partial windows are rejected.
inline PoolingMatrix pooling_matrix(int map_height, int map_width,
                                    int pool_width, int pool_stride) {
  if (map_height < 1 || map_width < 1 || pool_width < 1 || pool_stride < 1)
    throw InvalidInput("pooling_matrix: dimensions must be positive");
  if (pool_width > map_height || pool_width > map_width)
    throw InvalidInput("pooling_matrix: window larger than feature map");
  if ((map_height - pool_width) % pool_stride != 0 ||
      (map_width - pool_width) % pool_stride != 0)
    throw InvalidInput("pooling_matrix: windows do not tile the map exactly");
  const int qh = (map_height - pool_width) / pool_stride + 1;
  const int qw = (map_width - pool_width) / pool_stride + 1;
  const int b = pool_width * pool_width;
  PoolingMatrix G;
  G.pool_width = pool_width;
  G.pool_stride = pool_stride;
  G.window_size = b;
  G.out_height = qh;
  G.out_width = qw;
  G.entries = Matrix::Zero(qh * qw, map_height * map_width);
  const double w = 1.0 / b;
  for (int sy = 0; sy < qh; ++sy) {
    for (int sx = 0; sx < qw; ++sx) {
      const int s = sy * qw + sx;
      for (int dy = 0; dy < pool_width; ++dy) {
        for (int dx = 0; dx < pool_width; ++dx) {
          const int t = (sy * pool_stride + dy) * map_width +
                        (sx * pool_stride + dx);
          G.entries(s, t) = w;
        }
      }
    }
  }
  return G;
}

}  // namespace dccnn
