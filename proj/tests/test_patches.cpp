#include <catch2/catch_amalgamated.hpp>

#include "dccnn/data.hpp"
#include "dccnn/patches.hpp"

using namespace dccnn;

TEST_CASE("single window covers the whole image", "[patches]") {
  Vector x(4);
  x << 1.5, -2.0, 3.25, 0.5;  // [a, b, c, d] row-major
  const PatchGeometry g{2, 2, 1, 2, 1, 0};
  const PatchMatrix Z = extract_patches(x, g);
  REQUIRE(Z.entries.rows() == 4);
  REQUIRE(Z.entries.cols() == 1);
  CHECK(Z.entries(0, 0) == 1.5);
  CHECK(Z.entries(1, 0) == -2.0);
  CHECK(Z.entries(2, 0) == 3.25);
  CHECK(Z.entries(3, 0) == 0.5);
}

TEST_CASE("mnist-like geometry counts", "[patches]") {
  const PatchGeometry g{28, 28, 1, 5, 1, 2};
  CHECK(g.patch_count() == 784);
  CHECK(g.patch_dim() == 25);
}

TEST_CASE("4x4 with filter 3 gives four patches of length 9", "[patches]") {
  const PatchGeometry g{4, 4, 1, 3, 1, 0};
  CHECK(g.patch_count() == 4);
  Vector x = Vector::LinSpaced(16, 0.0, 15.0);
  const PatchMatrix Z = extract_patches(x, g);
  REQUIRE(Z.entries.rows() == 9);
  REQUIRE(Z.entries.cols() == 4);
  // top-left window, row-major
  CHECK(Z.entries(0, 0) == 0.0);
  CHECK(Z.entries(2, 0) == 2.0);
  CHECK(Z.entries(3, 0) == 4.0);
  CHECK(Z.entries(8, 0) == 10.0);
  // bottom-right window starts at (1, 1)
  CHECK(Z.entries(0, 3) == 5.0);
}

TEST_CASE("input length must match geometry", "[patches]") {
  const PatchGeometry g{4, 4, 1, 3, 1, 0};
  Vector x = Vector::Zero(15);
  CHECK_THROWS_AS(extract_patches(x, g), InvalidInput);
}

TEST_CASE("window entries reproduce source pixels and padding is zero",
          "[patches]") {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const int H = 3 + static_cast<int>(rng.below(5));
    const int W = 3 + static_cast<int>(rng.below(5));
    const int C = 1 + static_cast<int>(rng.below(2));
    const int f = 2 + static_cast<int>(rng.below(2));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(2));
    const PatchGeometry g{H, W, C, f, stride, pad};
    Vector x(g.input_size());
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.symmetric();
    const PatchMatrix Z = extract_patches(x, g);
    for (int j = 0; j < g.patch_count(); ++j) {
      const int oy = j / g.out_width();
      const int ox = j % g.out_width();
      for (int c = 0; c < C; ++c)
        for (int wy = 0; wy < f; ++wy)
          for (int wx = 0; wx < f; ++wx) {
            const int y = oy * stride - pad + wy;
            const int xc = ox * stride - pad + wx;
            const double got = Z.entries(c * f * f + wy * f + wx, j);
            if (y < 0 || y >= H || xc < 0 || xc >= W)
              REQUIRE(got == 0.0);
            else
              REQUIRE(got == x[c * H * W + y * W + xc]);
          }
    }
  }
}

TEST_CASE("extraction is bitwise deterministic", "[patches]") {
  SplitMix64 rng(5);
  const PatchGeometry g{6, 6, 2, 3, 2, 1};
  Vector x(g.input_size());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.symmetric();
  const PatchMatrix a = extract_patches(x, g);
  const PatchMatrix b = extract_patches(x, g);
  REQUIRE(a.entries == b.entries);
}

TEST_CASE("normalization scales columns to unit norm", "[patches]") {
  PatchMatrix Z;
  Z.entries = Matrix(2, 3);
  Z.entries.col(0) << 3.0, 4.0;
  Z.entries.col(1) << 1.0, 0.0;  // already unit
  Z.entries.col(2) << 0.0, 0.0;  // degenerate
  const PatchMatrix N = normalize_patches(Z, 1e-12);
  CHECK(N.entries(0, 0) == Catch::Approx(0.6));
  CHECK(N.entries(1, 0) == Catch::Approx(0.8));
  CHECK(N.entries(0, 1) == 1.0);
  CHECK(N.entries(1, 1) == 0.0);
  CHECK(N.entries(0, 2) == 1.0);  // canonical unit vector
  CHECK(N.entries(1, 2) == 0.0);
  REQUIRE(N.degenerate_columns == std::vector<int>{2});
}

TEST_CASE("pooling matrix for a single window", "[patches]") {
  const PoolingMatrix G = pooling_matrix(2, 2, 2, 2);
  REQUIRE(G.entries.rows() == 1);
  REQUIRE(G.entries.cols() == 4);
  for (int t = 0; t < 4; ++t) CHECK(G.entries(0, t) == 0.25);
  CHECK(G.window_size == 4);
}

TEST_CASE("non-overlapping pooling windows have disjoint support",
          "[patches]") {
  const PoolingMatrix G = pooling_matrix(4, 4, 2, 2);
  REQUIRE(G.entries.rows() == 4);
  for (int s = 0; s < 4; ++s) {
    int nonzero = 0;
    for (int t = 0; t < 16; ++t)
      if (G.entries(s, t) != 0.0) {
        CHECK(G.entries(s, t) == 0.25);
        ++nonzero;
      }
    CHECK(nonzero == 4);
  }
  const Eigen::RowVectorXd support = G.entries.colwise().sum();
  for (int t = 0; t < 16; ++t) CHECK(support[t] == 0.25);  // each entry once
}

TEST_CASE("pooling preserves constant maps and row sums are one",
          "[patches]") {
  const PoolingMatrix G = pooling_matrix(6, 6, 3, 3);
  const Vector cmap = Vector::Constant(36, 2.5);
  const Vector pooled = G.entries * cmap;
  for (Eigen::Index s = 0; s < pooled.size(); ++s)
    CHECK(pooled[s] == Catch::Approx(2.5).margin(1e-12));
  for (Eigen::Index s = 0; s < G.entries.rows(); ++s)
    CHECK(std::abs(G.entries.row(s).sum() - 1.0) <= 1e-12);
}

TEST_CASE("partial pooling windows are rejected", "[patches]") {
  CHECK_THROWS_AS(pooling_matrix(5, 5, 2, 2), InvalidInput);
  CHECK_THROWS_AS(pooling_matrix(2, 2, 3, 1), InvalidInput);
}
