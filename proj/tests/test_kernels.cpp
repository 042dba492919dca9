#include <catch2/catch_amalgamated.hpp>
#include <atomic>
#include <cmath>
#include <thread>

#include "dccnn/data.hpp"
#include "dccnn/kernels.hpp"

using namespace dccnn;

namespace {

PatchMatrix random_patches(SplitMix64& rng, int d1, int p, bool normalize) {
  PatchMatrix Z;
  Z.entries = Matrix(d1, p);
  for (int a = 0; a < d1; ++a)
    for (int b = 0; b < p; ++b) Z.entries(a, b) = rng.symmetric();
  return normalize ? normalize_patches(std::move(Z)) : Z;
}

}  // namespace

TEST_CASE("gaussian kernel basics", "[kernels]") {
  Vector u(3), v(3);
  u << 0.3, -0.4, 0.8;
  v = u;
  CHECK(kernel_eval(KernelSpec::gaussian(2.0), u, v) == 1.0);
  v << 0.3, -0.4, 1.8;  // squared distance 1
  CHECK(kernel_eval(KernelSpec::gaussian(1.0), u, v) ==
        Catch::Approx(std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("linear kernel on orthogonal vectors", "[kernels]") {
  Vector u(2), v(2);
  u << 1.0, 0.0;
  v << 0.0, 1.0;
  CHECK(kernel_eval(KernelSpec::linear(), u, v) == 0.0);
}

TEST_CASE("kernel_eval validates lengths and parameters", "[kernels]") {
  Vector u = Vector::Zero(2), v = Vector::Zero(3);
  CHECK_THROWS_AS(kernel_eval(KernelSpec::linear(), u, v), InvalidInput);
  CHECK_THROWS_AS(KernelSpec::gaussian(-1.0).validate(), InvalidInput);
  CHECK_THROWS_AS(KernelSpec::polynomial(0, 1.0).validate(), InvalidInput);
}

TEST_CASE("generating matrix entries are patchwise kernel values",
          "[kernels]") {
  SplitMix64 rng(3);
  const PatchMatrix Zi = random_patches(rng, 4, 3, true);
  const PatchMatrix Zj = random_patches(rng, 4, 3, true);
  for (const KernelSpec& spec :
       {KernelSpec::gaussian(0.7), KernelSpec::linear(),
        KernelSpec::polynomial(2, 0.5)}) {
    const Matrix K = kernel_generating_matrix(spec, Zi, Zj);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        CHECK(K(a, b) == Catch::Approx(kernel_eval(spec, Zi.entries.col(a),
                                                   Zj.entries.col(b)))
                             .margin(1e-14));
  }
}

TEST_CASE("single-patch matrices reduce to kernel_eval", "[kernels]") {
  SplitMix64 rng(4);
  const PatchMatrix Zi = random_patches(rng, 5, 1, true);
  const PatchMatrix Zj = random_patches(rng, 5, 1, true);
  const Matrix K = kernel_generating_matrix(KernelSpec::gaussian(1.3), Zi, Zj);
  REQUIRE(K.rows() == 1);
  CHECK(K(0, 0) == Catch::Approx(kernel_eval(KernelSpec::gaussian(1.3),
                                             Zi.entries.col(0),
                                             Zj.entries.col(0))));
}

TEST_CASE("identical patches give the all-ones gaussian matrix", "[kernels]") {
  PatchMatrix Z;
  Z.entries = Matrix(3, 4);
  Vector z(3);
  z << 0.6, 0.0, 0.8;
  for (int b = 0; b < 4; ++b) Z.entries.col(b) = z;
  const Matrix K = kernel_generating_matrix(KernelSpec::gaussian(2.5), Z, Z);
  CHECK((K.array() - 1.0).abs().maxCoeff() <= 1e-15);
}

TEST_CASE("transposition swaps the sample arguments", "[kernels]") {
  SplitMix64 rng(7);
  const PatchMatrix Zi = random_patches(rng, 6, 5, true);
  const PatchMatrix Zj = random_patches(rng, 6, 5, true);
  const KernelSpec spec = KernelSpec::gaussian(0.9);
  const Matrix Kij = kernel_generating_matrix(spec, Zi, Zj);
  const Matrix Kji = kernel_generating_matrix(spec, Zj, Zi);
  CHECK((Kij - Kji.transpose()).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("geometry mismatch is rejected", "[kernels]") {
  SplitMix64 rng(8);
  const PatchMatrix Zi = random_patches(rng, 4, 3, false);
  const PatchMatrix Zj = random_patches(rng, 4, 2, false);
  CHECK_THROWS_AS(kernel_generating_matrix(KernelSpec::linear(), Zi, Zj),
                  InvalidInput);
}

TEST_CASE("linear generating matrix equals the patch gram matrix",
          "[kernels]") {
  SplitMix64 rng(9);
  const PatchMatrix Zi = random_patches(rng, 4, 3, false);
  const PatchMatrix Zj = random_patches(rng, 4, 3, false);
  const Matrix K = kernel_generating_matrix(KernelSpec::linear(), Zi, Zj);
  CHECK((K - Zi.entries.transpose() * Zj.entries).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("self matrices: unit gaussian diagonal and PSD spectrum",
          "[kernels]") {
  SplitMix64 rng(10);
  const PatchMatrix Z = random_patches(rng, 5, 6, true);
  const Matrix K = kernel_generating_matrix(KernelSpec::gaussian(1.1), Z, Z);
  for (int a = 0; a < 6; ++a) CHECK(K(a, a) == 1.0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (K + K.transpose()));
  const double lam_max = es.eigenvalues().maxCoeff();
  CHECK(es.eigenvalues().minCoeff() >= -1e-8 * lam_max);
}

TEST_CASE("lambda_max on reference matrices", "[kernels]") {
  CHECK(lambda_max(Matrix::Identity(4, 4)) == Catch::Approx(1.0));
  Vector d(3);
  d << 0.2, 0.7, 0.1;
  CHECK(lambda_max(Matrix(d.asDiagonal())) == Catch::Approx(0.7));
  Vector v(3);
  v << 2.0, 0.0, 0.0;
  v = 2.0 * v / v.norm();
  const Matrix vv = v * v.transpose();
  CHECK(lambda_max(vv) == Catch::Approx(4.0));
}

TEST_CASE("lambda_max rejects non-finite input and symmetrizes", "[kernels]") {
  Matrix bad = Matrix::Zero(2, 2);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(lambda_max(bad), NumericalError);

  SplitMix64 rng(11);
  Matrix M(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) M(i, j) = rng.symmetric();
  const Matrix sym = 0.5 * (M + M.transpose());
  CHECK(lambda_max(sym) ==
        Catch::Approx(lambda_max(Matrix(0.5 * (sym + sym.transpose()))))
            .margin(1e-12));
}

TEST_CASE("block kernels: single class degenerates to the inner matrix",
          "[kernels]") {
  Matrix K(2, 2);
  K << 1.0, 0.2, 0.2, 1.0;
  const BlockKernel bk = block_kernel(1, K, 1);
  BlockDiagonal acc;
  acc.add(bk);
  CHECK(acc.lambda_max() == Catch::Approx(lambda_max(K)));
  CHECK((acc.dense() - K).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(block_kernel(3, K, 2), InvalidInput);
}

TEST_CASE("block-diagonal spectrum is the max over blocks", "[kernels]") {
  Matrix K1(2, 2), K2(2, 2);
  K1 << 0.5, 0.0, 0.0, 0.25;
  K2 << 2.0, 0.3, 0.3, 1.0;
  BlockDiagonal acc(2, 2);
  acc.add(block_kernel(1, K1, 2), 1.0);
  acc.add(block_kernel(2, K2, 2), 1.0);
  CHECK(acc.lambda_max() ==
        Catch::Approx(std::max(lambda_max(K1), lambda_max(K2))));
  CHECK(acc.lambda_max() == Catch::Approx(lambda_max(acc.dense())));
}

TEST_CASE("block addition accumulates same-class blocks only", "[kernels]") {
  Matrix K = Matrix::Identity(2, 2);
  BlockDiagonal acc(2, 2);
  acc.add(block_kernel(1, K, 2), 1.0);
  acc.add(block_kernel(1, K, 2), 2.0);
  acc.add(block_kernel(2, K, 2), 5.0);
  CHECK((acc.blocks[0] - 3.0 * K).cwiseAbs().maxCoeff() == 0.0);
  CHECK((acc.blocks[1] - 5.0 * K).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kernel cache survives concurrent mixed access", "[kernels]") {
  KernelCache cache(32);
  std::vector<std::thread> threads;
  std::atomic<bool> ok{true};
  for (int w = 0; w < 8; ++w) {
    threads.emplace_back([&, w] {
      SplitMix64 rng(static_cast<std::uint64_t>(w) + 1);
      for (int t = 0; t < 500; ++t) {
        const int i = static_cast<int>(rng.below(6));
        const int j = static_cast<int>(rng.below(6));
        const auto value = cache.get(i, j, [i, j] {
          return Matrix::Constant(2, 2, 10.0 * i + j);
        });
        if ((*value)(0, 0) != 10.0 * i + j) ok = false;
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ok);
  CHECK(cache.size() <= 32);
}

TEST_CASE("kernel cache returns cached values and honors the budget",
          "[kernels]") {
  KernelCache cache(2);
  int computed = 0;
  auto make = [&](double v) {
    return [&computed, v] {
      ++computed;
      return Matrix::Constant(1, 1, v);
    };
  };
  CHECK((*cache.get(0, 1, make(1.0)))(0, 0) == 1.0);
  CHECK((*cache.get(0, 1, make(99.0)))(0, 0) == 1.0);  // hit, not recomputed
  CHECK(computed == 1);
  cache.get(0, 2, make(2.0));
  cache.get(0, 3, make(3.0));  // evicts (0,1)
  CHECK(cache.size() == 2);
  CHECK((*cache.get(0, 1, make(7.0)))(0, 0) == 7.0);
  CHECK(computed == 4);

  KernelCache off(0);
  off.get(0, 1, make(1.0));
  off.get(0, 1, make(1.0));
  CHECK(computed == 6);  // budget 0 never caches
}
