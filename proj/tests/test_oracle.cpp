#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "dccnn/data.hpp"
#include "dccnn/oracle.hpp"
#include "dccnn/verification.hpp"

using namespace dccnn;

namespace {

PatchMatrix random_patches(SplitMix64& rng, int d1, int p) {
  PatchMatrix Z;
  Z.entries = Matrix(d1, p);
  for (int a = 0; a < d1; ++a)
    for (int b = 0; b < p; ++b) Z.entries(a, b) = rng.symmetric();
  return normalize_patches(std::move(Z));
}

}  // namespace

TEST_CASE("explicit maps reproduce their kernels", "[oracle]") {
  SplitMix64 rng(81);
  const struct {
    ExplicitFeatureMap fmap;
  } cases[] = {{ExplicitFeatureMap::identity()},
               {ExplicitFeatureMap::polynomial(1, 0.7)},
               {ExplicitFeatureMap::polynomial(2, 0.4)}};
  for (const auto& [fmap] : cases) {
    const KernelSpec spec = fmap.matching_kernel();
    for (int t = 0; t < 100; ++t) {
      Vector u(3), v(3);
      for (int i = 0; i < 3; ++i) {
        u[i] = rng.symmetric();
        v[i] = rng.symmetric();
      }
      CHECK(fmap.apply(u).dot(fmap.apply(v)) ==
            Catch::Approx(kernel_eval(spec, u, v)).margin(1e-12));
    }
  }
}

TEST_CASE("generating matrix equals the explicit feature gram", "[oracle]") {
  SplitMix64 rng(82);
  const PatchMatrix Zi = random_patches(rng, 3, 4);
  const PatchMatrix Zj = random_patches(rng, 3, 4);
  for (const ExplicitFeatureMap& fmap :
       {ExplicitFeatureMap::identity(), ExplicitFeatureMap::polynomial(2, 0.3)}) {
    const Matrix K =
        kernel_generating_matrix(fmap.matching_kernel(), Zi, Zj);
    const Matrix G =
        fmap.feature_matrix(Zi).transpose() * fmap.feature_matrix(Zj);
    CHECK((K - G).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("singular-value thresholding minimizes the prox objective",
          "[oracle]") {
  SplitMix64 rng(83);
  for (double tau : {0.1, 0.5, 2.0}) {
    Matrix M(4, 3);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) M(i, j) = 2.0 * rng.symmetric();
    const Matrix X = svt(M, tau);
    auto prox_obj = [&](const Matrix& Y) {
      return tau * nuclear_norm(Y) + 0.5 * (Y - M).squaredNorm();
    };
    const double best = prox_obj(X);
    for (int t = 0; t < 500; ++t) {
      Matrix Y = X;
      const double scale = t < 250 ? 0.1 : 1.0;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) Y(i, j) += scale * rng.symmetric();
      REQUIRE(prox_obj(Y) >= best - 1e-12);
    }
  }
}

TEST_CASE("vanishing c shrinks the primal to zero", "[oracle]") {
  const TinyInstance inst = make_tiny_instance(84, 1, 3, 2, 0);
  const double c = 1e-6;
  PrimalOptions opts;
  opts.max_iters = 20000;
  const PrimalSolution sol = primal_solve(
      inst.patches, inst.labels, ExplicitFeatureMap::identity(), {}, c, opts);
  CHECK(sol.A_hat.cwiseAbs().maxCoeff() <= 1e-6);
  // hinge loss at zero margin is 1, so the objective tends to c * n * 1
  CHECK(sol.objective == Catch::Approx(c).epsilon(1e-3));
}

TEST_CASE("large c drives hinge losses of a separable instance to zero",
          "[oracle]") {
  const TinyInstance inst = make_tiny_instance(85, 4, 3, 2, 0);
  PrimalOptions opts = calibrated_primal_options();
  opts.max_iters = 300000;
  const PrimalSolution sol =
      primal_solve(inst.patches, inst.labels, ExplicitFeatureMap::identity(),
                   {}, 50.0, opts);
  std::vector<Matrix> Phi;
  double loss_total = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Matrix phi = inst.patches[i].entries;  // identity map
    const double margin = inst.labels[i] * phi.cwiseProduct(sol.A_hat).sum();
    loss_total += margin_loss_value(LossKind::hinge, margin);
  }
  CHECK(loss_total <= 1e-6);
  CHECK(sol.objective ==
        Catch::Approx(nuclear_norm(sol.A_hat)).margin(1e-4));
}

TEST_CASE("stored primal objective matches an independent recomputation",
          "[oracle]") {
  const TinyInstance inst = make_tiny_instance(86, 5, 3, 2, 0);
  PrimalOptions opts;
  opts.max_iters = 50000;
  const ExplicitFeatureMap fmap = ExplicitFeatureMap::identity();
  const PrimalSolution sol =
      primal_solve(inst.patches, inst.labels, fmap, {}, 1.0, opts);
  std::vector<Matrix> Phi;
  for (const PatchMatrix& Z : inst.patches)
    Phi.push_back(fmap.feature_matrix(Z));
  const double recomputed =
      primal_objective(sol.A_hat, Phi, inst.labels, {}, 1.0);
  CHECK(std::abs(recomputed - sol.objective) <= 1e-10);
}

TEST_CASE("the returned iterate beats random nuclear-norm-bounded probes",
          "[oracle]") {
  const TinyInstance inst = make_tiny_instance(87, 5, 3, 2, 0);
  const ExplicitFeatureMap fmap = ExplicitFeatureMap::identity();
  PrimalOptions opts;
  opts.max_iters = 100000;
  opts.stages = 3;
  const PrimalSolution sol =
      primal_solve(inst.patches, inst.labels, fmap, {}, 1.0, opts);
  std::vector<Matrix> Phi;
  for (const PatchMatrix& Z : inst.patches)
    Phi.push_back(fmap.feature_matrix(Z));
  SplitMix64 rng(871);
  const double limit = nuclear_norm(sol.A_hat) + 1.0;
  for (int t = 0; t < 50; ++t) {
    Matrix probe(sol.A_hat.rows(), sol.A_hat.cols());
    for (Eigen::Index i = 0; i < probe.size(); ++i)
      probe.data()[i] = rng.symmetric();
    const double nn = nuclear_norm(probe);
    if (nn > limit) probe *= limit * rng.uniform() / nn;
    REQUIRE(primal_objective(probe, Phi, inst.labels, {}, 1.0) >=
            sol.objective - 1e-9);
  }
}

TEST_CASE("longer runs never worsen the best objective", "[oracle]") {
  const TinyInstance inst = make_tiny_instance(88, 5, 3, 2, 0);
  PrimalOptions short_opts;
  short_opts.max_iters = 5000;
  short_opts.plateau_tol = 0.0;
  PrimalOptions long_opts = short_opts;
  long_opts.max_iters = 20000;
  const PrimalSolution a = primal_solve(
      inst.patches, inst.labels, ExplicitFeatureMap::identity(), {}, 1.0,
      short_opts);
  const PrimalSolution b = primal_solve(
      inst.patches, inst.labels, ExplicitFeatureMap::identity(), {}, 1.0,
      long_opts);
  CHECK(b.objective <= a.objective + 1e-15);
}

TEST_CASE("weak duality and the zero-dual gap", "[oracle]") {
  const TinyInstance inst = make_tiny_instance(89, 4, 3, 2, 0);
  PrimalOptions popts;
  popts.max_iters = 50000;
  const PrimalSolution primal = primal_solve(
      inst.patches, inst.labels, ExplicitFeatureMap::identity(), {}, 1.0,
      popts);

  DualSolution zero;
  zero.class_count = 0;
  zero.c = 1.0;
  zero.alpha = Matrix::Zero(4, 1);
  zero.labels = inst.labels;
  zero.objective = 0.0;
  const double gap = duality_gap(primal, zero);
  CHECK(gap == Catch::Approx(primal.objective));
  CHECK(gap >= 0.0);

  SolverOptions sopts;
  sopts.polish_iters = 2000;
  const DualSolution dual = solve_dual(inst.patches, inst.labels,
                                       KernelSpec::linear(), {}, 1.0, sopts);
  CHECK(duality_gap(primal, dual) >= -1e-8);
}

TEST_CASE("gap computation rejects mismatched instances", "[oracle]") {
  const TinyInstance inst = make_tiny_instance(90, 4, 3, 2, 0);
  PrimalOptions popts;
  popts.max_iters = 1000;
  const PrimalSolution primal = primal_solve(
      inst.patches, inst.labels, ExplicitFeatureMap::identity(), {}, 1.0,
      popts);
  DualSolution dual;
  dual.class_count = 0;
  dual.c = 2.0;  // different hyperparameter
  dual.alpha = Matrix::Zero(4, 1);
  dual.labels = inst.labels;
  CHECK_THROWS_AS(duality_gap(primal, dual), InvalidInput);
}

TEST_CASE("rank-zero optimum marks the comparison degenerate-agreed",
          "[oracle]") {
  const TinyInstance inst = make_tiny_instance(91, 3, 3, 2, 0);
  PrimalOptions popts;
  popts.max_iters = 20000;
  const PrimalSolution primal =
      primal_solve(inst.patches, inst.labels, ExplicitFeatureMap::identity(),
                   {}, 1e-7, popts);
  const RecoveryComparison cmp = compare_recovery(
      primal, std::nullopt, {}, inst.patches, ExplicitFeatureMap::identity());
  CHECK(cmp.oracle_rank == 0);
  CHECK(cmp.degenerate_agreed);
}

TEST_CASE("seeded duality cases pass and the corrupt control fails",
          "[oracle][verification]") {
  VerifyOptions opts;
  opts.primal.max_iters = 200000;
  const DualityCaseResult good = run_duality_case(7, opts);
  CHECK(good.ok());
  CHECK(good.relative_gap <= 1e-3);

  VerifyOptions corrupt = opts;
  corrupt.inject_corrupt_alpha = true;
  const DualityCaseResult bad = run_duality_case(7, corrupt);
  CHECK_FALSE(bad.ok());
}

TEST_CASE("single-seed verification is reproducible", "[oracle][verification]") {
  VerifyOptions opts;
  opts.primal.max_iters = 100000;
  const DualityCaseResult a = run_duality_case(12, opts);
  const DualityCaseResult b = run_duality_case(12, opts);
  CHECK(a.relative_gap == b.relative_gap);
  CHECK(a.max_angle == b.max_angle);
  CHECK(a.product_deviation == b.product_deviation);
}
