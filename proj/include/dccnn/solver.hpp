#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dccnn/errors.hpp"
#include "dccnn/kernels.hpp"
#include "dccnn/losses.hpp"
#include "dccnn/patches.hpp"

namespace dccnn {

struct SolverOptions {
  /// Bisection tolerance on a dual coefficient, relative to c.
  double binary_search_tol = 1e-6;
  /// Accepted slack on lambda_max <= 1.
  double feasibility_tol = 1e-8;
  int max_bisect_iters = 60;
  /// Coordinate passes; the first pass is the plain greedy algorithm, later
  /// passes re-optimize each coordinate after subtracting its contribution.
  int sweeps = 1;
  enum class CoordinateOrder { ascending_lambda, index };
  CoordinateOrder coordinate_order = CoordinateOrder::ascending_lambda;
  std::size_t kernel_cache_budget = 256;
  /// Extra projected supergradient-ascent steps after the coordinate sweeps.
  /// Cyclic single-coordinate steps can stall below the dual optimum (no
  /// axis-aligned move improves at some boundary points); the polish phase
  /// ascends the exact-penalty objective and keeps the best feasible iterate,
  /// which converges to the optimum of this concave program. 0 disables it.
  int polish_iters = 0;
  /// Verify the bisection bracket invariant after every update.
  bool debug_checks = false;
  /// Called after every coordinate update with (coordinate, objective,
  /// lambda_max of the accumulation).
  std::function<void(int, double, double)> progress;

  void validate() const {
    if (!(binary_search_tol > 0) || !(feasibility_tol > 0))
      throw InvalidInput("solver options: tolerances must be positive");
    if (max_bisect_iters < 1 || sweeps < 1)
      throw InvalidInput("solver options: iteration counts must be >= 1");
  }
};

/// Dual coefficients plus the feasibility certificate of the solve.
/// Binary task: alpha is n x 1 and labels are +-1. Multiclass: alpha is
/// n x m with alpha(i, y_i - 1) = 0 and labels are in [m].
struct DualSolution {
  Matrix alpha;
  Eigen::VectorXi labels;
  int class_count = 0;  // 0 for binary, m >= 2 for multiclass
  double c = 1.0;
  LossSpec loss;
  double final_lambda_max = 0.0;
  double objective = 0.0;
  int sweep_count = 0;

  bool is_multiclass() const { return class_count >= 2; }
  Eigen::Index sample_count() const { return alpha.rows(); }
};

/// S = sum_ij alpha_i alpha_j y_i y_j K(x_i, x_j), symmetrized. Recomputed
/// from scratch; independent of any incremental solver state.
inline Matrix accumulate_quadratic(const Eigen::Ref<const Vector>& alpha,
                                   const Eigen::VectorXi& labels,
                                   const KernelSpec& kernel,
                                   const std::vector<PatchMatrix>& samples) {
  const Eigen::Index n = alpha.size();
  if (labels.size() != n || static_cast<Eigen::Index>(samples.size()) != n)
    throw InvalidInput("accumulate_quadratic: size mismatch");
  if (n == 0) throw EmptyDataset("accumulate_quadratic: no samples");
  const Eigen::Index p = samples[0].entries.cols();
  Matrix S = Matrix::Zero(p, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (alpha[i] == 0.0) continue;
    S += alpha[i] * alpha[i] *
         kernel_generating_matrix(kernel, samples[i], samples[i]);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (alpha[j] == 0.0) continue;
      const Matrix Kij = kernel_generating_matrix(kernel, samples[i], samples[j]);
      const double w = alpha[i] * alpha[j] * labels[i] * labels[j];
      S += w * (Kij + Kij.transpose());
    }
  }
  if (!S.allFinite())
    throw NumericalError("accumulate_quadratic: non-finite accumulation");
  return 0.5 * (S + S.transpose());
}

/// Multiclass accumulation with the folded multipliers
/// alpha'_{k,i} = sum_s alpha_{s,i} [k = y_i] - alpha_{k,i}, kept per class
/// block; the mp x mp matrix is never formed.
inline Matrix folded_multipliers(const Matrix& alpha,
                                 const Eigen::VectorXi& labels) {
  const Eigen::Index n = alpha.rows();
  Matrix ap = -alpha;
  for (Eigen::Index i = 0; i < n; ++i)
    ap(i, labels[i] - 1) += alpha.row(i).sum();
  return ap;  // n x m, column k-1 holds alpha'_{k,.}
}

inline BlockDiagonal accumulate_quadratic_multiclass(
    const Matrix& alpha, const Eigen::VectorXi& labels,
    const KernelSpec& kernel, const std::vector<PatchMatrix>& samples) {
  const Eigen::Index n = alpha.rows();
  const int m = static_cast<int>(alpha.cols());
  if (labels.size() != n || static_cast<Eigen::Index>(samples.size()) != n)
    throw InvalidInput("accumulate_quadratic_multiclass: size mismatch");
  if (n == 0) throw EmptyDataset("accumulate_quadratic_multiclass: no samples");
  const int p = static_cast<int>(samples[0].entries.cols());
  const Matrix ap = folded_multipliers(alpha, labels);
  BlockDiagonal S(m, p);
  for (int k = 0; k < m; ++k) {
    Matrix& B = S.blocks[k];
    for (Eigen::Index i = 0; i < n; ++i) {
      if (ap(i, k) == 0.0) continue;
      B += ap(i, k) * ap(i, k) *
           kernel_generating_matrix(kernel, samples[i], samples[i]);
      for (Eigen::Index j = i + 1; j < n; ++j) {
        if (ap(j, k) == 0.0) continue;
        const Matrix Kij =
            kernel_generating_matrix(kernel, samples[i], samples[j]);
        B += ap(i, k) * ap(j, k) * (Kij + Kij.transpose());
      }
    }
    if (!B.allFinite())
      throw NumericalError("accumulate_quadratic_multiclass: non-finite");
    B = 0.5 * (B + B.transpose()).eval();
  }
  return S;
}

namespace detail {

/// Kernel generating matrices for a fixed sample set, cached by index pair.
/// diag(i) is K(x_i, x_i); pair_sum(i, j) is K(x_i, x_j) + K(x_j, x_i),
/// symmetric in both the matrix and the argument order.
class PairKernels {
 public:
  PairKernels(const std::vector<PatchMatrix>& samples, const KernelSpec& spec,
              std::size_t cache_budget)
      : samples_(samples), spec_(spec), cache_(cache_budget) {}

  std::shared_ptr<const Matrix> diag(int i) {
    return cache_.get(i, i, [&] {
      return kernel_generating_matrix(spec_, samples_[i], samples_[i]);
    });
  }

  std::shared_ptr<const Matrix> pair_sum(int i, int j) {
    const int lo = std::min(i, j);
    const int hi = std::max(i, j);
    return cache_.get(lo, hi, [&] {
      Matrix K = kernel_generating_matrix(spec_, samples_[lo], samples_[hi]);
      return Matrix(K + K.transpose());
    });
  }

 private:
  const std::vector<PatchMatrix>& samples_;
  KernelSpec spec_;
  KernelCache cache_;
};

/// Largest a in [lo, hi] with feasible(a), given feasible(lo) and
/// !feasible(hi). Tolerance is absolute on a.
inline double bisect_largest(const std::function<bool(double)>& feasible,
                             double lo, double hi, double tol, int max_iters) {
  for (int it = 0; it < max_iters && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? lo : hi) = mid;
  }
  return lo;
}

/// Smallest a in [lo, hi] with feasible(a), given !feasible(lo) and
/// feasible(hi).
inline double bisect_smallest(const std::function<bool(double)>& feasible,
                              double lo, double hi, double tol, int max_iters) {
  for (int it = 0; it < max_iters && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? hi : lo) = mid;
  }
  return hi;
}

/// Golden-section maximization of a concave f over [lo, hi].
inline double golden_max(const std::function<double(double)>& f, double lo,
                         double hi, double tol) {
  static const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    }
  }
  const double mid = 0.5 * (a + b);
  // endpoints of the original bracket stay candidates
  double best = mid, fb = f(mid);
  for (double cand : {lo, hi}) {
    const double fc = f(cand);
    if (fc > fb) {
      fb = fc;
      best = cand;
    }
  }
  return best;
}

struct CoordinateResult {
  double value = 0.0;       // accepted coefficient
  double lam = 0.0;         // lambda_max at the accepted value
  double bracket_hi = 0.0;  // upper end used by the bisection
  bool hit_upper = false;   // accepted the full box end
};

/// One-dimensional coordinate subproblem: maximize the concave dual term
/// t(a) over {a in [0, box] : lam(a) <= 1}, where lam is convex in a and the
/// current value a_old is known feasible. The feasible set restricted to the
/// box is an interval; its ends are located by bisection. The paper's greedy
/// step (take the largest feasible a) is recovered for hinge, where t is
/// non-decreasing.
inline CoordinateResult optimize_coordinate(
    const std::function<double(double)>& lam, LossKind kind, double c,
    double a_old, const SolverOptions& opts) {
  const Interval dom = feasible_interval(kind, c);
  const bool bounded = std::isfinite(dom.hi);
  // For unbounded domains the search is capped at t's argmax: t decreases
  // beyond it while feasibility only tightens, so larger values never win.
  const double ub =
      bounded ? dom.hi : std::max(dual_term_argmax(kind, c), a_old);
  const double tol = opts.binary_search_tol * std::max(c, 1.0);
  auto feasible = [&](double a) { return lam(a) <= 1.0; };

  CoordinateResult res;
  double U;
  if (feasible(ub)) {
    U = ub;
    res.hit_upper = true;
  } else if (feasible(a_old)) {
    U = bisect_largest(feasible, a_old, ub, tol, opts.max_bisect_iters);
  } else if (feasible(0.0)) {
    U = bisect_largest(feasible, 0.0, ub, tol, opts.max_bisect_iters);
  } else {
    // Even the removed state is infeasible (floating-point corner); keep the
    // previous value, which restores the prior feasible accumulation.
    res.value = a_old;
    res.lam = lam(a_old);
    res.bracket_hi = ub;
    return res;
  }
  res.bracket_hi = ub;

  // The bisection assumes the feasible set meets [0, ub] in one interval
  // (true when lam is convex with a feasible point, which holds for PSD
  // diagonal kernels). Probe a few points beyond U; any feasible hit means
  // the assumption failed and a full grid scan decides instead.
  if (!res.hit_upper) {
    bool monotone = true;
    for (int q = 1; q <= 4; ++q) {
      const double probe = U + (ub - U) * q / 5.0;
      if (probe > U + tol && feasible(probe)) {
        monotone = false;
        break;
      }
    }
    if (!monotone) {
      const int grid = 128;
      double best = U;
      for (int q = 0; q <= grid; ++q) {
        const double a = ub * q / grid;
        if (feasible(a)) best = std::max(best, a);
      }
      U = best;
    }
  }

  if (kind == LossKind::hinge) {
    res.value = U;
  } else {
    double L = 0.0;
    if (!feasible(0.0))
      L = bisect_smallest(feasible, 0.0, std::min(a_old, U), tol,
                          opts.max_bisect_iters);
    res.value = golden_max(
        [&](double a) { return dual_coordinate_term(kind, a, c); }, L, U, tol);
  }
  res.lam = lam(res.value);
  return res;
}

/// Slope of the per-coordinate dual term, clamped so the boundary slopes of
/// the entropy-like terms stay usable in gradient steps.
inline double dual_term_slope(LossKind kind, double alpha, double c) {
  constexpr double kCap = 1e6;
  switch (kind) {
    case LossKind::hinge:
      return 1.0;
    case LossKind::squared_hinge:
      return 1.0 - alpha / (2.0 * c);
    case LossKind::logistic: {
      const double u = std::clamp(alpha / c, 1e-12, 1.0 - 1e-12);
      return std::clamp(std::log((1.0 - u) / u), -kCap, kCap);
    }
    case LossKind::exponential: {
      const double u = std::max(alpha / c, 1e-300);
      return std::clamp(-std::log(u), -kCap, kCap);
    }
  }
  throw InvalidInput("dual_term_slope: unknown loss");
}

struct TopEig {
  double value;
  Vector vec;
};

inline TopEig top_eigenpair(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (S + S.transpose()));
  if (es.info() != Eigen::Success)
    throw NumericalError("top_eigenpair: eigendecomposition failed");
  const Eigen::Index last = es.eigenvalues().size() - 1;
  return {es.eigenvalues()[last], es.eigenvectors().col(last)};
}

/// Ellipsoid maximization of a concave objective over
/// {x in [0, box_hi]^d : g(x) <= 1} with g convex. Feasible candidates are
/// scored from each center: clamp to the box, then shrink onto the constraint
/// (g is quadratic-homogeneous here, so x / sqrt(g(x)) is exactly feasible
/// and stays in the box). Guaranteed global convergence at these tiny
/// dimensions, unlike axis-aligned coordinate steps, which can stall on the
/// coupled constraint boundary.
struct EllipsoidProblem {
  int dim = 0;
  double box_hi = 1.0;
  std::function<double(const Vector&)> constraint;       // lambda_max form
  std::function<Vector(const Vector&)> constraint_grad;  // its subgradient
  std::function<double(const Vector&)> objective;
  std::function<Vector(const Vector&)> objective_grad;
};

inline Vector ellipsoid_max(const EllipsoidProblem& pr, const Vector& start,
                            int max_iters,
                            const std::function<void(double, double)>& report) {
  const int d = pr.dim;
  Vector best = start;
  double best_obj = pr.objective(start);
  if (d < 2 || max_iters < 1) return best;

  const double R = 0.5 * pr.box_hi * std::sqrt(static_cast<double>(d)) * 1.01;
  Vector x = Vector::Constant(d, 0.5 * pr.box_hi);
  Matrix P = R * R * Matrix::Identity(d, d);
  const double dd = static_cast<double>(d);

  for (int it = 0; it < max_iters; ++it) {
    // score the feasible point induced by this center
    Vector cand = x.cwiseMax(0.0).cwiseMin(pr.box_hi);
    const double lam_cand = pr.constraint(cand);
    if (lam_cand > 1.0) cand /= std::sqrt(lam_cand);
    const double obj = pr.objective(cand);
    if (obj > best_obj) {
      best_obj = obj;
      best = cand;
    }
    if (report) report(best_obj, std::min(lam_cand, 1.0));

    // separation cut
    Vector h;
    int viol = -1;
    for (int i = 0; i < d; ++i)
      if (x[i] < 0.0 || x[i] > pr.box_hi) {
        viol = i;
        break;
      }
    if (viol >= 0) {
      h = Vector::Zero(d);
      h[viol] = x[viol] < 0.0 ? -1.0 : 1.0;
    } else if (pr.constraint(x) > 1.0) {
      h = pr.constraint_grad(x);
    } else {
      h = -pr.objective_grad(x);
    }

    const double hPh = h.dot(P * h);
    if (!(hPh > 1e-40)) break;  // ellipsoid collapsed
    const Vector Ph = P * h / std::sqrt(hPh);
    x -= Ph / (dd + 1.0);
    P = (dd * dd / (dd * dd - 1.0)) *
        (P - (2.0 / (dd + 1.0)) * Ph * Ph.transpose());
    P = 0.5 * (P + P.transpose()).eval();
  }
  return best;
}

inline Vector polish_binary(Vector alpha, const Eigen::VectorXi& labels,
                            LossKind kind, double c, int p,
                            PairKernels& kernels, const SolverOptions& opts) {
  const int n = static_cast<int>(alpha.size());
  const Interval dom = feasible_interval(kind, c);
  const double box_hi =
      std::isfinite(dom.hi) ? dom.hi : 4.0 * dual_term_argmax(kind, c);

  auto build_S = [&](const Vector& a) {
    Matrix S = Matrix::Zero(p, p);
    for (int i = 0; i < n; ++i) {
      if (a[i] == 0.0) continue;
      S += a[i] * a[i] * *kernels.diag(i);
      for (int j = i + 1; j < n; ++j)
        if (a[j] != 0.0)
          S += (a[i] * a[j] * labels[i] * labels[j]) * *kernels.pair_sum(i, j);
    }
    return S;
  };

  EllipsoidProblem pr;
  pr.dim = n;
  pr.box_hi = box_hi;
  pr.constraint = [&](const Vector& a) {
    return top_eigenpair(build_S(a)).value;
  };
  pr.constraint_grad = [&](const Vector& a) {
    const TopEig top = top_eigenpair(build_S(a));
    Vector g(n);
    for (int i = 0; i < n; ++i) {
      double v = 2.0 * a[i] * top.vec.dot(*kernels.diag(i) * top.vec);
      for (int j = 0; j < n; ++j) {
        if (j == i || a[j] == 0.0) continue;
        v += a[j] * labels[i] * labels[j] *
             top.vec.dot(*kernels.pair_sum(i, j) * top.vec);
      }
      g[i] = v;
    }
    return g;
  };
  pr.objective = [&](const Vector& a) {
    double o = 0.0;
    for (int i = 0; i < n; ++i) o += dual_coordinate_term(kind, a[i], c);
    return o;
  };
  pr.objective_grad = [&](const Vector& a) {
    Vector g(n);
    for (int i = 0; i < n; ++i) g[i] = dual_term_slope(kind, a[i], c);
    return g;
  };

  std::function<void(double, double)> report;
  if (opts.progress)
    report = [&](double obj, double lam) { opts.progress(-1, obj, lam); };
  return ellipsoid_max(pr, alpha, opts.polish_iters, report);
}

/// Multiclass polish: same ellipsoid ascent over the free coordinates
/// (alpha_{k,i} with k != y_i, flattened). The constraint is the worst class
/// block's largest eigenvalue; its subgradient reaches alpha through the
/// folded multipliers (moving alpha_{k,i} moves blocks k and y_i in opposite
/// directions), and folding is linear so homogeneous rescaling still works.
inline Matrix polish_multiclass(Matrix alpha, const Eigen::VectorXi& labels,
                                LossKind kind, double c, int p, int m,
                                PairKernels& kernels,
                                const SolverOptions& opts) {
  const int n = static_cast<int>(alpha.rows());
  const Interval dom = feasible_interval(kind, c);
  const double box_hi =
      std::isfinite(dom.hi) ? dom.hi : 4.0 * dual_term_argmax(kind, c);
  const int dim = n * (m - 1);

  std::vector<std::pair<int, int>> coords;  // flattened (i, k), k != y_i
  coords.reserve(static_cast<std::size_t>(dim));
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < m; ++k)
      if (k != labels[i] - 1) coords.emplace_back(i, k);

  auto unflatten = [&](const Vector& x) {
    Matrix a = Matrix::Zero(n, m);
    for (int q = 0; q < dim; ++q) a(coords[q].first, coords[q].second) = x[q];
    return a;
  };
  auto flatten = [&](const Matrix& a) {
    Vector x(dim);
    for (int q = 0; q < dim; ++q) x[q] = a(coords[q].first, coords[q].second);
    return x;
  };
  auto fold = [&](const Matrix& a) {
    Matrix ap = -a;
    for (int i = 0; i < n; ++i) ap(i, labels[i] - 1) += a.row(i).sum();
    return ap;
  };
  auto build_block = [&](const Matrix& ap, int k) {
    Matrix B = Matrix::Zero(p, p);
    for (int i = 0; i < n; ++i) {
      if (ap(i, k) == 0.0) continue;
      B += ap(i, k) * ap(i, k) * *kernels.diag(i);
      for (int j = i + 1; j < n; ++j)
        if (ap(j, k) != 0.0)
          B += ap(i, k) * ap(j, k) * *kernels.pair_sum(i, j);
    }
    return B;
  };
  auto worst_block = [&](const Matrix& ap) {
    double lam = 0.0;
    int worst = 0;
    TopEig top{0.0, Vector::Zero(p)};
    for (int k = 0; k < m; ++k) {
      const TopEig e = top_eigenpair(build_block(ap, k));
      if (e.value > lam) {
        lam = e.value;
        worst = k;
        top = e;
      }
    }
    return std::tuple<double, int, TopEig>(lam, worst, top);
  };

  EllipsoidProblem pr;
  pr.dim = dim;
  pr.box_hi = box_hi;
  pr.constraint = [&](const Vector& x) {
    return std::get<0>(worst_block(fold(unflatten(x))));
  };
  pr.constraint_grad = [&](const Vector& x) {
    const Matrix ap = fold(unflatten(x));
    const auto [lam, worst, top] = worst_block(ap);
    (void)lam;
    std::vector<double> dprime(n, 0.0);
    for (int i = 0; i < n; ++i) {
      double d = 2.0 * ap(i, worst) * top.vec.dot(*kernels.diag(i) * top.vec);
      for (int j = 0; j < n; ++j) {
        if (j == i || ap(j, worst) == 0.0) continue;
        d += ap(j, worst) * top.vec.dot(*kernels.pair_sum(i, j) * top.vec);
      }
      dprime[i] = d;
    }
    Vector g(dim);
    for (int q = 0; q < dim; ++q) {
      const auto [i, k] = coords[q];
      const int yi = labels[i] - 1;
      g[q] = dprime[i] *
             ((worst == yi ? 1.0 : 0.0) - (worst == k ? 1.0 : 0.0));
    }
    return g;
  };
  pr.objective = [&](const Vector& x) {
    double o = 0.0;
    for (int q = 0; q < dim; ++q)
      o += dual_coordinate_term(kind, x[q], c);
    return o;
  };
  pr.objective_grad = [&](const Vector& x) {
    Vector g(dim);
    for (int q = 0; q < dim; ++q) g[q] = dual_term_slope(kind, x[q], c);
    return g;
  };

  std::function<void(double, double)> report;
  if (opts.progress)
    report = [&](double obj, double lam) { opts.progress(-1, obj, lam); };
  const Vector best = ellipsoid_max(pr, flatten(alpha), opts.polish_iters,
                                    report);
  return unflatten(best);
}

inline std::vector<int> coordinate_order(PairKernels& kernels, int n,
                                         const SolverOptions& opts) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (opts.coordinate_order == SolverOptions::CoordinateOrder::index)
    return order;
  std::vector<double> lam(n);
  for (int i = 0; i < n; ++i) lam[i] = lambda_max(*kernels.diag(i));
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return lam[a] < lam[b]; });
  return order;
}

}  // namespace detail

/// Coordinate descent on the binary dual: maximize -c sum_i l*(-alpha_i/c)
/// subject to lambda_max(sum_ij alpha_i alpha_j y_i y_j K(x_i,x_j)) <= 1 and
/// alpha in its box. Coordinates are visited in ascending order of
/// lambda_max(K(x_i,x_i)); each step takes the box end if feasible and
/// otherwise searches the largest feasible coefficient (hinge) or the
/// constrained maximizer of the conjugate term (other losses).
inline DualSolution solve_dual(const std::vector<PatchMatrix>& samples,
                               const Eigen::VectorXi& labels,
                               const KernelSpec& kernel, const LossSpec& loss,
                               double c, const SolverOptions& opts = {}) {
  opts.validate();
  kernel.validate();
  if (!(c > 0)) throw InvalidInput("solve_dual: c must be positive");
  const int n = static_cast<int>(samples.size());
  if (n == 0) throw EmptyDataset("solve_dual: empty dataset");
  if (labels.size() != n) throw InvalidInput("solve_dual: label count mismatch");
  for (int i = 0; i < n; ++i)
    if (labels[i] != 1 && labels[i] != -1)
      throw InvalidInput("solve_dual: binary labels must be +-1");

  const int p = static_cast<int>(samples[0].entries.cols());
  detail::PairKernels kernels(samples, kernel, opts.kernel_cache_budget);
  const std::vector<int> order = detail::coordinate_order(kernels, n, opts);

  Vector alpha = Vector::Zero(n);
  Matrix R = Matrix::Zero(p, p);
  // alpha = 0 is feasible: lambda_max(0) = 0 <= 1.
  double objective = 0.0;
  double lam_now = 0.0;

  for (int sweep = 0; sweep < opts.sweeps; ++sweep) {
    for (int i : order) {
      const std::shared_ptr<const Matrix> Kii = kernels.diag(i);
      Matrix T = Matrix::Zero(p, p);
      for (int j = 0; j < n; ++j) {
        if (j == i || alpha[j] == 0.0) continue;
        T += (alpha[j] * labels[i] * labels[j]) * *kernels.pair_sum(i, j);
      }
      const double a_old = alpha[i];
      if (a_old != 0.0) R -= a_old * a_old * *Kii + a_old * T;

      auto lam = [&](double a) -> double {
        return lambda_max(R + a * a * *Kii + a * T);
      };
      const detail::CoordinateResult step =
          detail::optimize_coordinate(lam, loss.kind, c, a_old, opts);

      alpha[i] = step.value;
      if (step.value != 0.0) R += step.value * step.value * *Kii + step.value * T;
      objective += dual_coordinate_term(loss.kind, step.value, c) -
                   dual_coordinate_term(loss.kind, a_old, c);
      lam_now = step.lam;

      if (lam_now > 1.0 + opts.feasibility_tol)
        throw NumericalError("solve_dual: feasibility lost at coordinate " +
                             std::to_string(i));
      if (opts.debug_checks && !step.hit_upper) {
        const double tol = opts.binary_search_tol * std::max(c, 1.0);
        const double beyond = step.value + tol;
        if (beyond < step.bracket_hi && lam(beyond) <= 1.0 &&
            loss.kind == LossKind::hinge)
          throw NumericalError(
              "solve_dual: bracket invariant violated at coordinate " +
              std::to_string(i));
      }
      if (opts.progress) opts.progress(i, objective, lam_now);
    }
  }

  if (opts.polish_iters > 0) {
    alpha = detail::polish_binary(std::move(alpha), labels, loss.kind, c, p,
                                  kernels, opts);
    R = Matrix::Zero(p, p);
    for (int i = 0; i < n; ++i) {
      if (alpha[i] == 0.0) continue;
      R += alpha[i] * alpha[i] * *kernels.diag(i);
      for (int j = i + 1; j < n; ++j)
        if (alpha[j] != 0.0)
          R += (alpha[i] * alpha[j] * labels[i] * labels[j]) *
               *kernels.pair_sum(i, j);
    }
  }

  DualSolution sol;
  sol.alpha = alpha;
  sol.labels = labels;
  sol.class_count = 0;
  sol.c = c;
  sol.loss = loss;
  sol.final_lambda_max = lambda_max(R);
  sol.objective = dual_objective(loss, alpha, c);
  sol.sweep_count = opts.sweeps;
  return sol;
}

/// Coordinate descent on the multiclass dual (one coefficient per sample and
/// non-target class). The constraint matrix is block diagonal with one p x p
/// block per class; its largest eigenvalue is the max over per-block values,
/// so blocks are updated independently and the mp x mp form never exists.
/// Updating alpha_{k,i} moves two blocks at once: block k through
/// alpha'_{k,i} = -alpha_{k,i} and block y_i through
/// alpha'_{y_i,i} = sum_{s != y_i} alpha_{s,i}.
inline DualSolution solve_dual_multiclass(
    const std::vector<PatchMatrix>& samples, const Eigen::VectorXi& labels,
    const KernelSpec& kernel, const LossSpec& loss, double c, int class_count,
    const SolverOptions& opts = {}) {
  opts.validate();
  kernel.validate();
  if (!(c > 0)) throw InvalidInput("solve_dual_multiclass: c must be positive");
  if (class_count < 2)
    throw InvalidInput("solve_dual_multiclass: class count must be >= 2");
  const int n = static_cast<int>(samples.size());
  if (n == 0) throw EmptyDataset("solve_dual_multiclass: empty dataset");
  if (labels.size() != n)
    throw InvalidInput("solve_dual_multiclass: label count mismatch");
  for (int i = 0; i < n; ++i)
    if (labels[i] < 1 || labels[i] > class_count)
      throw InvalidInput("solve_dual_multiclass: label out of range at " +
                         std::to_string(i));

  const int m = class_count;
  const int p = static_cast<int>(samples[0].entries.cols());
  detail::PairKernels kernels(samples, kernel, opts.kernel_cache_budget);
  const std::vector<int> order = detail::coordinate_order(kernels, n, opts);

  Matrix alpha = Matrix::Zero(n, m);
  Matrix aprime = Matrix::Zero(n, m);  // folded multipliers, kept in sync
  std::vector<Matrix> B(m, Matrix::Zero(p, p));
  std::vector<double> lam_block(m, 0.0);
  double objective = 0.0;

  for (int sweep = 0; sweep < opts.sweeps; ++sweep) {
    for (int i : order) {
      const int yi = labels[i] - 1;
      const std::shared_ptr<const Matrix> Kii = kernels.diag(i);

      // Per-block cross terms against every other sample; shared by all of
      // sample i's coordinates since they only move sample i's multipliers.
      std::vector<Matrix> T(m, Matrix::Zero(p, p));
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        bool any = false;
        for (int l = 0; l < m; ++l) any = any || aprime(j, l) != 0.0;
        if (!any) continue;
        const std::shared_ptr<const Matrix> P = kernels.pair_sum(i, j);
        for (int l = 0; l < m; ++l)
          if (aprime(j, l) != 0.0) T[l] += aprime(j, l) * *P;
      }
      std::vector<Matrix> Bny(m);  // block l without sample i's contribution
      for (int l = 0; l < m; ++l) {
        const double w = aprime(i, l);
        Bny[l] = B[l];
        if (w != 0.0) Bny[l] -= w * w * *Kii + w * T[l];
      }
      auto block_lam = [&](int l, double w) -> double {
        return lambda_max(Bny[l] + w * w * *Kii + w * T[l]);
      };
      for (int l = 0; l < m; ++l) lam_block[l] = block_lam(l, aprime(i, l));

      for (int k = 0; k < m; ++k) {
        if (k == yi) continue;
        const double a_old = alpha(i, k);
        const double base = alpha.row(i).sum() - a_old;  // alpha'_{y_i,i} - a
        double lam_rest = 0.0;
        for (int l = 0; l < m; ++l)
          if (l != k && l != yi) lam_rest = std::max(lam_rest, lam_block[l]);

        auto lam = [&](double a) -> double {
          const double lk = block_lam(k, -a);
          const double ly = block_lam(yi, base + a);
          return std::max({lk, ly, lam_rest});
        };
        const detail::CoordinateResult step =
            detail::optimize_coordinate(lam, loss.kind, c, a_old, opts);

        alpha(i, k) = step.value;
        aprime(i, k) = -step.value;
        aprime(i, yi) = base + step.value;
        lam_block[k] = block_lam(k, aprime(i, k));
        lam_block[yi] = block_lam(yi, aprime(i, yi));
        objective += dual_coordinate_term(loss.kind, step.value, c) -
                     dual_coordinate_term(loss.kind, a_old, c);

        if (step.lam > 1.0 + opts.feasibility_tol)
          throw NumericalError(
              "solve_dual_multiclass: feasibility lost at sample " +
              std::to_string(i));
        if (opts.progress) opts.progress(i * m + k, objective, step.lam);
      }

      for (int l = 0; l < m; ++l) {
        const double w = aprime(i, l);
        B[l] = Bny[l];
        if (w != 0.0) B[l] += w * w * *Kii + w * T[l];
      }
    }
  }

  if (opts.polish_iters > 0) {
    alpha = detail::polish_multiclass(std::move(alpha), labels, loss.kind, c,
                                      p, m, kernels, opts);
    aprime = folded_multipliers(alpha, labels);
    for (int l = 0; l < m; ++l) {
      B[l].setZero();
      for (int i = 0; i < n; ++i) {
        if (aprime(i, l) == 0.0) continue;
        B[l] += aprime(i, l) * aprime(i, l) * *kernels.diag(i);
        for (int j = i + 1; j < n; ++j)
          if (aprime(j, l) != 0.0)
            B[l] += aprime(i, l) * aprime(j, l) * *kernels.pair_sum(i, j);
      }
    }
  }

  DualSolution sol;
  sol.alpha = alpha;
  sol.labels = labels;
  sol.class_count = m;
  sol.c = c;
  sol.loss = loss;
  double lam_final = 0.0;
  for (int l = 0; l < m; ++l) lam_final = std::max(lam_final, lambda_max(B[l]));
  sol.final_lambda_max = lam_final;
  sol.objective = 0.0;
  for (int i = 0; i < n; ++i)
    sol.objective += dual_objective(loss, alpha.row(i).transpose(), c) ;
  sol.sweep_count = opts.sweeps;
  return sol;
}

/// Feasibility report built from a from-scratch recomputation of the
/// accumulated quadratic form, independent of the solver's incremental state.
struct FeasibilityReport {
  double lambda_max = 0.0;
  double slack = 0.0;  // 1 - lambda_max
  std::vector<std::size_t> box_violations;
  double max_box_residual = 0.0;

  bool feasible(double tol) const {
    return slack >= -tol && box_violations.empty();
  }
};

inline FeasibilityReport verify_feasibility(
    const DualSolution& sol, const std::vector<PatchMatrix>& samples,
    const KernelSpec& kernel) {
  FeasibilityReport rep;
  const Interval box = feasible_interval(sol.loss.kind, sol.c);
  if (sol.is_multiclass()) {
    const BlockDiagonal S = accumulate_quadratic_multiclass(
        sol.alpha, sol.labels, kernel, samples);
    rep.lambda_max = S.lambda_max();
    for (Eigen::Index i = 0; i < sol.alpha.rows(); ++i)
      for (Eigen::Index k = 0; k < sol.alpha.cols(); ++k) {
        const double a = sol.alpha(i, k);
        double resid = std::max(box.lo - a, a - box.hi);
        if (k == sol.labels[i] - 1) resid = std::max(resid, std::abs(a));
        if (resid > 0.0) {
          rep.box_violations.push_back(
              static_cast<std::size_t>(i * sol.alpha.cols() + k));
          rep.max_box_residual = std::max(rep.max_box_residual, resid);
        }
      }
  } else {
    const Matrix S =
        accumulate_quadratic(sol.alpha.col(0), sol.labels, kernel, samples);
    rep.lambda_max = lambda_max(S);
    for (Eigen::Index i = 0; i < sol.alpha.rows(); ++i) {
      const double a = sol.alpha(i, 0);
      const double resid = std::max(box.lo - a, a - box.hi);
      if (resid > 0.0) {
        rep.box_violations.push_back(static_cast<std::size_t>(i));
        rep.max_box_residual = std::max(rep.max_box_residual, resid);
      }
    }
  }
  rep.slack = 1.0 - rep.lambda_max;
  return rep;
}

}  // namespace dccnn
