#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dccnn/errors.hpp"
#include "dccnn/kernels.hpp"
#include "dccnn/losses.hpp"
#include "dccnn/patches.hpp"
#include "dccnn/recovery.hpp"
#include "dccnn/solver.hpp"

namespace dccnn {

/// Explicit finite-dimensional feature map matching a KernelSpec; the oracle
/// works in feature space directly, so it exists only for kernels whose basis
/// is finite and small.
struct ExplicitFeatureMap {
  enum class Kind { identity, polynomial_expansion };
  Kind kind = Kind::identity;
  int degree = 2;      // polynomial_expansion, 1 or 2
  double offset = 1.0; // polynomial_expansion

  static ExplicitFeatureMap identity() { return {}; }
  static ExplicitFeatureMap polynomial(int degree, double offset) {
    if (degree < 1 || degree > 2)
      throw InvalidInput("ExplicitFeatureMap: expansion supports degree 1 or 2");
    ExplicitFeatureMap f;
    f.kind = Kind::polynomial_expansion;
    f.degree = degree;
    f.offset = offset;
    return f;
  }

  int feature_dim(int d1) const {
    if (kind == Kind::identity) return d1;
    return degree == 1 ? d1 + 1 : d1 * d1 + d1 + 1;
  }

  KernelSpec matching_kernel() const {
    if (kind == Kind::identity) return KernelSpec::linear();
    return KernelSpec::polynomial(degree, offset);
  }

  Vector apply(const Eigen::Ref<const Vector>& z) const {
    if (kind == Kind::identity) return z;
    const int d1 = static_cast<int>(z.size());
    Vector phi(feature_dim(d1));
    if (degree == 1) {
      phi.head(d1) = z;
      phi[d1] = std::sqrt(offset);
      return phi;
    }
    for (int a = 0; a < d1; ++a)
      for (int b = 0; b < d1; ++b) phi[a * d1 + b] = z[a] * z[b];
    phi.segment(d1 * d1, d1) = std::sqrt(2.0 * offset) * z;
    phi[d1 * d1 + d1] = offset;
    return phi;
  }

  /// Phi(x): columns are feature vectors of the sample's patches.
  Matrix feature_matrix(const PatchMatrix& Z) const {
    const int p = static_cast<int>(Z.entries.cols());
    Matrix Phi(feature_dim(static_cast<int>(Z.entries.rows())), p);
    for (int j = 0; j < p; ++j) Phi.col(j) = apply(Z.entries.col(j));
    return Phi;
  }
};

/// Proximal map of tau * nuclear norm: soft-thresholds the singular values.
inline Matrix svt(const Matrix& M, double tau) {
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Vector s = (svd.singularValues().array() - tau).max(0.0);
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

inline double nuclear_norm(const Matrix& M) {
  return Eigen::JacobiSVD<Matrix>(M).singularValues().sum();
}

struct PrimalOptions {
  int max_iters = 200000;
  double eta0 = 0.0;  // 0: scale from the data
  double plateau_tol = 1e-10;
  int plateau_window = 1000;
  /// Stages of the step schedule: each restarts t at 1 from the best iterate
  /// with a smaller eta0, which refines the tail of the sqrt-decay schedule.
  int stages = 1;
};

struct PrimalSolution {
  Matrix A_hat;  // d2 x p (binary) or d2 x (m*p) (multiclass)
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  // instance metadata, used to reject mismatched gap computations
  int sample_count = 0;
  int class_count = 0;  // 0 binary
  double c = 1.0;
  LossSpec loss;
};

/// Primal objective ||A||_* + c sum of margin losses, recomputed from its
/// definition.
inline double primal_objective(const Matrix& A, const std::vector<Matrix>& Phi,
                               const Eigen::VectorXi& labels,
                               const LossSpec& loss, double c,
                               int class_count = 0) {
  double total = nuclear_norm(A);
  const Eigen::Index n = static_cast<Eigen::Index>(Phi.size());
  if (class_count < 2) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double margin = labels[i] * Phi[i].cwiseProduct(A).sum();
      total += c * margin_loss_value(loss.kind, margin);
    }
  } else {
    const int p = static_cast<int>(Phi[0].cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const int yi = labels[i] - 1;
      const double fy = Phi[i].cwiseProduct(A.middleCols(yi * p, p)).sum();
      for (int k = 0; k < class_count; ++k) {
        if (k == yi) continue;
        const double fk = Phi[i].cwiseProduct(A.middleCols(k * p, p)).sum();
        total += c * margin_loss_value(loss.kind, fy - fk);
      }
    }
  }
  return total;
}

namespace detail {

inline double margin_loss_slope(LossKind kind, double u) {
  switch (kind) {
    case LossKind::hinge: return u < 1.0 ? -1.0 : 0.0;
    case LossKind::squared_hinge: return -2.0 * std::max(0.0, 1.0 - u);
    case LossKind::logistic: return -1.0 / (1.0 + std::exp(u));
    case LossKind::exponential: return -std::exp(-u);
  }
  throw InvalidInput("margin_loss_slope: unknown loss");
}

}  // namespace detail

/// Proximal subgradient descent on ||A||_* + c sum_i l(margin_i): a loss
/// subgradient step followed by singular-value soft-thresholding, with
/// diminishing steps eta0/sqrt(t). Returns the best iterate by objective.
/// Intended for tiny instances only.
inline PrimalSolution primal_solve(const std::vector<PatchMatrix>& samples,
                                   const Eigen::VectorXi& labels,
                                   const ExplicitFeatureMap& fmap,
                                   const LossSpec& loss, double c,
                                   const PrimalOptions& opts = {},
                                   int class_count = 0) {
  const int n = static_cast<int>(samples.size());
  if (n == 0) throw EmptyDataset("primal_solve: empty dataset");
  if (labels.size() != n) throw InvalidInput("primal_solve: label mismatch");
  if (!(c > 0)) throw InvalidInput("primal_solve: c must be positive");
  const int p = static_cast<int>(samples[0].entries.cols());
  const int m = class_count;
  const int cols = m < 2 ? p : m * p;

  std::vector<Matrix> Phi(n);
  double phi_scale = 0.0;
  for (int i = 0; i < n; ++i) {
    Phi[i] = fmap.feature_matrix(samples[i]);
    phi_scale += Phi[i].norm();
  }
  const int d2 = static_cast<int>(Phi[0].rows());
  double eta0 = opts.eta0 > 0.0
                    ? opts.eta0
                    : 1.0 / (1.0 + c * phi_scale * (m < 2 ? 1.0 : m - 1.0));

  Matrix A = Matrix::Zero(d2, cols);
  Matrix G(d2, cols);
  PrimalSolution best;
  best.A_hat = A;
  best.objective = primal_objective(A, Phi, labels, loss, c, m);
  double window_best = best.objective;
  int iter = 0;
  bool plateaued = false;

  // One SVD per iteration: the prox's singular values also give the nuclear
  // norm of the new iterate.
  auto loss_sum = [&](const Matrix& At) {
    double total = 0.0;
    if (m < 2) {
      for (int i = 0; i < n; ++i)
        total += margin_loss_value(
            loss.kind, labels[i] * Phi[i].cwiseProduct(At).sum());
    } else {
      for (int i = 0; i < n; ++i) {
        const int yi = labels[i] - 1;
        const double fy = Phi[i].cwiseProduct(At.middleCols(yi * p, p)).sum();
        for (int k = 0; k < m; ++k) {
          if (k == yi) continue;
          const double fk = Phi[i].cwiseProduct(At.middleCols(k * p, p)).sum();
          total += margin_loss_value(loss.kind, fy - fk);
        }
      }
    }
    return total;
  };

  const int stages = std::max(1, opts.stages);
  const int per_stage = std::max(1, opts.max_iters / stages);
  int total_iters = 0;
  for (int stage = 0; stage < stages; ++stage, eta0 *= 0.1) {
    A = best.A_hat;
    plateaued = false;
    window_best = best.objective;
    for (iter = 1; iter <= per_stage; ++iter, ++total_iters) {
      G.setZero();
      if (m < 2) {
        for (int i = 0; i < n; ++i) {
          const double margin = labels[i] * Phi[i].cwiseProduct(A).sum();
          const double slope = detail::margin_loss_slope(loss.kind, margin);
          if (slope != 0.0) G += (c * slope * labels[i]) * Phi[i];
        }
      } else {
        for (int i = 0; i < n; ++i) {
          const int yi = labels[i] - 1;
          const double fy = Phi[i].cwiseProduct(A.middleCols(yi * p, p)).sum();
          for (int k = 0; k < m; ++k) {
            if (k == yi) continue;
            const double fk = Phi[i].cwiseProduct(A.middleCols(k * p, p)).sum();
            const double slope =
                detail::margin_loss_slope(loss.kind, fy - fk);
            if (slope != 0.0) {
              G.middleCols(yi * p, p) += (c * slope) * Phi[i];
              G.middleCols(k * p, p) -= (c * slope) * Phi[i];
            }
          }
        }
      }
      const double eta = eta0 / std::sqrt(static_cast<double>(iter));
      Eigen::JacobiSVD<Matrix> svd(A - eta * G,
                                   Eigen::ComputeThinU | Eigen::ComputeThinV);
      const Vector s = (svd.singularValues().array() - eta).max(0.0);
      A = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
      const double obj = s.sum() + c * loss_sum(A);
      if (obj < best.objective) {
        best.objective = obj;
        best.A_hat = A;
      }
      if (iter % opts.plateau_window == 0) {
        if (window_best - best.objective < opts.plateau_tol) {
          plateaued = true;
          break;
        }
        window_best = best.objective;
      }
    }
  }

  best.iterations = total_iters;
  best.converged = plateaued;
  best.sample_count = n;
  best.class_count = m < 2 ? 0 : m;
  best.c = c;
  best.loss = loss;
  return best;
}

/// primal objective minus dual objective; nonnegative up to numerical slack
/// by weak duality, and ~0 at joint optimality.
inline double duality_gap(const PrimalSolution& primal,
                          const DualSolution& dual) {
  if (primal.sample_count != dual.sample_count() ||
      primal.class_count != dual.class_count || primal.c != dual.c ||
      primal.loss.kind != dual.loss.kind)
    throw InvalidInput("duality_gap: primal and dual solve different instances");
  return primal.objective - dual.objective;
}

/// Side-by-side check of the dual-path recovery against the oracle's explicit
/// SVD: principal angles between the recovered columns and A_hat's leading
/// right-singular subspace, and the worst max-norm deviation of the basis-
/// invariant product (Phi(x)^T U1)(Phi(x')^T U1)^T over training pairs.
struct RecoveryComparison {
  std::vector<double> principal_angles;  // radians, one per shared dimension
  double max_principal_angle = 0.0;
  double product_deviation = 0.0;
  int oracle_rank = 0;
  int recovered_rank = 0;
  bool degenerate_agreed = false;
};

inline RecoveryComparison compare_recovery(
    const PrimalSolution& primal, const std::optional<LinearWeight>& recovered,
    const std::vector<ConvOutput>& conv_outputs,
    const std::vector<PatchMatrix>& samples, const ExplicitFeatureMap& fmap,
    double rank_cut = 1e-6) {
  RecoveryComparison rep;
  Eigen::JacobiSVD<Matrix> svd(primal.A_hat,
                               Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > rank_cut) ++rep.oracle_rank;

  if (!recovered.has_value()) {
    rep.degenerate_agreed = rep.oracle_rank == 0;
    return rep;
  }
  rep.recovered_rank = recovered->rank();
  if (rep.oracle_rank == 0) return rep;

  const Matrix V1 = svd.matrixV().leftCols(rep.oracle_rank);
  const Matrix U1 = svd.matrixU().leftCols(rep.oracle_rank);
  const int shared = std::min(rep.oracle_rank, rep.recovered_rank);
  Eigen::JacobiSVD<Matrix> overlap(recovered->columns.transpose() * V1);
  for (int i = 0; i < shared; ++i) {
    const double cosv = std::clamp(overlap.singularValues()[i], -1.0, 1.0);
    rep.principal_angles.push_back(std::acos(cosv));
  }
  for (double a : rep.principal_angles)
    rep.max_principal_angle = std::max(rep.max_principal_angle, a);

  const int n = static_cast<int>(samples.size());
  std::vector<Matrix> oracle_out(n);
  for (int i = 0; i < n; ++i)
    oracle_out[i] = fmap.feature_matrix(samples[i]).transpose() * U1;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Matrix dual_prod =
          conv_outputs[i].values * conv_outputs[j].values.transpose();
      const Matrix oracle_prod = oracle_out[i] * oracle_out[j].transpose();
      rep.product_deviation =
          std::max(rep.product_deviation,
                   (dual_prod - oracle_prod).cwiseAbs().maxCoeff());
    }
  return rep;
}

}  // namespace dccnn
