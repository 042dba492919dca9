#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <string>
#include <vector>

#include "dccnn/errors.hpp"
#include "dccnn/kernels.hpp"
#include "dccnn/patches.hpp"
#include "dccnn/solver.hpp"

namespace dccnn {

/// Recovered linear weight: orthonormal eigenvectors of the accumulated
/// kernel quadratic form whose eigenvalues reach the threshold, ordered by
/// descending eigenvalue. p x r for binary tasks, (m*p) x r for multiclass.
struct LinearWeight {
  Matrix columns;
  Vector eigenvalues_used;
  double threshold_used = 0.0;
  /// Eigenvalues in [threshold - 0.1, threshold): close calls worth auditing.
  std::vector<double> near_misses;
  /// Rows per class block; equals columns.rows() for binary.
  int block_rows = 0;

  int rank() const { return static_cast<int>(columns.cols()); }
  int class_count() const {
    return block_rows > 0 ? static_cast<int>(columns.rows()) / block_rows : 1;
  }
};

/// Per-sample convolution output (p x r, or q x r after pooling).
struct ConvOutput {
  Matrix values;
  int sample_index = -1;
};

namespace detail {

struct SelectedEig {
  double value;
  int block;  // class block the eigenvector lives in (0 for binary)
  Vector vec;
};

/// Eigenpairs of a symmetric accumulation with eigenvalue >= threshold,
/// plus the near-miss list and the largest eigenvalue seen.
inline void select_filters(const Matrix& S, double threshold, int block,
                           std::vector<SelectedEig>& out,
                           std::vector<double>& near_misses,
                           double& max_eigenvalue) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (S + S.transpose()));
  if (es.info() != Eigen::Success)
    throw NumericalError("recover_linear_weight: eigendecomposition failed");
  const Vector& ev = es.eigenvalues();  // ascending
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    max_eigenvalue = std::max(max_eigenvalue, ev[i]);
    if (ev[i] >= threshold)
      out.push_back({ev[i], block, es.eigenvectors().col(i)});
    else if (ev[i] >= threshold - 0.1)
      near_misses.push_back(ev[i]);
  }
}

}  // namespace detail

/// Recovers the linear weight from the dual solution: eigenvectors of
/// S = sum_ij alpha_i alpha_j y_i y_j K(x_i,x_j) (per class block for
/// multiclass) with eigenvalue >= threshold. At the dual optimum those
/// eigenvalues are exactly 1; the threshold absorbs solver inexactness.
inline LinearWeight recover_linear_weight(const DualSolution& sol,
                                          const std::vector<PatchMatrix>& samples,
                                          const KernelSpec& kernel,
                                          double threshold = 0.9) {
  if (!(threshold > 0.0) || threshold > 1.0)
    throw InvalidInput("recover_linear_weight: threshold must be in (0, 1]");
  const int p = static_cast<int>(samples.at(0).entries.cols());

  std::vector<detail::SelectedEig> picked;
  std::vector<double> near_misses;
  double max_eig = 0.0;
  int blocks = 1;
  if (sol.is_multiclass()) {
    blocks = sol.class_count;
    const BlockDiagonal S = accumulate_quadratic_multiclass(
        sol.alpha, sol.labels, kernel, samples);
    for (int k = 0; k < blocks; ++k)
      detail::select_filters(S.blocks[k], threshold, k, picked, near_misses,
                             max_eig);
  } else {
    const Matrix S =
        accumulate_quadratic(sol.alpha.col(0), sol.labels, kernel, samples);
    detail::select_filters(S, threshold, 0, picked, near_misses, max_eig);
  }
  if (picked.empty())
    throw NoFiltersRecovered(
        "recover_linear_weight: no eigenvalue reached threshold " +
            std::to_string(threshold) + " (largest was " +
            std::to_string(max_eig) + ")",
        max_eig);

  std::stable_sort(picked.begin(), picked.end(),
                   [](const detail::SelectedEig& a, const detail::SelectedEig& b) {
                     return a.value > b.value;
                   });

  LinearWeight W;
  W.threshold_used = threshold;
  W.near_misses = std::move(near_misses);
  W.block_rows = p;
  const int r = static_cast<int>(picked.size());
  W.columns = Matrix::Zero(blocks * p, r);
  W.eigenvalues_used = Vector(r);
  for (int i = 0; i < r; ++i) {
    W.eigenvalues_used[i] = picked[i].value;
    W.columns.block(picked[i].block * p, i, p, 1) = picked[i].vec;
  }
  return W;
}

/// Convolution output of one sample from dual quantities alone:
/// sum_j alpha_j y_j K(x, x_j) V1 for binary tasks; for multiclass the kernel
/// block at class k picks out rows [k*p, (k+1)*p) of V1, so the sum runs over
/// (j, k) with the folded multipliers.
inline ConvOutput recover_conv_output(const DualSolution& sol,
                                      const std::vector<PatchMatrix>& samples,
                                      const KernelSpec& kernel,
                                      const LinearWeight& V1,
                                      const PatchMatrix& x,
                                      int sample_index = -1) {
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  const int p = static_cast<int>(x.entries.cols());
  if (V1.block_rows != p)
    throw InvalidInput("recover_conv_output: weight/geometry mismatch");
  ConvOutput out;
  out.sample_index = sample_index;
  out.values = Matrix::Zero(p, V1.rank());
  if (sol.is_multiclass()) {
    const int m = sol.class_count;
    const Matrix ap = folded_multipliers(sol.alpha, sol.labels);
    for (Eigen::Index j = 0; j < n; ++j) {
      bool any = false;
      for (int k = 0; k < m; ++k) any = any || ap(j, k) != 0.0;
      if (!any) continue;
      const Matrix Kxj = kernel_generating_matrix(kernel, x, samples[j]);
      for (int k = 0; k < m; ++k)
        if (ap(j, k) != 0.0)
          out.values += ap(j, k) * Kxj * V1.columns.middleRows(k * p, p);
    }
  } else {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double a = sol.alpha(j, 0);
      if (a == 0.0) continue;
      const Matrix Kxj = kernel_generating_matrix(kernel, x, samples[j]);
      out.values += (a * sol.labels[j]) * (Kxj * V1.columns);
    }
  }
  return out;
}

/// Average pooling of a convolution output: values become G * values.
inline ConvOutput apply_pooling(const ConvOutput& out, const PoolingMatrix& G) {
  if (G.entries.cols() != out.values.rows())
    throw InvalidInput("apply_pooling: pooling matrix expects " +
                       std::to_string(G.entries.cols()) + " rows, output has " +
                       std::to_string(out.values.rows()));
  return ConvOutput{G.entries * out.values, out.sample_index};
}

}  // namespace dccnn
