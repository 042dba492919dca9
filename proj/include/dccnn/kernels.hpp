#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdint>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "dccnn/errors.hpp"
#include "dccnn/patches.hpp"

namespace dccnn {

enum class KernelKind { gaussian_rbf, linear, polynomial };

/// Patch-level kernel. The Gaussian RBF is the training kernel; linear and
/// polynomial exist so the finite-dimensional oracle can cross-check with
/// explicit feature maps.
struct KernelSpec {
  KernelKind kind = KernelKind::gaussian_rbf;
  double gamma = 1.0;   // gaussian_rbf
  int degree = 2;       // polynomial
  double offset = 1.0;  // polynomial

  static KernelSpec gaussian(double gamma) {
    KernelSpec s;
    s.kind = KernelKind::gaussian_rbf;
    s.gamma = gamma;
    return s;
  }
  static KernelSpec linear() {
    KernelSpec s;
    s.kind = KernelKind::linear;
    return s;
  }
  static KernelSpec polynomial(int degree, double offset) {
    KernelSpec s;
    s.kind = KernelKind::polynomial;
    s.degree = degree;
    s.offset = offset;
    return s;
  }

  void validate() const {
    if (kind == KernelKind::gaussian_rbf && !(gamma > 0))
      throw InvalidInput("kernel: gaussian gamma must be > 0");
    if (kind == KernelKind::polynomial && degree < 1)
      throw InvalidInput("kernel: polynomial degree must be >= 1");
  }
};

inline double kernel_eval(const KernelSpec& spec,
                          const Eigen::Ref<const Vector>& u,
                          const Eigen::Ref<const Vector>& v) {
  spec.validate();
  if (u.size() != v.size())
    throw InvalidInput("kernel_eval: vector length mismatch");
  switch (spec.kind) {
    case KernelKind::gaussian_rbf:
      return std::exp(-spec.gamma * (u - v).squaredNorm());
    case KernelKind::linear:
      return u.dot(v);
    case KernelKind::polynomial:
      return std::pow(u.dot(v) + spec.offset, spec.degree);
  }
  throw InvalidInput("kernel_eval: unknown kernel kind");
}

/// The p x p kernel generating matrix between two samples: entry (a, b) is
/// the kernel value of patch a of the first sample against patch b of the
/// second.
inline Matrix kernel_generating_matrix(const KernelSpec& spec,
                                       const PatchMatrix& Zi,
                                       const PatchMatrix& Zj) {
  spec.validate();
  if (Zi.entries.rows() != Zj.entries.rows() ||
      Zi.entries.cols() != Zj.entries.cols())
    throw InvalidInput("kernel_generating_matrix: patch geometry mismatch");
  Matrix G = Zi.entries.transpose() * Zj.entries;
  switch (spec.kind) {
    case KernelKind::linear:
      return G;
    case KernelKind::polynomial:
      return (G.array() + spec.offset).pow(spec.degree).matrix();
    case KernelKind::gaussian_rbf: {
      const Vector ni = Zi.entries.colwise().squaredNorm();
      const Vector nj = Zj.entries.colwise().squaredNorm();
      Matrix D = (-2.0 * G).colwise() + ni;
      D.rowwise() += nj.transpose();
      return (-spec.gamma * D.array().max(0.0)).exp().matrix();
    }
  }
  throw InvalidInput("kernel_generating_matrix: unknown kernel kind");
}

/// Largest eigenvalue of (M + M^T)/2. Accumulated quadratic forms drift from
/// exact symmetry in floating point; decomposing the symmetrized matrix keeps
/// the spectrum real.
inline double lambda_max(const Eigen::Ref<const Matrix>& M) {
  if (M.rows() != M.cols())
    throw InvalidInput("lambda_max: matrix must be square");
  if (!M.allFinite())
    throw NumericalError("lambda_max: non-finite entries");
  const Matrix S = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw NumericalError("lambda_max: eigendecomposition failed");
  return es.eigenvalues().maxCoeff();
}

/// One p x p block of the logical mp x mp block-diagonal kernel generating
/// matrix for multiclass problems; the dense form is never materialized.
struct BlockKernel {
  int class_index = 1;  // k in [m]
  int class_count = 1;  // m
  Matrix inner;
};

inline BlockKernel block_kernel(int k, Matrix K, int m) {
  if (k < 1 || k > m)
    throw InvalidInput("block_kernel: class index out of range");
  return BlockKernel{k, m, std::move(K)};
}

/// Sum of BlockKernels, stored per class block.
struct BlockDiagonal {
  std::vector<Matrix> blocks;  // m entries, each p x p (zero matrices allowed)

  BlockDiagonal() = default;
  BlockDiagonal(int m, int p)
      : blocks(static_cast<std::size_t>(m), Matrix::Zero(p, p)) {}

  void add(const BlockKernel& bk, double weight = 1.0) {
    if (blocks.empty()) blocks.resize(bk.class_count);
    if (static_cast<int>(blocks.size()) != bk.class_count)
      throw InvalidInput("BlockDiagonal: class count mismatch");
    Matrix& b = blocks[bk.class_index - 1];
    if (b.size() == 0)
      b = weight * bk.inner;
    else
      b += weight * bk.inner;
  }

  /// Block-diagonal spectrum: the max over per-block largest eigenvalues.
  double lambda_max() const {
    double lam = 0.0;  // empty accumulation is the zero matrix
    for (const Matrix& b : blocks)
      if (b.size() > 0) lam = std::max(lam, dccnn::lambda_max(b));
    return lam;
  }

  /// Dense mp x mp assembly; intended for small verification instances only.
  Matrix dense() const {
    int p = 0;
    for (const Matrix& b : blocks)
      if (b.size() > 0) p = static_cast<int>(b.rows());
    const int m = static_cast<int>(blocks.size());
    Matrix D = Matrix::Zero(m * p, m * p);
    for (int k = 0; k < m; ++k)
      if (blocks[k].size() > 0) D.block(k * p, k * p, p, p) = blocks[k];
    return D;
  }
};

/// Bounded LRU cache of kernel generating matrices keyed by sample index
/// pairs. Reads and writes are serialized internally; results are identical
/// with any budget, including zero.
class KernelCache {
 public:
  explicit KernelCache(std::size_t budget = 256) : budget_(budget) {}

  std::shared_ptr<const Matrix> get(int i, int j,
                                    const std::function<Matrix()>& compute) {
    const std::uint64_t key =
        (static_cast<std::uint64_t>(static_cast<std::uint32_t>(i)) << 32) |
        static_cast<std::uint32_t>(j);
    if (budget_ > 0) {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = index_.find(key);
      if (it != index_.end()) {
        order_.splice(order_.begin(), order_, it->second);
        return it->second->second;
      }
    }
    auto value = std::make_shared<const Matrix>(compute());
    if (budget_ > 0) {
      std::lock_guard<std::mutex> lock(mu_);
      if (index_.find(key) == index_.end()) {
        order_.emplace_front(key, value);
        index_[key] = order_.begin();
        while (order_.size() > budget_) {
          index_.erase(order_.back().first);
          order_.pop_back();
        }
      }
    }
    return value;
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return order_.size();
  }

 private:
  using Entry = std::pair<std::uint64_t, std::shared_ptr<const Matrix>>;
  std::size_t budget_;
  mutable std::mutex mu_;
  std::list<Entry> order_;
  std::unordered_map<std::uint64_t, std::list<Entry>::iterator> index_;
};

}  // namespace dccnn
