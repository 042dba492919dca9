#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "dccnn/errors.hpp"
#include "dccnn/patches.hpp"

namespace dccnn {

enum class LossKind { hinge, squared_hinge, logistic, exponential };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::hinge: return "hinge";
    case LossKind::squared_hinge: return "squared_hinge";
    case LossKind::logistic: return "logistic";
    case LossKind::exponential: return "exponential";
  }
  return "?";
}

struct LossSpec {
  LossKind kind = LossKind::hinge;
};

/// Extended-real conjugate value. +inf marks an out-of-domain query and is a
/// distinguished state, not a float that can leak into arithmetic.
class ExtReal {
 public:
  static ExtReal infinity() { return ExtReal(true, 0.0); }
  static ExtReal finite(double v) { return ExtReal(false, v); }

  bool is_infinite() const { return infinite_; }
  double value() const {
    if (infinite_)
      throw NumericalError("ExtReal: value() on an infinite conjugate");
    return value_;
  }

 private:
  ExtReal(bool inf, double v) : infinite_(inf), value_(v) {}
  bool infinite_;
  double value_;
};

/// Loss value in the textbook orientation: hinge max(0,1-x), squared hinge
/// max(0,1-x)^2, logistic log(1+e^x), exponential e^x.
inline double loss_value(LossKind kind, double x) {
  switch (kind) {
    case LossKind::hinge: return std::max(0.0, 1.0 - x);
    case LossKind::squared_hinge: {
      const double h = std::max(0.0, 1.0 - x);
      return h * h;
    }
    case LossKind::logistic: return std::log1p(std::exp(x));
    case LossKind::exponential: return std::exp(x);
  }
  throw InvalidInput("loss_value: unknown loss");
}

/// True when the textbook form is already non-increasing, i.e. usable as a
/// margin loss without a sign flip.
inline constexpr bool loss_is_margin_form(LossKind kind) {
  return kind == LossKind::hinge || kind == LossKind::squared_hinge;
}

/// Loss of the classification margin; non-increasing for every kind. The
/// logistic and exponential textbook forms are increasing, so they enter as
/// log(1+e^-x) and e^-x.
inline double margin_loss_value(LossKind kind, double x) {
  return loss_is_margin_form(kind) ? loss_value(kind, x)
                                   : loss_value(kind, -x);
}

/// Fenchel conjugate of the textbook-form loss.
inline ExtReal conjugate(LossKind kind, double xstar) {
  switch (kind) {
    case LossKind::hinge:
      if (xstar < -1.0 || xstar > 0.0) return ExtReal::infinity();
      return ExtReal::finite(xstar);
    case LossKind::squared_hinge:
      if (xstar > 0.0) return ExtReal::infinity();
      return ExtReal::finite(xstar + 0.25 * xstar * xstar);
    case LossKind::logistic: {
      if (xstar < 0.0 || xstar > 1.0) return ExtReal::infinity();
      const double a = xstar > 0.0 ? xstar * std::log(xstar) : 0.0;
      const double b =
          xstar < 1.0 ? (1.0 - xstar) * std::log(1.0 - xstar) : 0.0;
      return ExtReal::finite(a + b);
    }
    case LossKind::exponential:
      if (xstar < 0.0) return ExtReal::infinity();
      if (xstar == 0.0) return ExtReal::finite(0.0);
      return ExtReal::finite(-xstar + xstar * std::log(xstar));
  }
  throw InvalidInput("conjugate: unknown loss");
}

/// Conjugate of the margin-form loss; equals conjugate(kind, .) for the
/// already-decreasing kinds and conjugate(kind, -.) for the flipped ones.
inline ExtReal margin_conjugate(LossKind kind, double xstar) {
  return loss_is_margin_form(kind) ? conjugate(kind, xstar)
                                   : conjugate(kind, -xstar);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;  // may be +inf
  bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Feasible interval of a single dual coefficient, implied by the conjugate
/// domain of the margin-form loss at -alpha/c.
inline Interval feasible_interval(LossKind kind, double c) {
  if (!(c > 0)) throw InvalidInput("feasible_interval: c must be positive");
  const double inf = std::numeric_limits<double>::infinity();
  switch (kind) {
    case LossKind::hinge: return {0.0, c};
    case LossKind::squared_hinge: return {0.0, inf};
    case LossKind::logistic: return {0.0, c};
    case LossKind::exponential: return {0.0, inf};
  }
  throw InvalidInput("feasible_interval: unknown loss");
}

/// Per-coordinate dual term t(alpha) = -c * l*(-alpha/c) for the margin-form
/// loss. Concave on the feasible interval; exactly alpha for hinge.
inline double dual_coordinate_term(LossKind kind, double alpha, double c) {
  switch (kind) {
    case LossKind::hinge:
      return alpha;
    case LossKind::squared_hinge:
      return alpha - alpha * alpha / (4.0 * c);
    case LossKind::logistic: {
      const double u = alpha / c;
      const double a = u > 0.0 ? u * std::log(u) : 0.0;
      const double b = u < 1.0 ? (1.0 - u) * std::log(1.0 - u) : 0.0;
      return -c * (a + b);
    }
    case LossKind::exponential:
      if (alpha == 0.0) return 0.0;
      return alpha - alpha * std::log(alpha / c);
  }
  throw InvalidInput("dual_coordinate_term: unknown loss");
}

/// Argmax of t(alpha) over the feasible interval; the greedy coordinate step
/// never benefits from values beyond it.
inline double dual_term_argmax(LossKind kind, double c) {
  switch (kind) {
    case LossKind::hinge: return c;
    case LossKind::squared_hinge: return 2.0 * c;
    case LossKind::logistic: return 0.5 * c;
    case LossKind::exponential: return c;
  }
  throw InvalidInput("dual_term_argmax: unknown loss");
}

/// Dual objective -c * sum_i l*(-alpha_i/c). Every coefficient must be in its
/// feasible interval.
inline double dual_objective(const LossSpec& spec,
                             const Eigen::Ref<const Vector>& alpha, double c) {
  const Interval box = feasible_interval(spec.kind, c);
  double total = 0.0;
  for (Eigen::Index i = 0; i < alpha.size(); ++i) {
    if (!box.contains(alpha[i]))
      throw InfeasibleDual("dual_objective: alpha[" + std::to_string(i) +
                               "] = " + std::to_string(alpha[i]) +
                               " outside feasible interval",
                           static_cast<std::size_t>(i));
    total += dual_coordinate_term(spec.kind, alpha[i], c);
  }
  return total;
}

}  // namespace dccnn
