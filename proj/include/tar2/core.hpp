#pragma once

// Redistribution algebra: temporal/agent weight matrices, weight-based
// redistribution of an episodic return and normalization of raw credit into
// weights. Everything here is a pure function templated on the scalar type.

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "tar2/errors.hpp"

namespace tar2 {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline constexpr double kSimplexTolerance = 1e-9;
inline constexpr double kDefaultContributionEps = 1e-12;

/// Temporal weights w_t (length T) and per-step agent weights w'_{t,i} (T x N).
/// Each of `temporal` and every row of `agent` is a point on the simplex.
template <typename Scalar = double>
struct WeightMatrix {
  Vector<Scalar> temporal;
  Matrix<Scalar> agent;

  Eigen::Index steps() const { return agent.rows(); }
  Eigen::Index agents() const { return agent.cols(); }

  static WeightMatrix uniform(Eigen::Index steps, Eigen::Index agents) {
    WeightMatrix w;
    w.temporal = Vector<Scalar>::Constant(steps, Scalar(1) / Scalar(steps));
    w.agent = Matrix<Scalar>::Constant(steps, agents, Scalar(1) / Scalar(agents));
    return w;
  }
};

/// r_{i,t} laid out as rewards(t, i). `conserving` is false only for the
/// broadcast IRCR signal, which deliberately replicates mass across agents.
template <typename Scalar = double>
struct RedistributionMatrix {
  Matrix<Scalar> rewards;
  Scalar source_return = Scalar(0);
  bool conserving = true;

  Eigen::Index steps() const { return rewards.rows(); }
  Eigen::Index agents() const { return rewards.cols(); }

  /// r_global,t = sum_i r_{i,t}
  Vector<Scalar> global_per_step() const { return rewards.rowwise().sum(); }
  Scalar total() const { return rewards.sum(); }
};

/// Raw nonnegative per-agent, per-step credit before normalization.
template <typename Scalar = double>
using ContributionMatrix = Matrix<Scalar>;

struct WeightViolation {
  enum class Kind { TemporalSum, AgentRowSum, TemporalRange, AgentRange, NonFinite };
  Kind kind;
  Eigen::Index step = -1;
  Eigen::Index agent = -1;
  double value = 0.0;
  std::string message;
};

struct ValidationReport {
  std::vector<WeightViolation> violations;
  bool ok() const { return violations.empty(); }
};

namespace detail {

inline std::string format_violation(const char* fmt, double a, long b = -1, long c = -1) {
  char buf[160];
  if (c >= 0) {
    std::snprintf(buf, sizeof buf, fmt, b, c, a);
  } else if (b >= 0) {
    std::snprintf(buf, sizeof buf, fmt, b, a);
  } else {
    std::snprintf(buf, sizeof buf, fmt, a);
  }
  return buf;
}

template <typename Scalar>
bool in_unit_interval(Scalar x, double tol) {
  return x >= Scalar(-tol) && x <= Scalar(1 + tol);
}

}  // namespace detail

template <typename Scalar>
ValidationReport validate_weights(const WeightMatrix<Scalar>& w, double tol = kSimplexTolerance) {
  using Kind = WeightViolation::Kind;
  if (w.steps() < 1 || w.agents() < 1 || w.temporal.size() != w.steps()) {
    throw DimensionError("validate_weights: need T>=1, N>=1 and temporal.size()==T (got T=" +
                         std::to_string(w.temporal.size()) + ", agent " +
                         std::to_string(w.steps()) + "x" + std::to_string(w.agents()) + ")");
  }
  ValidationReport report;
  if (!w.temporal.allFinite() || !w.agent.allFinite()) {
    report.violations.push_back({Kind::NonFinite, -1, -1, 0.0, "non-finite weight entry"});
    return report;
  }
  const double temporal_sum = static_cast<double>(w.temporal.sum());
  if (std::abs(temporal_sum - 1.0) > tol) {
    report.violations.push_back({Kind::TemporalSum, -1, -1, temporal_sum,
                                 detail::format_violation("sum(w_t)=%.12g != 1", temporal_sum)});
  }
  for (Eigen::Index t = 0; t < w.steps(); ++t) {
    if (!detail::in_unit_interval(w.temporal(t), tol)) {
      const double v = static_cast<double>(w.temporal(t));
      report.violations.push_back(
          {Kind::TemporalRange, t, -1, v, detail::format_violation("w_t[%ld]=%.12g outside [0,1]", v, t)});
    }
    const double row_sum = static_cast<double>(w.agent.row(t).sum());
    if (std::abs(row_sum - 1.0) > tol) {
      report.violations.push_back(
          {Kind::AgentRowSum, t, -1, row_sum,
           detail::format_violation("sum_i w'[%ld][i]=%.12g != 1", row_sum, t)});
    }
    for (Eigen::Index i = 0; i < w.agents(); ++i) {
      if (!detail::in_unit_interval(w.agent(t, i), tol)) {
        const double v = static_cast<double>(w.agent(t, i));
        report.violations.push_back({Kind::AgentRange, t, i, v,
                                     detail::format_violation("w'[%ld][%ld]=%.12g outside [0,1]", v, t, i)});
      }
    }
  }
  return report;
}

/// r_{i,t} = w'_{t,i} * w_t * R.
template <typename Scalar>
RedistributionMatrix<Scalar> redistribute_with_weights(const WeightMatrix<Scalar>& w, Scalar R) {
  const auto report = validate_weights(w);
  if (!report.ok()) {
    throw ConstraintError("redistribute_with_weights: " + report.violations.front().message);
  }
  RedistributionMatrix<Scalar> out;
  out.rewards = (w.agent.array().colwise() * w.temporal.array()).matrix() * R;
  out.source_return = R;
  return out;
}

/// Normalizes nonnegative credit into a weight matrix. Degenerate input
/// (total credit <= eps) yields uniform weights; a single step whose credit is
/// all zero gets a uniform agent row.
template <typename Derived>
WeightMatrix<typename Derived::Scalar> weights_from_contributions(
    const Eigen::MatrixBase<Derived>& c, double eps = kDefaultContributionEps) {
  using Scalar = typename Derived::Scalar;
  if (c.rows() < 1 || c.cols() < 1) {
    throw DimensionError("weights_from_contributions: empty contribution matrix");
  }
  if (!c.allFinite()) {
    throw DomainError("weights_from_contributions: non-finite contribution");
  }
  if ((c.array() < Scalar(0)).any()) {
    throw DomainError("weights_from_contributions: negative contribution");
  }
  const Eigen::Index T = c.rows();
  const Eigen::Index N = c.cols();
  const Scalar total = c.sum();
  if (total <= Scalar(eps)) {
    return WeightMatrix<Scalar>::uniform(T, N);
  }
  WeightMatrix<Scalar> w;
  const Vector<Scalar> row_sums = c.rowwise().sum();
  w.temporal = row_sums / total;
  w.agent.resize(T, N);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (w.temporal(t) > Scalar(eps)) {
      w.agent.row(t) = c.row(t) / row_sums(t);
    } else {
      w.agent.row(t).setConstant(Scalar(1) / Scalar(N));
    }
  }
  return w;
}

}  // namespace tar2
