#pragma once

#include <Eigen/Dense>

#include "tar2/errors.hpp"

namespace tar2 {

using Eigen::Index;

/// Per-agent observation and action histories of one episode plus the
/// episodic return revealed at its end. Observations are stored token-major:
/// row t*N + i holds o_{i,t}.
struct Trajectory {
  Index steps = 0;
  Index agents = 0;
  Eigen::MatrixXd observations;  // (T*N) x obs_dim
  Eigen::MatrixXi actions;       // T x N
  double episodic_return = 0.0;

  Index obs_dim() const { return observations.cols(); }
  Index token(Index t, Index i) const { return t * agents + i; }
  auto observation(Index t, Index i) const { return observations.row(token(t, i)); }

  void check() const {
    if (steps < 1 || agents < 1) {
      throw DimensionError("trajectory: need T>=1 and N>=1");
    }
    if (observations.rows() != steps * agents || actions.rows() != steps || actions.cols() != agents) {
      throw DimensionError("trajectory: observation/action sequences do not match (T,N)");
    }
  }
};

}  // namespace tar2
