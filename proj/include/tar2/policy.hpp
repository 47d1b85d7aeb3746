#pragma once

// Independent per-agent softmax policies over local observations. Agent k
// owns a flat parameter vector theta_k that nothing else reads or writes.

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "tar2/errors.hpp"

namespace tar2 {

struct PolicyShape {
  int obs_dim = 3;
  int n_actions = 3;
  int hidden = 16;  // 0 gives a linear softmax policy
  bool operator==(const PolicyShape&) const = default;

  /// Length of one agent's parameter vector.
  Eigen::Index size() const;
};

class PolicyParams {
 public:
  PolicyParams() = default;
  PolicyParams(PolicyShape shape, int n_agents);

  /// Hidden weights drawn from `seed`; output layer zero so every agent
  /// starts uniform.
  static PolicyParams initialize(PolicyShape shape, int n_agents, std::uint64_t seed);

  const PolicyShape& shape() const { return shape_; }
  int n_agents() const { return static_cast<int>(theta_.size()); }
  Eigen::VectorXd& theta(int k) { return theta_.at(static_cast<std::size_t>(k)); }
  const Eigen::VectorXd& theta(int k) const { return theta_.at(static_cast<std::size_t>(k)); }

  Eigen::VectorXd probabilities(int k, const Eigen::Ref<const Eigen::VectorXd>& obs) const;
  double log_prob(int k, const Eigen::Ref<const Eigen::VectorXd>& obs, int action) const;
  double entropy(int k, const Eigen::Ref<const Eigen::VectorXd>& obs) const;
  int sample(int k, const Eigen::Ref<const Eigen::VectorXd>& obs, std::mt19937_64& rng) const;

  /// grad += coef * d log pi_k(action | obs) / d theta_k
  void accumulate_score(int k, const Eigen::Ref<const Eigen::VectorXd>& obs, int action, double coef,
                        Eigen::VectorXd& grad) const;

  bool all_finite() const;

 private:
  Eigen::VectorXd logits(int k, const Eigen::Ref<const Eigen::VectorXd>& obs, Eigen::VectorXd* hidden) const;

  PolicyShape shape_;
  std::vector<Eigen::VectorXd> theta_;
};

}  // namespace tar2
