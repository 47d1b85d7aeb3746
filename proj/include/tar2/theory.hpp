#pragma once

// Executable checks of the redistribution identities: potential-based
// telescoping, the per-agent scaling factor delta_k, exact policy gradients by
// enumeration on tiny Dec-POMDPs, and the advantage-variance bound.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tar2/core.hpp"

namespace tar2 {

/// Outcome of one verifier; serialized as {check, status, max_abs_err, details}.
struct CheckReport {
  std::string check;
  bool passed = true;
  double max_abs_err = 0.0;
  std::vector<std::string> details;

  void fail(std::string detail) {
    passed = false;
    details.push_back(std::move(detail));
  }
};

/// Random simplex weights of shape T x N built from nonnegative raw credit.
/// A fraction `sparsity` of cells is zeroed, so some draws exercise the
/// all-zero-row and all-zero-matrix fallbacks.
WeightMatrix<double> random_weights(std::mt19937_64& rng, Eigen::Index T, Eigen::Index N, double sparsity = 0.2);

// --- potential-based shaping ------------------------------------------------

/// phi_i(0..T) with phi_i(0) = 0 and phi_i(t+1) - phi_i(t) = R w_t w'_{t,i}.
struct PotentialSequence {
  Eigen::Index agent = 0;
  Eigen::VectorXd phi;
};

PotentialSequence potential_sequence(const WeightMatrix<double>& w, double R, Eigen::Index agent);

/// Checks r_{i,t} = phi_i(t+1) - phi_i(t) for every cell of `r` and that the
/// telescoped potentials sum to R. Cells off by more than `tol` are listed.
CheckReport shaping_check(const RedistributionMatrix<double>& r, const WeightMatrix<double>& w, double R,
                          double tol = 1e-9);
CheckReport shaping_check(const WeightMatrix<double>& w, double R, double tol = 1e-9);

// --- per-agent scaling ------------------------------------------------------

/// 1 - sum_t w_t (1 - w'_{t,k})
double delta_k(const WeightMatrix<double>& w, Eigen::Index k);
/// sum_t w_t w'_{t,k}; equal to delta_k for weights on the simplex.
double delta_k_weighted(const WeightMatrix<double>& w, Eigen::Index k);

/// sum_t r_{k,t} = delta_k R, within tol * max(1, |R|).
CheckReport pathwise_identity_check(const RedistributionMatrix<double>& r, const WeightMatrix<double>& w,
                                    Eigen::Index k, double tol = 1e-9);

// --- enumerable Dec-POMDPs ----------------------------------------------------

/// Finite Dec-POMDP small enough to enumerate every trajectory. Each agent
/// observes a deterministic function of the state. The return of a
/// trajectory is the sum of per-step rewards plus a terminal reward on the
/// final state; it is treated as episodic (revealed at the end).
struct MicroDecPomdp {
  std::string name;
  int n_states = 1;
  int horizon = 1;
  std::vector<int> n_actions;                  // per agent
  std::vector<int> n_observations;             // per agent
  std::vector<std::vector<int>> observation;   // [agent][state] -> observation id
  Eigen::VectorXd initial;                     // rho_0 over states
  std::vector<std::vector<Eigen::VectorXd>> transition;  // [state][joint action] -> P(s')
  Eigen::MatrixXd step_reward;                 // n_states x n_joint
  Eigen::VectorXd terminal_reward;             // n_states
  // Ground-truth nonnegative credit of agent i for (s, a_i, s').
  std::function<double(int agent, int state, int action, int next_state)> credit;

  int n_agents() const { return static_cast<int>(n_actions.size()); }
  int n_joint() const;
  /// Joint action index -> per-agent actions (agent 0 is the fastest digit).
  std::vector<int> decode(int joint) const;
  /// Throws DimensionError/DomainError on malformed tables or caps exceeded.
  void validate() const;
};

inline constexpr int kMaxMicroStates = 8;
inline constexpr int kMaxMicroActions = 3;
inline constexpr int kMaxMicroHorizon = 4;
inline constexpr std::size_t kMaxEnumeratedTrajectories = 100000;

/// Per-agent tabular softmax policies; theta[k] is n_observations[k] x n_actions[k].
struct TabularPolicy {
  std::vector<Eigen::MatrixXd> theta;

  static TabularPolicy uniform(const MicroDecPomdp& m);
  static TabularPolicy random(const MicroDecPomdp& m, std::uint64_t seed, double scale = 1.0);
  Eigen::VectorXd probabilities(int agent, int observation) const;
};

struct EnumeratedTrajectory {
  std::vector<int> states;                 // s_0..s_H
  std::vector<std::vector<int>> actions;   // [t][agent]
  double probability = 0.0;
  double env_return = 0.0;
  std::vector<Eigen::MatrixXd> score;      // [agent] d log P / d theta_agent
};

/// Every trajectory with nonzero probability under `policy`.
std::vector<EnumeratedTrajectory> enumerate_trajectories(const MicroDecPomdp& m, const TabularPolicy& policy);

/// Ground-truth credit matrix (H x N) of one enumerated trajectory.
ContributionMatrix<double> oracle_credit(const MicroDecPomdp& m, const EnumeratedTrajectory& tau);

using TrajectoryFunctional = std::function<double(const EnumeratedTrajectory&)>;
using RewardMap = std::function<RedistributionMatrix<double>(const EnumeratedTrajectory&)>;
using WeightGenerator = std::function<WeightMatrix<double>(const EnumeratedTrajectory&)>;

/// Exact gradient of E[G(tau)] with respect to theta_k by enumeration.
Eigen::MatrixXd enumerate_exact_gradient(const std::vector<EnumeratedTrajectory>& trajectories,
                                         const TrajectoryFunctional& G, int k);

enum class RewardTarget { AllAgents, AgentOnly };

/// Exact gradient of E[sum_{i,t} r_{i,t}] (AllAgents) or E[sum_t r_{k,t}]
/// (AgentOnly) for the redistributed rewards produced by `reward_map`.
Eigen::MatrixXd enumerate_exact_gradient(const MicroDecPomdp& m, const TabularPolicy& policy,
                                         const RewardMap& reward_map, int k,
                                         RewardTarget target = RewardTarget::AgentOnly);

struct MonteCarloGradient {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd standard_error;
};

/// REINFORCE estimate sum_t grad log pi_k * G over sampled episodes.
MonteCarloGradient reinforce_gradient_estimate(const MicroDecPomdp& m, const TabularPolicy& policy,
                                               const TrajectoryFunctional& G, int k, std::size_t samples,
                                               std::uint64_t seed);

struct PgEquivalenceReport {
  int agent = 0;
  std::size_t trajectories = 0;
  double err_total_vs_env = 0.0;      // (a)
  double err_agent_vs_scaled = 0.0;   // (b)
  double min_delta = 0.0;             // (c)
  double max_delta = 0.0;
  double max_conservation_err = 0.0;
  double cosine = 0.0;                // (d), reported only
  double angle_degrees = 0.0;
  Eigen::MatrixXd grad_env;
  Eigen::MatrixXd grad_agent;
  bool passed = false;
};

/// Checks, by exact enumeration, that conserving redistribution leaves the
/// total-reward gradient equal to the environment-return gradient and that
/// agent k's gradient equals that of delta_k(tau) R_env; reports the angle
/// between agent k's gradient and the environment gradient.
PgEquivalenceReport pg_equivalence_report(const MicroDecPomdp& m, const TabularPolicy& policy,
                                          const WeightGenerator& weights, int k, double tol = 1e-9);

/// Oracle weights from the model's ground-truth credit.
WeightGenerator oracle_weight_generator(const MicroDecPomdp& m);
/// Trajectory-dependent pseudo-random weights; any simplex-valued map works
/// for the identities, this one makes delta_k vary across trajectories.
WeightGenerator hashed_weight_generator(const MicroDecPomdp& m, std::uint64_t salt);

/// Two-agent corridor of length 2 (4 states, horizon 3). Reaching the flag
/// with both agents is absorbing and pays 10; otherwise 5 * fraction on flag.
MicroDecPomdp micro_coordgrid();
/// Two agents toggling a noisy two-bit switch; stochastic transitions, dense
/// hidden reward.
MicroDecPomdp micro_noisy_switch();
/// Three agents, one state bit each, slip noise, horizon 2.
MicroDecPomdp micro_three_agent_bits();
std::vector<MicroDecPomdp> micro_suite();

// --- advantage variance ---------------------------------------------------

struct AdvantageStats {
  double var_total = 0.0;    // Var(A_i + A_not_i)
  double var_agent = 0.0;    // Var(A_i)
  double var_others = 0.0;   // Var(A_not_i)
  double covariance = 0.0;   // Cov(A_i, A_not_i)
  double bound = 0.0;        // (sqrt Var(A_i) + sqrt Var(A_not_i))^2
  bool bound_holds = true;
};

/// Unbiased sample moments of the decomposition A = A_i + A_not_i and the
/// Cauchy-Schwarz upper bound on Var(A).
AdvantageStats advantage_decomposition(const Eigen::VectorXd& agent_advantage,
                                       const Eigen::VectorXd& others_advantage, double slack = 1e-9);

struct VarianceRow {
  int n_agents = 0;
  double var_total = 0.0;
  double expected = 0.0;  // N * sigma^2
  double ratio() const { return n_agents > 0 ? var_total / n_agents : 0.0; }
};

struct VarianceTable {
  std::vector<VarianceRow> rows;
  bool monotone = true;
};

/// Var(sum of N iid N(0, sigma^2) per-agent contributions) for each N.
VarianceTable variance_vs_agents(const std::vector<int>& agent_counts, std::size_t trials, std::uint64_t seed,
                                 double sigma = 1.0);

}  // namespace tar2
