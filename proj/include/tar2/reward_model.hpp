#pragma once

// Temporal-agent attention reward model.
//
// Every (t, i) state-action tuple becomes one token. A block applies
// multi-head attention over time within each agent's sequence, then
// multi-head attention across agents within each timestep, then a tanh
// feed-forward layer, each with a residual connection. A softplus head maps
// every token to a nonnegative contribution and the predicted return is the
// sum of all contributions. Temporal attention is full (hindsight) by
// default: each step may attend to every step of its agent, including the
// last one.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tar2/autodiff.hpp"
#include "tar2/core.hpp"
#include "tar2/trajectory.hpp"

namespace tar2 {

enum class PositionalEncoding { Sinusoidal, Learned };
enum class TemporalMask { Hindsight, Causal };

struct RewardModelConfig {
  int obs_dim = 3;
  int n_actions = 3;
  int d_model = 32;
  int n_heads = 2;
  int n_blocks = 2;
  int d_ff = 64;
  PositionalEncoding positional = PositionalEncoding::Sinusoidal;
  TemporalMask temporal_mask = TemporalMask::Hindsight;
  // One-hot agent index in the token encoding. Off keeps the model
  // equivariant to agent permutations.
  bool agent_id = false;
  int max_agents = 8;
  int max_steps = 64;
  // Zero head weights and bias: every contribution starts at softplus(0).
  bool zero_head = true;
  std::uint64_t init_seed = 0;

  void validate() const;
  int input_dim() const { return obs_dim + n_actions + (agent_id ? max_agents : 0); }
  int head_dim() const { return d_model / n_heads; }
  bool operator==(const RewardModelConfig&) const = default;
};

struct ParamTensor {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
};

/// All trainable tensors of the model with matching gradient buffers.
class RewardModelParams {
 public:
  RewardModelParams() = default;
  explicit RewardModelParams(const RewardModelConfig& config);

  /// Fresh parameters drawn from `config.init_seed`.
  static RewardModelParams initialize(const RewardModelConfig& config);

  const RewardModelConfig& config() const { return config_; }
  std::vector<ParamTensor>& tensors() { return tensors_; }
  const std::vector<ParamTensor>& tensors() const { return tensors_; }
  const ParamTensor& tensor(const std::string& name) const;
  ParamTensor& tensor(const std::string& name);

  Eigen::Index size() const;
  Eigen::VectorXd flat() const;
  void set_flat(const Eigen::VectorXd& values);
  Eigen::VectorXd flat_grad() const;
  void zero_grad();
  bool all_finite() const;

 private:
  void add(std::string name, Eigen::Index rows, Eigen::Index cols);
  RewardModelConfig config_;
  std::vector<ParamTensor> tensors_;
};

struct ModelOutput {
  ContributionMatrix<double> contributions;  // T x N, >= 0
  double predicted_return = 0.0;
};

/// Token encoding used by the model: row t*N+i is
/// [o_{i,t}, onehot(a_{i,t}), onehot(i) if agent_id].
Eigen::MatrixXd encode_tokens(const RewardModelConfig& config, const Trajectory& traj);

ModelOutput model_forward(const RewardModelParams& params, const Trajectory& traj);

/// Builds the forward graph on `tape`; parameter leaves accumulate into
/// params' gradient buffers. Returns the (T*N)x1 contribution node.
ad::Var model_graph(ad::Tape& tape, RewardModelParams& params, const Trajectory& traj);

struct LossGrad {
  double loss = 0.0;
};

/// Mean squared error of the predicted return against each trajectory's
/// episodic return. Overwrites every gradient buffer in `params`.
LossGrad model_loss_grad(RewardModelParams& params, std::span<const Trajectory* const> batch);
double model_loss(const RewardModelParams& params, std::span<const Trajectory* const> batch);

struct FitOptions {
  int epochs = 5;
  double lr = 1e-3;
  int minibatch = 32;
  std::uint64_t seed = 0;
  double divergence_threshold = 1e12;
  bool operator==(const FitOptions&) const = default;
};

struct FitReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;  // full-buffer MSE after each epoch
  double final_loss() const { return epoch_loss.empty() ? initial_loss : epoch_loss.back(); }
};

/// Plain minibatch SGD with a seeded shuffle per epoch.
FitReport model_fit(RewardModelParams& params, std::span<const Trajectory* const> buffer, const FitOptions& options);

/// Normalized head contributions as temporal and agent weights.
WeightMatrix<double> extract_weights(const RewardModelParams& params, const Trajectory& traj);

}  // namespace tar2
