#pragma once

// Independent-learner policy optimization on redistributed rewards, with a
// warm-up phase during which only the reward model learns.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tar2/envs.hpp"
#include "tar2/policy.hpp"
#include "tar2/redistributors.hpp"
#include "tar2/reward_model.hpp"

namespace tar2 {

enum class Algorithm { Reinforce, Ppo };
/// Total: every step of agent k is weighted by G_k = sum_t r_{k,t}.
/// ToGo: step t is weighted by sum_{t' >= t} r_{k,t'}.
enum class ReturnMode { Total, ToGo };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& name);
std::string to_string(ReturnMode m);
ReturnMode return_mode_from_string(const std::string& name);

struct TrainConfig {
  EnvSpec env;
  RedistributorKind redistributor = RedistributorKind::Tar2;
  SplitMode ircr_mode = SplitMode::Conserving;
  Algorithm algorithm = Algorithm::Reinforce;
  ReturnMode return_mode = ReturnMode::Total;
  int episodes = 5000;
  int warmup_episodes = 200;
  int refit_period = 100;
  int model_buffer = 500;
  bool freeze_model = false;  // no refits once warm-up ends
  double lr_policy = 0.05;
  double baseline_rate = 0.05;
  double ppo_clip = 0.2;
  int ppo_epochs = 4;
  int batch_size = 10;
  int eval_period = 500;
  int policy_hidden = 16;
  std::uint64_t seed = 0;
  RewardModelConfig model;  // obs_dim / n_actions are taken from the env
  FitOptions fit;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// splitmix64-based derivation of independent stream seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Worker count from TAR2_THREADS, defaulting to the number of logical cores.
int rollout_threads();

/// Samples `n` episodes under `policy`. Episode j uses the stream
/// derive_seed(seed, first_index + j), so the result does not depend on the
/// worker count.
std::vector<EpisodeResult> collect_rollouts(const PolicyParams& policy, const EnvSpec& spec, int n,
                                            std::uint64_t seed, std::uint64_t first_index = 0, int threads = 1);

/// Per-agent state-independent running-mean baselines: a scalar for total
/// returns, one value per timestep for returns-to-go.
struct Baselines {
  std::vector<Eigen::VectorXd> per_agent;  // [agent](t)
  double rate = 0.05;
};

struct UpdateStats {
  std::vector<double> grad_norms;  // per agent
  double grad_norm = 0.0;          // over all agents
  double clip_fraction = 0.0;      // PPO only
};

/// Weight of step t for agent k: total or to-go sum of r_{k,.}.
Eigen::VectorXd agent_returns(const RedistributionMatrix<double>& r, Eigen::Index k, ReturnMode mode);

/// theta_k += lr * mean_episodes sum_t grad log pi_k(a_{k,t}|o_{k,t}) * (G_{k,t} - b_{k,t}).
/// Agent k reads only column k of each redistribution and its own history.
/// `baselines` may be null for the plain estimator.
UpdateStats reinforce_update(PolicyParams& policy, std::span<const EpisodeResult> buffer,
                             std::span<const RedistributionMatrix<double>> rewards, double lr, ReturnMode mode,
                             Baselines* baselines = nullptr);

/// Clipped surrogate min(rho A, clip(rho, 1-eps, 1+eps) A).
double clipped_surrogate(double ratio, double advantage, double eps);

struct PpoOptions {
  double lr = 0.05;
  double clip = 0.2;
  int epochs = 4;
};

/// Per-agent PPO on the advantage to-go(r_{k,.})_t - b_{k,t}, full-batch
/// gradient ascent for `epochs` passes against the pre-update policy.
UpdateStats ppo_clip_update(PolicyParams& policy, std::span<const EpisodeResult> buffer,
                            std::span<const RedistributionMatrix<double>> rewards, const PpoOptions& options,
                            Baselines* baselines = nullptr);

struct MetricsRow {
  int episode = 0;
  int phase = 2;
  double return_env = 0.0;
  bool success = false;
  double delta_mean = 0.0;
  double model_loss = 0.0;  // NaN when no model has been fit
  double policy_grad_norm = 0.0;
  double entropy = 0.0;
};

struct TrainingResult {
  std::vector<MetricsRow> metrics;
  PolicyParams policy;
  std::optional<RewardModelParams> model;
  bool aborted = false;
  std::string error;
  double trailing_success(int window = 100) const;
  /// First episode index at which the trailing-`window` success mean reaches
  /// `threshold`, or -1.
  int episodes_to(double threshold, int window = 100) const;
};

using MetricsSink = std::function<void(const MetricsRow&)>;

/// Runs the full schedule. Errors from an update end the run early with
/// `aborted` set; metrics gathered so far are kept.
TrainingResult run_training(const TrainConfig& cfg, const MetricsSink& sink = nullptr);

}  // namespace tar2
