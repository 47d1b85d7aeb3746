#pragma once

// Episodic-reward cooperative Dec-POMDPs with ground-truth per-step credit.
//
// Both environments accumulate a dense reward internally and only reveal it
// once the episode terminates. Each agent observes a small local vector and
// never the global state.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tar2/core.hpp"
#include "tar2/trajectory.hpp"

namespace tar2 {

enum class EnvId { CoordGrid, Skirmish };

std::string to_string(EnvId id);
EnvId env_id_from_string(const std::string& name);

struct EnvSpec {
  EnvId id = EnvId::CoordGrid;
  int n_agents = 2;
  int horizon = 8;
  std::uint64_t seed = 0;
  // coordgrid
  int corridor_length = 3;
  // skirmish
  int hp = 3;
  int damage = 1;
  int enemies = 2;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const EnvSpec&) const = default;
};

struct JointObservation {
  Eigen::MatrixXd per_agent;  // N x obs_dim, row i is o_{i,t}
  int t = 0;
};

struct StepInfo {
  // Zero on every step except the terminal one, where it carries the
  // episodic return.
  double reward = 0.0;
  int t = 0;
};

struct StepResult {
  JointObservation observation;
  bool done = false;
  StepInfo info;
};

struct EpisodeResult {
  EnvSpec spec;
  Trajectory trajectory;
  double episodic_return = 0.0;
  ContributionMatrix<double> oracle;
  bool success = false;
};

class Environment {
 public:
  explicit Environment(EnvSpec spec);
  virtual ~Environment() = default;

  const EnvSpec& spec() const { return spec_; }
  int n_agents() const { return spec_.n_agents; }
  virtual int obs_dim() const = 0;
  virtual int n_actions() const = 0;

  JointObservation reset();
  StepResult step(std::span<const int> actions);
  bool done() const { return done_; }
  int timestep() const { return t_; }

  double episodic_return() const;
  ContributionMatrix<double> oracle_contributions() const;
  bool success() const;
  EpisodeResult result() const;

 protected:
  virtual void reset_state() = 0;
  virtual Eigen::MatrixXd observe() const = 0;
  // Advances the hidden state, writing per-agent credit for this step into
  // `credit`. Returns true when a terminal condition other than the horizon
  // was reached.
  virtual bool advance(std::span<const int> actions, Eigen::Ref<Eigen::RowVectorXd> credit) = 0;
  virtual double compute_return() const = 0;
  virtual bool compute_success() const = 0;

  EnvSpec spec_;

 private:
  void require_done(const char* what) const;

  int t_ = 0;
  bool done_ = true;
  bool started_ = false;
  Eigen::MatrixXd current_obs_;
  std::vector<Eigen::MatrixXd> obs_history_;
  std::vector<Eigen::RowVectorXi> action_history_;
  std::vector<Eigen::RowVectorXd> credit_history_;
};

/// 1-D corridor of length L. Every agent starts at cell 0 and must stand on
/// its flag at cell L-1; the episode succeeds when all agents are on their
/// flags at once. Actions: 0 left, 1 stay, 2 right.
/// Observation: [own position, own flag position, on-flag bit].
class CoordGrid final : public Environment {
 public:
  static constexpr int kLeft = 0;
  static constexpr int kStay = 1;
  static constexpr int kRight = 2;
  static constexpr double kSuccessPayout = 10.0;
  static constexpr double kPartialPayout = 5.0;

  explicit CoordGrid(EnvSpec spec);
  int obs_dim() const override { return 3; }
  int n_actions() const override { return 3; }
  int flag() const { return spec_.corridor_length - 1; }
  const std::vector<int>& positions() const { return positions_; }

 protected:
  void reset_state() override;
  Eigen::MatrixXd observe() const override;
  bool advance(std::span<const int> actions, Eigen::Ref<Eigen::RowVectorXd> credit) override;
  double compute_return() const override;
  bool compute_success() const override;

 private:
  int agents_on_flag() const;
  std::vector<int> positions_;
};

/// Team of N agents against E scripted enemies, all with HP hit points.
/// Actions: 0 hold, j in 1..E attacks enemy j-1 for `damage`. Each living
/// enemy then strikes the living agent nearest to it by index.
/// Raw reward: damage dealt, +10 per kill, and 200/N per surviving agent when
/// the enemy team is wiped; the return is scaled so that its maximum is 20.
/// Observation: [own HP, HP of each enemy].
class Skirmish final : public Environment {
 public:
  static constexpr double kKillReward = 10.0;
  static constexpr double kWipeBonusPool = 200.0;
  static constexpr double kMaxGroupReturn = 20.0;

  explicit Skirmish(EnvSpec spec);
  int obs_dim() const override { return 1 + spec_.enemies; }
  int n_actions() const override { return 1 + spec_.enemies; }

  /// Multiplier taking raw reward to the normalized return.
  double scale() const;
  double raw_reward() const { return raw_; }
  const std::vector<int>& agent_hp() const { return agent_hp_; }
  const std::vector<int>& enemy_hp() const { return enemy_hp_; }

 protected:
  void reset_state() override;
  Eigen::MatrixXd observe() const override;
  bool advance(std::span<const int> actions, Eigen::Ref<Eigen::RowVectorXd> credit) override;
  double compute_return() const override;
  bool compute_success() const override;

 private:
  bool enemies_wiped() const;
  bool team_wiped() const;

  std::vector<int> agent_hp_;
  std::vector<int> enemy_hp_;
  double raw_ = 0.0;
};

std::unique_ptr<Environment> make_environment(const EnvSpec& spec);

}  // namespace tar2
