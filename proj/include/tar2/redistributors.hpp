#pragma once

// Turns (trajectory, episodic return) into per-agent, per-step rewards.
// One function per experimental arm plus a small value type that selects an
// arm by name.

#include <optional>
#include <string>
#include <vector>

#include "tar2/core.hpp"
#include "tar2/reward_model.hpp"
#include "tar2/trajectory.hpp"

namespace tar2 {

enum class RedistributorKind { Episodic, Ircr, TemporalOnly, Oracle, Tar2 };

/// Names accepted on the command line and in configs:
/// episodic|ircr|temporal|oracle|tar2.
std::string to_string(RedistributorKind kind);
RedistributorKind redistributor_from_string(const std::string& name);
const std::vector<std::string>& redistributor_names();
bool uses_model(RedistributorKind kind);

/// Conserving splits each step's share equally across agents. Broadcast
/// hands every agent the full global per-step signal, so the matrix total is
/// N*R and it is flagged non-conserving.
enum class SplitMode { Conserving, Broadcast };

/// Terminal return split equally across agents on the final step.
RedistributionMatrix<double> redistribute_episodic(const Trajectory& traj, SplitMode mode = SplitMode::Conserving);

/// r_global,t = R/T on every step.
RedistributionMatrix<double> redistribute_ircr(const Trajectory& traj, SplitMode mode = SplitMode::Conserving);

/// Temporal weights from the model, agent weights forced uniform.
RedistributionMatrix<double> redistribute_temporal_only(const Trajectory& traj, const RewardModelParams& model);

RedistributionMatrix<double> redistribute_oracle(const Trajectory& traj, const ContributionMatrix<double>& oracle);

/// Full temporal-agent redistribution r_{i,t} = w'_{t,i} w_t R.
RedistributionMatrix<double> redistribute_tar2(const Trajectory& traj, const RewardModelParams& model);

/// Single entry point over all arms. `model` is required for temporal/tar2,
/// `oracle` for the oracle arm.
struct Redistributor {
  RedistributorKind kind = RedistributorKind::Episodic;
  SplitMode split = SplitMode::Conserving;

  RedistributionMatrix<double> operator()(const Trajectory& traj, const RewardModelParams* model,
                                          const ContributionMatrix<double>* oracle) const;
};

}  // namespace tar2
