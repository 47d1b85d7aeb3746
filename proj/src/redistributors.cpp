#include "tar2/redistributors.hpp"

namespace tar2 {

const std::vector<std::string>& redistributor_names() {
  static const std::vector<std::string> names{"episodic", "ircr", "temporal", "oracle", "tar2"};
  return names;
}

std::string to_string(RedistributorKind kind) {
  return redistributor_names()[static_cast<std::size_t>(kind)];
}

RedistributorKind redistributor_from_string(const std::string& name) {
  const auto& names = redistributor_names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (names[k] == name) return static_cast<RedistributorKind>(k);
  }
  throw ConfigError("redistributor: unknown name '" + name + "' (expected episodic|ircr|temporal|oracle|tar2)");
}

bool uses_model(RedistributorKind kind) {
  return kind == RedistributorKind::TemporalOnly || kind == RedistributorKind::Tar2;
}

namespace {

RedistributionMatrix<double> split_global(const Eigen::VectorXd& per_step, double R, Index agents, SplitMode mode) {
  RedistributionMatrix<double> out;
  out.source_return = R;
  const double share = mode == SplitMode::Conserving ? 1.0 / static_cast<double>(agents) : 1.0;
  out.rewards = per_step.replicate(1, agents) * share;
  out.conserving = mode == SplitMode::Conserving;
  return out;
}

}  // namespace

RedistributionMatrix<double> redistribute_episodic(const Trajectory& traj, SplitMode mode) {
  traj.check();
  Eigen::VectorXd per_step = Eigen::VectorXd::Zero(traj.steps);
  per_step(traj.steps - 1) = traj.episodic_return;
  return split_global(per_step, traj.episodic_return, traj.agents, mode);
}

RedistributionMatrix<double> redistribute_ircr(const Trajectory& traj, SplitMode mode) {
  traj.check();
  const Eigen::VectorXd per_step =
      Eigen::VectorXd::Constant(traj.steps, traj.episodic_return / static_cast<double>(traj.steps));
  return split_global(per_step, traj.episodic_return, traj.agents, mode);
}

RedistributionMatrix<double> redistribute_temporal_only(const Trajectory& traj, const RewardModelParams& model) {
  WeightMatrix<double> w = extract_weights(model, traj);
  w.agent.setConstant(1.0 / static_cast<double>(traj.agents));
  return redistribute_with_weights(w, traj.episodic_return);
}

RedistributionMatrix<double> redistribute_oracle(const Trajectory& traj, const ContributionMatrix<double>& oracle) {
  traj.check();
  if (oracle.rows() != traj.steps || oracle.cols() != traj.agents) {
    throw DimensionError("redistribute_oracle: oracle is " + std::to_string(oracle.rows()) + "x" +
                         std::to_string(oracle.cols()) + ", trajectory is " + std::to_string(traj.steps) + "x" +
                         std::to_string(traj.agents));
  }
  return redistribute_with_weights(weights_from_contributions(oracle), traj.episodic_return);
}

RedistributionMatrix<double> redistribute_tar2(const Trajectory& traj, const RewardModelParams& model) {
  return redistribute_with_weights(extract_weights(model, traj), traj.episodic_return);
}

RedistributionMatrix<double> Redistributor::operator()(const Trajectory& traj, const RewardModelParams* model,
                                                       const ContributionMatrix<double>* oracle) const {
  switch (kind) {
    case RedistributorKind::Episodic:
      return redistribute_episodic(traj, split);
    case RedistributorKind::Ircr:
      return redistribute_ircr(traj, split);
    case RedistributorKind::TemporalOnly:
    case RedistributorKind::Tar2:
      if (model == nullptr) throw StateError("redistributor '" + to_string(kind) + "' needs a reward model");
      return kind == RedistributorKind::Tar2 ? redistribute_tar2(traj, *model)
                                             : redistribute_temporal_only(traj, *model);
    case RedistributorKind::Oracle:
      if (oracle == nullptr) throw StateError("redistributor 'oracle' needs oracle contributions");
      return redistribute_oracle(traj, *oracle);
  }
  throw StateError("redistributor: unknown kind");
}

}  // namespace tar2
