#include "tar2/envs.hpp"

#include <algorithm>
#include <cstdlib>

namespace tar2 {

std::string to_string(EnvId id) {
  switch (id) {
    case EnvId::CoordGrid:
      return "coordgrid";
    case EnvId::Skirmish:
      return "skirmish";
  }
  return "unknown";
}

EnvId env_id_from_string(const std::string& name) {
  if (name == "coordgrid") return EnvId::CoordGrid;
  if (name == "skirmish") return EnvId::Skirmish;
  throw ConfigError("env.id: unknown environment '" + name + "' (expected coordgrid|skirmish)");
}

void EnvSpec::validate() const {
  auto positive = [](int v, const char* field) {
    if (v < 1) {
      throw ConfigError(std::string("env.") + field + ": must be positive, got " + std::to_string(v));
    }
  };
  positive(horizon, "horizon");
  if (n_agents < 2) {
    throw ConfigError("env.n_agents: need at least 2 agents, got " + std::to_string(n_agents));
  }
  if (id == EnvId::CoordGrid) {
    positive(corridor_length, "corridor_length");
  } else {
    positive(hp, "hp");
    positive(damage, "damage");
    positive(enemies, "enemies");
  }
}

// ---------------------------------------------------------------------------

Environment::Environment(EnvSpec spec) : spec_(spec) { spec_.validate(); }

JointObservation Environment::reset() {
  reset_state();
  t_ = 0;
  done_ = false;
  started_ = true;
  obs_history_.clear();
  action_history_.clear();
  credit_history_.clear();
  current_obs_ = observe();
  return {current_obs_, 0};
}

StepResult Environment::step(std::span<const int> actions) {
  if (done_) {
    throw StateError(started_ ? "env_step: episode already done" : "env_step: reset() not called");
  }
  if (static_cast<int>(actions.size()) != spec_.n_agents) {
    throw DomainError("env_step: expected " + std::to_string(spec_.n_agents) + " actions, got " +
                      std::to_string(actions.size()));
  }
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i] < 0 || actions[i] >= n_actions()) {
      throw DomainError("env_step: action " + std::to_string(actions[i]) + " of agent " + std::to_string(i) +
                        " out of range [0," + std::to_string(n_actions()) + ")");
    }
  }
  Eigen::RowVectorXd credit = Eigen::RowVectorXd::Zero(spec_.n_agents);
  Eigen::RowVectorXi acts(spec_.n_agents);
  for (int i = 0; i < spec_.n_agents; ++i) acts(i) = actions[i];

  obs_history_.push_back(current_obs_);
  action_history_.push_back(acts);
  const bool terminal = advance(actions, credit);
  credit_history_.push_back(credit);
  ++t_;
  done_ = terminal || t_ >= spec_.horizon;
  current_obs_ = observe();

  StepResult out;
  out.observation = {current_obs_, t_};
  out.done = done_;
  out.info.t = t_;
  out.info.reward = done_ ? compute_return() : 0.0;
  return out;
}

void Environment::require_done(const char* what) const {
  if (!started_ || !done_) {
    throw StateError(std::string(what) + ": episode not finished");
  }
}

double Environment::episodic_return() const {
  require_done("env_episodic_return");
  return compute_return();
}

ContributionMatrix<double> Environment::oracle_contributions() const {
  require_done("env_oracle_contributions");
  ContributionMatrix<double> c(static_cast<Index>(credit_history_.size()), spec_.n_agents);
  for (std::size_t t = 0; t < credit_history_.size(); ++t) c.row(static_cast<Index>(t)) = credit_history_[t];
  return c;
}

bool Environment::success() const {
  require_done("env_success");
  return compute_success();
}

EpisodeResult Environment::result() const {
  require_done("env_result");
  EpisodeResult r;
  r.spec = spec_;
  const Index T = static_cast<Index>(obs_history_.size());
  const Index N = spec_.n_agents;
  Trajectory& traj = r.trajectory;
  traj.steps = T;
  traj.agents = N;
  traj.observations.resize(T * N, obs_dim());
  traj.actions.resize(T, N);
  for (Index t = 0; t < T; ++t) {
    traj.observations.middleRows(t * N, N) = obs_history_[static_cast<std::size_t>(t)];
    traj.actions.row(t) = action_history_[static_cast<std::size_t>(t)];
  }
  r.episodic_return = compute_return();
  traj.episodic_return = r.episodic_return;
  r.oracle = oracle_contributions();
  r.success = compute_success();
  return r;
}

// ---------------------------------------------------------------------------

CoordGrid::CoordGrid(EnvSpec spec) : Environment(spec) {
  if (spec_.id != EnvId::CoordGrid) throw ConfigError("env.id: CoordGrid constructed from non-coordgrid spec");
}

void CoordGrid::reset_state() { positions_.assign(static_cast<std::size_t>(spec_.n_agents), 0); }

Eigen::MatrixXd CoordGrid::observe() const {
  Eigen::MatrixXd obs(spec_.n_agents, obs_dim());
  for (int i = 0; i < spec_.n_agents; ++i) {
    const int p = positions_[static_cast<std::size_t>(i)];
    obs(i, 0) = p;
    obs(i, 1) = flag();
    obs(i, 2) = p == flag() ? 1.0 : 0.0;
  }
  return obs;
}

bool CoordGrid::advance(std::span<const int> actions, Eigen::Ref<Eigen::RowVectorXd> credit) {
  const int last = spec_.corridor_length - 1;
  for (int i = 0; i < spec_.n_agents; ++i) {
    int& p = positions_[static_cast<std::size_t>(i)];
    const int before = std::abs(flag() - p);
    p = std::clamp(p + actions[static_cast<std::size_t>(i)] - 1, 0, last);
    if (std::abs(flag() - p) < before) credit(i) = 1.0;
  }
  return agents_on_flag() == spec_.n_agents;
}

int CoordGrid::agents_on_flag() const {
  return static_cast<int>(std::count(positions_.begin(), positions_.end(), flag()));
}

double CoordGrid::compute_return() const {
  const int reached = agents_on_flag();
  if (reached == spec_.n_agents) return kSuccessPayout;
  return kPartialPayout * static_cast<double>(reached) / static_cast<double>(spec_.n_agents);
}

bool CoordGrid::compute_success() const { return agents_on_flag() == spec_.n_agents; }

// ---------------------------------------------------------------------------

Skirmish::Skirmish(EnvSpec spec) : Environment(spec) {
  if (spec_.id != EnvId::Skirmish) throw ConfigError("env.id: Skirmish constructed from non-skirmish spec");
}

double Skirmish::scale() const {
  const double max_raw = static_cast<double>(spec_.enemies) * (spec_.hp + kKillReward) + kWipeBonusPool;
  return kMaxGroupReturn / max_raw;
}

void Skirmish::reset_state() {
  agent_hp_.assign(static_cast<std::size_t>(spec_.n_agents), spec_.hp);
  enemy_hp_.assign(static_cast<std::size_t>(spec_.enemies), spec_.hp);
  raw_ = 0.0;
}

Eigen::MatrixXd Skirmish::observe() const {
  Eigen::MatrixXd obs(spec_.n_agents, obs_dim());
  for (int i = 0; i < spec_.n_agents; ++i) {
    obs(i, 0) = agent_hp_[static_cast<std::size_t>(i)];
    for (int j = 0; j < spec_.enemies; ++j) obs(i, 1 + j) = enemy_hp_[static_cast<std::size_t>(j)];
  }
  return obs;
}

bool Skirmish::enemies_wiped() const {
  return std::all_of(enemy_hp_.begin(), enemy_hp_.end(), [](int hp) { return hp <= 0; });
}

bool Skirmish::team_wiped() const {
  return std::all_of(agent_hp_.begin(), agent_hp_.end(), [](int hp) { return hp <= 0; });
}

bool Skirmish::advance(std::span<const int> actions, Eigen::Ref<Eigen::RowVectorXd> credit) {
  // Agents strike first, in index order; a strike on a dead enemy is wasted.
  for (int i = 0; i < spec_.n_agents; ++i) {
    if (agent_hp_[static_cast<std::size_t>(i)] <= 0) continue;
    const int a = actions[static_cast<std::size_t>(i)];
    if (a == 0) continue;
    int& target = enemy_hp_[static_cast<std::size_t>(a - 1)];
    if (target <= 0) continue;
    const int dealt = std::min(spec_.damage, target);
    target -= dealt;
    double gained = dealt;
    if (target == 0) gained += kKillReward;
    credit(i) += gained;
    raw_ += gained;
  }

  if (enemies_wiped()) {
    const auto survivors = std::count_if(agent_hp_.begin(), agent_hp_.end(), [](int hp) { return hp > 0; });
    raw_ += kWipeBonusPool / spec_.n_agents * static_cast<double>(survivors);
    return true;
  }

  for (int j = 0; j < spec_.enemies; ++j) {
    if (enemy_hp_[static_cast<std::size_t>(j)] <= 0) continue;
    int target = -1;
    int best = 0;
    for (int i = 0; i < spec_.n_agents; ++i) {
      if (agent_hp_[static_cast<std::size_t>(i)] <= 0) continue;
      const int distance = std::abs(i - j);
      if (target < 0 || distance < best) {
        target = i;
        best = distance;
      }
    }
    if (target < 0) break;
    int& hp = agent_hp_[static_cast<std::size_t>(target)];
    hp = std::max(0, hp - spec_.damage);
  }
  return team_wiped();
}

double Skirmish::compute_return() const { return raw_ * scale(); }

bool Skirmish::compute_success() const { return enemies_wiped(); }

std::unique_ptr<Environment> make_environment(const EnvSpec& spec) {
  switch (spec.id) {
    case EnvId::CoordGrid:
      return std::make_unique<CoordGrid>(spec);
    case EnvId::Skirmish:
      return std::make_unique<Skirmish>(spec);
  }
  throw ConfigError("env.id: unsupported environment");
}

}  // namespace tar2
