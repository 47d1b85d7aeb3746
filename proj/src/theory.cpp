#include "tar2/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace tar2 {

namespace {

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[200];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

}  // namespace

// --- shaping ------------------------------------------------------------------

WeightMatrix<double> random_weights(std::mt19937_64& rng, Eigen::Index T, Eigen::Index N, double sparsity) {
  if (T < 1 || N < 1) throw DimensionError("random_weights: need T>=1 and N>=1");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ContributionMatrix<double> c(T, N);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index i = 0; i < N; ++i) {
      // Exponential draws give uniform points on the simplex after normalizing.
      c(t, i) = unit(rng) < sparsity ? 0.0 : -std::log1p(-unit(rng));
    }
  }
  return weights_from_contributions(c);
}

PotentialSequence potential_sequence(const WeightMatrix<double>& w, double R, Eigen::Index agent) {
  if (agent < 0 || agent >= w.agents()) {
    throw DimensionError("potential_sequence: agent index " + std::to_string(agent) + " out of range");
  }
  const auto report = validate_weights(w);
  if (!report.ok()) throw ConstraintError("potential_sequence: " + report.violations.front().message);
  PotentialSequence p;
  p.agent = agent;
  p.phi = Eigen::VectorXd::Zero(w.steps() + 1);
  for (Eigen::Index t = 0; t < w.steps(); ++t) p.phi(t + 1) = p.phi(t) + R * w.temporal(t) * w.agent(t, agent);
  return p;
}

CheckReport shaping_check(const RedistributionMatrix<double>& r, const WeightMatrix<double>& w, double R, double tol) {
  CheckReport report{"shaping_telescoping", true, 0.0, {}};
  if (r.steps() != w.steps() || r.agents() != w.agents()) {
    report.fail("redistribution and weights have different shapes");
    return report;
  }
  double telescoped = 0.0;
  for (Eigen::Index i = 0; i < w.agents(); ++i) {
    const PotentialSequence p = potential_sequence(w, R, i);
    for (Eigen::Index t = 0; t < w.steps(); ++t) {
      const double err = std::abs(r.rewards(t, i) - (p.phi(t + 1) - p.phi(t)));
      report.max_abs_err = std::max(report.max_abs_err, err);
      if (err > tol) {
        report.fail("cell (t=" + std::to_string(t) + ", i=" + std::to_string(i) + ")" +
                    fmt(": r=%.12g, phi diff=%.12g", r.rewards(t, i), p.phi(t + 1) - p.phi(t)));
      }
    }
    telescoped += p.phi(w.steps()) - p.phi(0);
  }
  const double total_err = std::abs(telescoped - R);
  report.max_abs_err = std::max(report.max_abs_err, total_err);
  if (total_err > tol * std::max(1.0, std::abs(R))) {
    report.fail(fmt("telescoped sum %.12g != R=%.12g", telescoped, R));
  }
  return report;
}

CheckReport shaping_check(const WeightMatrix<double>& w, double R, double tol) {
  return shaping_check(redistribute_with_weights(w, R), w, R, tol);
}

// --- delta_k --------------------------------------------------------------------

double delta_k(const WeightMatrix<double>& w, Eigen::Index k) {
  if (k < 0 || k >= w.agents()) throw DimensionError("delta_k: agent index out of range");
  double m = 0.0;
  for (Eigen::Index t = 0; t < w.steps(); ++t) m += w.temporal(t) * (1.0 - w.agent(t, k));
  return 1.0 - m;
}

double delta_k_weighted(const WeightMatrix<double>& w, Eigen::Index k) {
  if (k < 0 || k >= w.agents()) throw DimensionError("delta_k: agent index out of range");
  return w.temporal.dot(w.agent.col(k));
}

CheckReport pathwise_identity_check(const RedistributionMatrix<double>& r, const WeightMatrix<double>& w,
                                    Eigen::Index k, double tol) {
  CheckReport report{"pathwise_scaling", true, 0.0, {}};
  if (r.steps() != w.steps() || r.agents() != w.agents()) {
    report.fail("redistribution and weights have different shapes");
    return report;
  }
  const double lhs = r.rewards.col(k).sum();
  const double rhs = delta_k(w, k) * r.source_return;
  report.max_abs_err = std::abs(lhs - rhs);
  if (report.max_abs_err > tol * std::max(1.0, std::abs(r.source_return))) {
    report.fail("agent " + std::to_string(k) + fmt(": sum_t r=%.12g, delta*R=%.12g", lhs, rhs));
  }
  return report;
}

// --- micro Dec-POMDPs ------------------------------------------------------------

int MicroDecPomdp::n_joint() const {
  int j = 1;
  for (int a : n_actions) j *= a;
  return j;
}

std::vector<int> MicroDecPomdp::decode(int joint) const {
  std::vector<int> a(n_actions.size());
  for (std::size_t i = 0; i < n_actions.size(); ++i) {
    a[i] = joint % n_actions[i];
    joint /= n_actions[i];
  }
  return a;
}

void MicroDecPomdp::validate() const {
  if (n_states < 1 || n_states > kMaxMicroStates) throw DimensionError(name + ": state count outside [1,8]");
  if (horizon < 1 || horizon > kMaxMicroHorizon) throw DimensionError(name + ": horizon outside [1,4]");
  if (n_agents() < 1) throw DimensionError(name + ": no agents");
  for (int a : n_actions) {
    if (a < 1 || a > kMaxMicroActions) throw DimensionError(name + ": action count outside [1,3]");
  }
  if (static_cast<int>(n_observations.size()) != n_agents() || static_cast<int>(observation.size()) != n_agents()) {
    throw DimensionError(name + ": observation tables do not match agent count");
  }
  for (int i = 0; i < n_agents(); ++i) {
    if (static_cast<int>(observation[static_cast<std::size_t>(i)].size()) != n_states) {
      throw DimensionError(name + ": observation table has wrong state count");
    }
    for (int o : observation[static_cast<std::size_t>(i)]) {
      if (o < 0 || o >= n_observations[static_cast<std::size_t>(i)]) throw DimensionError(name + ": bad observation id");
    }
  }
  if (initial.size() != n_states || std::abs(initial.sum() - 1.0) > 1e-12 || (initial.array() < 0).any()) {
    throw DomainError(name + ": initial distribution invalid");
  }
  if (static_cast<int>(transition.size()) != n_states) throw DimensionError(name + ": transition table size");
  for (const auto& row : transition) {
    if (static_cast<int>(row.size()) != n_joint()) throw DimensionError(name + ": transition joint-action count");
    for (const auto& p : row) {
      if (p.size() != n_states || (p.array() < 0).any() || std::abs(p.sum() - 1.0) > 1e-12) {
        throw DomainError(name + ": transition row does not sum to 1");
      }
    }
  }
  if (step_reward.rows() != n_states || step_reward.cols() != n_joint() || terminal_reward.size() != n_states) {
    throw DimensionError(name + ": reward tables have wrong shape");
  }
  if (!credit) throw DomainError(name + ": missing credit function");
}

TabularPolicy TabularPolicy::uniform(const MicroDecPomdp& m) {
  TabularPolicy p;
  for (int i = 0; i < m.n_agents(); ++i) {
    p.theta.push_back(Eigen::MatrixXd::Zero(m.n_observations[static_cast<std::size_t>(i)],
                                            m.n_actions[static_cast<std::size_t>(i)]));
  }
  return p;
}

TabularPolicy TabularPolicy::random(const MicroDecPomdp& m, std::uint64_t seed, double scale) {
  TabularPolicy p = uniform(m);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& th : p.theta) th = th.unaryExpr([&](double) { return normal(rng); });
  return p;
}

Eigen::VectorXd TabularPolicy::probabilities(int agent, int observation) const {
  const Eigen::VectorXd logits = theta[static_cast<std::size_t>(agent)].row(observation).transpose();
  const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

namespace {

struct Enumerator {
  const MicroDecPomdp& m;
  const TabularPolicy& policy;
  std::vector<EnumeratedTrajectory>& out;
  EnumeratedTrajectory current;
  double accumulated_reward = 0.0;

  void visit(int t, int s, double prob) {
    if (t == m.horizon) {
      if (out.size() >= kMaxEnumeratedTrajectories) {
        throw CapacityError(m.name + ": more than 1e5 trajectories; enumeration refused");
      }
      EnumeratedTrajectory tau = current;
      tau.probability = prob;
      tau.env_return = accumulated_reward + m.terminal_reward(s);
      out.push_back(std::move(tau));
      return;
    }
    const int N = m.n_agents();
    std::vector<Eigen::VectorXd> probs;
    for (int i = 0; i < N; ++i) {
      probs.push_back(policy.probabilities(i, m.observation[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)]));
    }
    for (int j = 0; j < m.n_joint(); ++j) {
      const std::vector<int> a = m.decode(j);
      double pa = 1.0;
      for (int i = 0; i < N; ++i) pa *= probs[static_cast<std::size_t>(i)](a[static_cast<std::size_t>(i)]);
      current.actions.push_back(a);
      const double r = m.step_reward(s, j);
      accumulated_reward += r;
      const Eigen::VectorXd& next = m.transition[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)];
      for (int s2 = 0; s2 < m.n_states; ++s2) {
        if (next(s2) <= 0.0) continue;
        current.states.push_back(s2);
        visit(t + 1, s2, prob * pa * next(s2));
        current.states.pop_back();
      }
      accumulated_reward -= r;
      current.actions.pop_back();
    }
  }
};

// d log P(tau) / d theta_i = sum_t (e_{a_i,t} - pi_i(.|o_i,t)) on row o_i,t
void recompute_scores(const MicroDecPomdp& m, const TabularPolicy& policy, EnumeratedTrajectory& tau) {
  for (int i = 0; i < m.n_agents(); ++i) tau.score[static_cast<std::size_t>(i)].setZero();
  for (std::size_t t = 0; t < tau.actions.size(); ++t) {
    for (int i = 0; i < m.n_agents(); ++i) {
      const int o = m.observation[static_cast<std::size_t>(i)][static_cast<std::size_t>(tau.states[t])];
      auto row = tau.score[static_cast<std::size_t>(i)].row(o);
      row -= policy.probabilities(i, o).transpose();
      row(tau.actions[t][static_cast<std::size_t>(i)]) += 1.0;
    }
  }
}

}  // namespace

std::vector<EnumeratedTrajectory> enumerate_trajectories(const MicroDecPomdp& m, const TabularPolicy& policy) {
  m.validate();
  if (static_cast<int>(policy.theta.size()) != m.n_agents()) throw DimensionError("policy/agent count mismatch");
  std::vector<EnumeratedTrajectory> out;
  Enumerator e{m, policy, out, {}, 0.0};
  for (int i = 0; i < m.n_agents(); ++i) e.current.score.push_back(Eigen::MatrixXd::Zero(policy.theta[static_cast<std::size_t>(i)].rows(), policy.theta[static_cast<std::size_t>(i)].cols()));
  for (int s = 0; s < m.n_states; ++s) {
    if (m.initial(s) <= 0.0) continue;
    e.current.states = {s};
    e.visit(0, s, m.initial(s));
  }
  for (auto& tau : out) recompute_scores(m, policy, tau);
  return out;
}

ContributionMatrix<double> oracle_credit(const MicroDecPomdp& m, const EnumeratedTrajectory& tau) {
  const auto H = static_cast<Eigen::Index>(tau.actions.size());
  ContributionMatrix<double> c(H, m.n_agents());
  for (Eigen::Index t = 0; t < H; ++t) {
    for (int i = 0; i < m.n_agents(); ++i) {
      c(t, i) = m.credit(i, tau.states[static_cast<std::size_t>(t)],
                         tau.actions[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)],
                         tau.states[static_cast<std::size_t>(t) + 1]);
    }
  }
  return c;
}

Eigen::MatrixXd enumerate_exact_gradient(const std::vector<EnumeratedTrajectory>& trajectories,
                                         const TrajectoryFunctional& G, int k) {
  if (trajectories.empty()) throw DomainError("enumerate_exact_gradient: no trajectories");
  const auto& shape = trajectories.front().score.at(static_cast<std::size_t>(k));
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(shape.rows(), shape.cols());
  for (const auto& tau : trajectories) grad += tau.probability * G(tau) * tau.score[static_cast<std::size_t>(k)];
  return grad;
}

Eigen::MatrixXd enumerate_exact_gradient(const MicroDecPomdp& m, const TabularPolicy& policy,
                                         const RewardMap& reward_map, int k, RewardTarget target) {
  if (k < 0 || k >= m.n_agents()) throw DimensionError("enumerate_exact_gradient: agent index out of range");
  const auto trajectories = enumerate_trajectories(m, policy);
  return enumerate_exact_gradient(
      trajectories,
      [&](const EnumeratedTrajectory& tau) {
        const auto r = reward_map(tau);
        return target == RewardTarget::AllAgents ? r.rewards.sum() : r.rewards.col(k).sum();
      },
      k);
}

MonteCarloGradient reinforce_gradient_estimate(const MicroDecPomdp& m, const TabularPolicy& policy,
                                               const TrajectoryFunctional& G, int k, std::size_t samples,
                                               std::uint64_t seed) {
  m.validate();
  if (samples < 2) throw DomainError("reinforce_gradient_estimate: need at least 2 samples");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](const Eigen::VectorXd& p) {
    double u = unit(rng);
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      u -= p(j);
      if (u < 0.0) return static_cast<int>(j);
    }
    return static_cast<int>(p.size() - 1);
  };
  const auto rows = policy.theta[static_cast<std::size_t>(k)].rows();
  const auto cols = policy.theta[static_cast<std::size_t>(k)].cols();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(rows, cols);
  Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(rows, cols);
  EnumeratedTrajectory tau;
  for (int i = 0; i < m.n_agents(); ++i) tau.score.push_back(Eigen::MatrixXd::Zero(policy.theta[static_cast<std::size_t>(i)].rows(), policy.theta[static_cast<std::size_t>(i)].cols()));
  for (std::size_t n = 0; n < samples; ++n) {
    int s = draw(m.initial);
    tau.states.assign(1, s);
    tau.actions.clear();
    tau.env_return = 0.0;
    for (auto& sc : tau.score) sc.setZero();
    for (int t = 0; t < m.horizon; ++t) {
      std::vector<int> a(static_cast<std::size_t>(m.n_agents()));
      int joint = 0;
      int radix = 1;
      for (int i = 0; i < m.n_agents(); ++i) {
        const int o = m.observation[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
        const Eigen::VectorXd p = policy.probabilities(i, o);
        a[static_cast<std::size_t>(i)] = draw(p);
        auto row = tau.score[static_cast<std::size_t>(i)].row(o);
        row -= p.transpose();
        row(a[static_cast<std::size_t>(i)]) += 1.0;
        joint += a[static_cast<std::size_t>(i)] * radix;
        radix *= m.n_actions[static_cast<std::size_t>(i)];
      }
      tau.env_return += m.step_reward(s, joint);
      s = draw(m.transition[static_cast<std::size_t>(s)][static_cast<std::size_t>(joint)]);
      tau.actions.push_back(std::move(a));
      tau.states.push_back(s);
    }
    tau.env_return += m.terminal_reward(s);
    const Eigen::MatrixXd g = G(tau) * tau.score[static_cast<std::size_t>(k)];
    sum += g;
    sum_sq += g.cwiseProduct(g);
  }
  const double n = static_cast<double>(samples);
  MonteCarloGradient out;
  out.mean = sum / n;
  const Eigen::MatrixXd var = ((sum_sq / n) - out.mean.cwiseProduct(out.mean)) * (n / (n - 1.0));
  out.standard_error = (var.cwiseMax(0.0) / n).cwiseSqrt();
  return out;
}

PgEquivalenceReport pg_equivalence_report(const MicroDecPomdp& m, const TabularPolicy& policy,
                                          const WeightGenerator& weights, int k, double tol) {
  if (k < 0 || k >= m.n_agents()) throw DimensionError("pg_equivalence_report: agent index out of range");
  const auto trajectories = enumerate_trajectories(m, policy);
  const std::size_t n = trajectories.size();
  std::vector<double> total(n), agent(n), scaled(n);
  PgEquivalenceReport report;
  report.agent = k;
  report.trajectories = n;
  report.min_delta = 1.0;
  report.max_delta = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto& tau = trajectories[j];
    const WeightMatrix<double> w = weights(tau);
    const auto r = redistribute_with_weights(w, tau.env_return);
    const double d = delta_k(w, k);
    total[j] = r.rewards.sum();
    agent[j] = r.rewards.col(k).sum();
    scaled[j] = d * tau.env_return;
    report.min_delta = std::min(report.min_delta, d);
    report.max_delta = std::max(report.max_delta, d);
    report.max_conservation_err = std::max(report.max_conservation_err, std::abs(total[j] - tau.env_return));
  }
  auto grad_of = [&](const std::vector<double>& values) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(policy.theta[static_cast<std::size_t>(k)].rows(),
                                              policy.theta[static_cast<std::size_t>(k)].cols());
    for (std::size_t j = 0; j < n; ++j) {
      g += trajectories[j].probability * values[j] * trajectories[j].score[static_cast<std::size_t>(k)];
    }
    return g;
  };
  std::vector<double> env(n);
  for (std::size_t j = 0; j < n; ++j) env[j] = trajectories[j].env_return;
  report.grad_env = grad_of(env);
  report.grad_agent = grad_of(agent);
  report.err_total_vs_env = (grad_of(total) - report.grad_env).cwiseAbs().maxCoeff();
  report.err_agent_vs_scaled = (report.grad_agent - grad_of(scaled)).cwiseAbs().maxCoeff();
  const double norms = report.grad_agent.norm() * report.grad_env.norm();
  report.cosine = norms > 0.0 ? report.grad_agent.cwiseProduct(report.grad_env).sum() / norms : 1.0;
  report.angle_degrees = std::acos(std::clamp(report.cosine, -1.0, 1.0)) * 180.0 / std::numbers::pi;
  const double eps = 1e-12;
  report.passed = report.err_total_vs_env <= tol && report.err_agent_vs_scaled <= tol &&
                  report.min_delta >= -eps && report.max_delta <= 1.0 + eps;
  return report;
}

WeightGenerator oracle_weight_generator(const MicroDecPomdp& m) {
  return [&m](const EnumeratedTrajectory& tau) { return weights_from_contributions(oracle_credit(m, tau)); };
}

WeightGenerator hashed_weight_generator(const MicroDecPomdp& m, std::uint64_t salt) {
  return [&m, salt](const EnumeratedTrajectory& tau) {
    // FNV-1a over the state/action path
    std::uint64_t h = 1469598103934665603ull ^ salt;
    auto mix = [&h](std::uint64_t v) {
      h ^= v + 0x9e3779b97f4a7c15ull;
      h *= 1099511628211ull;
    };
    for (int s : tau.states) mix(static_cast<std::uint64_t>(s));
    for (const auto& a : tau.actions) {
      for (int x : a) mix(static_cast<std::uint64_t>(x) + 17);
    }
    std::mt19937_64 rng(h);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ContributionMatrix<double> c(static_cast<Eigen::Index>(tau.actions.size()), m.n_agents());
    c = c.unaryExpr([&](double) { return unit(rng); });
    return weights_from_contributions(c);
  };
}

// --- concrete micro models ---------------------------------------------------------

MicroDecPomdp micro_coordgrid() {
  MicroDecPomdp m;
  m.name = "micro_coordgrid";
  m.n_states = 4;  // p0 + 2*p1, positions in {0,1}, flag at 1
  m.horizon = 3;
  m.n_actions = {3, 3};
  m.n_observations = {2, 2};
  m.observation = {{0, 1, 0, 1}, {0, 0, 1, 1}};
  m.initial = Eigen::VectorXd::Unit(4, 0);
  m.transition.assign(4, std::vector<Eigen::VectorXd>(9));
  m.step_reward = Eigen::MatrixXd::Zero(4, 9);
  m.terminal_reward.resize(4);
  for (int s = 0; s < 4; ++s) {
    const int on_flag = (s & 1) + ((s >> 1) & 1);
    m.terminal_reward(s) = on_flag == 2 ? 10.0 : 5.0 * on_flag / 2.0;
    for (int j = 0; j < 9; ++j) {
      int next = s;
      if (s != 3) {
        const std::vector<int> a = m.decode(j);
        const int p0 = std::clamp((s & 1) + a[0] - 1, 0, 1);
        const int p1 = std::clamp(((s >> 1) & 1) + a[1] - 1, 0, 1);
        next = p0 + 2 * p1;
      }
      m.transition[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)] = Eigen::VectorXd::Unit(4, next);
    }
  }
  m.credit = [](int agent, int s, int, int s2) {
    const int before = (s >> agent) & 1;
    const int after = (s2 >> agent) & 1;
    return after > before ? 1.0 : 0.0;
  };
  return m;
}

MicroDecPomdp micro_noisy_switch() {
  constexpr double slip = 0.2;
  MicroDecPomdp m;
  m.name = "micro_noisy_switch";
  m.n_states = 4;  // b0 + 2*b1
  m.horizon = 3;
  m.n_actions = {2, 2};  // 0 keep, 1 toggle own bit
  m.n_observations = {2, 2};
  m.observation = {{0, 1, 0, 1}, {0, 0, 1, 1}};
  m.initial = Eigen::VectorXd::Constant(4, 0.25);
  m.transition.assign(4, std::vector<Eigen::VectorXd>(4));
  m.step_reward.resize(4, 4);
  m.terminal_reward = Eigen::VectorXd::Zero(4);
  m.terminal_reward(3) = 3.0;
  for (int s = 0; s < 4; ++s) {
    for (int j = 0; j < 4; ++j) {
      const std::vector<int> a = m.decode(j);
      Eigen::VectorXd p = Eigen::VectorXd::Zero(4);
      const int b0 = ((s & 1) ^ a[0]);
      const int b1 = (((s >> 1) & 1) ^ a[1]);
      for (int f0 = 0; f0 < 2; ++f0) {
        for (int f1 = 0; f1 < 2; ++f1) {
          const double pr = (f0 ? slip : 1 - slip) * (f1 ? slip : 1 - slip);
          p((b0 ^ f0) + 2 * (b1 ^ f1)) += pr;
        }
      }
      m.transition[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)] = p;
      m.step_reward(s, j) = static_cast<double>((s & 1) + ((s >> 1) & 1)) - 0.1 * (a[0] + a[1]);
    }
  }
  m.credit = [](int agent, int, int action, int s2) { return ((s2 >> agent) & 1) + 0.5 * action; };
  return m;
}

MicroDecPomdp micro_three_agent_bits() {
  constexpr double slip = 0.1;
  MicroDecPomdp m;
  m.name = "micro_three_agent_bits";
  m.n_states = 8;
  m.horizon = 2;
  m.n_actions = {2, 2, 2};  // desired value of own bit
  m.n_observations = {2, 2, 2};
  m.observation.assign(3, std::vector<int>(8));
  for (int i = 0; i < 3; ++i) {
    for (int s = 0; s < 8; ++s) m.observation[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)] = (s >> i) & 1;
  }
  m.initial = Eigen::VectorXd::Unit(8, 0);
  m.transition.assign(8, std::vector<Eigen::VectorXd>(8));
  m.step_reward = Eigen::MatrixXd::Zero(8, 8);
  m.terminal_reward.resize(8);
  for (int s = 0; s < 8; ++s) {
    const int bits = (s & 1) + ((s >> 1) & 1) + ((s >> 2) & 1);
    m.terminal_reward(s) = bits + (bits == 3 ? 5.0 : 0.0);
    for (int j = 0; j < 8; ++j) {
      Eigen::VectorXd p = Eigen::VectorXd::Zero(8);
      for (int flips = 0; flips < 8; ++flips) {
        double pr = 1.0;
        for (int i = 0; i < 3; ++i) pr *= ((flips >> i) & 1) ? slip : 1 - slip;
        p(j ^ flips) += pr;  // joint index j already encodes the desired bits
      }
      m.transition[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)] = p;
    }
  }
  m.credit = [](int agent, int, int, int s2) { return static_cast<double>((s2 >> agent) & 1); };
  return m;
}

std::vector<MicroDecPomdp> micro_suite() { return {micro_coordgrid(), micro_noisy_switch(), micro_three_agent_bits()}; }

// --- variance -------------------------------------------------------------------

namespace {

double sample_variance(const Eigen::VectorXd& x) {
  const double mean = x.mean();
  return (x.array() - mean).square().sum() / static_cast<double>(x.size() - 1);
}

}  // namespace

AdvantageStats advantage_decomposition(const Eigen::VectorXd& agent_advantage, const Eigen::VectorXd& others_advantage,
                                       double slack) {
  if (agent_advantage.size() != others_advantage.size()) {
    throw DimensionError("advantage_decomposition: sample vectors differ in length");
  }
  if (agent_advantage.size() < 2) throw DomainError("advantage_decomposition: need at least 2 samples");
  AdvantageStats s;
  const Eigen::VectorXd total = agent_advantage + others_advantage;
  s.var_total = sample_variance(total);
  s.var_agent = sample_variance(agent_advantage);
  s.var_others = sample_variance(others_advantage);
  s.covariance = ((agent_advantage.array() - agent_advantage.mean()) *
                  (others_advantage.array() - others_advantage.mean()))
                     .sum() /
                 static_cast<double>(agent_advantage.size() - 1);
  const double root = std::sqrt(s.var_agent) + std::sqrt(s.var_others);
  s.bound = root * root;
  s.bound_holds = s.var_total <= s.bound + slack * std::max(1.0, s.bound);
  return s;
}

VarianceTable variance_vs_agents(const std::vector<int>& agent_counts, std::size_t trials, std::uint64_t seed,
                                 double sigma) {
  if (trials < 2) throw DomainError("variance_vs_agents: need at least 2 trials");
  VarianceTable table;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int n : agent_counts) {
    if (n < 2) throw DomainError("variance_vs_agents: each agent count must be >= 2");
    Eigen::VectorXd a(static_cast<Eigen::Index>(trials));
    for (std::size_t j = 0; j < trials; ++j) {
      double sum = 0.0;
      for (int i = 0; i < n; ++i) sum += sigma * normal(rng);
      a(static_cast<Eigen::Index>(j)) = sum;
    }
    table.rows.push_back({n, sample_variance(a), n * sigma * sigma});
  }
  for (std::size_t r = 1; r < table.rows.size(); ++r) {
    const bool larger_n = table.rows[r].n_agents >= table.rows[r - 1].n_agents;
    if (larger_n && table.rows[r].var_total < table.rows[r - 1].var_total) table.monotone = false;
  }
  return table;
}

}  // namespace tar2
