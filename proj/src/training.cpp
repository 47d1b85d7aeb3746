#include "tar2/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <limits>
#include <thread>

namespace tar2 {

std::string to_string(Algorithm a) { return a == Algorithm::Reinforce ? "reinforce" : "ppo"; }

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "reinforce") return Algorithm::Reinforce;
  if (name == "ppo") return Algorithm::Ppo;
  throw ConfigError("algorithm: unknown value '" + name + "' (expected reinforce|ppo)");
}

std::string to_string(ReturnMode m) { return m == ReturnMode::Total ? "total" : "to_go"; }

ReturnMode return_mode_from_string(const std::string& name) {
  if (name == "total") return ReturnMode::Total;
  if (name == "to_go") return ReturnMode::ToGo;
  throw ConfigError("return_mode: unknown value '" + name + "' (expected total|to_go)");
}

void TrainConfig::validate() const {
  env.validate();
  if (episodes < 0) throw ConfigError("episodes: must be nonnegative");
  if (warmup_episodes < 0 || warmup_episodes > episodes) {
    throw ConfigError("warmup_episodes: must lie in [0, episodes]");
  }
  if (refit_period < 1) throw ConfigError("refit_period: must be positive");
  if (model_buffer < 1) throw ConfigError("model_buffer: must be positive");
  if (!(lr_policy > 0.0)) throw ConfigError("lr_policy: must be positive");
  if (!(baseline_rate >= 0.0 && baseline_rate <= 1.0)) throw ConfigError("baseline_rate: must lie in [0,1]");
  if (!(ppo_clip > 0.0 && ppo_clip < 1.0)) throw ConfigError("ppo_clip: must lie in (0,1)");
  if (ppo_epochs < 1) throw ConfigError("ppo_epochs: must be positive");
  if (batch_size < 1) throw ConfigError("batch_size: must be positive");
  if (eval_period < 1) throw ConfigError("eval_period: must be positive");
  if (policy_hidden < 0) throw ConfigError("policy_hidden: must be nonnegative");
  if (fit.epochs < 0 || fit.minibatch < 1 || !(fit.lr > 0.0)) {
    throw ConfigError("fit: need epochs>=0, minibatch>=1, lr>0");
  }
  RewardModelConfig m = model;
  m.obs_dim = 1;
  m.n_actions = 1;
  m.validate();
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  };
  return splitmix(seed ^ splitmix(stream + 0x632be59bd9b4e019ull));
}

int rollout_threads() {
  if (const char* env = std::getenv("TAR2_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

EpisodeResult run_episode(const PolicyParams& policy, const EnvSpec& spec, std::uint64_t seed) {
  auto env = make_environment(spec);
  std::mt19937_64 rng(seed);
  JointObservation obs = env->reset();
  std::vector<int> actions(static_cast<std::size_t>(spec.n_agents));
  while (!env->done()) {
    for (int k = 0; k < spec.n_agents; ++k) {
      actions[static_cast<std::size_t>(k)] = policy.sample(k, obs.per_agent.row(k).transpose(), rng);
    }
    obs = env->step(actions).observation;
  }
  return env->result();
}

}  // namespace

std::vector<EpisodeResult> collect_rollouts(const PolicyParams& policy, const EnvSpec& spec, int n,
                                            std::uint64_t seed, std::uint64_t first_index, int threads) {
  if (n < 1) throw DomainError("collect_rollouts: n must be >= 1");
  spec.validate();
  std::vector<EpisodeResult> out(static_cast<std::size_t>(n));
  const int workers = std::clamp(threads, 1, n);
  auto work = [&](int w) {
    for (int j = w; j < n; j += workers) {
      out[static_cast<std::size_t>(j)] =
          run_episode(policy, spec, derive_seed(seed, first_index + static_cast<std::uint64_t>(j)));
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(w);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return out;
}

Eigen::VectorXd agent_returns(const RedistributionMatrix<double>& r, Eigen::Index k, ReturnMode mode) {
  const Eigen::VectorXd col = r.rewards.col(k);
  if (mode == ReturnMode::Total) return Eigen::VectorXd::Constant(col.size(), col.sum());
  Eigen::VectorXd to_go(col.size());
  double acc = 0.0;
  for (Eigen::Index t = col.size() - 1; t >= 0; --t) {
    acc += col(t);
    to_go(t) = acc;
  }
  return to_go;
}

namespace {

void check_inputs(const PolicyParams& policy, std::span<const EpisodeResult> buffer,
                  std::span<const RedistributionMatrix<double>> rewards) {
  if (buffer.empty()) throw DomainError("policy update: empty buffer");
  if (buffer.size() != rewards.size()) throw DimensionError("policy update: one redistribution per episode required");
  for (std::size_t e = 0; e < buffer.size(); ++e) {
    const Trajectory& traj = buffer[e].trajectory;
    if (traj.agents != policy.n_agents() || rewards[e].steps() != traj.steps || rewards[e].agents() != traj.agents) {
      throw DimensionError("policy update: redistribution does not match trajectory");
    }
  }
}

// Returns (G_{k,t} - b_{k,t}) for every episode and then moves the baseline
// toward this batch, so the batch never sees its own mean.
std::vector<Eigen::VectorXd> advantages(std::span<const EpisodeResult> buffer,
                                        std::span<const RedistributionMatrix<double>> rewards, int k, ReturnMode mode,
                                        Baselines* baselines) {
  std::vector<Eigen::VectorXd> adv;
  Eigen::Index horizon = 0;
  for (const auto& ep : buffer) horizon = std::max(horizon, ep.trajectory.steps);
  for (std::size_t e = 0; e < buffer.size(); ++e) adv.push_back(agent_returns(rewards[e], k, mode));
  if (baselines == nullptr) return adv;

  auto& b = baselines->per_agent;
  if (b.size() <= static_cast<std::size_t>(k)) b.resize(static_cast<std::size_t>(k) + 1);
  Eigen::VectorXd& base = b[static_cast<std::size_t>(k)];
  if (base.size() < horizon) base.conservativeResizeLike(Eigen::VectorXd::Zero(horizon));

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(horizon);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(horizon);
  // Total mode weights every step by the same G_k, so one scalar per agent.
  for (auto& a : adv) {
    for (Eigen::Index t = 0; t < a.size(); ++t) {
      const Eigen::Index slot = mode == ReturnMode::Total ? 0 : t;
      if (mode == ReturnMode::ToGo || t == 0) {
        sum(slot) += a(t);
        count(slot) += 1.0;
      }
      a(t) -= base(slot);
    }
  }
  for (Eigen::Index t = 0; t < horizon; ++t) {
    if (count(t) > 0) base(t) += baselines->rate * (sum(t) / count(t) - base(t));
  }
  return adv;
}

void finish_stats(UpdateStats& stats) {
  double sq = 0.0;
  for (double g : stats.grad_norms) sq += g * g;
  stats.grad_norm = std::sqrt(sq);
}

}  // namespace

UpdateStats reinforce_update(PolicyParams& policy, std::span<const EpisodeResult> buffer,
                             std::span<const RedistributionMatrix<double>> rewards, double lr, ReturnMode mode,
                             Baselines* baselines) {
  check_inputs(policy, buffer, rewards);
  UpdateStats stats;
  const double inv_n = 1.0 / static_cast<double>(buffer.size());
  std::vector<Eigen::VectorXd> grads;
  for (int k = 0; k < policy.n_agents(); ++k) {
    const auto adv = advantages(buffer, rewards, k, mode, baselines);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.shape().size());
    for (std::size_t e = 0; e < buffer.size(); ++e) {
      const Trajectory& traj = buffer[e].trajectory;
      for (Eigen::Index t = 0; t < traj.steps; ++t) {
        const double w = adv[e](t) * inv_n;
        if (w == 0.0) continue;
        policy.accumulate_score(k, traj.observation(t, k).transpose(), traj.actions(t, k), w, g);
      }
    }
    if (!g.allFinite()) throw NumericError("reinforce_update: non-finite gradient for agent " + std::to_string(k));
    stats.grad_norms.push_back(g.norm());
    grads.push_back(std::move(g));
  }
  for (int k = 0; k < policy.n_agents(); ++k) policy.theta(k) += lr * grads[static_cast<std::size_t>(k)];
  finish_stats(stats);
  return stats;
}

double clipped_surrogate(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

UpdateStats ppo_clip_update(PolicyParams& policy, std::span<const EpisodeResult> buffer,
                            std::span<const RedistributionMatrix<double>> rewards, const PpoOptions& options,
                            Baselines* baselines) {
  check_inputs(policy, buffer, rewards);
  if (!(options.clip > 0.0 && options.clip < 1.0) || options.epochs < 1) {
    throw ConfigError("ppo_clip_update: need clip in (0,1) and epochs >= 1");
  }
  UpdateStats stats;
  const PolicyParams old = policy;
  std::size_t samples = 0;
  for (const auto& ep : buffer) samples += static_cast<std::size_t>(ep.trajectory.steps);
  const double inv_n = 1.0 / static_cast<double>(samples);
  std::size_t clipped = 0;

  for (int k = 0; k < policy.n_agents(); ++k) {
    const auto adv = advantages(buffer, rewards, k, ReturnMode::ToGo, baselines);
    double first_norm = 0.0;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.shape().size());
      for (std::size_t e = 0; e < buffer.size(); ++e) {
        const Trajectory& traj = buffer[e].trajectory;
        for (Eigen::Index t = 0; t < traj.steps; ++t) {
          const double a = adv[e](t);
          if (a == 0.0) continue;
          const auto obs = traj.observation(t, k).transpose();
          const int act = traj.actions(t, k);
          const double ratio = std::exp(policy.log_prob(k, obs, act) - old.log_prob(k, obs, act));
          // The unclipped branch is active unless the ratio has left the
          // trust region in the direction the advantage favors.
          const bool active = !((a > 0.0 && ratio > 1.0 + options.clip) || (a < 0.0 && ratio < 1.0 - options.clip));
          if (!active) {
            if (epoch == options.epochs - 1) ++clipped;
            continue;
          }
          policy.accumulate_score(k, obs, act, a * ratio * inv_n, g);
        }
      }
      if (!g.allFinite()) throw NumericError("ppo_clip_update: non-finite gradient for agent " + std::to_string(k));
      if (epoch == 0) first_norm = g.norm();
      policy.theta(k) += options.lr * g;
    }
    stats.grad_norms.push_back(first_norm);
  }
  stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(samples * static_cast<std::size_t>(policy.n_agents()));
  finish_stats(stats);
  return stats;
}

// ---------------------------------------------------------------------------

double TrainingResult::trailing_success(int window) const {
  if (metrics.empty()) return 0.0;
  const std::size_t n = std::min(metrics.size(), static_cast<std::size_t>(window));
  double s = 0.0;
  for (std::size_t j = metrics.size() - n; j < metrics.size(); ++j) s += metrics[j].success ? 1.0 : 0.0;
  return s / static_cast<double>(n);
}

int TrainingResult::episodes_to(double threshold, int window) const {
  int hits = 0;
  for (std::size_t j = 0; j < metrics.size(); ++j) {
    hits += metrics[j].success ? 1 : 0;
    if (j >= static_cast<std::size_t>(window)) hits -= metrics[j - static_cast<std::size_t>(window)].success ? 1 : 0;
    if (j + 1 >= static_cast<std::size_t>(window) && hits >= threshold * window) return metrics[j].episode + 1;
  }
  return -1;
}

namespace {

double mean_entropy(const PolicyParams& policy, const Trajectory& traj) {
  double h = 0.0;
  for (Eigen::Index t = 0; t < traj.steps; ++t) {
    for (Eigen::Index k = 0; k < traj.agents; ++k) h += policy.entropy(static_cast<int>(k), traj.observation(t, k).transpose());
  }
  return h / static_cast<double>(traj.steps * traj.agents);
}

double mean_delta(const RedistributionMatrix<double>& r) {
  if (r.source_return == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (r.rewards.colwise().sum() / r.source_return).mean();
}

}  // namespace

TrainingResult run_training(const TrainConfig& cfg, const MetricsSink& sink) {
  cfg.validate();
  TrainingResult result;
  const auto probe = make_environment(cfg.env);
  const PolicyShape shape{probe->obs_dim(), probe->n_actions(), cfg.policy_hidden};
  result.policy = PolicyParams::initialize(shape, cfg.env.n_agents, derive_seed(cfg.seed, 0xB0));

  const bool with_model = uses_model(cfg.redistributor);
  if (with_model) {
    RewardModelConfig mc = cfg.model;
    mc.obs_dim = probe->obs_dim();
    mc.n_actions = probe->n_actions();
    mc.max_agents = std::max(mc.max_agents, cfg.env.n_agents);
    mc.max_steps = std::max(mc.max_steps, cfg.env.horizon);
    mc.init_seed = derive_seed(cfg.seed, 0xA000 + mc.init_seed);
    result.model = RewardModelParams::initialize(mc);
  }
  const Redistributor arm{cfg.redistributor, cfg.ircr_mode};
  const Redistributor warmup_arm{RedistributorKind::Episodic, SplitMode::Conserving};
  Baselines baselines;
  baselines.rate = cfg.baseline_rate;
  std::deque<EpisodeResult> model_buffer;
  double model_loss = std::numeric_limits<double>::quiet_NaN();
  int refits = 0;
  const int threads = rollout_threads();

  try {
    int episode = 0;
    while (episode < cfg.episodes) {
      const int n = std::min(cfg.batch_size, cfg.episodes - episode);
      std::vector<EpisodeResult> batch =
          collect_rollouts(result.policy, cfg.env, n, cfg.seed, static_cast<std::uint64_t>(episode), threads);
      const bool warming = with_model && episode < cfg.warmup_episodes;

      if (with_model) {
        for (const auto& ep : batch) {
          model_buffer.push_back(ep);
          if (model_buffer.size() > static_cast<std::size_t>(cfg.model_buffer)) model_buffer.pop_front();
        }
        const bool crossed = (episode + n) / cfg.refit_period > episode / cfg.refit_period;
        const bool warmup_ends = episode < cfg.warmup_episodes && episode + n >= cfg.warmup_episodes;
        const bool allowed = warming || !cfg.freeze_model || warmup_ends;
        if ((crossed || warmup_ends) && allowed) {
          std::vector<const Trajectory*> view;
          view.reserve(model_buffer.size());
          for (const auto& ep : model_buffer) view.push_back(&ep.trajectory);
          FitOptions fo = cfg.fit;
          fo.seed = derive_seed(cfg.seed, 0x1000 + static_cast<std::uint64_t>(refits++));
          model_loss = model_fit(*result.model, view, fo).final_loss();
        }
      }

      std::vector<RedistributionMatrix<double>> rewards;
      rewards.reserve(batch.size());
      for (const auto& ep : batch) {
        const Redistributor& use = warming ? warmup_arm : arm;
        rewards.push_back(use(ep.trajectory, result.model ? &*result.model : nullptr, &ep.oracle));
      }

      std::vector<double> entropies;
      for (const auto& ep : batch) entropies.push_back(mean_entropy(result.policy, ep.trajectory));

      UpdateStats stats;
      if (cfg.algorithm == Algorithm::Reinforce) {
        stats = reinforce_update(result.policy, batch, rewards, cfg.lr_policy, cfg.return_mode, &baselines);
      } else {
        stats = ppo_clip_update(result.policy, batch, rewards, {cfg.lr_policy, cfg.ppo_clip, cfg.ppo_epochs},
                                &baselines);
      }
      if (!result.policy.all_finite()) throw NumericError("policy parameters became non-finite");

      for (std::size_t j = 0; j < batch.size(); ++j) {
        MetricsRow row;
        row.episode = episode + static_cast<int>(j);
        row.phase = warming ? 1 : 2;
        row.return_env = batch[j].episodic_return;
        row.success = batch[j].success;
        row.delta_mean = mean_delta(rewards[j]);
        row.model_loss = model_loss;
        row.policy_grad_norm = stats.grad_norm;
        row.entropy = entropies[j];
        result.metrics.push_back(row);
        if (sink) sink(row);
      }
      episode += n;
    }
  } catch (const std::exception& e) {
    result.aborted = true;
    result.error = e.what();
  }
  return result;
}

}  // namespace tar2
