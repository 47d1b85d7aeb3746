#include "tar2/reward_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

namespace tar2 {

using ad::BoolMatrix;
using ad::Tape;
using ad::Var;
using Eigen::MatrixXd;

void RewardModelConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v < 1) throw ConfigError(std::string("model.") + field + ": must be positive, got " + std::to_string(v));
  };
  positive(obs_dim, "obs_dim");
  positive(n_actions, "n_actions");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  if (n_blocks < 0) throw ConfigError("model.n_blocks: must be nonnegative");
  positive(d_ff, "d_ff");
  positive(max_agents, "max_agents");
  positive(max_steps, "max_steps");
  if (d_model % n_heads != 0) {
    throw ConfigError("model.n_heads: d_model=" + std::to_string(d_model) + " is not divisible by n_heads=" +
                      std::to_string(n_heads));
  }
}

// ---------------------------------------------------------------------------

RewardModelParams::RewardModelParams(const RewardModelConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.d_model;
  const int dh = config_.head_dim();
  add("embed.w", config_.input_dim(), d);
  add("embed.b", 1, d);
  if (config_.positional == PositionalEncoding::Learned) add("pos", config_.max_steps, d);
  for (int b = 0; b < config_.n_blocks; ++b) {
    for (const char* axis : {"time", "agent"}) {
      for (int h = 0; h < config_.n_heads; ++h) {
        const std::string prefix = "block" + std::to_string(b) + "." + axis + ".h" + std::to_string(h) + ".";
        add(prefix + "q", d, dh);
        add(prefix + "k", d, dh);
        add(prefix + "v", d, dh);
        add(prefix + "o", dh, d);
      }
    }
    const std::string prefix = "block" + std::to_string(b) + ".ff.";
    add(prefix + "w1", d, config_.d_ff);
    add(prefix + "b1", 1, config_.d_ff);
    add(prefix + "w2", config_.d_ff, d);
    add(prefix + "b2", 1, d);
  }
  add("head.w", d, 1);
  add("head.b", 1, 1);
}

void RewardModelParams::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  tensors_.push_back({std::move(name), MatrixXd::Zero(rows, cols), MatrixXd::Zero(rows, cols)});
}

RewardModelParams RewardModelParams::initialize(const RewardModelConfig& config) {
  RewardModelParams p(config);
  std::mt19937_64 rng(config.init_seed);
  for (auto& t : p.tensors_) {
    const bool is_bias = t.value.rows() == 1 && t.name != "pos";
    if (is_bias) continue;
    const bool is_head = t.name.rfind("head.", 0) == 0;
    if (is_head && config.zero_head) continue;
    const double stddev = t.name == "pos" ? 0.1 : 1.0 / std::sqrt(static_cast<double>(t.value.rows()));
    std::normal_distribution<double> normal(0.0, stddev);
    t.value = t.value.unaryExpr([&](double) { return normal(rng); });
  }
  if (!config.zero_head) {
    std::normal_distribution<double> normal(0.0, 0.5);
    p.tensor("head.b").value(0, 0) = normal(rng);
  }
  return p;
}

const ParamTensor& RewardModelParams::tensor(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw DimensionError("reward model: no tensor named '" + name + "'");
}

ParamTensor& RewardModelParams::tensor(const std::string& name) {
  return const_cast<ParamTensor&>(std::as_const(*this).tensor(name));
}

Eigen::Index RewardModelParams::size() const {
  Eigen::Index n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

Eigen::VectorXd RewardModelParams::flat() const {
  Eigen::VectorXd out(size());
  Eigen::Index off = 0;
  for (const auto& t : tensors_) {
    out.segment(off, t.value.size()) = t.value.reshaped();
    off += t.value.size();
  }
  return out;
}

void RewardModelParams::set_flat(const Eigen::VectorXd& values) {
  if (values.size() != size()) throw DimensionError("reward model: flat parameter size mismatch");
  Eigen::Index off = 0;
  for (auto& t : tensors_) {
    t.value.reshaped() = values.segment(off, t.value.size());
    off += t.value.size();
  }
}

Eigen::VectorXd RewardModelParams::flat_grad() const {
  Eigen::VectorXd out(size());
  Eigen::Index off = 0;
  for (const auto& t : tensors_) {
    out.segment(off, t.grad.size()) = t.grad.reshaped();
    off += t.grad.size();
  }
  return out;
}

void RewardModelParams::zero_grad() {
  for (auto& t : tensors_) t.grad.setZero();
}

bool RewardModelParams::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(), [](const ParamTensor& t) { return t.value.allFinite(); });
}

// ---------------------------------------------------------------------------

MatrixXd encode_tokens(const RewardModelConfig& config, const Trajectory& traj) {
  traj.check();
  if (traj.obs_dim() != config.obs_dim) {
    throw DimensionError("reward model: trajectory obs_dim " + std::to_string(traj.obs_dim()) +
                         " != model obs_dim " + std::to_string(config.obs_dim));
  }
  if (config.agent_id && traj.agents > config.max_agents) {
    throw DimensionError("reward model: trajectory has more agents than max_agents");
  }
  if (config.positional == PositionalEncoding::Learned && traj.steps > config.max_steps) {
    throw DimensionError("reward model: trajectory longer than max_steps");
  }
  const Index T = traj.steps;
  const Index N = traj.agents;
  MatrixXd x = MatrixXd::Zero(T * N, config.input_dim());
  x.leftCols(config.obs_dim) = traj.observations;
  for (Index t = 0; t < T; ++t) {
    for (Index i = 0; i < N; ++i) {
      const int a = traj.actions(t, i);
      if (a < 0 || a >= config.n_actions) throw DimensionError("reward model: action id out of vocabulary");
      x(traj.token(t, i), config.obs_dim + a) = 1.0;
      if (config.agent_id) x(traj.token(t, i), config.obs_dim + config.n_actions + i) = 1.0;
    }
  }
  return x;
}

namespace {

MatrixXd sinusoidal_positions(Index steps, Index agents, int d) {
  MatrixXd pe(steps * agents, d);
  for (Index t = 0; t < steps; ++t) {
    for (int k = 0; k < d; ++k) {
      const double freq = std::pow(10000.0, -static_cast<double>(k - (k % 2)) / d);
      const double v = (k % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
      for (Index i = 0; i < agents; ++i) pe(t * agents + i, k) = v;
    }
  }
  return pe;
}

BoolMatrix time_mask(Index steps, Index agents, TemporalMask kind) {
  const Index n = steps * agents;
  BoolMatrix m(n, n);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < n; ++c) {
      const bool same_agent = (r % agents) == (c % agents);
      const bool visible = kind == TemporalMask::Hindsight || (c / agents) <= (r / agents);
      m(r, c) = same_agent && visible;
    }
  }
  return m;
}

BoolMatrix agent_mask(Index steps, Index agents) {
  const Index n = steps * agents;
  BoolMatrix m(n, n);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < n; ++c) m(r, c) = (r / agents) == (c / agents);
  }
  return m;
}

template <typename Leaf>
Var attention(Tape& tape, Var x, const BoolMatrix& mask, const std::string& prefix, int n_heads, double inv_sqrt_dh,
              Leaf&& leaf) {
  Var out;
  for (int h = 0; h < n_heads; ++h) {
    const std::string p = prefix + ".h" + std::to_string(h) + ".";
    Var q = ad::matmul(x, leaf(p + "q"));
    Var k = ad::matmul(x, leaf(p + "k"));
    Var v = ad::matmul(x, leaf(p + "v"));
    Var scores = ad::scale(ad::matmul_nt(q, k), inv_sqrt_dh);
    Var weights = ad::masked_softmax_rows(scores, mask);
    Var head = ad::matmul(ad::matmul(weights, v), leaf(p + "o"));
    out = h == 0 ? head : ad::add(out, head);
  }
  (void)tape;
  return out;
}

// Forward graph shared by the differentiable and the frozen pass; `leaf`
// decides whether parameters enter the tape as gradient leaves or constants.
template <typename Leaf>
Var build_graph(Tape& tape, const RewardModelConfig& cfg, const Trajectory& traj, Leaf&& leaf) {
  const Index T = traj.steps;
  const Index N = traj.agents;
  Var tokens = tape.constant(encode_tokens(cfg, traj));
  Var x = ad::tanh(ad::add_row(ad::matmul(tokens, leaf("embed.w")), leaf("embed.b")));
  if (cfg.positional == PositionalEncoding::Sinusoidal) {
    x = ad::add(x, tape.constant(sinusoidal_positions(T, N, cfg.d_model)));
  } else {
    std::vector<int> rows(static_cast<std::size_t>(T * N));
    for (Index r = 0; r < T * N; ++r) rows[static_cast<std::size_t>(r)] = static_cast<int>(r / N);
    x = ad::add(x, ad::gather_rows(leaf("pos"), std::move(rows)));
  }
  const BoolMatrix over_time = time_mask(T, N, cfg.temporal_mask);
  const BoolMatrix over_agents = agent_mask(T, N);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const std::string block = "block" + std::to_string(b);
    x = ad::add(x, attention(tape, x, over_time, block + ".time", cfg.n_heads, inv_sqrt_dh, leaf));
    x = ad::add(x, attention(tape, x, over_agents, block + ".agent", cfg.n_heads, inv_sqrt_dh, leaf));
    Var hidden = ad::tanh(ad::add_row(ad::matmul(x, leaf(block + ".ff.w1")), leaf(block + ".ff.b1")));
    x = ad::add(x, ad::add_row(ad::matmul(hidden, leaf(block + ".ff.w2")), leaf(block + ".ff.b2")));
  }
  return ad::softplus(ad::add_row(ad::matmul(x, leaf("head.w")), leaf("head.b")));
}

ContributionMatrix<double> to_contributions(const MatrixXd& column, Index steps, Index agents) {
  // column is token-major (t*N + i); reshape to T x N.
  ContributionMatrix<double> c(steps, agents);
  for (Index t = 0; t < steps; ++t) {
    for (Index i = 0; i < agents; ++i) c(t, i) = column(t * agents + i, 0);
  }
  return c;
}

}  // namespace

Var model_graph(Tape& tape, RewardModelParams& params, const Trajectory& traj) {
  return build_graph(tape, params.config(), traj, [&](const std::string& name) {
    ParamTensor& t = params.tensor(name);
    return tape.parameter(t.value, &t.grad);
  });
}

ModelOutput model_forward(const RewardModelParams& params, const Trajectory& traj) {
  Tape tape;
  Var c = build_graph(tape, params.config(), traj,
                      [&](const std::string& name) { return tape.constant(params.tensor(name).value); });
  if (!c.value().allFinite()) throw NumericError("model_forward: non-finite contribution");
  ModelOutput out;
  out.contributions = to_contributions(c.value(), traj.steps, traj.agents);
  out.predicted_return = out.contributions.sum();
  return out;
}

LossGrad model_loss_grad(RewardModelParams& params, std::span<const Trajectory* const> batch) {
  if (batch.empty()) throw DomainError("model_loss_grad: empty batch");
  params.zero_grad();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const Trajectory* traj : batch) {
    Tape tape;
    Var predicted = ad::sum(model_graph(tape, params, *traj));
    const double err = predicted.item() - traj->episodic_return;
    loss += err * err * inv_b;
    tape.backward(predicted, 2.0 * err * inv_b);
  }
  if (!std::isfinite(loss)) throw NumericError("model_loss_grad: non-finite loss");
  return {loss};
}

double model_loss(const RewardModelParams& params, std::span<const Trajectory* const> batch) {
  if (batch.empty()) throw DomainError("model_loss: empty batch");
  double loss = 0.0;
  for (const Trajectory* traj : batch) {
    const double err = model_forward(params, *traj).predicted_return - traj->episodic_return;
    loss += err * err;
  }
  return loss / static_cast<double>(batch.size());
}

FitReport model_fit(RewardModelParams& params, std::span<const Trajectory* const> buffer, const FitOptions& options) {
  if (buffer.empty()) throw DomainError("model_fit: empty buffer");
  if (options.epochs < 0 || options.minibatch < 1) throw ConfigError("model_fit: need epochs>=0 and minibatch>=1");
  FitReport report;
  report.initial_loss = model_loss(params, buffer);
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(buffer.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const Trajectory*> batch;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.minibatch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(options.minibatch));
      batch.clear();
      for (std::size_t j = start; j < stop; ++j) batch.push_back(buffer[order[j]]);
      const double loss = model_loss_grad(params, batch).loss;
      if (!(loss <= options.divergence_threshold)) {
        throw NumericError("model_fit: diverged at epoch " + std::to_string(epoch) + " (minibatch loss " +
                           std::to_string(loss) + " > " + std::to_string(options.divergence_threshold) + ")");
      }
      for (auto& t : params.tensors()) t.value -= options.lr * t.grad;
    }
    if (!params.all_finite()) throw NumericError("model_fit: non-finite parameters at epoch " + std::to_string(epoch));
    report.epoch_loss.push_back(model_loss(params, buffer));
  }
  return report;
}

WeightMatrix<double> extract_weights(const RewardModelParams& params, const Trajectory& traj) {
  return weights_from_contributions(model_forward(params, traj).contributions);
}

}  // namespace tar2
