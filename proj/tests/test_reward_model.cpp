#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "tar2/autodiff.hpp"
#include "tar2/reward_model.hpp"
#include "tar2/training.hpp"

using namespace tar2;
using Eigen::MatrixXd;

namespace {

RewardModelConfig small_model(bool zero_head = false) {
  RewardModelConfig mc;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_blocks = 1;
  mc.d_ff = 8;
  mc.zero_head = zero_head;
  return mc;
}

std::vector<EpisodeResult> episodes(int n, std::uint64_t seed, int N = 2, int horizon = 8) {
  EnvSpec spec;
  spec.n_agents = N;
  spec.horizon = horizon;
  return collect_rollouts(PolicyParams::initialize({3, 3, 0}, N, 0), spec, n, seed);
}

// Central differences of a scalar function of a flat vector.
Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                   double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double keep = x(k);
    x(k) = keep + h;
    const double up = f(x);
    x(k) = keep - h;
    const double down = f(x);
    x(k) = keep;
    g(k) = (up - down) / (2 * h);
  }
  return g;
}

double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-6) {
  return ((a - b).array().abs() / a.array().abs().max(b.array().abs()).max(floor)).maxCoeff();
}

// Checks one autodiff op: f builds a scalar from a parameter leaf.
void check_op(const MatrixXd& x0, const std::function<ad::Var(ad::Tape&, ad::Var)>& f) {
  MatrixXd grad = MatrixXd::Zero(x0.rows(), x0.cols());
  {
    ad::Tape tape;
    ad::Var out = f(tape, tape.parameter(x0, &grad));
    tape.backward(out);
  }
  auto value = [&](const Eigen::VectorXd& flat) {
    ad::Tape tape;
    return f(tape, tape.constant(flat.reshaped(x0.rows(), x0.cols()))).item();
  };
  const Eigen::VectorXd numeric = central_difference(value, x0.reshaped());
  CHECK(relative_error(grad.reshaped(), numeric) <= 1e-6);
}

}  // namespace

TEST_CASE("autodiff: each op matches finite differences") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0, 1);
  auto rnd = [&](int r, int c) { return MatrixXd(MatrixXd::NullaryExpr(r, c, [&] { return normal(rng); })); };
  const MatrixXd A = rnd(4, 3), B = rnd(3, 5), C = rnd(5, 3), row = rnd(1, 3), W = rnd(4, 1);
  ad::BoolMatrix mask(4, 4);
  mask << 1, 0, 1, 0,  //
      0, 1, 0, 1,      //
      1, 1, 1, 1,      //
      0, 0, 0, 1;
  auto weighted = [&](ad::Tape& tape, ad::Var v) {
    // A fixed random linear functional keeps every output entry in play.
    MatrixXd probe(v.rows(), 1);
    for (Eigen::Index k = 0; k < probe.rows(); ++k) probe(k, 0) = std::sin(1.0 + static_cast<double>(k));
    return ad::sum(ad::matmul_nt(tape.constant(probe.transpose()), ad::matmul_nt(tape.constant(MatrixXd::Ones(1, v.cols())), v)));
  };
  SUBCASE("matmul") { check_op(A, [&](ad::Tape& t, ad::Var x) { return weighted(t, ad::matmul(x, t.constant(B))); }); }
  SUBCASE("matmul right") { check_op(B, [&](ad::Tape& t, ad::Var x) { return weighted(t, ad::matmul(t.constant(A), x)); }); }
  SUBCASE("matmul_nt") { check_op(C, [&](ad::Tape& t, ad::Var x) { return weighted(t, ad::matmul_nt(t.constant(A), x)); }); }
  SUBCASE("add_row") { check_op(row, [&](ad::Tape& t, ad::Var x) { return weighted(t, ad::tanh(ad::add_row(t.constant(A), x))); }); }
  SUBCASE("tanh") { check_op(A, [&](ad::Tape& t, ad::Var x) { return weighted(t, ad::tanh(x)); }); }
  SUBCASE("softplus") { check_op(A, [&](ad::Tape& t, ad::Var x) { return weighted(t, ad::softplus(x)); }); }
  SUBCASE("scale") { check_op(A, [&](ad::Tape& t, ad::Var x) { return weighted(t, ad::scale(ad::tanh(x), -2.5)); }); }
  SUBCASE("masked softmax") {
    const MatrixXd S = rnd(4, 4);
    check_op(S, [&](ad::Tape& t, ad::Var x) { return weighted(t, ad::matmul(ad::masked_softmax_rows(x, mask), t.constant(W))); });
  }
  SUBCASE("gather rows") {
    check_op(A, [&](ad::Tape& t, ad::Var x) { return weighted(t, ad::tanh(ad::gather_rows(x, {3, 0, 0, 2, 1}))); });
  }
  SUBCASE("shared leaf used twice") {
    check_op(A, [&](ad::Tape& t, ad::Var x) { return weighted(t, ad::add(ad::tanh(x), ad::softplus(x))); });
  }
}

TEST_CASE("autodiff: masked softmax rows are distributions over the mask") {
  ad::Tape tape;
  ad::BoolMatrix mask(2, 3);
  mask << 1, 0, 1, 0, 1, 0;
  const MatrixXd s = (MatrixXd(2, 3) << 1000, 5, -1000, 2, 3, 4).finished();
  const MatrixXd p = ad::masked_softmax_rows(tape.constant(s), mask).value();
  CHECK(p.allFinite());
  CHECK(p(0, 1) == 0.0);
  CHECK(p.row(0).sum() == doctest::Approx(1.0));
  CHECK(p(1, 1) == 1.0);
}

TEST_CASE("zero head gives contributions ln 2 and T*N*ln 2 in total") {
  const auto model = RewardModelParams::initialize(small_model(true));
  for (const auto& e : episodes(3, 1)) {
    const auto out = model_forward(model, e.trajectory);
    CHECK(out.contributions.rows() == e.trajectory.steps);
    CHECK(out.contributions.cols() == e.trajectory.agents);
    CHECK((out.contributions.array() - std::log(2.0)).abs().maxCoeff() <= 1e-15);
    CHECK(out.predicted_return ==
          doctest::Approx(static_cast<double>(e.trajectory.steps * e.trajectory.agents) * std::log(2.0)));
  }
}

TEST_CASE("sum-head identity and nonnegativity") {
  RewardModelConfig mc = small_model();
  for (std::uint64_t s = 0; s < 5; ++s) {
    mc.init_seed = s;
    const auto model = RewardModelParams::initialize(mc);
    for (const auto& e : episodes(4, s, 3)) {
      const auto out = model_forward(model, e.trajectory);
      CHECK(std::abs(out.predicted_return - out.contributions.sum()) <= 1e-9);
      CHECK((out.contributions.array() >= 0.0).all());
    }
  }
}

TEST_CASE("permuting agents permutes contribution columns") {
  RewardModelConfig mc = small_model();
  mc.init_seed = 4;
  const auto model = RewardModelParams::initialize(mc);
  const auto e = episodes(1, 7, 3).front();
  const std::vector<int> perm = {2, 0, 1};
  Trajectory p = e.trajectory;
  for (Index t = 0; t < p.steps; ++t) {
    for (Index i = 0; i < p.agents; ++i) {
      p.observations.row(p.token(t, i)) = e.trajectory.observation(t, perm[static_cast<std::size_t>(i)]);
      p.actions(t, i) = e.trajectory.actions(t, perm[static_cast<std::size_t>(i)]);
    }
  }
  const auto a = model_forward(model, e.trajectory).contributions;
  const auto b = model_forward(model, p).contributions;
  for (Index i = 0; i < 3; ++i) CHECK((b.col(i) - a.col(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("a single token runs through every block") {
  Trajectory traj;
  traj.steps = 1;
  traj.agents = 1;
  traj.observations = MatrixXd::Constant(1, 3, 0.5);
  traj.actions = Eigen::MatrixXi::Constant(1, 1, 2);
  traj.episodic_return = 1.0;
  const auto out = model_forward(RewardModelParams::initialize(small_model()), traj);
  CHECK(out.contributions.size() == 1);
  CHECK(std::isfinite(out.predicted_return));
}

TEST_CASE("loss is zero with zero gradient when the prediction is exact") {
  auto model = RewardModelParams::initialize(small_model());
  auto e = episodes(1, 2).front();
  e.trajectory.episodic_return = model_forward(model, e.trajectory).predicted_return;
  const Trajectory* batch[] = {&e.trajectory};
  CHECK(model_loss_grad(model, batch).loss <= 1e-24);
  CHECK(model.flat_grad().cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("single-sample loss derivative is 2(y_hat - R)") {
  // With a zero head every token's pre-activation is 0, so
  // dL/d head.b = 2(y_hat - R) * T*N * sigmoid(0).
  auto model = RewardModelParams::initialize(small_model(true));
  const auto e = episodes(1, 3).front();
  const Trajectory* batch[] = {&e.trajectory};
  const double y = model_forward(model, e.trajectory).predicted_return;
  model_loss_grad(model, batch);
  const double tokens = static_cast<double>(e.trajectory.steps * e.trajectory.agents);
  CHECK(model.tensor("head.b").grad(0, 0) == doctest::Approx(2 * (y - e.episodic_return) * tokens * 0.5));
}

TEST_CASE("model gradient matches finite differences across variants") {
  // Returns sit one unit from the prediction so the loss is O(1) and the
  // difference quotient is not dominated by roundoff in a large loss.
  std::vector<RewardModelConfig> variants(4, small_model());
  variants[1].positional = PositionalEncoding::Learned;
  variants[1].max_steps = 8;
  variants[2].temporal_mask = TemporalMask::Causal;
  variants[3].agent_id = true;
  variants[3].max_agents = 3;
  auto eps = episodes(2, 11, 3, 5);
  for (std::size_t v = 0; v < variants.size(); ++v) {
    variants[v].init_seed = 100 + v;
    auto model = RewardModelParams::initialize(variants[v]);
    for (auto& e : eps) {
      e.trajectory.episodic_return = model_forward(model, e.trajectory).predicted_return + 1.0;
      const Trajectory* batch[] = {&e.trajectory};
      model_loss_grad(model, batch);
      const Eigen::VectorXd analytic = model.flat_grad();
      const Eigen::VectorXd theta = model.flat();
      auto loss = [&](const Eigen::VectorXd& x) {
        model.set_flat(x);
        return model_loss(model, batch);
      };
      const Eigen::VectorXd numeric = central_difference(loss, theta);
      model.set_flat(theta);
      CAPTURE(v);
      CHECK(relative_error(analytic, numeric) <= 1e-4);
    }
  }
}

TEST_CASE("two-block gradient matches directional finite differences") {
  // Per-entry checks are noise-bound here: many deep-block entries are near
  // 1e-9. Random directions exercise every entry at once.
  RewardModelConfig mc = small_model();
  mc.n_blocks = 2;
  mc.init_seed = 104;
  auto model = RewardModelParams::initialize(mc);
  auto e = episodes(1, 11, 3, 5).front();
  e.trajectory.episodic_return = model_forward(model, e.trajectory).predicted_return + 1.0;
  const Trajectory* batch[] = {&e.trajectory};
  model_loss_grad(model, batch);
  const Eigen::VectorXd analytic = model.flat_grad();
  const Eigen::VectorXd theta = model.flat();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0, 1);
  for (int d = 0; d < 20; ++d) {
    Eigen::VectorXd u = Eigen::VectorXd::NullaryExpr(theta.size(), [&] { return normal(rng); });
    u.normalize();
    const double h = 1e-5;
    model.set_flat(theta + h * u);
    const double up = model_loss(model, batch);
    model.set_flat(theta - h * u);
    const double down = model_loss(model, batch);
    const double numeric = (up - down) / (2 * h);
    const double exact = analytic.dot(u);
    CHECK(std::abs(exact - numeric) <= 1e-4 * std::max(std::abs(exact), 1e-6));
  }
}

TEST_CASE("model_fit: epochs=0 leaves parameters unchanged") {
  auto model = RewardModelParams::initialize(small_model());
  const auto before = model.flat();
  const auto eps = episodes(10, 1);
  std::vector<const Trajectory*> view;
  for (const auto& e : eps) view.push_back(&e.trajectory);
  FitOptions fo;
  fo.epochs = 0;
  const auto report = model_fit(model, view, fo);
  CHECK(model.flat() == before);
  CHECK(report.epoch_loss.empty());
  CHECK(report.final_loss() == report.initial_loss);
}

TEST_CASE("model_fit is deterministic given the seed") {
  const auto eps = episodes(40, 2);
  std::vector<const Trajectory*> view;
  for (const auto& e : eps) view.push_back(&e.trajectory);
  FitOptions fo;
  fo.epochs = 3;
  fo.seed = 77;
  auto a = RewardModelParams::initialize(small_model());
  auto b = RewardModelParams::initialize(small_model());
  CHECK(model_fit(a, view, fo).final_loss() == model_fit(b, view, fo).final_loss());
  CHECK(a.flat() == b.flat());
}

TEST_CASE("model_fit on a constant-return buffer decreases the loss") {
  auto eps = episodes(64, 3);
  std::vector<const Trajectory*> view;
  for (auto& e : eps) {
    e.trajectory.episodic_return = 4.0;
    view.push_back(&e.trajectory);
  }
  auto model = RewardModelParams::initialize(small_model(true));
  FitOptions fo;
  fo.epochs = 20;
  fo.lr = 2e-4;
  fo.minibatch = 8;
  const auto report = model_fit(model, view, fo);
  double previous = report.initial_loss;
  for (double l : report.epoch_loss) {
    CHECK(l <= previous * 1.05);
    previous = l;
  }
  CHECK(report.final_loss() < 0.05 * report.initial_loss);
}

TEST_CASE("model_fit reports divergence") {
  auto eps = episodes(16, 4);
  std::vector<const Trajectory*> view;
  for (auto& e : eps) view.push_back(&e.trajectory);
  auto model = RewardModelParams::initialize(small_model());
  FitOptions fo;
  fo.epochs = 50;
  fo.lr = 10.0;
  fo.divergence_threshold = 1e6;
  CHECK_THROWS_AS(model_fit(model, view, fo), NumericError);
}

TEST_CASE("extract_weights: uniform for a zero head, simplex for random draws") {
  const auto eps = episodes(20, 5, 3);
  const auto w0 = extract_weights(RewardModelParams::initialize(small_model(true)), eps[0].trajectory);
  CHECK(w0.temporal.isApproxToConstant(1.0 / static_cast<double>(eps[0].trajectory.steps)));
  CHECK(w0.agent.isApproxToConstant(1.0 / 3.0));
  RewardModelConfig mc = small_model();
  for (int d = 0; d < 100; ++d) {
    mc.init_seed = static_cast<std::uint64_t>(1000 + d);
    const auto w = extract_weights(RewardModelParams::initialize(mc), eps[static_cast<std::size_t>(d % 20)].trajectory);
    REQUIRE(validate_weights(w).ok());
  }
}

TEST_CASE("shape errors and config validation") {
  const auto model = RewardModelParams::initialize(small_model());
  auto e = episodes(1, 6).front();
  Trajectory bad = e.trajectory;
  bad.observations = MatrixXd::Zero(bad.observations.rows(), 5);
  CHECK_THROWS_AS(model_forward(model, bad), DimensionError);
  bad = e.trajectory;
  bad.actions(0, 0) = 7;
  CHECK_THROWS_AS(model_forward(model, bad), DimensionError);
  RewardModelConfig mc = small_model();
  mc.n_heads = 3;
  CHECK_THROWS_WITH_AS(mc.validate(), doctest::Contains("n_heads"), ConfigError);
  CHECK_THROWS_AS(model.tensor("nope"), DimensionError);
  const std::vector<const Trajectory*> none;
  auto m2 = model;
  CHECK_THROWS_AS(model_loss_grad(m2, none), DomainError);
}

TEST_CASE("parameter naming and flat round-trip") {
  RewardModelConfig mc = small_model();
  mc.positional = PositionalEncoding::Learned;
  auto model = RewardModelParams::initialize(mc);
  CHECK(model.tensor("block0.time.h1.q").value.rows() == 8);
  CHECK(model.tensor("pos").value.rows() == mc.max_steps);
  Eigen::VectorXd flat = model.flat();
  flat.setLinSpaced(-1, 1);
  model.set_flat(flat);
  CHECK(model.flat() == flat);
  CHECK_THROWS_AS(model.set_flat(Eigen::VectorXd::Zero(3)), DimensionError);
}
