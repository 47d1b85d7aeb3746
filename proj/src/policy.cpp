#include "tar2/policy.hpp"

#include <algorithm>
#include <cmath>

namespace tar2 {

namespace {

struct Layout {
  Eigen::Index w1 = 0, b1 = 0, w2 = 0, b2 = 0, size = 0;
  explicit Layout(const PolicyShape& s) {
    const Eigen::Index in = s.hidden > 0 ? s.hidden : s.obs_dim;
    w1 = 0;
    b1 = s.hidden > 0 ? static_cast<Eigen::Index>(s.hidden) * s.obs_dim : 0;
    w2 = b1 + s.hidden;
    b2 = w2 + static_cast<Eigen::Index>(s.n_actions) * in;
    size = b2 + s.n_actions;
  }
};

}  // namespace

Eigen::Index PolicyShape::size() const { return Layout(*this).size; }

PolicyParams::PolicyParams(PolicyShape shape, int n_agents) : shape_(shape) {
  if (shape.obs_dim < 1 || shape.n_actions < 1 || shape.hidden < 0 || n_agents < 1) {
    throw ConfigError("policy: invalid shape");
  }
  theta_.assign(static_cast<std::size_t>(n_agents), Eigen::VectorXd::Zero(shape.size()));
}

PolicyParams PolicyParams::initialize(PolicyShape shape, int n_agents, std::uint64_t seed) {
  PolicyParams p(shape, n_agents);
  if (shape.hidden == 0) return p;
  const Layout l(shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(shape.obs_dim)));
  for (auto& th : p.theta_) {
    for (Eigen::Index j = l.w1; j < l.b1; ++j) th(j) = normal(rng);
  }
  return p;
}

Eigen::VectorXd PolicyParams::logits(int k, const Eigen::Ref<const Eigen::VectorXd>& obs,
                                     Eigen::VectorXd* hidden) const {
  if (obs.size() != shape_.obs_dim) throw DimensionError("policy: observation width mismatch");
  const Eigen::VectorXd& th = theta(k);
  const Layout l(shape_);
  const int A = shape_.n_actions;
  if (shape_.hidden == 0) {
    Eigen::Map<const Eigen::MatrixXd> w2(th.data() + l.w2, A, shape_.obs_dim);
    return w2 * obs + th.segment(l.b2, A);
  }
  const int H = shape_.hidden;
  Eigen::Map<const Eigen::MatrixXd> w1(th.data() + l.w1, H, shape_.obs_dim);
  Eigen::Map<const Eigen::MatrixXd> w2(th.data() + l.w2, A, H);
  Eigen::VectorXd h = (w1 * obs + th.segment(l.b1, H)).array().tanh().matrix();
  Eigen::VectorXd z = w2 * h + th.segment(l.b2, A);
  if (hidden != nullptr) *hidden = std::move(h);
  return z;
}

Eigen::VectorXd PolicyParams::probabilities(int k, const Eigen::Ref<const Eigen::VectorXd>& obs) const {
  const Eigen::VectorXd z = logits(k, obs, nullptr);
  const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

double PolicyParams::log_prob(int k, const Eigen::Ref<const Eigen::VectorXd>& obs, int action) const {
  const Eigen::VectorXd z = logits(k, obs, nullptr);
  const double m = z.maxCoeff();
  return z(action) - m - std::log((z.array() - m).exp().sum());
}

double PolicyParams::entropy(int k, const Eigen::Ref<const Eigen::VectorXd>& obs) const {
  const Eigen::VectorXd p = probabilities(k, obs);
  double h = 0.0;
  for (Eigen::Index a = 0; a < p.size(); ++a) {
    if (p(a) > 0.0) h -= p(a) * std::log(p(a));
  }
  return h;
}

int PolicyParams::sample(int k, const Eigen::Ref<const Eigen::VectorXd>& obs, std::mt19937_64& rng) const {
  const Eigen::VectorXd p = probabilities(k, obs);
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (Eigen::Index a = 0; a < p.size(); ++a) {
    u -= p(a);
    if (u < 0.0) return static_cast<int>(a);
  }
  return static_cast<int>(p.size() - 1);
}

void PolicyParams::accumulate_score(int k, const Eigen::Ref<const Eigen::VectorXd>& obs, int action, double coef,
                                    Eigen::VectorXd& grad) const {
  if (grad.size() != shape_.size()) grad = Eigen::VectorXd::Zero(shape_.size());
  Eigen::VectorXd h;
  const Eigen::VectorXd z = logits(k, obs, &h);
  Eigen::VectorXd p = (z.array() - z.maxCoeff()).exp().matrix();
  p /= p.sum();
  // d log softmax(z)_a / dz = e_a - p
  Eigen::VectorXd dz = -p;
  dz(action) += 1.0;
  dz *= coef;
  const Layout l(shape_);
  const int A = shape_.n_actions;
  grad.segment(l.b2, A) += dz;
  if (shape_.hidden == 0) {
    Eigen::Map<Eigen::MatrixXd>(grad.data() + l.w2, A, shape_.obs_dim) += dz * obs.transpose();
    return;
  }
  const int H = shape_.hidden;
  const Eigen::VectorXd& th = theta(k);
  Eigen::Map<const Eigen::MatrixXd> w2(th.data() + l.w2, A, H);
  Eigen::Map<Eigen::MatrixXd>(grad.data() + l.w2, A, H) += dz * h.transpose();
  const Eigen::VectorXd dpre = ((w2.transpose() * dz).array() * (1.0 - h.array().square())).matrix();
  grad.segment(l.b1, H) += dpre;
  Eigen::Map<Eigen::MatrixXd>(grad.data() + l.w1, H, shape_.obs_dim) += dpre * obs.transpose();
}

bool PolicyParams::all_finite() const {
  return std::all_of(theta_.begin(), theta_.end(), [](const Eigen::VectorXd& t) { return t.allFinite(); });
}

}  // namespace tar2
