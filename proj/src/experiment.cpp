#include "tar2/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace tar2 {

namespace fs = std::filesystem;

// --- config -----------------------------------------------------------------

namespace {

std::string split_name(SplitMode m) { return m == SplitMode::Conserving ? "conserving" : "broadcast"; }

SplitMode split_from_string(const std::string& s) {
  if (s == "conserving") return SplitMode::Conserving;
  if (s == "broadcast") return SplitMode::Broadcast;
  throw ConfigError("ircr_mode: unknown value '" + s + "' (expected conserving|broadcast)");
}

Json fit_to_json(const FitOptions& f) {
  Json j;
  j["epochs"] = f.epochs;
  j["lr"] = f.lr;
  j["minibatch"] = f.minibatch;
  j["seed"] = f.seed;
  j["divergence_threshold"] = f.divergence_threshold;
  return j;
}

FitOptions fit_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("fit: expected an object");
  FitOptions f;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    try {
      if (key == "epochs") f.epochs = it->get<int>();
      else if (key == "lr") f.lr = it->get<double>();
      else if (key == "minibatch") f.minibatch = it->get<int>();
      else if (key == "seed") f.seed = it->get<std::uint64_t>();
      else if (key == "divergence_threshold") f.divergence_threshold = it->get<double>();
      else throw ConfigError("fit." + key + ": unknown field");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("fit." + key + ": wrong type");
    }
  }
  return f;
}

// 1-based line of byte offset `pos` in `text`.
int line_at(const std::string& text, std::size_t pos) {
  pos = std::min(pos, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

// Line of the JSON key named by the last component of a dotted field path,
// or 0 if it does not appear.
int line_of_field(const std::string& text, const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string key = "\"" + (dot == std::string::npos ? path : path.substr(dot + 1)) + "\"";
  std::size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    std::size_t after = pos + key.size();
    while (after < text.size() && std::isspace(static_cast<unsigned char>(text[after]))) ++after;
    if (after < text.size() && text[after] == ':') return line_at(text, pos);
    pos = after;
  }
  return 0;
}

}  // namespace

Json config_to_json(const TrainConfig& c) {
  Json j;
  j["version"] = kConfigVersion;
  j["env"] = to_json(c.env);
  j["redistributor"] = to_string(c.redistributor);
  j["ircr_mode"] = split_name(c.ircr_mode);
  j["algorithm"] = to_string(c.algorithm);
  j["return_mode"] = to_string(c.return_mode);
  j["episodes"] = c.episodes;
  j["warmup_episodes"] = c.warmup_episodes;
  j["refit_period"] = c.refit_period;
  j["model_buffer"] = c.model_buffer;
  j["freeze_model"] = c.freeze_model;
  j["lr_policy"] = c.lr_policy;
  j["baseline_rate"] = c.baseline_rate;
  j["ppo_clip"] = c.ppo_clip;
  j["ppo_epochs"] = c.ppo_epochs;
  j["batch_size"] = c.batch_size;
  j["eval_period"] = c.eval_period;
  j["policy_hidden"] = c.policy_hidden;
  j["seed"] = c.seed;
  j["model"] = to_json(c.model);
  j["fit"] = fit_to_json(c.fit);
  return j;
}

TrainConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  if (!j.contains("version")) throw ConfigError("version: missing");
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    try {
      if (key == "version") {
        if (it->get<int>() != kConfigVersion) {
          throw ConfigError("version: unsupported value " + it->dump() + " (expected " + std::to_string(kConfigVersion) + ")");
        }
      } else if (key == "env") c.env = env_spec_from_json(*it);
      else if (key == "redistributor") c.redistributor = redistributor_from_string(it->get<std::string>());
      else if (key == "ircr_mode") c.ircr_mode = split_from_string(it->get<std::string>());
      else if (key == "algorithm") c.algorithm = algorithm_from_string(it->get<std::string>());
      else if (key == "return_mode") c.return_mode = return_mode_from_string(it->get<std::string>());
      else if (key == "episodes") c.episodes = it->get<int>();
      else if (key == "warmup_episodes") c.warmup_episodes = it->get<int>();
      else if (key == "refit_period") c.refit_period = it->get<int>();
      else if (key == "model_buffer") c.model_buffer = it->get<int>();
      else if (key == "freeze_model") c.freeze_model = it->get<bool>();
      else if (key == "lr_policy") c.lr_policy = it->get<double>();
      else if (key == "baseline_rate") c.baseline_rate = it->get<double>();
      else if (key == "ppo_clip") c.ppo_clip = it->get<double>();
      else if (key == "ppo_epochs") c.ppo_epochs = it->get<int>();
      else if (key == "batch_size") c.batch_size = it->get<int>();
      else if (key == "eval_period") c.eval_period = it->get<int>();
      else if (key == "policy_hidden") c.policy_hidden = it->get<int>();
      else if (key == "seed") c.seed = it->get<std::uint64_t>();
      else if (key == "model") c.model = model_config_from_json(*it);
      else if (key == "fit") c.fit = fit_from_json(*it);
      else throw ConfigError(key + ": unknown field");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key + ": wrong type");
    }
  }
  return c;
}

TrainConfig parse_config(const std::string& text, const std::string& source) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(source + ":" + std::to_string(line_at(text, e.byte > 0 ? e.byte - 1 : 0)) + ": " + e.what());
  }
  try {
    TrainConfig c = config_from_json(j);
    c.validate();
    return c;
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    const std::string field = msg.substr(0, msg.find(':'));
    const int line = line_of_field(text, field);
    throw ConfigError(source + ":" + std::to_string(line) + ": " + msg);
  }
}

TrainConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ":0: cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

// --- run --------------------------------------------------------------------

namespace {

void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

double finite_or_nan(double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

RunOutcome run_into(const TrainConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  const auto start = std::chrono::steady_clock::now();
  std::ofstream metrics(out / "metrics.csv", std::ios::binary);
  if (!metrics) throw std::runtime_error("cannot write " + (out / "metrics.csv").string());
  metrics << kMetricsHeader << '\n';
  RunOutcome outcome;
  outcome.result = run_training(cfg, [&](const MetricsRow& row) { metrics << format_metrics_row(row) << '\n'; });
  metrics.flush();
  const TrainingResult& r = outcome.result;

  save_policy(out / "policy.bin", r.policy);
  if (r.model) {
    save_model(out / "model.bin", *r.model);
  } else {
    // Model-free arms still ship an (untrained) model file so every run has
    // the same artifact set.
    RewardModelConfig mc = cfg.model;
    mc.obs_dim = r.policy.shape().obs_dim;
    mc.n_actions = r.policy.shape().n_actions;
    save_model(out / "model.bin", RewardModelParams::initialize(mc));
  }
  outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  Json manifest;
  manifest["version"] = kVersion;
  manifest["config"] = config_to_json(cfg);
  manifest["seed"] = cfg.seed;
  manifest["outputs"] = {{"metrics", "metrics.csv"}, {"manifest", "manifest.json"},
                         {"model", "model.bin"},     {"policy", "policy.bin"}};
  manifest["model_trained"] = r.model.has_value();
  manifest["timings"] = {{"wall_seconds", outcome.seconds}};
  Json summary;
  summary["episodes_run"] = r.metrics.size();
  summary["trailing100_success"] = r.trailing_success(100);
  summary["episodes_to_0.9"] = r.episodes_to(0.9, 100);
  const double loss = r.metrics.empty() ? std::numeric_limits<double>::quiet_NaN() : r.metrics.back().model_loss;
  summary["final_model_loss"] = std::isfinite(loss) ? Json(finite_or_nan(loss)) : Json(nullptr);
  summary["aborted"] = r.aborted;
  if (r.aborted) summary["error"] = r.error;
  manifest["summary"] = summary;
  write_atomic(out / "manifest.json", manifest.dump(2) + "\n");
  return outcome;
}

int cmd_run(const RunOptions& options, std::ostream& log) {
  TrainConfig cfg;
  try {
    cfg = load_config(options.config);
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (options.seed) cfg.seed = *options.seed;
  try {
    const RunOutcome o = run_into(cfg, options.out);
    if (o.result.aborted) {
      log << "error: run aborted after " << o.result.metrics.size() << " episodes: " << o.result.error << '\n';
      return kExitRuntime;
    }
    log << "done: " << o.result.metrics.size() << " episodes, trailing-100 success "
        << format_double(o.result.trailing_success(100)) << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

// --- verify -----------------------------------------------------------------

VerifySuite verify_suite_from_string(const std::string& name) {
  if (name == "algebra") return VerifySuite::Algebra;
  if (name == "shaping") return VerifySuite::Shaping;
  if (name == "gradients") return VerifySuite::Gradients;
  if (name == "variance") return VerifySuite::Variance;
  if (name == "all") return VerifySuite::All;
  throw ConfigError("suite: unknown value '" + name + "' (expected algebra|shaping|gradients|variance|all)");
}

Json to_json(const CheckReport& report) {
  Json j;
  j["check"] = report.check;
  j["status"] = report.passed ? "pass" : "fail";
  j["max_abs_err"] = report.max_abs_err;
  j["details"] = report.details;
  return j;
}

namespace {

constexpr std::size_t kMaxDetails = 20;

CheckReport named(const char* check) {
  CheckReport r;
  r.check = check;
  return r;
}

void note(CheckReport& rep, double err, double tol, const std::string& what) {
  rep.max_abs_err = std::max(rep.max_abs_err, err);
  if (!(err <= tol) && rep.details.size() < kMaxDetails) rep.fail(what);
  else if (!(err <= tol)) rep.passed = false;
}

struct Draw {
  WeightMatrix<double> w;
  double R = 0.0;
};

std::vector<Draw> algebra_draws(std::uint64_t seed, int n, bool fault) {
  std::mt19937_64 rng(derive_seed(seed, 0xA1));
  std::uniform_int_distribution<int> steps(1, 32);
  std::uniform_int_distribution<int> agents(1, 8);
  std::uniform_real_distribution<double> ret(-100.0, 100.0);
  std::vector<Draw> out;
  for (int d = 0; d < n; ++d) {
    const int T = steps(rng);
    const int N = agents(rng);
    out.push_back({random_weights(rng, T, N), ret(rng)});
  }
  if (fault && !out.empty()) out[0].w.temporal(0) += 1e-3;
  return out;
}

// r = w' * w * R without the validating wrapper, so injected faults surface in
// the checks rather than as an exception.
RedistributionMatrix<double> raw_redistribute(const Draw& d) {
  RedistributionMatrix<double> r;
  r.rewards = (d.w.agent.array().colwise() * d.w.temporal.array()).matrix() * d.R;
  r.source_return = d.R;
  return r;
}

std::string draw_label(int index, const Draw& d) {
  return "draw " + std::to_string(index) + " (T=" + std::to_string(d.w.steps()) +
         ", N=" + std::to_string(d.w.agents()) + ")";
}

std::vector<CheckReport> algebra_suite(const VerifyOptions& o) {
  const auto draws = algebra_draws(o.seed, o.draws, o.inject_fault);
  CheckReport conservation = named("conservation"), simplex = named("simplex"), delta = named("delta_identity"), pathwise = named("pathwise_scaling");
  for (int j = 0; j < static_cast<int>(draws.size()); ++j) {
    const Draw& d = draws[static_cast<std::size_t>(j)];
    const auto r = raw_redistribute(d);
    const double scale = std::max(1.0, std::abs(d.R));
    note(conservation, std::abs(r.total() - d.R) / scale, 1e-9,
         draw_label(j, d) + ": sum r - R = " + format_double(r.total() - d.R));

    const auto report = validate_weights(d.w);
    if (!report.ok()) {
      std::string msg = draw_label(j, d) + ":";
      for (const auto& v : report.violations) msg += " " + v.message;
      simplex.max_abs_err = std::max(simplex.max_abs_err, std::abs(report.violations.front().value - 1.0));
      if (simplex.details.size() < kMaxDetails) simplex.fail(msg);
      else simplex.passed = false;
    }

    for (Index k = 0; k < d.w.agents(); ++k) {
      const double a = delta_k(d.w, k);
      const double b = delta_k_weighted(d.w, k);
      note(delta, std::abs(a - b), 1e-12, draw_label(j, d) + ", agent " + std::to_string(k) + ": forms differ");
      const double out_of_range = std::max({0.0, -a, a - 1.0});
      note(delta, out_of_range, 1e-12, draw_label(j, d) + ", agent " + std::to_string(k) + ": delta outside [0,1]");
      const double sum_k = r.rewards.col(k).sum();
      note(pathwise, std::abs(sum_k - a * d.R) / scale, 1e-9,
           draw_label(j, d) + ", agent " + std::to_string(k) + ": sum_t r_k - delta_k R = " +
               format_double(sum_k - a * d.R));
    }
  }

  // Weights extracted from a randomly initialized reward model.
  RewardModelConfig mc;
  mc.d_model = 8;
  mc.n_blocks = 1;
  mc.d_ff = 8;
  mc.zero_head = false;
  const int model_draws = std::max(1, o.draws / 50);
  PolicyParams uniform = PolicyParams::initialize({3, 3, 0}, 2, 0);
  for (int j = 0; j < model_draws; ++j) {
    mc.init_seed = derive_seed(o.seed, 0xB00 + static_cast<std::uint64_t>(j));
    const auto model = RewardModelParams::initialize(mc);
    EnvSpec spec;
    spec.n_agents = 2 + j % 3;
    const auto episodes = collect_rollouts(uniform.n_agents() == spec.n_agents ? uniform
                                               : PolicyParams::initialize({3, 3, 0}, spec.n_agents, 0),
                                           spec, 1, o.seed, static_cast<std::uint64_t>(j));
    const auto w = extract_weights(model, episodes[0].trajectory);
    const auto report = validate_weights(w);
    if (!report.ok()) simplex.fail("model draw " + std::to_string(j) + ": " + report.violations.front().message);
  }
  return {conservation, simplex, delta, pathwise};
}

std::vector<CheckReport> shaping_suite(const VerifyOptions& o) {
  const auto draws = algebra_draws(derive_seed(o.seed, 0x5A), o.draws, o.inject_fault);
  CheckReport rep = named("shaping_telescoping");
  for (int j = 0; j < static_cast<int>(draws.size()); ++j) {
    const Draw& d = draws[static_cast<std::size_t>(j)];
    const auto r = raw_redistribute(d);
    // Potentials are built independently of r from the weights, so a
    // perturbed weight shows up as a telescoping mismatch.
    double recon = 0.0;
    double worst = 0.0;
    for (Index i = 0; i < d.w.agents(); ++i) {
      Eigen::VectorXd phi = Eigen::VectorXd::Zero(d.w.steps() + 1);
      for (Index t = 0; t < d.w.steps(); ++t) phi(t + 1) = phi(t) + d.R * d.w.temporal(t) * d.w.agent(t, i);
      for (Index t = 0; t < d.w.steps(); ++t) worst = std::max(worst, std::abs(phi(t + 1) - phi(t) - r.rewards(t, i)));
      recon += phi(d.w.steps());
    }
    const double scale = std::max(1.0, std::abs(d.R));
    note(rep, worst, 1e-9, draw_label(j, d) + ": r differs from potential difference by " + format_double(worst));
    note(rep, std::abs(recon - d.R) / scale, 1e-9,
         draw_label(j, d) + ": telescoped sum - R = " + format_double(recon - d.R));
    if (!o.inject_fault || j > 0) {
      const auto lib = shaping_check(r, d.w, d.R, 1e-9);
      if (!lib.passed) {
        rep.passed = false;
        if (rep.details.size() < kMaxDetails) rep.details.push_back(draw_label(j, d) + ": " + lib.details.front());
      }
    }
  }
  return {rep};
}

double max_relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric, double floor) {
  return ((analytic - numeric).array().abs() /
          analytic.array().abs().max(numeric.array().abs()).max(floor))
      .maxCoeff();
}

std::vector<CheckReport> gradients_suite(const VerifyOptions& o) {
  CheckReport pg = named("pg_equivalence");
  const auto suite = micro_suite();
  for (std::size_t mi = 0; mi < suite.size(); ++mi) {
    const MicroDecPomdp& m = suite[mi];
    const TabularPolicy policy = TabularPolicy::random(m, derive_seed(o.seed, 0x6000 + mi), 1.0);
    const std::vector<std::pair<std::string, WeightGenerator>> generators = {
        {"oracle", oracle_weight_generator(m)}, {"hashed", hashed_weight_generator(m, o.seed)}};
    for (const auto& [gname, gen] : generators) {
      for (int k = 0; k < m.n_agents(); ++k) {
        const auto rep = pg_equivalence_report(m, policy, gen, k, 1e-9);
        const std::string where = m.name + "/" + gname + "/agent " + std::to_string(k);
        pg.max_abs_err = std::max({pg.max_abs_err, rep.err_total_vs_env, rep.err_agent_vs_scaled});
        if (!rep.passed) {
          pg.fail(where + ": total err " + format_double(rep.err_total_vs_env) + ", agent err " +
                  format_double(rep.err_agent_vs_scaled) + ", delta in [" + format_double(rep.min_delta) + ", " +
                  format_double(rep.max_delta) + "]");
        }
      }
    }
  }

  CheckReport fd = named("model_gradient");
  RewardModelConfig mc;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_blocks = 1;
  mc.d_ff = 8;
  mc.zero_head = false;
  EnvSpec spec;
  const auto episodes = collect_rollouts(PolicyParams::initialize({3, 3, 0}, 2, 0), spec, 2, o.seed, 0x7000);
  for (int p = 0; p < 2; ++p) {
    mc.init_seed = derive_seed(o.seed, 0x7100 + static_cast<std::uint64_t>(p));
    RewardModelParams params = RewardModelParams::initialize(mc);
    for (const auto& ep : episodes) {
      const Trajectory* batch[] = {&ep.trajectory};
      model_loss_grad(params, batch);
      const Eigen::VectorXd analytic = params.flat_grad();
      const Eigen::VectorXd theta = params.flat();
      Eigen::VectorXd numeric(theta.size());
      const double h = 1e-5;
      for (Index q = 0; q < theta.size(); ++q) {
        Eigen::VectorXd shifted = theta;
        shifted(q) = theta(q) + h;
        params.set_flat(shifted);
        const double up = model_loss(params, batch);
        shifted(q) = theta(q) - h;
        params.set_flat(shifted);
        const double down = model_loss(params, batch);
        numeric(q) = (up - down) / (2.0 * h);
      }
      params.set_flat(theta);
      const double err = max_relative_error(analytic, numeric, 1e-6);
      note(fd, err, 1e-4, "point " + std::to_string(p) + ": relative error " + format_double(err));
    }
  }
  return {pg, fd};
}

std::vector<CheckReport> variance_suite(const VerifyOptions& o) {
  CheckReport cs = named("cauchy_schwarz");
  std::mt19937_64 rng(derive_seed(o.seed, 0x8000));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<std::pair<std::string, std::pair<Eigen::VectorXd, Eigen::VectorXd>>> fixtures;
  for (int f = 0; f < 50; ++f) {
    const double rho = unit(rng);
    const double sa = std::exp(2.0 * unit(rng));
    const double sb = std::exp(2.0 * unit(rng));
    Eigen::VectorXd a(1000), b(1000);
    for (Index j = 0; j < 1000; ++j) {
      const double z1 = normal(rng);
      const double z2 = normal(rng);
      a(j) = sa * z1;
      b(j) = sb * (rho * z1 + std::sqrt(1.0 - rho * rho) * z2);
    }
    fixtures.push_back({"random " + std::to_string(f), {a, b}});
  }
  Eigen::VectorXd base(1000);
  for (Index j = 0; j < base.size(); ++j) base(j) = normal(rng);
  fixtures.push_back({"perfectly correlated", {base, 2.5 * base}});
  fixtures.push_back({"identical", {base, base}});
  fixtures.push_back({"anti-correlated", {base, -0.5 * base}});
  fixtures.push_back({"constant other", {base, Eigen::VectorXd::Constant(base.size(), 3.0)}});
  fixtures.push_back({"large scale", {1e6 * base, 1e6 * base}});
  for (const auto& [name, ab] : fixtures) {
    const auto s = advantage_decomposition(ab.first, ab.second, 1e-9);
    const double excess = std::max(0.0, s.var_total - s.bound) / std::max(1.0, s.bound);
    note(cs, excess, 1e-9, name + ": Var(A)=" + format_double(s.var_total) + " > bound " + format_double(s.bound));
  }

  CheckReport lin = named("variance_scaling");
  const auto table = variance_vs_agents({2, 4, 8}, 100000, derive_seed(o.seed, 0x8100));
  for (const auto& row : table.rows) {
    const double ratio = row.ratio();
    lin.max_abs_err = std::max(lin.max_abs_err, std::abs(ratio - 1.0));
    if (ratio < 0.8 || ratio > 1.2) {
      lin.fail("N=" + std::to_string(row.n_agents) + ": Var(A)/N = " + format_double(ratio) + " outside [0.8, 1.2]");
    }
  }
  return {cs, lin};
}

}  // namespace

std::vector<CheckReport> run_verify(const VerifyOptions& o) {
  std::vector<CheckReport> out;
  auto append = [&](std::vector<CheckReport> reps) {
    for (auto& r : reps) out.push_back(std::move(r));
  };
  const bool all = o.suite == VerifySuite::All;
  if (all || o.suite == VerifySuite::Algebra) append(algebra_suite(o));
  if (all || o.suite == VerifySuite::Shaping) append(shaping_suite(o));
  if (all || o.suite == VerifySuite::Gradients) append(gradients_suite(o));
  if (all || o.suite == VerifySuite::Variance) append(variance_suite(o));
  return out;
}

int cmd_verify(const VerifyOptions& options, std::ostream& out) {
  const auto reports = run_verify(options);
  Json arr = Json::array();
  bool ok = true;
  for (const auto& r : reports) {
    arr.push_back(to_json(r));
    ok = ok && r.passed;
  }
  out << arr.dump(2) << '\n';
  return ok ? kExitOk : kExitViolation;
}

// --- compare ----------------------------------------------------------------

int cmd_compare(const CompareOptions& options, std::ostream& log) {
  TrainConfig base;
  try {
    base = load_config(options.config);
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (options.seeds < 1) {
    log << "error: seeds: must be positive\n";
    return kExitConfig;
  }
  std::vector<RedistributorKind> arms;
  std::set<std::string> seen;
  for (const auto& name : options.arms) {
    if (!seen.insert(name).second) {
      log << "warning: duplicate arm '" << name << "' ignored\n";
      continue;
    }
    try {
      arms.push_back(redistributor_from_string(name));
    } catch (const ConfigError& e) {
      log << "error: arms: " << e.what() << '\n';
      return kExitConfig;
    }
  }
  if (arms.empty()) {
    log << "error: arms: no arms given\n";
    return kExitConfig;
  }

  fs::create_directories(options.out);
  std::vector<SummaryRow> summary;
  bool any_failed = false;
  for (const auto arm : arms) {
    for (int s = 0; s < options.seeds; ++s) {
      TrainConfig cfg = base;
      cfg.redistributor = arm;
      cfg.seed = options.first_seed + static_cast<std::uint64_t>(s);
      const fs::path dir = options.out / to_string(arm) / ("seed_" + std::to_string(cfg.seed));
      SummaryRow row{to_string(arm), cfg.seed};
      try {
        const RunOutcome o = run_into(cfg, dir);
        row.final_success = o.result.trailing_success(100);
        row.episodes_to_090 = o.result.episodes_to(0.9, 100);
        row.aborted = o.result.aborted;
        if (o.result.aborted) log << "error: " << row.arm << " seed " << row.seed << ": " << o.result.error << '\n';
        log << row.arm << " seed " << row.seed << ": success " << format_double(row.final_success) << ", "
            << format_double(o.seconds) << " s\n";
      } catch (const std::exception& e) {
        row.aborted = true;
        log << "error: " << row.arm << " seed " << row.seed << ": " << e.what() << '\n';
      }
      any_failed = any_failed || row.aborted;
      summary.push_back(row);
    }
  }
  std::ostringstream csv;
  csv << "arm,seed,final_success,episodes_to_0.9\n";
  for (const auto& r : summary) {
    csv << r.arm << ',' << r.seed << ',' << (r.aborted ? std::string("nan") : format_double(r.final_success)) << ','
        << r.episodes_to_090 << '\n';
  }
  write_atomic(options.out / "summary.csv", csv.str());
  return any_failed ? kExitRuntime : kExitOk;
}

std::vector<SummaryRow> read_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "arm,seed,final_success,episodes_to_0.9") {
    throw FormatError("line 1: not a summary.csv header");
  }
  std::vector<SummaryRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string arm, seed, success, eps;
    if (!std::getline(ss, arm, ',') || !std::getline(ss, seed, ',') || !std::getline(ss, success, ',') ||
        !std::getline(ss, eps)) {
      throw FormatError("line " + std::to_string(lineno) + ": expected 4 fields");
    }
    SummaryRow r;
    r.arm = arm;
    r.seed = std::stoull(seed);
    r.final_success = std::strtod(success.c_str(), nullptr);
    r.aborted = std::isnan(r.final_success);
    r.episodes_to_090 = std::stoi(eps);
    rows.push_back(r);
  }
  return rows;
}

// --- plot -------------------------------------------------------------------

std::vector<double> trailing_mean(const std::vector<MetricsRow>& rows, int window) {
  std::vector<double> out(rows.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    sum += rows[j].return_env;
    if (j >= static_cast<std::size_t>(window)) sum -= rows[j - static_cast<std::size_t>(window)].return_env;
    out[j] = sum / static_cast<double>(std::min(j + 1, static_cast<std::size_t>(window)));
  }
  return out;
}

std::string series_label(const fs::path& metrics) {
  const fs::path dir = metrics.parent_path();
  const std::string leaf = dir.filename().string();
  if (leaf.rfind("seed_", 0) == 0 && dir.has_parent_path()) return dir.parent_path().filename().string();
  return leaf.empty() ? metrics.stem().string() : leaf;
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(const std::vector<PlotSeries>& series, int window) {
  constexpr double W = 800, H = 480, left = 70, right = 170, top = 30, bottom = 50;
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

  // Group by label, keeping first-seen order.
  std::vector<std::string> labels;
  std::map<std::string, std::vector<std::vector<double>>> curves;
  for (const auto& s : series) {
    if (!curves.count(s.label)) labels.push_back(s.label);
    curves[s.label].push_back(trailing_mean(s.rows, window));
  }
  struct Band {
    std::vector<double> mean, lo, hi;
    bool has_band = false;
  };
  std::map<std::string, Band> bands;
  double xmax = 1.0, ymin = 0.0, ymax = 1.0;
  bool first = true;
  for (const auto& label : labels) {
    const auto& cs = curves[label];
    std::size_t len = cs.front().size();
    for (const auto& c : cs) len = std::min(len, c.size());
    Band b;
    b.has_band = cs.size() > 1;
    for (std::size_t j = 0; j < len; ++j) {
      double m = 0.0;
      for (const auto& c : cs) m += c[j];
      m /= static_cast<double>(cs.size());
      double v = 0.0;
      for (const auto& c : cs) v += (c[j] - m) * (c[j] - m);
      const double sd = b.has_band ? std::sqrt(v / static_cast<double>(cs.size() - 1)) : 0.0;
      b.mean.push_back(m);
      b.lo.push_back(m - sd);
      b.hi.push_back(m + sd);
      if (first) {
        ymin = m - sd;
        ymax = m + sd;
        first = false;
      }
      ymin = std::min(ymin, m - sd);
      ymax = std::max(ymax, m + sd);
    }
    xmax = std::max(xmax, static_cast<double>(len > 0 ? len - 1 : 1));
    bands[label] = std::move(b);
  }
  if (ymax - ymin < 1e-9) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double pw = W - left - right, ph = H - top - bottom;
  auto X = [&](double x) { return left + pw * x / xmax; };
  auto Y = [&](double y) { return top + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<g stroke=\"#333\" stroke-width=\"1\">\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
      << "\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\"/>\n";
  svg << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = xmax * k / 4.0;
    const double yv = ymin + (ymax - ymin) * k / 4.0;
    svg << "<text x=\"" << fixed(X(xv)) << "\" y=\"" << fixed(top + ph + 16) << "\" text-anchor=\"middle\">"
        << fixed(xv) << "</text>\n";
    svg << "<text x=\"" << fixed(left - 6) << "\" y=\"" << fixed(Y(yv) + 4) << "\" text-anchor=\"end\">" << fixed(yv)
        << "</text>\n";
  }
  svg << "<text x=\"" << fixed(left + pw / 2) << "\" y=\"" << fixed(H - 10) << "\" text-anchor=\"middle\">episode</text>\n";
  svg << "<text x=\"16\" y=\"" << fixed(top + ph / 2) << "\" transform=\"rotate(-90 16 " << fixed(top + ph / 2)
      << ")\" text-anchor=\"middle\">return (trailing " << window << ")</text>\n";
  svg << "</g>\n";

  for (std::size_t li = 0; li < labels.size(); ++li) {
    const auto& b = bands[labels[li]];
    const char* color = palette[li % (sizeof palette / sizeof *palette)];
    if (b.mean.empty()) continue;
    if (b.has_band) {
      svg << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t j = 0; j < b.hi.size(); ++j) svg << fixed(X(static_cast<double>(j))) << ',' << fixed(Y(b.hi[j])) << ' ';
      for (std::size_t j = b.lo.size(); j-- > 0;) svg << fixed(X(static_cast<double>(j))) << ',' << fixed(Y(b.lo[j])) << ' ';
      svg << "\"/>\n";
    }
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t j = 0; j < b.mean.size(); ++j) svg << fixed(X(static_cast<double>(j))) << ',' << fixed(Y(b.mean[j])) << ' ';
    svg << "\"/>\n";
    const double ly = top + 16.0 * static_cast<double>(li + 1);
    svg << "<line x1=\"" << fixed(W - right + 15) << "\" y1=\"" << fixed(ly) << "\" x2=\"" << fixed(W - right + 35)
        << "\" y2=\"" << fixed(ly) << "\" stroke=\"" << color << "\" stroke-width=\"3\"/>\n";
    svg << "<text x=\"" << fixed(W - right + 40) << "\" y=\"" << fixed(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape_xml(labels[li]) << " (n="
        << curves[labels[li]].size() << ")</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

int cmd_plot(const std::vector<fs::path>& metrics, const fs::path& out, std::ostream& log) {
  if (metrics.empty()) {
    log << "error: metrics: no files given\n";
    return kExitConfig;
  }
  std::vector<PlotSeries> series;
  for (const auto& path : metrics) {
    std::ifstream in(path);
    if (!in) {
      log << "error: " << path.string() << ": cannot open\n";
      return kExitConfig;
    }
    try {
      series.push_back({series_label(path), read_metrics_csv(in)});
    } catch (const FormatError& e) {
      log << "error: " << path.string() << ":" << e.what() << '\n';
      return kExitConfig;
    }
  }
  try {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_atomic(out, render_svg(series));
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace tar2
