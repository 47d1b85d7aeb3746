#include "tar2/serialization.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace tar2 {

namespace {

Json matrix_rows(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json matrix_rows(const Eigen::MatrixXi& m) {
  Json rows = Json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename M>
M rows_matrix(const Json& j, Index cols_if_empty, const char* field) {
  if (!j.is_array()) throw FormatError(std::string(field) + ": expected an array of rows");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 ? static_cast<Index>(j[0].size()) : cols_if_empty;
  M m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw FormatError(std::string(field) + ": ragged row " + std::to_string(r));
    }
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<typename M::Scalar>();
  }
  return m;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Json to_json(const RedistributionMatrix<double>& r) {
  Json j;
  j["T"] = r.steps();
  j["N"] = r.agents();
  j["source_return"] = r.source_return;
  j["rewards"] = matrix_rows(r.rewards);
  return j;
}

RedistributionMatrix<double> redistribution_from_json(const Json& j) {
  try {
    RedistributionMatrix<double> r;
    const Index T = j.at("T").get<Index>();
    const Index N = j.at("N").get<Index>();
    r.source_return = j.at("source_return").get<double>();
    r.rewards = rows_matrix<Eigen::MatrixXd>(j.at("rewards"), N, "rewards");
    if (r.steps() != T || r.agents() != N) throw FormatError("rewards: shape does not match T/N");
    r.conserving = std::abs(r.total() - r.source_return) <= 1e-9 * std::max(1.0, std::abs(r.source_return));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("redistribution json: ") + e.what());
  }
}

Json to_json(const EnvSpec& spec) {
  Json j;
  j["id"] = to_string(spec.id);
  j["n_agents"] = spec.n_agents;
  j["horizon"] = spec.horizon;
  j["seed"] = spec.seed;
  j["corridor_length"] = spec.corridor_length;
  j["hp"] = spec.hp;
  j["damage"] = spec.damage;
  j["enemies"] = spec.enemies;
  return j;
}

EnvSpec env_spec_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("env: expected an object");
  EnvSpec s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    try {
      if (key == "id") s.id = env_id_from_string(it->get<std::string>());
      else if (key == "n_agents") s.n_agents = it->get<int>();
      else if (key == "horizon") s.horizon = it->get<int>();
      else if (key == "seed") s.seed = it->get<std::uint64_t>();
      else if (key == "corridor_length") s.corridor_length = it->get<int>();
      else if (key == "hp") s.hp = it->get<int>();
      else if (key == "damage") s.damage = it->get<int>();
      else if (key == "enemies") s.enemies = it->get<int>();
      else throw ConfigError("env." + key + ": unknown field");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("env." + key + ": wrong type");
    }
  }
  return s;
}

Json to_json(const EpisodeResult& episode) {
  Json j;
  j["spec"] = to_json(episode.spec);
  j["obs"] = matrix_rows(episode.trajectory.observations);
  j["acts"] = matrix_rows(episode.trajectory.actions);
  j["return"] = episode.episodic_return;
  j["oracle"] = matrix_rows(episode.oracle);
  j["success"] = episode.success;
  return j;
}

EpisodeResult episode_from_json(const Json& j) {
  try {
    EpisodeResult e;
    e.spec = env_spec_from_json(j.at("spec"));
    e.trajectory.actions = rows_matrix<Eigen::MatrixXi>(j.at("acts"), e.spec.n_agents, "acts");
    e.trajectory.steps = e.trajectory.actions.rows();
    e.trajectory.agents = e.trajectory.actions.cols();
    e.trajectory.observations = rows_matrix<Eigen::MatrixXd>(j.at("obs"), 0, "obs");
    e.episodic_return = j.at("return").get<double>();
    e.trajectory.episodic_return = e.episodic_return;
    e.oracle = rows_matrix<Eigen::MatrixXd>(j.at("oracle"), e.trajectory.agents, "oracle");
    e.success = j.at("success").get<bool>();
    e.trajectory.check();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("episode json: ") + ex.what());
  } catch (const DimensionError& ex) {
    throw FormatError(std::string("episode json: ") + ex.what());
  }
}

void write_episodes_jsonl(std::ostream& out, const std::vector<EpisodeResult>& episodes) {
  for (const auto& e : episodes) out << to_json(e).dump() << '\n';
}

std::vector<EpisodeResult> read_episodes_jsonl(std::istream& in) {
  std::vector<EpisodeResult> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(Json::parse(line)));
    } catch (const std::exception& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

Json to_json(const RewardModelConfig& c) {
  Json j;
  j["obs_dim"] = c.obs_dim;
  j["n_actions"] = c.n_actions;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["n_blocks"] = c.n_blocks;
  j["d_ff"] = c.d_ff;
  j["positional"] = c.positional == PositionalEncoding::Sinusoidal ? "sinusoidal" : "learned";
  j["temporal_mask"] = c.temporal_mask == TemporalMask::Hindsight ? "hindsight" : "causal";
  j["agent_id"] = c.agent_id;
  j["max_agents"] = c.max_agents;
  j["max_steps"] = c.max_steps;
  j["zero_head"] = c.zero_head;
  j["init_seed"] = c.init_seed;
  return j;
}

RewardModelConfig model_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("model: expected an object");
  RewardModelConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    try {
      if (key == "obs_dim") c.obs_dim = it->get<int>();
      else if (key == "n_actions") c.n_actions = it->get<int>();
      else if (key == "d_model") c.d_model = it->get<int>();
      else if (key == "n_heads") c.n_heads = it->get<int>();
      else if (key == "n_blocks") c.n_blocks = it->get<int>();
      else if (key == "d_ff") c.d_ff = it->get<int>();
      else if (key == "positional") {
        const auto v = it->get<std::string>();
        if (v == "sinusoidal") c.positional = PositionalEncoding::Sinusoidal;
        else if (v == "learned") c.positional = PositionalEncoding::Learned;
        else throw ConfigError("model.positional: unknown value '" + v + "' (expected sinusoidal|learned)");
      } else if (key == "temporal_mask") {
        const auto v = it->get<std::string>();
        if (v == "hindsight") c.temporal_mask = TemporalMask::Hindsight;
        else if (v == "causal") c.temporal_mask = TemporalMask::Causal;
        else throw ConfigError("model.temporal_mask: unknown value '" + v + "' (expected hindsight|causal)");
      } else if (key == "agent_id") c.agent_id = it->get<bool>();
      else if (key == "max_agents") c.max_agents = it->get<int>();
      else if (key == "max_steps") c.max_steps = it->get<int>();
      else if (key == "zero_head") c.zero_head = it->get<bool>();
      else if (key == "init_seed") c.init_seed = it->get<std::uint64_t>();
      else throw ConfigError("model." + key + ": unknown field");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("model." + key + ": wrong type");
    }
  }
  return c;
}

// ---------------------------------------------------------------------------

void write_param_file(const std::filesystem::path& path, const Json& header, const Eigen::VectorXd& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  Json h = header;
  h["count"] = values.size();
  h["dtype"] = "f64le";
  out << h.dump() << '\n';
  for (Index k = 0; k < values.size(); ++k) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(values(k));
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

ParamFile read_param_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header line");
  ParamFile f;
  try {
    f.header = Json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  const auto count = f.header.value("count", Index{-1});
  if (count < 0 || f.header.value("dtype", std::string()) != "f64le") {
    throw FormatError(path.string() + ": header needs count and dtype f64le");
  }
  f.values.resize(count);
  for (Index k = 0; k < count; ++k) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw FormatError(path.string() + ": truncated payload");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    f.values(k) = std::bit_cast<double>(bits);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  return f;
}

void save_model(const std::filesystem::path& path, const RewardModelParams& params) {
  Json h;
  h["kind"] = "reward_model";
  h["config"] = to_json(params.config());
  Json shapes = Json::array();
  for (const auto& t : params.tensors()) shapes.push_back({{"name", t.name}, {"shape", {t.value.rows(), t.value.cols()}}});
  h["tensors"] = shapes;
  write_param_file(path, h, params.flat());
}

RewardModelParams load_model(const std::filesystem::path& path) {
  const ParamFile f = read_param_file(path);
  if (f.header.value("kind", std::string()) != "reward_model") throw FormatError(path.string() + ": not a reward model");
  RewardModelParams p(model_config_from_json(f.header.at("config")));
  p.set_flat(f.values);
  return p;
}

void save_policy(const std::filesystem::path& path, const PolicyParams& policy) {
  Json h;
  h["kind"] = "policy";
  h["obs_dim"] = policy.shape().obs_dim;
  h["n_actions"] = policy.shape().n_actions;
  h["hidden"] = policy.shape().hidden;
  h["n_agents"] = policy.n_agents();
  Eigen::VectorXd flat(policy.shape().size() * policy.n_agents());
  for (int k = 0; k < policy.n_agents(); ++k) flat.segment(k * policy.shape().size(), policy.shape().size()) = policy.theta(k);
  write_param_file(path, h, flat);
}

PolicyParams load_policy(const std::filesystem::path& path) {
  const ParamFile f = read_param_file(path);
  if (f.header.value("kind", std::string()) != "policy") throw FormatError(path.string() + ": not a policy");
  const PolicyShape shape{f.header.at("obs_dim").get<int>(), f.header.at("n_actions").get<int>(),
                          f.header.at("hidden").get<int>()};
  const int n = f.header.at("n_agents").get<int>();
  if (f.values.size() != shape.size() * n) throw FormatError(path.string() + ": payload size mismatch");
  PolicyParams p(shape, n);
  for (int k = 0; k < n; ++k) p.theta(k) = f.values.segment(k * shape.size(), shape.size());
  return p;
}

void write_loss_curve(std::ostream& out, const FitReport& report) {
  out << "epoch,loss\n";
  out << "0," << format_double(report.initial_loss) << '\n';
  for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
    out << e + 1 << ',' << format_double(report.epoch_loss[e]) << '\n';
  }
}

// ---------------------------------------------------------------------------

std::string format_metrics_row(const MetricsRow& row) {
  std::string s = std::to_string(row.episode);
  s += ',';
  s += std::to_string(row.phase);
  for (double v : {row.return_env}) s += ',' + format_double(v);
  s += row.success ? ",1" : ",0";
  for (double v : {row.delta_mean, row.model_loss, row.policy_grad_norm, row.entropy}) s += ',' + format_double(v);
  return s;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << format_metrics_row(r) << '\n';
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("line 1: empty metrics file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) throw FormatError("line 1: header '" + line + "' != '" + kMetricsHeader + "'");
  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 8) {
      throw FormatError("line " + std::to_string(lineno) + ": expected 8 fields, got " + std::to_string(fields.size()));
    }
    auto number = [&](const std::string& s) {
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (s.empty() || *end != '\0') throw FormatError("line " + std::to_string(lineno) + ": bad number '" + s + "'");
      return v;
    };
    MetricsRow r;
    r.episode = static_cast<int>(number(fields[0]));
    r.phase = static_cast<int>(number(fields[1]));
    r.return_env = number(fields[2]);
    r.success = number(fields[3]) != 0.0;
    r.delta_mean = number(fields[4]);
    r.model_loss = number(fields[5]);
    r.policy_grad_norm = number(fields[6]);
    r.entropy = number(fields[7]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace tar2
