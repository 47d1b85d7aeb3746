#pragma once

// On-disk formats: JSON for redistribution matrices and configs, JSONL for
// episodes, a JSON-header binary for parameters, CSV for curves and metrics.
// Numbers are printed with 17 significant digits so files round-trip exactly.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "tar2/core.hpp"
#include "tar2/envs.hpp"
#include "tar2/policy.hpp"
#include "tar2/reward_model.hpp"
#include "tar2/training.hpp"

namespace tar2 {

using Json = nlohmann::ordered_json;

std::string format_double(double v);

Json to_json(const RedistributionMatrix<double>& r);
RedistributionMatrix<double> redistribution_from_json(const Json& j);

Json to_json(const EnvSpec& spec);
EnvSpec env_spec_from_json(const Json& j);

Json to_json(const EpisodeResult& episode);
EpisodeResult episode_from_json(const Json& j);
void write_episodes_jsonl(std::ostream& out, const std::vector<EpisodeResult>& episodes);
std::vector<EpisodeResult> read_episodes_jsonl(std::istream& in);

Json to_json(const RewardModelConfig& config);
RewardModelConfig model_config_from_json(const Json& j);

/// One JSON header line, then `values` as little-endian f64.
void write_param_file(const std::filesystem::path& path, const Json& header, const Eigen::VectorXd& values);
struct ParamFile {
  Json header;
  Eigen::VectorXd values;
};
ParamFile read_param_file(const std::filesystem::path& path);

void save_model(const std::filesystem::path& path, const RewardModelParams& params);
RewardModelParams load_model(const std::filesystem::path& path);
void save_policy(const std::filesystem::path& path, const PolicyParams& policy);
PolicyParams load_policy(const std::filesystem::path& path);

/// epoch,loss with epoch 0 the loss before any update.
void write_loss_curve(std::ostream& out, const FitReport& report);

inline constexpr const char* kMetricsHeader =
    "episode,phase,return_env,success,delta_mean,model_loss,policy_grad_norm,entropy";
std::string format_metrics_row(const MetricsRow& row);
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
/// Throws FormatError naming the line on a header or field mismatch.
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

}  // namespace tar2
