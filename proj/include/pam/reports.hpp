#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pam/checkpoint.hpp"
#include "pam/config.hpp"
#include "pam/data.hpp"
#include "pam/model.hpp"
#include "pam/train.hpp"

namespace pam {

// ---- layer importance ----

struct ExpertImportance {
  std::string name;
  std::vector<std::vector<double>> normalized_rows;  // [K][P], |W| / row sum
  std::vector<std::vector<double>> pair;              // [E][L], mean of the normalized rows
  std::vector<std::vector<double>> buckets;           // [E][3] shallow / middle / deep
  std::vector<double> encoder_mean;                   // [E] average importance per layer

  double mass(const std::vector<PlantedPair>& pairs) const;
};

struct ImportanceReport {
  std::size_t num_encoders = 0;
  std::size_t pool_layers = 0;
  std::vector<ExpertImportance> routed;
  std::vector<ExpertImportance> shared;  // zero or one entry
};

/// Bucket b of a per-encoder pool of L states covers [b*L/3, (b+1)*L/3).
std::vector<std::pair<std::size_t, std::size_t>> bucket_bounds(std::size_t pool_layers);

ExpertImportance importance_of(const ExpertParams& expert, const std::string& name, std::size_t num_encoders);
/// Throws ContractError for baseline models, which have no fusion weights.
ImportanceReport importance_report(const PamModel& model);

nlohmann::json to_json(const ImportanceReport& r);
std::string to_text(const ImportanceReport& r);

// ---- parameter accounting ----

struct ParamReport {
  std::map<std::string, std::size_t> components;  // adapters, shared_expert, routed_experts, ...
  std::size_t expert_size = 0;                   // one ExpertParams
  std::size_t fusion_total = 0;
  std::size_t fusion_activated = 0;
  std::size_t total = 0;
  std::size_t activated = 0;
};

/// Counts from declared shapes only; nothing is allocated.
ParamReport param_report(const ModelConfig& config);
/// Independent count by walking a checkpoint's trainable arrays.
std::size_t checkpoint_param_count(const CheckpointFile& file);

nlohmann::json to_json(const ParamReport& r);
std::string to_text(const ParamReport& r);

// ---- cross-encoder similarity ----

struct CosineReport {
  std::size_t num_encoders = 0;
  std::size_t num_states = 0;
  /// similarity[a][b][l]: mean cosine of time-averaged state l of encoders a and b.
  std::vector<std::vector<std::vector<double>>> similarity;
};

CosineReport cosine_similarity_report(const std::vector<EncoderSpec>& bank, const std::vector<SyntheticAudio>& probes);

nlohmann::json to_json(const CosineReport& r);
std::string to_text(const CosineReport& r);

// ---- variant comparison ----

struct VariantResult {
  std::string name;
  RunConfig config;
  std::size_t total_params = 0;
  EvalMetrics metrics;
};

/// The five routing/fusion variants derived from `base`: full PaM, no shared
/// expert, one expert, no task label and audio-based routing.
std::vector<std::pair<std::string, RunConfig>> ablation_variants(const RunConfig& base);
/// Average and concat_linear baselines whose adapter width is chosen so their
/// trainable parameter count is closest to `base`.
std::vector<std::pair<std::string, RunConfig>> baseline_variants(const RunConfig& base);
std::size_t matched_adapter_hidden(const RunConfig& base, BaselineMode mode);

VariantResult run_variant(const std::string& name, const RunConfig& config, const Dataset& data,
                          const std::string& split = "test");

nlohmann::json to_json(const std::vector<VariantResult>& results);
std::string to_text(const std::vector<VariantResult>& results);

}  // namespace pam
