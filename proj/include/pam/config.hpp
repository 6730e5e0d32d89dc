#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "pam/encoders.hpp"
#include "pam/fusion.hpp"
#include "pam/lm.hpp"
#include "pam/router.hpp"

namespace pam {

struct ModelConfig {
  BankConfig bank;
  LmConfig lm;
  FusionConfig fusion;
  RoutingStrategy strategy = RoutingStrategy::kPromptAware;
  std::size_t adapter_hidden = 0;  // 0 means D_LLM
  std::size_t router_hidden = 32;

  std::size_t adapter_width() const { return adapter_hidden == 0 ? lm.model_dim : adapter_hidden; }
  bool is_baseline() const { return fusion.baseline_mode != BaselineMode::kPam; }
  /// A router head exists for PaM with more than one routed expert.
  bool has_router() const { return !is_baseline() && fusion.num_routed_experts > 1; }
};

struct DataConfig {
  std::size_t num_tasks = 4;
  std::size_t n_per_task = 200;  // across all splits
  double train_fraction = 0.8;
  double dev_fraction = 0.1;
  std::size_t frames = 8;  // T0
  std::size_t templates_per_task = 50;
  std::size_t train_templates = 12;
  std::size_t prompt_keywords = 2;  // distinct task keywords per template
  std::size_t filler_pool = 12;     // shared filler words templates draw from
  std::size_t num_classes = 4;
  double signal_noise = 0.1;
  double background_noise = 0.7;
  bool common_dependency = true;
  std::uint64_t seed = 1;
};

struct TrainConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
  std::size_t warmup_steps = 0;
  double routing_loss_weight = 0.3;
  double weight_decay = 0.0;
  double prompt_dropout = 0.3;  // per-token drop probability for training prompts (last token kept)
  bool teacher_forced_gate = true;
  std::size_t eval_batch = 64;
  std::uint64_t seed = 1;
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
};

/// Throws ConfigError on any inconsistent knob.
void validate(const RunConfig& config);

nlohmann::json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

/// Canonical serialisation used for fingerprints and checkpoints.
std::string canonical_json(const RunConfig& config);
std::uint64_t fingerprint(const RunConfig& config);
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace pam
