#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pam/adapters.hpp"
#include "pam/config.hpp"
#include "pam/data.hpp"
#include "pam/fusion.hpp"
#include "pam/gate.hpp"
#include "pam/lm.hpp"
#include "pam/router.hpp"

namespace pam {

/// Frozen encoder bank plus every trainable part of one run.
struct PamModel {
  ModelConfig config;
  std::vector<EncoderSpec> bank;
  std::vector<AdapterParams> adapters;
  ExpertParams shared;                // defined when pam fusion uses a shared expert
  std::vector<ExpertParams> routed;   // N experts for pam fusion
  BaselineParams baseline;            // concat_linear projection
  RouterHead router;                  // defined when config.has_router()
  TinyLM lm;

  /// All trainable tensors in a fixed order; names are unique.
  std::vector<ag::Tensor> parameters() const;
};

PamModel make_model(const ModelConfig& config, std::uint64_t seed);

enum class Phase { kTrain, kInfer };

struct ForwardOptions {
  Phase phase = Phase::kInfer;
  bool teacher_forced_gate = true;
  /// Overrides routing with a fixed expert per example (forced-gate probe).
  std::optional<std::vector<std::size_t>> forced_experts;
};

struct ForwardResult {
  ag::Tensor loss_llm;
  ag::Tensor loss_routing;  // undefined unless prompt_aware with a router
  ag::Tensor logits;
  GateDecision routing;     // router decision (undefined posteriors without a router)
  std::vector<std::size_t> experts;  // expert each example actually used
  bool routed = false;
};

/// Stacks the cached encoder outputs of `examples` along rows.
std::vector<HiddenStack> batch_stacks(std::span<const Example* const> examples);

ForwardResult forward_batch(const PamModel& model, std::span<const Example* const> examples,
                            const ForwardOptions& options);

/// Greedy decoding of every example under inference routing.
struct DecodeResult {
  std::vector<std::vector<int>> tokens;
  std::vector<std::size_t> experts;
};
DecodeResult decode_batch(const PamModel& model, std::span<const Example* const> examples, std::size_t max_len);

}  // namespace pam
