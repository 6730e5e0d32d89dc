#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "pam/encoders.hpp"
#include "pam/gate.hpp"
#include "pam/lm.hpp"
#include "pam/tensor.hpp"

namespace pam {

enum class RoutingStrategy { kPromptAware, kAudioBased, kNoTaskLabel };

const char* to_string(RoutingStrategy strategy);
RoutingStrategy parse_routing_strategy(const std::string& text);

struct PromptBatch {
  std::vector<std::vector<int>> token_ids;
  std::vector<int> task_labels;           // empty when unlabeled
  std::vector<std::size_t> cluster_ids;   // template index per prompt

  std::size_t size() const { return token_ids.size(); }
};

/// Feed-forward routing head: input -> hidden (GELU) -> N logits.
struct RouterHead {
  ag::Tensor w1, b1, w2, b2;

  std::vector<ag::Tensor> parameters() const { return {w1, b1, w2, b2}; }
  std::size_t input_dim() const { return w1.rows(); }
  std::size_t num_experts() const { return w2.cols(); }
};

RouterHead make_router_head(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_experts,
                            std::mt19937_64& rng, const std::string& prefix);

ag::Tensor router_logits(const RouterHead& head, const ag::Tensor& features);

/// The LM's final hidden state at the last token of each prompt, from a
/// prompt-only pass. [B x D_LLM]
ag::Tensor prompt_hidden(const TinyLM& lm, const PromptBatch& prompts);

GateDecision route_prompt(const RouterHead& head, const ag::Tensor& h_prompt, GateMode mode = GateMode::kHard);

/// Routes from the time-averaged concatenation of the final states.
/// `stacks` hold `batch` examples of equal length stacked along rows.
GateDecision route_audio(const RouterHead& head, const std::vector<HiddenStack>& stacks, std::size_t batch,
                         GateMode mode = GateMode::kHard);

/// Cross-entropy of the task posteriors against the labels. Only defined for
/// prompt-aware routing.
ag::Tensor routing_loss(RoutingStrategy strategy, const GateDecision& decision, const std::vector<int>& labels);

}  // namespace pam
