#include "pam/router.hpp"

#include "pam/errors.hpp"
#include "pam/fusion.hpp"
#include "pam/init.hpp"
#include "pam/ops.hpp"

namespace pam {

const char* to_string(RoutingStrategy strategy) {
  switch (strategy) {
    case RoutingStrategy::kPromptAware: return "prompt_aware";
    case RoutingStrategy::kAudioBased: return "audio_based";
    case RoutingStrategy::kNoTaskLabel: return "no_task_label";
  }
  return "?";
}

RoutingStrategy parse_routing_strategy(const std::string& text) {
  if (text == "prompt_aware") return RoutingStrategy::kPromptAware;
  if (text == "audio_based") return RoutingStrategy::kAudioBased;
  if (text == "no_task_label") return RoutingStrategy::kNoTaskLabel;
  throw ConfigError("unknown routing strategy '" + text + "' (expected prompt_aware, audio_based or no_task_label)");
}

RouterHead make_router_head(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_experts,
                            std::mt19937_64& rng, const std::string& prefix) {
  RouterHead h;
  h.w1 = init::fan_in_normal({input_dim, hidden_dim}, rng, prefix + ".w1");
  h.b1 = init::zeros({hidden_dim}, prefix + ".b1");
  h.w2 = init::fan_in_normal({hidden_dim, num_experts}, rng, prefix + ".w2");
  h.b2 = init::zeros({num_experts}, prefix + ".b2");
  return h;
}

ag::Tensor router_logits(const RouterHead& head, const ag::Tensor& features) {
  if (features.rank() != 2 || features.cols() != head.input_dim()) {
    throw DimensionError("router head expects [B x " + std::to_string(head.input_dim()) + "], got " +
                         ag::to_string(features.shape()));
  }
  auto h = ag::gelu(ag::add_bias(ag::matmul(features, head.w1), head.b1));
  return ag::add_bias(ag::matmul(h, head.w2), head.b2);
}

ag::Tensor prompt_hidden(const TinyLM& lm, const PromptBatch& prompts) {
  if (prompts.size() == 0) throw ContractError("prompt_hidden: empty batch");
  LmBatch batch;
  batch.prompts = prompts.token_ids;
  batch.audio_frames.assign(prompts.size(), 0);
  batch.targets.assign(prompts.size(), {});
  std::vector<std::size_t> last;
  for (std::size_t b = 0; b < prompts.size(); ++b) {
    if (prompts.token_ids[b].empty()) throw ContractError("prompt_hidden: prompt " + std::to_string(b) + " is empty");
  }
  const auto out = lm_forward(lm, batch);
  for (std::size_t b = 0; b < prompts.size(); ++b) last.push_back(out.offsets[b] + out.layouts[b].prompt - 1);
  return ag::take_rows(out.hidden, last);
}

GateDecision route_prompt(const RouterHead& head, const ag::Tensor& h_prompt, GateMode mode) {
  return make_gate(router_logits(head, h_prompt), mode);
}

GateDecision route_audio(const RouterHead& head, const std::vector<HiddenStack>& stacks, std::size_t batch,
                         GateMode mode) {
  auto last = ag::concat_feature(last_states(stacks));
  if (batch == 0 || last.rows() % batch != 0) {
    throw DimensionError(std::to_string(last.rows()) + " frames do not split into " + std::to_string(batch) +
                         " examples");
  }
  return make_gate(router_logits(head, ag::mean_pool_rows(last, last.rows() / batch)), mode);
}

ag::Tensor routing_loss(RoutingStrategy strategy, const GateDecision& decision, const std::vector<int>& labels) {
  if (strategy != RoutingStrategy::kPromptAware) {
    throw ContractError(std::string("routing loss is undefined for strategy ") + to_string(strategy));
  }
  if (!decision.logits.defined()) throw ContractError("routing loss needs head logits");
  if (labels.size() != decision.logits.rows()) {
    throw ContractError("routing loss: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(decision.logits.rows()) + " rows");
  }
  return ag::cross_entropy(decision.logits, labels);
}

}  // namespace pam
