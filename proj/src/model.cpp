#include "pam/model.hpp"

#include <random>
#include <set>

#include "pam/errors.hpp"
#include "pam/ops.hpp"

namespace pam {

std::vector<ag::Tensor> PamModel::parameters() const {
  std::vector<ag::Tensor> out;
  auto add = [&out](const std::vector<ag::Tensor>& ts) { out.insert(out.end(), ts.begin(), ts.end()); };
  for (const auto& a : adapters) add(a.parameters());
  if (shared.fusion_weights.defined()) add(shared.parameters());
  for (const auto& e : routed) add(e.parameters());
  add(baseline.parameters());
  if (router.w1.defined()) add(router.parameters());
  add(lm.parameters());
  return out;
}

PamModel make_model(const ModelConfig& config, std::uint64_t seed) {
  PamModel m;
  m.config = config;
  m.bank = make_bank(config.bank);
  std::mt19937_64 rng(seed);
  const std::size_t e = config.bank.num_encoders, d = config.lm.model_dim;
  for (std::size_t i = 0; i < e; ++i) {
    m.adapters.push_back(make_adapter(i, config.bank.hidden_dim, config.adapter_width(), d, rng,
                                      "adapter" + std::to_string(i)));
  }
  if (config.is_baseline()) {
    m.baseline = make_baseline(config.fusion.baseline_mode, e, d, rng, "fuser");
  } else {
    const std::size_t k = config.fusion.num_fused, pool = config.bank.num_layers;
    if (config.fusion.use_shared_expert) m.shared = make_expert(e, pool, k, d, rng, "expert.shared");
    for (std::size_t j = 0; j < config.fusion.num_routed_experts; ++j) {
      m.routed.push_back(make_expert(e, pool, k, d, rng, "expert.routed" + std::to_string(j)));
    }
    if (config.has_router()) {
      const std::size_t in = config.strategy == RoutingStrategy::kAudioBased ? e * d : d;
      m.router = make_router_head(in, config.router_hidden, config.fusion.num_routed_experts, rng, "router");
    }
  }
  m.lm = make_lm(config.lm, rng, "lm");
  return m;
}

std::vector<HiddenStack> batch_stacks(std::span<const Example* const> examples) {
  if (examples.empty()) throw ContractError("empty batch");
  const auto& first = examples.front()->stacks;
  std::vector<HiddenStack> out;
  for (std::size_t i = 0; i < first.size(); ++i) {
    HiddenStack s;
    s.encoder_id = first[i].encoder_id;
    for (std::size_t l = 0; l < first[i].states.size(); ++l) {
      if (examples.size() == 1) {
        s.states.push_back(first[i].states[l]);
        continue;
      }
      std::vector<ag::Tensor> parts;
      for (const auto* ex : examples) parts.push_back(ex->stacks.at(i).states.at(l));
      ag::NoGradGuard guard;
      s.states.push_back(ag::concat_rows(parts));
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

struct Fused {
  ag::Tensor audio;
  std::size_t frames = 0;
};

bool prompt_route_deferred(const ModelConfig& cfg, const ForwardOptions& options) {
  return cfg.has_router() && cfg.strategy == RoutingStrategy::kPromptAware && options.phase == Phase::kTrain &&
         options.teacher_forced_gate;
}

Fused fuse(const PamModel& model, std::span<const Example* const> examples, const ForwardOptions& options,
           ForwardResult& result) {
  const auto& cfg = model.config;
  const std::size_t batch = examples.size();
  std::vector<HiddenStack> adapted;
  for (const auto& s : batch_stacks(examples)) adapted.push_back(adapt(model.adapters.at(s.encoder_id), s));
  Fused out;
  out.frames = adapted.front().frames() / batch;

  if (cfg.is_baseline()) {
    out.audio = baseline_forward(cfg.fusion.baseline_mode, model.baseline, adapted).values;
    return out;
  }

  std::vector<int> labels;
  for (const auto* ex : examples) labels.push_back(ex->task);
  const bool train = options.phase == Phase::kTrain;
  GateDecision applied;
  if (cfg.has_router()) {
    result.routed = true;
    if (cfg.strategy == RoutingStrategy::kAudioBased) {
      result.routing = route_audio(model.router, adapted, batch, train ? GateMode::kSoft : GateMode::kHard);
      applied = result.routing;
    } else if (prompt_route_deferred(cfg, options)) {
      // Causal attention makes the prompt rows of the full pass equal to a prompt-only pass.
      applied = one_hot_gate(std::vector<std::size_t>(labels.begin(), labels.end()), cfg.fusion.num_routed_experts);
    } else {
      PromptBatch prompts;
      for (const auto* ex : examples) prompts.token_ids.push_back(ex->prompt);
      const auto h = prompt_hidden(model.lm, prompts);
      if (cfg.strategy == RoutingStrategy::kPromptAware) {
        result.routing = route_prompt(model.router, h, GateMode::kHard);
        result.loss_routing = routing_loss(cfg.strategy, result.routing, labels);
        applied = result.routing;
        if (train && options.teacher_forced_gate) {
          applied = one_hot_gate(std::vector<std::size_t>(labels.begin(), labels.end()), cfg.fusion.num_routed_experts);
        }
      } else {
        result.routing = route_prompt(model.router, h, train ? GateMode::kSoft : GateMode::kHard);
        applied = result.routing;
      }
    }
  } else {
    applied = one_hot_gate(std::vector<std::size_t>(batch, 0), cfg.fusion.num_routed_experts);
  }
  if (options.forced_experts) applied = one_hot_gate(*options.forced_experts, cfg.fusion.num_routed_experts);
  result.experts = applied.selected;
  out.audio = pam_forward(cfg.fusion, model.shared, model.routed, applied, adapted).values;
  return out;
}

LmBatch lm_batch(std::span<const Example* const> examples, const Fused& fused, bool with_targets) {
  LmBatch b;
  b.audio = fused.audio;
  for (const auto* ex : examples) {
    b.prompts.push_back(ex->prompt);
    b.audio_frames.push_back(fused.frames);
    b.targets.push_back(with_targets ? ex->target : std::vector<int>{});
  }
  return b;
}

}  // namespace

ForwardResult forward_batch(const PamModel& model, std::span<const Example* const> examples,
                            const ForwardOptions& options) {
  ForwardResult result;
  const auto fused = fuse(model, examples, options, result);
  const auto batch = lm_batch(examples, fused, true);
  const auto out = lm_forward(model.lm, batch);
  result.logits = out.logits;
  result.loss_llm = lm_loss(out.logits, batch.targets);
  if (!model.config.is_baseline() && prompt_route_deferred(model.config, options)) {
    std::vector<std::size_t> last;
    std::vector<int> labels;
    for (std::size_t b = 0; b < examples.size(); ++b) {
      last.push_back(out.offsets[b] + out.layouts[b].prompt - 1);
      labels.push_back(examples[b]->task);
    }
    result.routing = route_prompt(model.router, ag::take_rows(out.hidden, last), GateMode::kHard);
    result.loss_routing = routing_loss(model.config.strategy, result.routing, labels);
  }
  return result;
}

DecodeResult decode_batch(const PamModel& model, std::span<const Example* const> examples, std::size_t max_len) {
  ag::NoGradGuard guard;
  ForwardResult routing;
  const auto fused = fuse(model, examples, ForwardOptions{}, routing);
  DecodeResult out;
  out.tokens = greedy_decode(model.lm, lm_batch(examples, fused, false), max_len, kEosToken);
  out.experts = routing.experts;
  return out;
}

}  // namespace pam
