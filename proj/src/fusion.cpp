#include "pam/fusion.hpp"

#include "pam/errors.hpp"
#include "pam/init.hpp"
#include "pam/ops.hpp"

namespace pam {

namespace {

void check_aligned(const std::vector<HiddenStack>& stacks) {
  if (stacks.empty()) throw DimensionError("fusion needs at least one stack");
  const auto& ref = stacks.front();
  for (const auto& s : stacks) {
    if (s.states.size() != ref.states.size() || s.frames() != ref.frames() || s.dim() != ref.dim()) {
      throw DimensionError("fusion stacks are not aligned: encoder " + std::to_string(s.encoder_id) + " has " +
                           std::to_string(s.states.size()) + " states of " + std::to_string(s.frames()) + "x" +
                           std::to_string(s.dim()));
    }
  }
  if (ref.states.size() < 2) throw DimensionError("fusion stacks need a pool state and a final state");
}

std::vector<HiddenStack> take_stack_rows(const std::vector<HiddenStack>& stacks,
                                         const std::vector<std::size_t>& rows) {
  std::vector<HiddenStack> out;
  out.reserve(stacks.size());
  for (const auto& s : stacks) {
    HiddenStack sub;
    sub.encoder_id = s.encoder_id;
    for (const auto& st : s.states) sub.states.push_back(ag::take_rows(st, rows));
    out.push_back(std::move(sub));
  }
  return out;
}

}  // namespace

const char* to_string(BaselineMode mode) {
  switch (mode) {
    case BaselineMode::kPam: return "pam";
    case BaselineMode::kConcatLinear: return "concat_linear";
    case BaselineMode::kAverage: return "average";
  }
  return "?";
}

BaselineMode parse_baseline_mode(const std::string& text) {
  if (text == "pam") return BaselineMode::kPam;
  if (text == "concat_linear") return BaselineMode::kConcatLinear;
  if (text == "average") return BaselineMode::kAverage;
  throw ConfigError("unknown baseline_mode '" + text + "' (expected pam, concat_linear or average)");
}

void validate(const FusionConfig& config) {
  if (config.num_fused == 0) throw ConfigError("K must be at least 1");
  if (config.num_routed_experts == 0) throw ConfigError("N must be at least 1");
}

std::size_t ExpertParams::parameter_count() const {
  return fusion_weights.numel() + proj_w.numel() + proj_b.numel();
}

ExpertParams make_expert(std::size_t num_encoders, std::size_t pool_per_encoder, std::size_t num_fused,
                         std::size_t model_dim, std::mt19937_64& rng, const std::string& prefix) {
  const std::size_t pool = num_encoders * pool_per_encoder;
  ExpertParams e;
  e.fusion_weights = init::constant({num_fused, pool}, 1.0 / static_cast<double>(pool), prefix + ".W");
  e.proj_w = init::fan_in_normal({(num_encoders + num_fused) * model_dim, model_dim}, rng, prefix + ".proj_w");
  e.proj_b = init::zeros({model_dim}, prefix + ".proj_b");
  return e;
}

std::vector<ag::Tensor> fusion_pool(const std::vector<HiddenStack>& stacks) {
  check_aligned(stacks);
  std::vector<ag::Tensor> pool;
  for (const auto& s : stacks)
    for (std::size_t l = 0; l + 1 < s.states.size(); ++l) pool.push_back(s.states[l]);
  return pool;
}

std::vector<ag::Tensor> last_states(const std::vector<HiddenStack>& stacks) {
  check_aligned(stacks);
  std::vector<ag::Tensor> out;
  for (const auto& s : stacks) out.push_back(s.states.back());
  return out;
}

std::vector<ag::Tensor> fuse_layers(const ExpertParams& expert, const std::vector<HiddenStack>& stacks) {
  const auto pool = fusion_pool(stacks);
  if (pool.size() != expert.pool_size()) {
    throw DimensionError("fusion pool holds " + std::to_string(pool.size()) + " states but W has " +
                         std::to_string(expert.pool_size()) + " columns");
  }
  std::vector<ag::Tensor> fused;
  for (std::size_t k = 0; k < expert.num_fused(); ++k) {
    fused.push_back(ag::weighted_sum(pool, ag::slice_rows(expert.fusion_weights, k, 1)));
  }
  return fused;
}

ag::Tensor expert_forward(const ExpertParams& expert, const std::vector<HiddenStack>& stacks) {
  auto parts = last_states(stacks);
  for (auto& f : fuse_layers(expert, stacks)) parts.push_back(std::move(f));
  return ag::add_bias(ag::matmul(ag::concat_feature(parts), expert.proj_w), expert.proj_b);
}

FusedAudioFeature pam_forward(const FusionConfig& config, const ExpertParams& shared,
                              const std::vector<ExpertParams>& routed, const GateDecision& gate,
                              const std::vector<HiddenStack>& stacks) {
  if (routed.size() != config.num_routed_experts) {
    throw DimensionError("expected " + std::to_string(config.num_routed_experts) + " routed experts, got " +
                         std::to_string(routed.size()));
  }
  if (gate.indicator.rank() != 2 || gate.indicator.cols() != routed.size()) {
    throw DimensionError("gate " + ag::to_string(gate.indicator.shape()) + " does not match " +
                         std::to_string(routed.size()) + " routed experts");
  }
  check_aligned(stacks);
  const std::size_t total = stacks.front().frames();
  const std::size_t batch = gate.indicator.rows();
  if (total % batch != 0) {
    throw DimensionError(std::to_string(total) + " frames do not split into " + std::to_string(batch) + " examples");
  }
  const std::size_t frames = total / batch;

  ag::Tensor mixed;
  auto accumulate = [&mixed](ag::Tensor t) { mixed = mixed.defined() ? ag::add(mixed, t) : std::move(t); };

  if (gate.mode == GateMode::kHard) {
    for (std::size_t j = 0; j < routed.size(); ++j) {
      std::vector<std::size_t> rows;
      for (std::size_t b = 0; b < batch; ++b)
        if (gate.selected[b] == j)
          for (std::size_t t = 0; t < frames; ++t) rows.push_back(b * frames + t);
      if (rows.empty()) continue;
      if (rows.size() == total) {
        accumulate(expert_forward(routed[j], stacks));
      } else {
        accumulate(ag::scatter_rows(expert_forward(routed[j], take_stack_rows(stacks, rows)), rows, total));
      }
    }
  } else {
    for (std::size_t j = 0; j < routed.size(); ++j) {
      auto weight = ag::repeat_rows(ag::slice_cols(gate.indicator, j, 1), frames);
      accumulate(ag::scale_rows(expert_forward(routed[j], stacks), weight));
    }
  }

  if (config.use_shared_expert) mixed = ag::add(expert_forward(shared, stacks), mixed);
  return {mixed};
}

std::vector<ag::Tensor> BaselineParams::parameters() const {
  if (!proj_w.defined()) return {};
  return {proj_w, proj_b};
}

BaselineParams make_baseline(BaselineMode mode, std::size_t num_encoders, std::size_t model_dim,
                             std::mt19937_64& rng, const std::string& prefix) {
  BaselineParams p;
  if (mode == BaselineMode::kConcatLinear) {
    p.proj_w = init::fan_in_normal({num_encoders * model_dim, model_dim}, rng, prefix + ".proj_w");
    p.proj_b = init::zeros({model_dim}, prefix + ".proj_b");
  } else if (mode != BaselineMode::kAverage) {
    throw ConfigError(std::string("no baseline fuser for mode ") + to_string(mode));
  }
  return p;
}

FusedAudioFeature baseline_forward(BaselineMode mode, const BaselineParams& params,
                                   const std::vector<HiddenStack>& stacks) {
  const auto last = last_states(stacks);
  switch (mode) {
    case BaselineMode::kAverage: {
      const auto w = ag::Tensor::full({last.size()}, 1.0 / static_cast<double>(last.size()));
      return {ag::weighted_sum(last, w)};
    }
    case BaselineMode::kConcatLinear:
      if (!params.proj_w.defined()) throw ConfigError("concat_linear baseline has no projection");
      return {ag::add_bias(ag::matmul(ag::concat_feature(last), params.proj_w), params.proj_b)};
    case BaselineMode::kPam: break;
  }
  throw ConfigError(std::string("no baseline fuser for mode ") + to_string(mode));
}

}  // namespace pam
