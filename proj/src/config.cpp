#include "pam/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pam/data.hpp"
#include "pam/errors.hpp"

namespace pam {

using nlohmann::json;

namespace {

using Setter = std::function<void(const json&)>;

template <typename T>
Setter bind(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

void apply(const json& section, const std::string& where, const std::map<std::string, Setter>& setters) {
  if (!section.is_object()) throw ConfigError("'" + where + "' must be an object");
  for (const auto& [key, value] : section.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown key '" + where + "." + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + where + "." + key + "': " + e.what());
    }
  }
}

}  // namespace

void validate(const RunConfig& c) {
  const auto& m = c.model;
  planted_rank(m.bank);
  validate(m.lm);
  validate(m.fusion);
  if (m.bank.mixing < 0.0 || m.bank.mixing >= 1.0) throw ConfigError("mixing must lie in [0, 1)");
  if (m.router_hidden == 0) throw ConfigError("router_hidden must be positive");
  if (m.strategy == RoutingStrategy::kPromptAware && m.has_router() &&
      m.fusion.num_routed_experts != c.data.num_tasks) {
    throw ConfigError("prompt_aware routing with N = " + std::to_string(m.fusion.num_routed_experts) +
                      " needs one expert per task (" + std::to_string(c.data.num_tasks) + " tasks)");
  }
  if (m.is_baseline() && m.fusion.use_shared_expert == false) {
    throw ConfigError("use_shared_expert only applies to pam fusion");
  }
  const auto& d = c.data;
  if (d.num_tasks == 0) throw ConfigError("num_tasks must be positive");
  if (d.num_classes < 2 || d.num_classes > 16) throw ConfigError("num_classes must lie in [2, 16]");
  if (d.n_per_task < 3) throw ConfigError("n_per_task must be at least 3");
  if (d.train_fraction <= 0.0 || d.dev_fraction < 0.0 || d.train_fraction + d.dev_fraction >= 1.0) {
    throw ConfigError("split fractions must satisfy 0 < train, 0 <= dev, train + dev < 1");
  }
  if (d.train_templates == 0 || d.train_templates >= d.templates_per_task) {
    throw ConfigError("train_templates must lie in [1, templates_per_task)");
  }
  if (d.prompt_keywords == 0 || d.prompt_keywords > kKeywordsPerTask) {
    throw ConfigError("prompt_keywords must lie in [1, " + std::to_string(kKeywordsPerTask) + "]");
  }
  if (d.filler_pool < 2) throw ConfigError("filler_pool must be at least 2");
  if (d.frames == 0) throw ConfigError("frames must be positive");
  if (d.frames % 2 != 0) throw ConfigError("frames must be divisible by every encoder's frame budget (2)");
  if (d.signal_noise < 0.0 || d.background_noise < 0.0) throw ConfigError("noise levels must be non-negative");
  const auto& t = c.train;
  if (t.batch_size == 0 || t.eval_batch == 0) throw ConfigError("batch sizes must be positive");
  if (!(t.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (t.routing_loss_weight < 0.0) throw ConfigError("routing_loss_weight must be non-negative");
  if (!(t.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(t.prompt_dropout >= 0.0 && t.prompt_dropout < 1.0)) throw ConfigError("prompt_dropout must lie in [0, 1)");
}

json to_json(const RunConfig& c) {
  const auto& m = c.model;
  json model = {
      {"num_encoders", m.bank.num_encoders},
      {"num_layers", m.bank.num_layers},
      {"encoder_dim", m.bank.hidden_dim},
      {"input_dim", m.bank.input_dim},
      {"mixing", m.bank.mixing},
      {"bank_seed", m.bank.seed},
      {"llm_dim", m.lm.model_dim},
      {"vocab_size", m.lm.vocab_size},
      {"lm_blocks", m.lm.num_blocks},
      {"lm_heads", m.lm.num_heads},
      {"ffn_mult", m.lm.ffn_mult},
      {"max_positions", m.lm.max_positions},
      {"K", m.fusion.num_fused},
      {"N", m.fusion.num_routed_experts},
      {"use_shared_expert", m.fusion.use_shared_expert},
      {"baseline_mode", to_string(m.fusion.baseline_mode)},
      {"strategy", to_string(m.strategy)},
      {"adapter_hidden", m.adapter_hidden},
      {"router_hidden", m.router_hidden},
  };
  const auto& d = c.data;
  json data = {
      {"num_tasks", d.num_tasks},
      {"n_per_task", d.n_per_task},
      {"train_fraction", d.train_fraction},
      {"dev_fraction", d.dev_fraction},
      {"frames", d.frames},
      {"templates_per_task", d.templates_per_task},
      {"prompt_keywords", d.prompt_keywords},
      {"filler_pool", d.filler_pool},
      {"train_templates", d.train_templates},
      {"num_classes", d.num_classes},
      {"signal_noise", d.signal_noise},
      {"background_noise", d.background_noise},
      {"common_dependency", d.common_dependency},
      {"seed", d.seed},
  };
  const auto& t = c.train;
  json train = {
      {"steps", t.steps},
      {"batch_size", t.batch_size},
      {"learning_rate", t.learning_rate},
      {"warmup_steps", t.warmup_steps},
      {"routing_loss_weight", t.routing_loss_weight},
      {"weight_decay", t.weight_decay},
      {"prompt_dropout", t.prompt_dropout},
      {"teacher_forced_gate", t.teacher_forced_gate},
      {"eval_batch", t.eval_batch},
      {"seed", t.seed},
  };
  return {{"model", model}, {"data", data}, {"train", train}};
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  auto& m = c.model;
  std::string baseline = to_string(m.fusion.baseline_mode);
  std::string strategy = to_string(m.strategy);
  bool no_task_label = false;
  std::map<std::string, Setter> model_keys{
      {"num_encoders", bind(m.bank.num_encoders)},
      {"num_layers", bind(m.bank.num_layers)},
      {"encoder_dim", bind(m.bank.hidden_dim)},
      {"input_dim", bind(m.bank.input_dim)},
      {"mixing", bind(m.bank.mixing)},
      {"bank_seed", bind(m.bank.seed)},
      {"llm_dim", bind(m.lm.model_dim)},
      {"vocab_size", bind(m.lm.vocab_size)},
      {"lm_blocks", bind(m.lm.num_blocks)},
      {"lm_heads", bind(m.lm.num_heads)},
      {"ffn_mult", bind(m.lm.ffn_mult)},
      {"max_positions", bind(m.lm.max_positions)},
      {"K", bind(m.fusion.num_fused)},
      {"N", bind(m.fusion.num_routed_experts)},
      {"use_shared_expert", bind(m.fusion.use_shared_expert)},
      {"baseline_mode", bind(baseline)},
      {"strategy", bind(strategy)},
      {"no_task_label", bind(no_task_label)},
      {"adapter_hidden", bind(m.adapter_hidden)},
      {"router_hidden", bind(m.router_hidden)},
  };
  auto& d = c.data;
  std::map<std::string, Setter> data_keys{
      {"num_tasks", bind(d.num_tasks)},
      {"n_per_task", bind(d.n_per_task)},
      {"train_fraction", bind(d.train_fraction)},
      {"dev_fraction", bind(d.dev_fraction)},
      {"frames", bind(d.frames)},
      {"templates_per_task", bind(d.templates_per_task)},
      {"prompt_keywords", bind(d.prompt_keywords)},
      {"filler_pool", bind(d.filler_pool)},
      {"train_templates", bind(d.train_templates)},
      {"num_classes", bind(d.num_classes)},
      {"signal_noise", bind(d.signal_noise)},
      {"background_noise", bind(d.background_noise)},
      {"common_dependency", bind(d.common_dependency)},
      {"seed", bind(d.seed)},
  };
  auto& t = c.train;
  std::map<std::string, Setter> train_keys{
      {"steps", bind(t.steps)},
      {"batch_size", bind(t.batch_size)},
      {"learning_rate", bind(t.learning_rate)},
      {"warmup_steps", bind(t.warmup_steps)},
      {"routing_loss_weight", bind(t.routing_loss_weight)},
      {"weight_decay", bind(t.weight_decay)},
      {"prompt_dropout", bind(t.prompt_dropout)},
      {"teacher_forced_gate", bind(t.teacher_forced_gate)},
      {"eval_batch", bind(t.eval_batch)},
      {"seed", bind(t.seed)},
  };
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::map<std::string, Setter> top{
      {"model", [&](const json& v) { apply(v, "model", model_keys); }},
      {"data", [&](const json& v) { apply(v, "data", data_keys); }},
      {"train", [&](const json& v) { apply(v, "train", train_keys); }},
      {"seed", [&](const json& v) { seed = v.get<std::uint64_t>(); has_seed = true; }},
  };
  apply(j, "config", top);
  if (has_seed) {
    // A top-level seed drives both data and training unless they are given explicitly.
    if (!j.contains("data") || !j["data"].contains("seed")) d.seed = seed;
    if (!j.contains("train") || !j["train"].contains("seed")) t.seed = seed;
  }
  m.fusion.baseline_mode = parse_baseline_mode(baseline);
  m.strategy = parse_routing_strategy(strategy);
  if (no_task_label) {
    if (m.strategy == RoutingStrategy::kAudioBased) {
      throw ConfigError("no_task_label cannot be combined with audio_based routing");
    }
    m.strategy = RoutingStrategy::kNoTaskLabel;
  }
  validate(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::string canonical_json(const RunConfig& config) { return to_json(config).dump(); }

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  auto p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fingerprint(const RunConfig& config) {
  const auto text = canonical_json(config);
  return fnv1a(text.data(), text.size());
}

}  // namespace pam
