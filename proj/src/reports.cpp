#include "pam/reports.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "pam/errors.hpp"
#include "pam/ops.hpp"

namespace pam {

using nlohmann::json;

namespace {

std::string fixed(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

const char* kBucketNames[3] = {"shallow", "middle", "deep"};

json importance_json(const ExpertImportance& e) {
  return {{"name", e.name},
          {"normalized_rows", e.normalized_rows},
          {"pair_importance", e.pair},
          {"buckets", e.buckets},
          {"encoder_mean", e.encoder_mean}};
}

}  // namespace

double ExpertImportance::mass(const std::vector<PlantedPair>& pairs) const {
  double m = 0.0;
  for (const auto& p : pairs) m += pair.at(p.encoder).at(p.layer);
  return m;
}

std::vector<std::pair<std::size_t, std::size_t>> bucket_bounds(std::size_t pool_layers) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < 3; ++b) out.emplace_back(b * pool_layers / 3, (b + 1) * pool_layers / 3);
  return out;
}

ExpertImportance importance_of(const ExpertParams& expert, const std::string& name, std::size_t num_encoders) {
  const std::size_t k = expert.num_fused(), p = expert.pool_size();
  if (num_encoders == 0 || p % num_encoders != 0) {
    throw DimensionError("pool of " + std::to_string(p) + " states does not split over " +
                         std::to_string(num_encoders) + " encoders");
  }
  const std::size_t layers = p / num_encoders;
  ExpertImportance out;
  out.name = name;
  out.pair.assign(num_encoders, std::vector<double>(layers, 0.0));
  const auto w = expert.fusion_weights.data();
  for (std::size_t r = 0; r < k; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < p; ++c) total += std::abs(w[r * p + c]);
    std::vector<double> row(p, total > 0.0 ? 0.0 : 1.0 / static_cast<double>(p));
    if (total > 0.0)
      for (std::size_t c = 0; c < p; ++c) row[c] = std::abs(w[r * p + c]) / total;
    for (std::size_t c = 0; c < p; ++c) out.pair[c / layers][c % layers] += row[c] / static_cast<double>(k);
    out.normalized_rows.push_back(std::move(row));
  }
  const auto bounds = bucket_bounds(layers);
  for (std::size_t e = 0; e < num_encoders; ++e) {
    std::vector<double> b(3, 0.0);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t l = bounds[i].first; l < bounds[i].second; ++l) b[i] += out.pair[e][l];
    out.buckets.push_back(b);
    double s = 0.0;
    for (double v : out.pair[e]) s += v;
    out.encoder_mean.push_back(s / static_cast<double>(layers));
  }
  return out;
}

ImportanceReport importance_report(const PamModel& model) {
  if (model.config.is_baseline()) {
    throw ContractError(std::string("importance report needs PaM fusion weights; this is a ") +
                        to_string(model.config.fusion.baseline_mode) + " baseline");
  }
  ImportanceReport r;
  r.num_encoders = model.config.bank.num_encoders;
  r.pool_layers = model.config.bank.num_layers;
  for (std::size_t j = 0; j < model.routed.size(); ++j) {
    r.routed.push_back(importance_of(model.routed[j], "routed" + std::to_string(j), r.num_encoders));
  }
  if (model.shared.fusion_weights.defined()) r.shared.push_back(importance_of(model.shared, "shared", r.num_encoders));
  return r;
}

json to_json(const ImportanceReport& r) {
  json routed = json::array(), shared = json::array();
  for (const auto& e : r.routed) routed.push_back(importance_json(e));
  for (const auto& e : r.shared) shared.push_back(importance_json(e));
  return {{"num_encoders", r.num_encoders},
          {"pool_layers", r.pool_layers},
          {"buckets", {"shallow", "middle", "deep"}},
          {"routed", routed},
          {"shared", shared}};
}

std::string to_text(const ImportanceReport& r) {
  std::ostringstream os;
  auto block = [&](const ExpertImportance& e) {
    os << e.name << "\n" << std::left << std::setw(9) << "encoder";
    for (std::size_t l = 0; l < r.pool_layers; ++l) os << std::right << std::setw(8) << ("L" + std::to_string(l));
    for (const char* b : kBucketNames) os << std::setw(9) << b;
    os << std::setw(9) << "mean" << "\n";
    for (std::size_t i = 0; i < r.num_encoders; ++i) {
      os << std::left << std::setw(9) << i << std::right;
      for (double v : e.pair[i]) os << std::setw(8) << fixed(v, 3);
      for (double v : e.buckets[i]) os << std::setw(9) << fixed(v, 3);
      os << std::setw(9) << fixed(e.encoder_mean[i], 3) << "\n";
    }
  };
  for (const auto& e : r.routed) block(e);
  for (const auto& e : r.shared) block(e);
  return os.str();
}

ParamReport param_report(const ModelConfig& c) {
  const std::size_t e = c.bank.num_encoders, de = c.bank.hidden_dim, d = c.lm.model_dim;
  const std::size_t h = c.adapter_width(), v = c.lm.vocab_size, f = c.lm.ffn_mult * d;
  ParamReport r;
  r.components["adapters"] = e * (de * h + h + h * d + d);
  std::size_t block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
  r.components["lm"] = v * d + c.lm.max_positions * d + c.lm.num_blocks * block + 2 * d + d * v + v;
  if (c.is_baseline()) {
    r.components["fuser"] = c.fusion.baseline_mode == BaselineMode::kConcatLinear ? e * d * d + d : 0;
    r.fusion_total = r.fusion_activated = r.components["fuser"];
  } else {
    const std::size_t k = c.fusion.num_fused, p = e * c.bank.num_layers, n = c.fusion.num_routed_experts;
    r.expert_size = k * p + (e + k) * d * d + d;
    r.components["shared_expert"] = c.fusion.use_shared_expert ? r.expert_size : 0;
    r.components["routed_experts"] = n * r.expert_size;
    if (c.has_router()) {
      const std::size_t in = c.strategy == RoutingStrategy::kAudioBased ? e * d : d;
      r.components["router"] = in * c.router_hidden + c.router_hidden + c.router_hidden * n + n;
    } else {
      r.components["router"] = 0;
    }
    r.fusion_total = r.components["shared_expert"] + r.components["routed_experts"];
    r.fusion_activated = r.components["shared_expert"] + r.expert_size;
  }
  for (const auto& [name, count] : r.components) r.total += count;
  r.activated = r.total - r.fusion_total + r.fusion_activated;
  return r;
}

std::size_t checkpoint_param_count(const CheckpointFile& file) {
  std::size_t n = 0;
  for (const auto& a : file.arrays) {
    if (a.name.rfind("enc.", 0) == 0 || a.name.rfind("opt.", 0) == 0) continue;
    n += a.data.size();
  }
  return n;
}

json to_json(const ParamReport& r) {
  return {{"components", r.components},   {"expert_size", r.expert_size},
          {"fusion_total", r.fusion_total}, {"fusion_activated", r.fusion_activated},
          {"total", r.total},             {"activated", r.activated}};
}

std::string to_text(const ParamReport& r) {
  std::ostringstream os;
  for (const auto& [name, count] : r.components) os << std::left << std::setw(18) << name << std::right << std::setw(10) << count << "\n";
  os << std::left << std::setw(18) << "expert_size" << std::right << std::setw(10) << r.expert_size << "\n";
  os << std::left << std::setw(18) << "fusion_total" << std::right << std::setw(10) << r.fusion_total << "\n";
  os << std::left << std::setw(18) << "fusion_activated" << std::right << std::setw(10) << r.fusion_activated << "\n";
  os << std::left << std::setw(18) << "total" << std::right << std::setw(10) << r.total << "\n";
  os << std::left << std::setw(18) << "activated" << std::right << std::setw(10) << r.activated << "\n";
  return os.str();
}

CosineReport cosine_similarity_report(const std::vector<EncoderSpec>& bank, const std::vector<SyntheticAudio>& probes) {
  if (probes.empty()) throw ContractError("cosine report needs at least one probe input");
  if (bank.empty()) throw ContractError("cosine report needs a non-empty bank");
  CosineReport r;
  r.num_encoders = bank.size();
  r.num_states = bank.front().num_layers + 1;
  r.similarity.assign(r.num_encoders,
                      std::vector<std::vector<double>>(r.num_encoders, std::vector<double>(r.num_states, 0.0)));
  for (const auto& probe : probes) {
    const auto stacks = encode_all(bank, probe);
    std::vector<std::vector<std::vector<double>>> means(r.num_encoders);
    for (std::size_t i = 0; i < r.num_encoders; ++i) {
      if (stacks[i].states.size() != r.num_states) throw DimensionError("encoders differ in layer count");
      for (const auto& s : stacks[i].states) {
        const auto m = ag::mean_pool_rows(s, s.rows()).to_vector();
        means[i].push_back(m);
      }
    }
    for (std::size_t a = 0; a < r.num_encoders; ++a) {
      for (std::size_t b = 0; b < r.num_encoders; ++b) {
        for (std::size_t l = 0; l < r.num_states; ++l) {
          const auto& x = means[a][l];
          const auto& y = means[b][l];
          if (x.size() != y.size()) throw DimensionError("encoders differ in hidden size");
          double dot = 0.0, nx = 0.0, ny = 0.0;
          for (std::size_t i = 0; i < x.size(); ++i) {
            dot += x[i] * y[i];
            nx += x[i] * x[i];
            ny += y[i] * y[i];
          }
          const double denom = std::sqrt(nx) * std::sqrt(ny);
          r.similarity[a][b][l] += denom > 0.0 ? dot / denom : 0.0;
        }
      }
    }
  }
  for (auto& ab : r.similarity)
    for (auto& row : ab)
      for (auto& v : row) v /= static_cast<double>(probes.size());
  return r;
}

json to_json(const CosineReport& r) {
  json pairs = json::array();
  for (std::size_t a = 0; a < r.num_encoders; ++a)
    for (std::size_t b = a + 1; b < r.num_encoders; ++b)
      pairs.push_back({{"encoders", {a, b}}, {"per_layer", r.similarity[a][b]}});
  return {{"num_encoders", r.num_encoders}, {"num_states", r.num_states}, {"pairs", pairs}, {"matrix", r.similarity}};
}

std::string to_text(const CosineReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "pair";
  for (std::size_t l = 0; l < r.num_states; ++l) os << std::right << std::setw(9) << ("h" + std::to_string(l));
  os << "\n";
  for (std::size_t a = 0; a < r.num_encoders; ++a) {
    for (std::size_t b = a + 1; b < r.num_encoders; ++b) {
      os << std::left << std::setw(8) << (std::to_string(a) + "-" + std::to_string(b)) << std::right;
      for (double v : r.similarity[a][b]) os << std::setw(9) << fixed(v, 4);
      os << "\n";
    }
  }
  return os.str();
}

std::vector<std::pair<std::string, RunConfig>> ablation_variants(const RunConfig& base) {
  std::vector<std::pair<std::string, RunConfig>> out;
  RunConfig pam = base;
  pam.model.fusion.baseline_mode = BaselineMode::kPam;
  pam.model.strategy = RoutingStrategy::kPromptAware;
  pam.model.fusion.use_shared_expert = true;
  out.emplace_back("pam", pam);

  RunConfig no_shared = pam;
  no_shared.model.fusion.use_shared_expert = false;
  out.emplace_back("no_shared", no_shared);

  RunConfig one = pam;
  one.model.fusion.num_routed_experts = 1;
  out.emplace_back("one_expert", one);

  RunConfig no_label = pam;
  no_label.model.strategy = RoutingStrategy::kNoTaskLabel;
  out.emplace_back("no_task_label", no_label);

  RunConfig audio = pam;
  audio.model.strategy = RoutingStrategy::kAudioBased;
  out.emplace_back("audio_based", audio);
  return out;
}

std::size_t matched_adapter_hidden(const RunConfig& base, BaselineMode mode) {
  const auto target = static_cast<double>(param_report(base.model).total);
  ModelConfig m = base.model;
  m.fusion.baseline_mode = mode;
  m.fusion.use_shared_expert = true;
  std::size_t best = 1;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t h = 1; h <= 4096; ++h) {
    m.adapter_hidden = h;
    const double gap = std::abs(static_cast<double>(param_report(m).total) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = h;
    }
  }
  return best;
}

std::vector<std::pair<std::string, RunConfig>> baseline_variants(const RunConfig& base) {
  std::vector<std::pair<std::string, RunConfig>> out;
  for (auto mode : {BaselineMode::kAverage, BaselineMode::kConcatLinear}) {
    RunConfig c = base;
    c.model.adapter_hidden = matched_adapter_hidden(base, mode);
    c.model.fusion.baseline_mode = mode;
    c.model.fusion.use_shared_expert = true;
    out.emplace_back(to_string(mode), c);
  }
  return out;
}

VariantResult run_variant(const std::string& name, const RunConfig& config, const Dataset& data,
                          const std::string& split) {
  auto state = init_state(config);
  train(state, data, config.train.steps);
  VariantResult r;
  r.name = name;
  r.config = config;
  r.total_params = param_report(config.model).total;
  r.metrics = evaluate(state.model, data, split, config.train.eval_batch);
  return r;
}

json to_json(const std::vector<VariantResult>& results) {
  json out = json::array();
  for (const auto& r : results) {
    out.push_back({{"variant", r.name},
                   {"total_params", r.total_params},
                   {"activated_params", param_report(r.config.model).activated},
                   {"metrics", to_json(r.metrics)}});
  }
  return out;
}

std::string to_text(const std::vector<VariantResult>& results) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "variant" << std::right << std::setw(10) << "params" << std::setw(10)
     << "active" << std::setw(10) << "L_llm" << std::setw(10) << "tok_acc" << std::setw(10) << "exact"
     << std::setw(10) << "route" << "\n";
  for (const auto& r : results) {
    const auto& m = r.metrics;
    os << std::left << std::setw(16) << r.name << std::right << std::setw(10) << r.total_params << std::setw(10)
       << param_report(r.config.model).activated << std::setw(10) << fixed(m.mean_task_loss) << std::setw(10)
       << fixed(m.token_accuracy) << std::setw(10) << fixed(m.exact_match) << std::setw(10)
       << (m.routing_accuracy ? fixed(*m.routing_accuracy) : std::string("-")) << "\n";
  }
  return os.str();
}

}  // namespace pam
