#include "pam/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "pam/errors.hpp"
#include "pam/ops.hpp"

namespace pam {

using nlohmann::json;

namespace {

constexpr std::uint64_t kSamplerStream = 0x5a3c9e1dULL;

double teacher_forced_accuracy(const ag::Tensor& logits, const std::vector<const Example*>& batch) {
  const auto pred = ag::argmax_rows(logits);
  std::size_t row = 0, hit = 0;
  for (const auto* ex : batch)
    for (int t : ex->target) hit += static_cast<int>(pred[row++]) == t ? 1 : 0;
  return row == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(row);
}

double selection_accuracy(const std::vector<std::size_t>& selected, const std::vector<const Example*>& batch) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) hit += static_cast<int>(selected[i]) == batch[i]->task ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(batch.size());
}

// Best accuracy over one-to-one relabellings of experts to tasks.
double matched_accuracy(const std::vector<std::vector<std::size_t>>& confusion, std::size_t total) {
  const std::size_t tasks = confusion.size(), experts = confusion.front().size();
  std::vector<std::size_t> perm(std::max(tasks, experts));
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t hit = 0;
    for (std::size_t t = 0; t < tasks; ++t)
      if (perm[t] < experts) hit += confusion[t][perm[t]];
    best = std::max(best, hit);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(total);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json to_json(const StepMetrics& m) {
  return {{"step", m.step},
          {"lr", m.learning_rate},
          {"loss_llm", m.loss_llm},
          {"loss_routing", optional_json(m.loss_routing)},
          {"loss_total", m.loss_total},
          {"routing_accuracy", optional_json(m.routing_accuracy)},
          {"token_accuracy", m.token_accuracy}};
}

TrainState init_state(const RunConfig& config) {
  validate(config);
  ag::AdamConfig adam;
  adam.learning_rate = config.train.learning_rate;
  adam.weight_decay = config.train.weight_decay;
  return TrainState{config, make_model(config.model, config.train.seed), ag::Adam(adam),
                    std::mt19937_64(config.train.seed ^ kSamplerStream), 0};
}

std::vector<std::size_t> sample_indices(std::mt19937_64& rng, std::size_t population, std::size_t count) {
  if (population == 0) throw DataError("cannot sample from an empty split");
  std::uniform_int_distribution<std::size_t> pick(0, population - 1);
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = pick(rng);
  return out;
}

std::vector<StepMetrics> train(TrainState& state, const Dataset& data, std::uint64_t steps,
                               const StepCallback& on_step) {
  const auto& tc = state.config.train;
  if (data.train.empty()) throw DataError("training split is empty");
  auto params = state.model.parameters();
  ForwardOptions options;
  options.phase = Phase::kTrain;
  options.teacher_forced_gate = tc.teacher_forced_gate;

  std::vector<StepMetrics> trace;
  trace.reserve(steps);
  for (std::uint64_t s = 0; s < steps; ++s) {
    std::vector<const Example*> batch;
    for (std::size_t i : sample_indices(state.rng, data.train.size(), tc.batch_size)) batch.push_back(&data.train[i]);
    std::vector<Example> dropped;
    if (tc.prompt_dropout > 0.0) {
      std::bernoulli_distribution keep(1.0 - tc.prompt_dropout);
      dropped.reserve(batch.size());
      for (auto*& ex : batch) {
        Example copy = *ex;
        copy.prompt.clear();
        for (std::size_t k = 0; k + 1 < ex->prompt.size(); ++k)
          if (keep(state.rng)) copy.prompt.push_back(ex->prompt[k]);
        copy.prompt.push_back(ex->prompt.back());
        dropped.push_back(std::move(copy));
        ex = &dropped.back();
      }
    }

    StepMetrics m;
    m.step = state.step + 1;
    m.learning_rate = tc.learning_rate;
    if (tc.warmup_steps > 0) {
      m.learning_rate *= std::min(1.0, static_cast<double>(m.step) / static_cast<double>(tc.warmup_steps));
    }
    state.optimizer.set_learning_rate(m.learning_rate);

    auto result = forward_batch(state.model, batch, options);
    auto total = result.loss_llm;
    if (result.loss_routing.defined() && tc.routing_loss_weight > 0.0) {
      total = ag::add(total, ag::scale(result.loss_routing, tc.routing_loss_weight));
    }
    if (!std::isfinite(total.item())) {
      throw NumericError("non-finite loss at step " + std::to_string(m.step) + "; first non-finite tensor: " +
                         ag::first_nonfinite(total));
    }
    ag::backward(total);

    std::vector<ag::Tensor> live;
    for (const auto& p : params)
      if (p.has_grad()) live.push_back(p);
    state.optimizer.step(live);
    for (auto& p : params) p.zero_grad();
    ++state.step;

    m.loss_llm = result.loss_llm.item();
    if (result.loss_routing.defined()) m.loss_routing = result.loss_routing.item();
    m.loss_total = total.item();
    if (result.routed) m.routing_accuracy = selection_accuracy(result.routing.selected, batch);
    m.token_accuracy = teacher_forced_accuracy(result.logits, batch);
    if (on_step) on_step(m);
    trace.push_back(m);
  }
  return trace;
}

EvalMetrics evaluate(const PamModel& model, const Dataset& data, const std::string& split, std::size_t batch_size,
                     bool forced_gate_probe) {
  const auto& examples = data.split(split);
  if (examples.empty()) throw DataError("split '" + split + "' is empty");
  if (batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  ag::NoGradGuard guard;

  const std::size_t num_tasks = data.tasks.size();
  const bool pam = !model.config.is_baseline();
  const std::size_t experts = pam ? model.config.fusion.num_routed_experts : 0;
  const bool routed = model.config.has_router();

  EvalMetrics out;
  out.split = split;
  out.count = examples.size();
  if (pam) out.confusion.assign(num_tasks, std::vector<std::size_t>(experts, 0));
  const bool probe = forced_gate_probe && pam && experts > 1;
  if (probe) out.forced_gate_loss.assign(num_tasks, std::vector<double>(experts, 0.0));

  std::vector<std::vector<const Example*>> by_task(num_tasks);
  for (const auto& ex : examples) by_task.at(static_cast<std::size_t>(ex.task)).push_back(&ex);

  double routing_loss_sum = 0.0;
  std::size_t tokens_total = 0, tokens_hit = 0, exact_total = 0, route_hit = 0;
  double loss_sum = 0.0;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    TaskMetrics tm;
    tm.task = static_cast<int>(t);
    std::size_t t_tokens = 0, t_hit = 0, t_exact = 0, t_route = 0;
    double t_loss = 0.0;
    const auto& group = by_task[t];
    for (std::size_t begin = 0; begin < group.size(); begin += batch_size) {
      const std::vector<const Example*> batch(group.begin() + static_cast<std::ptrdiff_t>(begin),
                                              group.begin() + static_cast<std::ptrdiff_t>(
                                                                  std::min(group.size(), begin + batch_size)));
      const double n = static_cast<double>(batch.size());
      const auto fwd = forward_batch(model, batch, ForwardOptions{});
      t_loss += fwd.loss_llm.item() * n;
      if (fwd.loss_routing.defined()) routing_loss_sum += fwd.loss_routing.item() * n;

      std::size_t max_len = 0;
      for (const auto* ex : batch) max_len = std::max(max_len, ex->target.size());
      const auto dec = decode_batch(model, batch, max_len);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& target = batch[i]->target;
        const auto& got = dec.tokens[i];
        for (std::size_t p = 0; p < target.size(); ++p) t_hit += p < got.size() && got[p] == target[p] ? 1 : 0;
        t_tokens += target.size();
        t_exact += got == target ? 1 : 0;
        if (pam) {
          ++out.confusion[t][dec.experts[i]];
          t_route += dec.experts[i] == t ? 1 : 0;
        }
      }
      if (probe) {
        for (std::size_t j = 0; j < experts; ++j) {
          ForwardOptions forced;
          forced.forced_experts = std::vector<std::size_t>(batch.size(), j);
          out.forced_gate_loss[t][j] += forward_batch(model, batch, forced).loss_llm.item() * n;
        }
      }
    }
    tm.count = group.size();
    if (tm.count > 0) {
      const double c = static_cast<double>(tm.count);
      tm.token_accuracy = static_cast<double>(t_hit) / static_cast<double>(t_tokens);
      tm.exact_match = static_cast<double>(t_exact) / c;
      tm.loss_llm = t_loss / c;
      if (routed) tm.routing_accuracy = static_cast<double>(t_route) / c;
      if (probe)
        for (auto& v : out.forced_gate_loss[t]) v /= c;
    }
    tokens_total += t_tokens;
    tokens_hit += t_hit;
    exact_total += t_exact;
    route_hit += t_route;
    loss_sum += t_loss;
    out.per_task.push_back(tm);
  }

  const double total = static_cast<double>(examples.size());
  out.token_accuracy = static_cast<double>(tokens_hit) / static_cast<double>(tokens_total);
  out.exact_match = static_cast<double>(exact_total) / total;
  out.loss_llm = loss_sum / total;
  std::size_t nonempty = 0;
  for (const auto& tm : out.per_task) {
    if (tm.count == 0) continue;
    out.mean_task_loss += tm.loss_llm;
    ++nonempty;
  }
  out.mean_task_loss /= static_cast<double>(nonempty);
  if (model.config.strategy == RoutingStrategy::kPromptAware && routed) out.loss_routing = routing_loss_sum / total;
  if (routed) {
    out.routing_accuracy = static_cast<double>(route_hit) / total;
    if (experts <= 8) out.routing_accuracy_matched = matched_accuracy(out.confusion, examples.size());
  }
  return out;
}

json to_json(const EvalMetrics& m) {
  json tasks = json::array();
  for (const auto& t : m.per_task) {
    tasks.push_back({{"task", t.task},
                     {"count", t.count},
                     {"token_accuracy", t.token_accuracy},
                     {"exact_match", t.exact_match},
                     {"loss_llm", t.loss_llm},
                     {"routing_accuracy", optional_json(t.routing_accuracy)}});
  }
  return {{"split", m.split},
          {"count", m.count},
          {"per_task", tasks},
          {"token_accuracy", m.token_accuracy},
          {"exact_match", m.exact_match},
          {"loss_llm", m.loss_llm},
          {"mean_task_loss", m.mean_task_loss},
          {"loss_routing", optional_json(m.loss_routing)},
          {"routing_accuracy", optional_json(m.routing_accuracy)},
          {"routing_accuracy_matched", optional_json(m.routing_accuracy_matched)},
          {"confusion", m.confusion},
          {"forced_gate_loss", m.forced_gate_loss}};
}

std::string to_text(const EvalMetrics& m) {
  std::ostringstream os;
  os << "split " << m.split << "  examples " << m.count << "\n";
  os << std::left << std::setw(6) << "task" << std::right << std::setw(7) << "n" << std::setw(10) << "tok_acc"
     << std::setw(10) << "exact" << std::setw(10) << "L_llm" << std::setw(10) << "route" << "\n";
  for (const auto& t : m.per_task) {
    os << std::left << std::setw(6) << t.task << std::right << std::setw(7) << t.count << std::setw(10)
       << fmt(t.token_accuracy) << std::setw(10) << fmt(t.exact_match) << std::setw(10) << fmt(t.loss_llm)
       << std::setw(10) << (t.routing_accuracy ? fmt(*t.routing_accuracy) : std::string("-")) << "\n";
  }
  os << std::left << std::setw(6) << "all" << std::right << std::setw(7) << m.count << std::setw(10)
     << fmt(m.token_accuracy) << std::setw(10) << fmt(m.exact_match) << std::setw(10) << fmt(m.loss_llm)
     << std::setw(10) << (m.routing_accuracy ? fmt(*m.routing_accuracy) : std::string("-")) << "\n";
  if (m.loss_routing) os << "routing loss " << fmt(*m.loss_routing) << "\n";
  if (m.routing_accuracy_matched) os << "routing accuracy (best relabelling) " << fmt(*m.routing_accuracy_matched) << "\n";
  if (!m.confusion.empty()) {
    os << "confusion (rows: task, cols: expert)\n";
    for (std::size_t t = 0; t < m.confusion.size(); ++t) {
      os << std::left << std::setw(6) << t << std::right;
      for (auto c : m.confusion[t]) os << std::setw(7) << c;
      os << "\n";
    }
  }
  if (!m.forced_gate_loss.empty()) {
    os << "forced-gate L_llm (rows: task, cols: expert)\n";
    for (std::size_t t = 0; t < m.forced_gate_loss.size(); ++t) {
      os << std::left << std::setw(6) << t << std::right;
      for (auto v : m.forced_gate_loss[t]) os << std::setw(10) << fmt(v);
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace pam
