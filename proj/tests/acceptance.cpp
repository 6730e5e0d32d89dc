// One pass/fail line per acceptance criterion; exits non-zero if any fails.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "pam/checkpoint.hpp"
#include "pam/errors.hpp"
#include "pam/reports.hpp"
#include "pam/train.hpp"
#include "support/suites.hpp"

using namespace pam;

namespace {

// Tolerances and thresholds.
constexpr double kOpGradTol = 1e-5;
constexpr double kProbeGradTol = 1e-4;
constexpr std::uint64_t kGradSeeds = 20;
constexpr std::uint64_t kGateTrials = 100;
constexpr std::uint64_t kFusionInstances = 50;
constexpr double kFusionTol = 1e-12;
constexpr std::uint64_t kRoutingSeeds = 10;
constexpr std::size_t kRoutingPassesNeeded = 9;
constexpr double kAudioRoutingCeiling = 0.40;
constexpr std::uint64_t kStructureSeeds = 5;
constexpr std::size_t kImportancePassesNeeded = 4;
constexpr double kOwnMassFloor = 0.50;
constexpr std::size_t kBaselinePassesNeeded = 4;
constexpr double kBudgetTolerance = 0.10;
constexpr std::size_t kAblationPassesNeeded = 3;
constexpr std::uint64_t kFuzzCases = 100;

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::string& detail, Clock::time_point start) {
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << id << ". " << title << ": " << detail << " (" << std::fixed
            << std::setprecision(1) << secs << " s)" << std::endl;
  if (!pass) ++failures;
}

std::string num(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

RunConfig seeded(std::uint64_t seed) {
  RunConfig c;
  c.data.seed = seed;
  c.train.seed = seed;
  return c;
}

struct Trained {
  RunConfig config;
  TrainState state;
  EvalMetrics test;
};

Trained train_and_test(const RunConfig& config, const Dataset& data, bool probe = false) {
  auto state = init_state(config);
  train(state, data, config.train.steps);
  auto metrics = evaluate(state.model, data, "test", config.train.eval_batch, probe);
  return {config, std::move(state), std::move(metrics)};
}

void criterion_gradients() {
  const auto start = Clock::now();
  double worst_op = 0.0, worst_probe = 0.0;
  std::string worst_name;
  for (std::uint64_t seed = 1; seed <= kGradSeeds; ++seed) {
    for (const auto& [name, err] : testing::op_gradient_errors(seed)) {
      if (err > worst_op) {
        worst_op = err;
        worst_name = name;
      }
    }
    const auto p = testing::full_stack_probe(seed);
    worst_probe = std::max({worst_probe, p.fusion_weights, p.adapter, p.router});
  }
  const bool pass = worst_op < kOpGradTol && worst_probe < kProbeGradTol;
  report(1, "gradient suite", pass,
         std::to_string(kGradSeeds) + " seeds, worst op rel err " + num(worst_op) + " (" + worst_name + ", tol " +
             num(kOpGradTol) + "), worst full-stack rel err " + num(worst_probe) + " (tol " + num(kProbeGradTol) +
             ")",
         start);
}

void criterion_gate() {
  const auto start = Clock::now();
  std::size_t identical = 0;
  std::string first_bad;
  for (std::uint64_t seed = 1; seed <= kGateTrials; ++seed) {
    const auto t = testing::gate_exactness_trial(seed);
    if (t.identical) {
      ++identical;
    } else if (first_bad.empty()) {
      first_bad = " first mismatch " + t.description;
    }
  }
  report(2, "gate exactness", identical == kGateTrials,
         std::to_string(identical) + "/" + std::to_string(kGateTrials) + " configurations bit-identical" + first_bad,
         start);
}

void criterion_fusion() {
  const auto start = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= kFusionInstances; ++seed) worst = std::max(worst, testing::fusion_oracle_error(seed));
  report(3, "fusion oracle", worst <= kFusionTol,
         std::to_string(kFusionInstances) + " instances, max abs err " + num(worst) + " (tol " + num(kFusionTol) + ")",
         start);
}

// Routes every held-out template of every task from its bare prompt.
double held_out_template_accuracy(const PamModel& model, const Dataset& data) {
  PromptBatch prompts;
  std::vector<std::size_t> labels;
  for (const auto& task : data.tasks) {
    for (std::size_t i = task.train_templates; i < task.templates.size(); ++i) {
      prompts.token_ids.push_back(task.templates[i]);
      labels.push_back(task.task_id);
    }
  }
  ag::NoGradGuard guard;
  const auto gate = route_prompt(model.router, prompt_hidden(model.lm, prompts));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += gate.selected[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

void criterion_routing(std::map<std::uint64_t, Trained>& pam_runs, std::map<std::uint64_t, Dataset>& corpora) {
  const auto start = Clock::now();
  std::size_t perfect = 0;
  std::string per_seed;
  double worst_audio = 0.0;
  for (std::uint64_t seed = 1; seed <= kRoutingSeeds; ++seed) {
    const auto config = seeded(seed);
    auto& data = corpora.try_emplace(seed, generate_dataset(config)).first->second;
    auto run = train_and_test(config, data);
    const double templates = held_out_template_accuracy(run.state.model, data);
    const auto dev = evaluate(run.state.model, data, "dev", config.train.eval_batch, false);
    const bool ok = templates == 1.0 && *dev.routing_accuracy == 1.0 && *run.test.routing_accuracy == 1.0;
    perfect += ok ? 1 : 0;
    per_seed += (per_seed.empty() ? "" : " ") + num(templates, 3);

    auto audio_cfg = config;
    audio_cfg.model.strategy = RoutingStrategy::kAudioBased;
    const auto audio = train_and_test(audio_cfg, data);
    worst_audio = std::max(worst_audio, *audio.test.routing_accuracy_matched);
    if (seed <= kStructureSeeds) pam_runs.emplace(seed, std::move(run));
  }
  const bool pass = perfect >= kRoutingPassesNeeded && worst_audio <= kAudioRoutingCeiling;
  report(4, "routing generalization", pass,
         "prompt_aware 100% on held-out templates and dev/test in " + std::to_string(perfect) + "/" +
             std::to_string(kRoutingSeeds) + " seeds (need " + std::to_string(kRoutingPassesNeeded) +
             "; template accuracy per seed: " + per_seed + "); audio_based best matched test accuracy " +
             num(worst_audio, 3) + " (ceiling " + num(kAudioRoutingCeiling) + ")",
         start);
}

void criterion_structure(const std::map<std::uint64_t, Trained>& pam_runs, const std::map<std::uint64_t, Dataset>& corpora) {
  const auto start = Clock::now();
  std::size_t passing = 0;
  double min_own = 1.0, max_other = 0.0;
  for (const auto& [seed, run] : pam_runs) {
    const auto& data = corpora.at(seed);
    const auto imp = importance_report(run.state.model);
    bool ok = true;
    for (std::size_t j = 0; j < imp.routed.size(); ++j) {
      const double own = imp.routed[j].mass(data.tasks[j].planted);
      min_own = std::min(min_own, own);
      ok = ok && own >= kOwnMassFloor;
      for (std::size_t t = 0; t < data.tasks.size(); ++t) {
        if (t == j) continue;
        const double other = imp.routed[j].mass(data.tasks[t].planted);
        max_other = std::max(max_other, other);
        ok = ok && own > other;
      }
    }
    passing += ok ? 1 : 0;
  }
  report(5, "planted-structure recovery", passing >= kImportancePassesNeeded,
         std::to_string(passing) + "/" + std::to_string(kStructureSeeds) + " seeds (need " +
             std::to_string(kImportancePassesNeeded) + "); min own-task mass " + num(min_own, 3) +
             ", max other-task mass " + num(max_other, 3),
         start);
}

void criteria_comparisons(const std::map<std::uint64_t, Trained>& pam_runs, const std::map<std::uint64_t, Dataset>& corpora) {
  auto start = Clock::now();
  std::map<std::uint64_t, std::vector<VariantResult>> results;
  for (const auto& [seed, run] : pam_runs) {
    const auto& data = corpora.at(seed);
    auto& rows = results[seed];
    rows.push_back({"pam", run.config, param_report(run.config.model).total, run.test});
    for (const auto& [name, cfg] : ablation_variants(run.config)) {
      if (name == "pam") continue;
      rows.push_back(run_variant(name, cfg, data));
    }
    for (const auto& [name, cfg] : baseline_variants(run.config)) rows.push_back(run_variant(name, cfg, data));
  }

  auto loss = [](const std::vector<VariantResult>& rows, const std::string& name) {
    for (const auto& r : rows)
      if (r.name == name) return r.metrics.mean_task_loss;
    throw ContractError("missing variant " + name);
  };
  auto params = [](const std::vector<VariantResult>& rows, const std::string& name) {
    for (const auto& r : rows)
      if (r.name == name) return static_cast<double>(r.total_params);
    throw ContractError("missing variant " + name);
  };

  std::size_t beat_baselines = 0, beat_ablations = 0;
  bool budgets_ok = true;
  std::string losses;
  for (const auto& [seed, rows] : results) {
    const double pam = loss(rows, "pam");
    beat_baselines += pam <= loss(rows, "average") && pam <= loss(rows, "concat_linear") ? 1 : 0;
    beat_ablations += pam <= loss(rows, "no_shared") && pam <= loss(rows, "one_expert") ? 1 : 0;
    for (const char* b : {"average", "concat_linear"}) {
      budgets_ok = budgets_ok && std::abs(params(rows, b) - params(rows, "pam")) / params(rows, "pam") <= kBudgetTolerance;
    }
    losses += " s" + std::to_string(seed) + " pam " + num(pam, 3) + " avg " + num(loss(rows, "average"), 3) + " cat " +
              num(loss(rows, "concat_linear"), 3) + " no_shared " + num(loss(rows, "no_shared"), 3) + " one " +
              num(loss(rows, "one_expert"), 3) + ";";
  }

  {
    std::ofstream out("acceptance_comparison.json");
    nlohmann::json j;
    for (const auto& [seed, rows] : results) j[std::to_string(seed)] = to_json(rows);
    out << j.dump(2) << "\n";
  }
  std::cout << "comparison report (test split, seed 1):\n" << to_text(results.begin()->second);

  report(6, "specialization beats uniform fusion", beat_baselines >= kBaselinePassesNeeded && budgets_ok,
         "pam <= average and concat_linear in " + std::to_string(beat_baselines) + "/" +
             std::to_string(kStructureSeeds) + " seeds (need " + std::to_string(kBaselinePassesNeeded) +
             "), budgets within " + num(kBudgetTolerance * 100, 3) + "%: " + (budgets_ok ? "yes" : "no"),
         start);
  report(7, "ablation ordering", beat_ablations >= kAblationPassesNeeded,
         "pam <= no_shared and one_expert in " + std::to_string(beat_ablations) + "/" +
             std::to_string(kStructureSeeds) + " seeds (need " + std::to_string(kAblationPassesNeeded) +
             "); all five variants in acceptance_comparison.json;" + losses,
         start);
}

void criterion_params() {
  const auto start = Clock::now();
  bool ok = true;
  std::size_t checked = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    for (bool shared : {true, false}) {
      for (auto strategy : {RoutingStrategy::kAudioBased, RoutingStrategy::kNoTaskLabel, RoutingStrategy::kPromptAware}) {
        RunConfig run;
        run.model.fusion.num_routed_experts = n;
        run.model.fusion.use_shared_expert = shared;
        run.model.strategy = strategy;
        if (strategy == RoutingStrategy::kPromptAware) {
          if (n > 4) continue;
          run.data.num_tasks = n;
        }
        const auto r = param_report(run.model);
        if (n >= 2) ok = ok && r.activated < r.total;
        ok = ok && r.total == checkpoint_param_count(snapshot(init_state(run)));
        if (strategy != RoutingStrategy::kPromptAware) {
          auto bigger = run.model;
          bigger.fusion.num_routed_experts = n + 1;
          const auto rb = param_report(bigger);
          const std::size_t router_growth = rb.components.at("router") - r.components.at("router");
          ok = ok && rb.total - r.total - router_growth == r.expert_size && rb.fusion_activated == r.fusion_activated;
        }
        ++checked;
      }
    }
  }
  report(8, "parameter accounting", ok,
         std::to_string(checked) + " configurations: activated < total for N >= 2, +1 expert adds one expert to total "
         "and 0 to activated fusion, counts equal the checkpoint walk",
         start);
}

CheckpointError::Kind error_kind(const std::string& bytes, bool& typed) {
  try {
    restore(decode_checkpoint(bytes));
  } catch (const CheckpointError& e) {
    typed = true;
    return e.kind();
  } catch (...) {
  }
  typed = false;
  return CheckpointError::Kind::kIo;
}

void criterion_persistence() {
  const auto start = Clock::now();
  auto config = seeded(11);
  config.train.steps = 40;
  const auto data = generate_dataset(config);
  auto state = init_state(config);
  train(state, data, config.train.steps);
  const std::string path = "acceptance_persist.ckpt";
  save_checkpoint(state, path);
  const auto loaded = load_checkpoint(path);
  const bool exact = to_json(evaluate(state.model, data, "test", 64)).dump() ==
                     to_json(evaluate(loaded.model, data, "test", 64)).dump();
  const auto bytes = read_file(path);
  std::remove(path.c_str());

  bool typed = false, errors_ok = true;
  errors_ok = errors_ok && error_kind(bytes.substr(0, bytes.size() / 2), typed) == CheckpointError::Kind::kCorrupt && typed;
  auto flipped = bytes;
  flipped[bytes.size() / 3] ^= 0x01;
  errors_ok = errors_ok && error_kind(flipped, typed) == CheckpointError::Kind::kCorrupt && typed;
  auto file = decode_checkpoint(bytes);
  file.version += 1;
  errors_ok = errors_ok && error_kind(encode_checkpoint(file), typed) == CheckpointError::Kind::kVersion && typed;

  std::mt19937_64 rng(99);
  std::size_t survived = 0;
  const std::size_t header = 8 + 4 + 8 + 8 + 64;
  for (std::uint64_t i = 0; i < kFuzzCases; ++i) {
    auto m = bytes;
    for (int e = 0; e < 1 + static_cast<int>(rng() % 4); ++e) m[rng() % header] = static_cast<char>(rng() & 0xff);
    if (i % 10 == 0) m.resize(rng() % header);
    bool t = false;
    error_kind(m, t);
    survived += t || m == bytes ? 1 : 0;
  }
  report(9, "persistence", exact && errors_ok && survived == kFuzzCases,
         std::string("reloaded metrics bit-exact: ") + (exact ? "yes" : "no") + ", typed truncation/corruption/version errors: " +
             (errors_ok ? "yes" : "no") + ", header fuzz typed " + std::to_string(survived) + "/" +
             std::to_string(kFuzzCases),
         start);
}

void criterion_determinism() {
  const auto start = Clock::now();
  auto config = seeded(12);
  config.train.steps = 60;
  auto once = [&] {
    const auto data = generate_dataset(config);
    auto state = init_state(config);
    std::string trace;
    for (const auto& m : train(state, data, config.train.steps)) trace += to_json(m).dump() + "\n";
    trace += to_json(evaluate(state.model, data, "test", 64)).dump();
    return std::make_pair(trace, encode_checkpoint(snapshot(state)));
  };
  const auto a = once(), b = once();
  report(10, "determinism", a.first == b.first && a.second == b.second,
         std::string("metric traces identical: ") + (a.first == b.first ? "yes" : "no") +
             ", checkpoints identical: " + (a.second == b.second ? "yes" : "no") + " (" +
             std::to_string(a.second.size()) + " bytes)",
         start);
}

}  // namespace

int main() {
  try {
    criterion_gradients();
    criterion_gate();
    criterion_fusion();
    std::map<std::uint64_t, Trained> pam_runs;
    std::map<std::uint64_t, Dataset> corpora;
    criterion_routing(pam_runs, corpora);
    criterion_structure(pam_runs, corpora);
    criteria_comparisons(pam_runs, corpora);
    criterion_params();
    criterion_persistence();
    criterion_determinism();
  } catch (const std::exception& e) {
    std::cout << "[FAIL] acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
