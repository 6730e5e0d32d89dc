// Command-line front end: training, evaluation, reports and data export.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "pam/checkpoint.hpp"
#include "pam/config.hpp"
#include "pam/data.hpp"
#include "pam/errors.hpp"
#include "pam/reports.hpp"
#include "pam/train.hpp"

namespace {

using nlohmann::json;

void emit(bool as_json, const json& j, const std::string& text) {
  if (as_json) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << text;
  }
}

int cmd_train(const std::string& config_path, const std::string& out, long long steps_override,
              const std::string& trace_path, bool quiet) {
  auto config = pam::load_config(config_path);
  if (steps_override >= 0) config.train.steps = static_cast<std::size_t>(steps_override);
  const auto data = pam::generate_dataset(config);
  auto state = pam::init_state(config);
  std::ofstream trace;
  if (!trace_path.empty()) {
    trace.open(trace_path);
    if (!trace) throw pam::ConfigError("cannot write trace file '" + trace_path + "'");
  }
  const std::uint64_t every = std::max<std::uint64_t>(1, config.train.steps / 10);
  pam::train(state, data, config.train.steps, [&](const pam::StepMetrics& m) {
    if (trace.is_open()) trace << pam::to_json(m).dump() << "\n";
    if (!quiet && (m.step % every == 0 || m.step == config.train.steps)) {
      std::cerr << "step " << m.step << "  L_llm " << m.loss_llm;
      if (m.loss_routing) std::cerr << "  L_G " << *m.loss_routing;
      if (m.routing_accuracy) std::cerr << "  route_acc " << *m.routing_accuracy;
      std::cerr << "  tok_acc " << m.token_accuracy << "\n";
    }
  });
  pam::save_checkpoint(state, out);
  if (!quiet) std::cerr << "saved " << out << " (step " << state.step << ")\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& split, bool as_json) {
  const auto state = pam::load_checkpoint(ckpt);
  const auto data = pam::generate_dataset(state.config);
  const auto metrics = pam::evaluate(state.model, data, split, state.config.train.eval_batch);
  emit(as_json, pam::to_json(metrics), pam::to_text(metrics));
  return 0;
}

int cmd_importance(const std::string& ckpt, bool as_json) {
  const auto state = pam::load_checkpoint(ckpt);
  const auto report = pam::importance_report(state.model);
  emit(as_json, pam::to_json(report), pam::to_text(report));
  return 0;
}

int cmd_params(const std::string& config_path, const std::string& ckpt, bool as_json) {
  pam::ParamReport report;
  json j;
  std::string text;
  if (!ckpt.empty()) {
    const auto file = pam::decode_checkpoint(pam::read_file(ckpt));
    const auto state = pam::restore(file);
    report = pam::param_report(state.config.model);
    j = pam::to_json(report);
    j["checkpoint_walk_total"] = pam::checkpoint_param_count(file);
    text = pam::to_text(report) + "checkpoint walk     " + std::to_string(pam::checkpoint_param_count(file)) + "\n";
  } else {
    report = pam::param_report(pam::load_config(config_path).model);
    j = pam::to_json(report);
    text = pam::to_text(report);
  }
  emit(as_json, j, text);
  return 0;
}

int cmd_cosine(const std::string& config_path, std::size_t probes, bool as_json) {
  const auto config = pam::load_config(config_path);
  if (probes == 0) throw pam::ConfigError("--probes must be positive");
  const auto data = pam::generate_dataset(config);
  std::vector<pam::SyntheticAudio> audio;
  for (const auto& ex : data.test) {
    if (audio.size() == probes) break;
    audio.push_back(ex.audio);
  }
  const auto report = pam::cosine_similarity_report(pam::make_bank(config.model.bank), audio);
  emit(as_json, pam::to_json(report), pam::to_text(report));
  return 0;
}

int cmd_compare(const std::string& config_path, const std::string& split, bool as_json, bool quiet) {
  const auto config = pam::load_config(config_path);
  const auto data = pam::generate_dataset(config);
  auto variants = pam::ablation_variants(config);
  for (auto& v : pam::baseline_variants(config)) variants.push_back(std::move(v));
  std::vector<pam::VariantResult> results;
  for (const auto& [name, cfg] : variants) {
    if (!quiet) std::cerr << "training " << name << "\n";
    results.push_back(pam::run_variant(name, cfg, data, split));
  }
  emit(as_json, pam::to_json(results), pam::to_text(results));
  return 0;
}

int cmd_data(const std::string& config_path, const std::string& out) {
  const auto config = pam::load_config(config_path);
  const auto data = pam::generate_dataset(config);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw pam::DataError("cannot create output directory '" + out + "': " + ec.message());
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream f(std::filesystem::path(out) / name);
    if (!f) throw pam::DataError("cannot write '" + name + "' in '" + out + "'");
    f << body;
  };
  json tasks = json::array();
  for (const auto& t : data.tasks) tasks.push_back(pam::to_json(t));
  json common = json::array();
  for (const auto& p : data.common) common.push_back({p.encoder, p.layer});
  write("tasks.json", json{{"tasks", tasks}, {"common", common}, {"config", pam::to_json(config)}}.dump(2) + "\n");
  for (const std::string split : {"train", "dev", "test"}) {
    std::string body;
    for (const auto& ex : data.split(split)) body += pam::to_json(ex).dump() + "\n";
    write(split + ".jsonl", body);
  }
  std::cout << "wrote " << data.train.size() << " train, " << data.dev.size() << " dev, " << data.test.size()
            << " test examples to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-aware mixture of multi-encoder fusion experts (desk scale)"};
  app.require_subcommand(1);

  std::string config_path, out, ckpt, split = "test", trace;
  bool as_json = false, quiet = false;
  long long steps = -1;
  std::size_t probes = 16;

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("--config", config_path, "JSON run config")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "Checkpoint path")->required();
  train->add_option("--steps", steps, "Override train.steps");
  train->add_option("--trace", trace, "Write per-step metrics as JSON lines");
  train->add_flag("--quiet", quiet, "No progress output");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  eval->add_option("--split", split, "train, dev or test");
  eval->add_flag("--json", as_json, "Emit JSON");

  auto* report = app.add_subcommand("report", "Analysis reports");
  report->require_subcommand(1);
  auto* importance = report->add_subcommand("importance", "Normalized fusion-weight importance");
  importance->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  importance->add_flag("--json", as_json, "Emit JSON");
  auto* params = report->add_subcommand("params", "Total and activated parameter counts");
  auto* params_src = params->add_option_group("source");
  params_src->add_option("--config", config_path, "JSON run config");
  params_src->add_option("--ckpt", ckpt, "Count from a checkpoint and cross-check the arrays");
  params_src->require_option(1);
  params->add_flag("--json", as_json, "Emit JSON");
  auto* cosine = report->add_subcommand("cosine", "Cross-encoder layer cosine similarity");
  cosine->add_option("--config", config_path, "JSON run config")->required();
  cosine->add_option("--probes", probes, "Number of probe inputs from the test split");
  cosine->add_flag("--json", as_json, "Emit JSON");
  auto* compare = report->add_subcommand("compare", "Train and compare ablations and baselines");
  compare->add_option("--config", config_path, "JSON run config")->required();
  compare->add_option("--split", split, "Evaluation split");
  compare->add_flag("--json", as_json, "Emit JSON");
  compare->add_flag("--quiet", quiet, "No progress output");

  auto* data = app.add_subcommand("data", "Synthetic corpus tools");
  data->require_subcommand(1);
  auto* generate = data->add_subcommand("generate", "Write the corpus as JSON lines");
  generate->add_option("--config", config_path, "JSON run config")->required();
  generate->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(pam::ExitCode::kConfig);
  }

  try {
    if (*train) return cmd_train(config_path, out, steps, trace, quiet);
    if (*eval) return cmd_eval(ckpt, split, as_json);
    if (*importance) return cmd_importance(ckpt, as_json);
    if (*params) return cmd_params(config_path, ckpt, as_json);
    if (*cosine) return cmd_cosine(config_path, probes, as_json);
    if (*compare) return cmd_compare(config_path, split, as_json, quiet);
    if (*generate) return cmd_data(config_path, out);
  } catch (const pam::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(pam::ExitCode::kFailure);
  }
  return 0;
}
