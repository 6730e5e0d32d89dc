#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

using nlohmann::json;

namespace {

int run(const std::string& args, const std::string& stdout_path = "cli_out.txt") {
  const std::string cmd = std::string(PAM_CLI_PATH) + " " + args + " > " + stdout_path + " 2> cli_err.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const std::string& path, const std::string& body) { std::ofstream(path, std::ios::binary) << body; }

const char* kTiny = R"({"seed": 3, "data": {"n_per_task": 20}, "train": {"steps": 5, "batch_size": 4}})";

}  // namespace

TEST_CASE("train, evaluate and report") {
  write("tiny.json", kTiny);
  REQUIRE(run("train --config tiny.json --out tiny.ckpt --trace trace.jsonl --quiet") == 0);
  std::istringstream trace(slurp("trace.jsonl"));
  std::string line;
  int lines = 0;
  while (std::getline(trace, line)) {
    const auto j = json::parse(line);
    CHECK(j.contains("loss_llm"));
    ++lines;
  }
  CHECK(lines == 5);

  REQUIRE(run("eval --ckpt tiny.ckpt --split dev --json") == 0);
  const auto metrics = json::parse(slurp("cli_out.txt"));
  CHECK(metrics["split"] == "dev");
  CHECK(metrics["count"] == 8);
  CHECK(run("eval --ckpt tiny.ckpt") == 0);
  CHECK(slurp("cli_out.txt").find("test") != std::string::npos);

  CHECK(run("report importance --ckpt tiny.ckpt --json") == 0);
  CHECK(json::parse(slurp("cli_out.txt"))["routed"].size() == 4);

  CHECK(run("report params --ckpt tiny.ckpt --json") == 0);
  const auto params = json::parse(slurp("cli_out.txt"));
  CHECK(params["checkpoint_walk_total"] == params["total"]);
  CHECK(run("report params --config tiny.json") == 0);

  CHECK(run("report cosine --config tiny.json --probes 4 --json") == 0);
  CHECK(json::parse(slurp("cli_out.txt"))["matrix"].size() == 3);

  CHECK(run("data generate --config tiny.json --out corpus") == 0);
  CHECK(!slurp("corpus/train.jsonl").empty());
  CHECK(json::parse(slurp("corpus/tasks.json"))["tasks"].size() == 4);
}

TEST_CASE("identical runs write identical checkpoints") {
  write("tiny.json", kTiny);
  REQUIRE(run("train --config tiny.json --out a.ckpt --quiet") == 0);
  REQUIRE(run("train --config tiny.json --out b.ckpt --quiet") == 0);
  CHECK(slurp("a.ckpt") == slurp("b.ckpt"));
}

TEST_CASE("the comparison report lists every variant") {
  write("tiny.json", kTiny);
  REQUIRE(run("report compare --config tiny.json --split dev --json --quiet") == 0);
  const auto j = json::parse(slurp("cli_out.txt"));
  std::vector<std::string> names;
  for (const auto& v : j) names.push_back(v["variant"]);
  CHECK(names == std::vector<std::string>{"pam", "no_shared", "one_expert", "no_task_label", "audio_based", "average",
                                          "concat_linear"});
}

TEST_CASE("exit codes") {
  write("tiny.json", kTiny);
  CHECK(run("") == 2);
  CHECK(run("train --out x.ckpt") == 2);
  CHECK(run("train --config missing.json --out x.ckpt") == 2);
  write("bad.json", R"({"model": {"K": 0}})");
  CHECK(run("train --config bad.json --out x.ckpt") == 2);
  write("broken.json", "{");
  CHECK(run("report params --config broken.json") == 2);
  CHECK(run("eval --ckpt missing.ckpt") == 3);
  write("garbage.ckpt", "not a checkpoint at all");
  CHECK(run("eval --ckpt garbage.ckpt") == 3);
  CHECK(slurp("cli_err.txt").find("error:") != std::string::npos);
  REQUIRE(run("train --config tiny.json --out good.ckpt --quiet") == 0);
  auto bytes = slurp("good.ckpt");
  write("cut.ckpt", bytes.substr(0, bytes.size() / 3));
  CHECK(run("report importance --ckpt cut.ckpt") == 3);
  CHECK(run("eval --ckpt good.ckpt --split nope") == 2);
  write("diverge.json", R"({"seed": 3, "data": {"n_per_task": 20}, "train": {"steps": 20, "batch_size": 4, "learning_rate": 1e300}})");
  CHECK(run("train --config diverge.json --out d.ckpt --quiet") == 4);
  CHECK(slurp("cli_err.txt").find("error:") != std::string::npos);
  CHECK(run("--help") == 0);
}
