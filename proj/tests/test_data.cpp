#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "pam/data.hpp"
#include "pam/errors.hpp"

using namespace pam;

namespace {

const Dataset& shared_dataset() {
  static const Dataset ds = [] {
    RunConfig cfg;
    cfg.data.n_per_task = 60;
    return generate_dataset(cfg);
  }();
  return ds;
}

}  // namespace

TEST_CASE("default dependency layout") {
  const auto deps = default_dependencies(4, 3, 4);
  REQUIRE(deps.size() == 4);
  CHECK(deps[0] == std::vector<PlantedPair>{{1, 3}, {2, 3}});
  CHECK(deps[3] == std::vector<PlantedPair>{{0, 0}, {2, 0}});
  CHECK(default_common_pair(3, 4) == PlantedPair{0, 2});
  const auto other = default_dependencies(2, 2, 3);
  CHECK(other[0] == std::vector<PlantedPair>{{0, 2}, {1, 2}});
  CHECK_THROWS_AS(default_dependencies(5, 2, 2), ConfigError);
}

TEST_CASE("class codes are unit vectors on distinct angles") {
  for (std::size_t c = 0; c < 4; ++c) {
    const auto code = class_code(c, 4, 5);
    CHECK(code.size() == 5);
    CHECK(std::hypot(code[0], code[1]) == doctest::Approx(1.0));
    for (std::size_t j = 2; j < 5; ++j) CHECK(code[j] == 0.0);
    for (std::size_t o = 0; o < c; ++o) {
      const auto other = class_code(o, 4, 5);
      CHECK(code[0] * other[0] + code[1] * other[1] < 0.01);
    }
  }
  CHECK_THROWS_AS(class_code(0, 4, 1), ConfigError);
}

TEST_CASE("split sizes and task balance") {
  const auto& ds = shared_dataset();
  CHECK(ds.train.size() == 4 * 48);
  CHECK(ds.dev.size() == 4 * 6);
  CHECK(ds.test.size() == 4 * 6);
  for (const auto* split : {&ds.train, &ds.dev, &ds.test}) {
    std::map<int, std::size_t> per_task;
    for (const auto& ex : *split) ++per_task[ex.task];
    CHECK(per_task.size() == 4);
    for (const auto& [task, n] : per_task) CHECK(n == split->size() / 4);
  }
  CHECK(&ds.split("dev") == &ds.dev);
  CHECK_THROWS_AS(ds.split("valid"), ConfigError);
}

TEST_CASE("held-out templates appear only in dev and test") {
  const auto& ds = shared_dataset();
  for (const auto& ex : ds.train) {
    CHECK(ex.cluster_id < 12);
    CHECK(ex.prompt == ds.tasks[ex.task].templates[ex.cluster_id]);
  }
  for (const auto* split : {&ds.dev, &ds.test})
    for (const auto& ex : *split) CHECK(ex.cluster_id >= 12);
}

TEST_CASE("targets re-derive from the audio") {
  const auto& ds = shared_dataset();
  RunConfig cfg;
  const auto bank = make_bank(cfg.model.bank);
  for (const auto* split : {&ds.train, &ds.dev, &ds.test}) {
    for (const auto& ex : *split) {
      CHECK(ex.target == derive_target(ds.tasks[ex.task], ds.common, bank, ds.vocab, ex.audio));
      CHECK(ex.target.size() == 4);
      CHECK(ex.target.back() == kEosToken);
      for (std::size_t i = 0; i + 1 < ex.target.size(); ++i) {
        CHECK(ex.target[i] >= kFirstSymbolToken);
        CHECK(ex.target[i] < kFirstSymbolToken + 4);
      }
      CHECK(ex.stacks.size() == 3);
      CHECK(ex.stacks[0].frames() == 4);
    }
  }
}

TEST_CASE("every task's targets use every class") {
  const auto& ds = shared_dataset();
  std::map<int, std::set<int>> symbols;
  for (const auto& ex : ds.train) symbols[ex.task].insert(ex.target[0]);
  for (const auto& [task, s] : symbols) CHECK(s.size() == 4);
}

TEST_CASE("template properties") {
  const auto& ds = shared_dataset();
  const auto& vocab = ds.vocab;
  std::set<std::vector<int>> all;
  std::map<int, std::map<int, std::size_t>> filler_use;  // task -> filler -> count
  std::map<std::size_t, std::map<std::size_t, std::size_t>> lengths;  // length -> task -> count
  for (const auto& task : ds.tasks) {
    CHECK(task.templates.size() == 50);
    CHECK(task.train_templates == 12);
    for (const auto& t : task.templates) {
      CHECK(all.insert(t).second);
      CHECK(t.back() == kAudioToken);
      std::size_t own = 0;
      for (std::size_t i = 0; i + 1 < t.size(); ++i) {
        const int w = t[i];
        if (w >= vocab.first_filler()) {
          CHECK(w < vocab.first_filler() + 12);
          ++filler_use[static_cast<int>(task.task_id)][w];
        } else {
          REQUIRE(w >= vocab.keyword(0, 0));
          const auto owner = static_cast<std::size_t>(w - vocab.keyword(0, 0)) / kKeywordsPerTask;
          CHECK(owner == task.task_id);
          ++own;
        }
      }
      CHECK(own == 2);
      ++lengths[t.size()][task.task_id];
    }
  }
  // Filler usage per task stays within one deck of uniform; lengths are equally common in every task.
  for (const auto& [task, use] : filler_use) {
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& [w, n] : use) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    CHECK(use.size() == 12);
    CHECK(hi - lo <= 2);
  }
  for (const auto& [len, per_task] : lengths) {
    CHECK(per_task.size() == 4);
    std::set<std::size_t> counts;
    for (const auto& [task, n] : per_task) counts.insert(n);
    CHECK(counts.size() == 1);
  }
}

TEST_CASE("generation is deterministic and seed-sensitive") {
  RunConfig cfg;
  cfg.data.n_per_task = 10;
  const auto a = generate_dataset(cfg), b = generate_dataset(cfg);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].prompt == b.train[i].prompt);
    CHECK(a.train[i].audio.frames.to_vector() == b.train[i].audio.frames.to_vector());
    CHECK(to_json(a.train[i]) == to_json(b.train[i]));
  }
  cfg.data.seed = 2;
  const auto c = generate_dataset(cfg);
  CHECK(c.train[0].audio.frames.to_vector() != a.train[0].audio.frames.to_vector());
}

TEST_CASE("dependency checks") {
  RunConfig cfg;
  auto tasks = make_tasks(cfg);
  CHECK_NOTHROW(check_dependencies(tasks, {{0, 2}}, cfg.model.bank));
  CHECK_THROWS_AS(check_dependencies(tasks, {{1, 3}}, cfg.model.bank), ConfigError);
  CHECK_THROWS_AS(check_dependencies(tasks, {{0, 4}}, cfg.model.bank), ConfigError);
  tasks[1].planted.push_back(tasks[0].planted[0]);
  CHECK_THROWS_AS(check_dependencies(tasks, {}, cfg.model.bank), ConfigError);
  tasks = make_tasks(cfg);
  tasks[2].planted.clear();
  CHECK_THROWS_AS(check_dependencies(tasks, {}, cfg.model.bank), ConfigError);
}

TEST_CASE("corpus configuration errors") {
  RunConfig cfg;
  cfg.data.filler_pool = 100;
  CHECK_THROWS_AS(make_tasks(cfg), ConfigError);
  cfg = RunConfig{};
  cfg.model.lm.vocab_size = 30;
  CHECK_THROWS_AS(make_tasks(cfg), ConfigError);
  cfg = RunConfig{};
  cfg.data.frames = 7;
  CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
  cfg = RunConfig{};
  cfg.data.n_per_task = 3;
  cfg.data.train_fraction = 0.5;
  cfg.data.dev_fraction = 0.45;
  CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
}
