#include <doctest.h>

#include <random>

#include "pam/errors.hpp"
#include "pam/fusion.hpp"
#include "pam/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/suites.hpp"

using namespace pam;
using ag::Tensor;

namespace {

HiddenStack stack_of(std::size_t id, std::vector<Tensor> states) {
  HiddenStack s;
  s.encoder_id = id;
  s.states = std::move(states);
  return s;
}

}  // namespace

TEST_CASE("pool layout is encoder-major and excludes the final state") {
  const auto s0 = stack_of(0, {Tensor::matrix({{0}}), Tensor::matrix({{1}}), Tensor::matrix({{2}})});
  const auto s1 = stack_of(1, {Tensor::matrix({{10}}), Tensor::matrix({{11}}), Tensor::matrix({{12}})});
  const auto pool = fusion_pool({s0, s1});
  REQUIRE(pool.size() == 4);
  CHECK(pool[0].item() == 0);
  CHECK(pool[1].item() == 1);
  CHECK(pool[2].item() == 10);
  CHECK(pool[3].item() == 11);
  const auto last = last_states({s0, s1});
  CHECK(last[0].item() == 2);
  CHECK(last[1].item() == 12);
}

TEST_CASE("fuse_layers examples") {
  std::mt19937_64 rng(1);
  const auto s = stack_of(0, {Tensor::matrix({{1, 2}}), Tensor::matrix({{3, 4}}), Tensor::matrix({{0, 0}})});
  auto e = make_expert(1, 2, 2, 2, rng, "e");
  // Initial W is uniform 1/P.
  for (double w : e.fusion_weights.to_vector()) CHECK(w == 0.5);
  auto w = e.fusion_weights.mutable_data();
  w[0] = 1.0; w[1] = 0.0;   // row 0 picks layer 0
  w[2] = 2.0; w[3] = -1.0;  // row 1: 2*h0 - h1
  const auto fused = fuse_layers(e, {s});
  CHECK(fused[0].to_vector() == std::vector<double>{1, 2});
  CHECK(fused[1].to_vector() == std::vector<double>{-1, 0});
}

TEST_CASE("fuse_layers matches the brute-force double sum") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) CHECK(testing::fusion_oracle_error(seed) <= 1e-12);
}

TEST_CASE("fuse_layers is linear in W") {
  std::mt19937_64 rng(8);
  const auto stacks = testing::random_stacks(rng, 2, 3, 4, 5);
  auto ea = make_expert(2, 3, 2, 5, rng, "a");
  auto eb = make_expert(2, 3, 2, 5, rng, "b");
  auto ec = make_expert(2, 3, 2, 5, rng, "c");
  std::normal_distribution<double> n;
  auto wa = ea.fusion_weights.mutable_data(), wb = eb.fusion_weights.mutable_data(),
       wc = ec.fusion_weights.mutable_data();
  for (std::size_t i = 0; i < wa.size(); ++i) {
    wa[i] = n(rng);
    wb[i] = n(rng);
    wc[i] = 2.0 * wa[i] - 3.0 * wb[i];
  }
  const auto fa = fuse_layers(ea, stacks), fb = fuse_layers(eb, stacks), fc = fuse_layers(ec, stacks);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto a = fa[k].to_vector(), b = fb[k].to_vector(), c = fc[k].to_vector();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(c[i] == doctest::Approx(2.0 * a[i] - 3.0 * b[i]).epsilon(1e-12));
  }
}

TEST_CASE("expert gradients reach W and the projection") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    const auto stacks = testing::random_stacks(rng, 2, 2, 3, 4);
    const auto e = make_expert(2, 2, 3, 4, rng, "e");
    const auto probe = testing::random_tensor({3, 4}, rng, 1.0, false);
    auto loss = [&] { return ag::sum(ag::mul(expert_forward(e, stacks), probe)); };
    CHECK(testing::check_scalar_grad(loss, e.parameters(), rng).worst_relative < 1e-5);
  }
}

TEST_CASE("hard gate equals dense evaluation bit for bit") {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto trial = testing::gate_exactness_trial(seed);
    INFO(trial.description);
    CHECK(trial.identical);
  }
}

TEST_CASE("hard gate leaves unselected experts without gradient") {
  std::mt19937_64 rng(4);
  FusionConfig cfg;
  cfg.num_fused = 2;
  cfg.num_routed_experts = 3;
  const auto stacks = testing::random_stacks(rng, 2, 2, 4, 3);
  const auto shared = make_expert(2, 2, 2, 3, rng, "s");
  std::vector<ExpertParams> routed;
  for (int j = 0; j < 3; ++j) routed.push_back(make_expert(2, 2, 2, 3, rng, "r" + std::to_string(j)));
  const auto gate = one_hot_gate({2, 0}, 3);
  ag::backward(ag::sum(pam_forward(cfg, shared, routed, gate, stacks).values));
  CHECK(routed[0].fusion_weights.has_grad());
  CHECK_FALSE(routed[1].fusion_weights.has_grad());
  CHECK_FALSE(routed[1].proj_w.has_grad());
  CHECK(routed[2].proj_w.has_grad());
  CHECK(shared.proj_w.has_grad());
}

TEST_CASE("soft gate weights every expert by its posterior") {
  std::mt19937_64 rng(5);
  FusionConfig cfg;
  cfg.num_fused = 1;
  cfg.num_routed_experts = 2;
  cfg.use_shared_expert = false;
  const auto stacks = testing::random_stacks(rng, 1, 2, 2, 3);
  std::vector<ExpertParams> routed{make_expert(1, 2, 1, 3, rng, "a"), make_expert(1, 2, 1, 3, rng, "b")};
  const auto gate = make_gate(Tensor::matrix({{0.3, -0.4}}), GateMode::kSoft);
  const auto p = gate.posteriors.to_vector();
  const auto got = pam_forward(cfg, routed[0], routed, gate, stacks).values.to_vector();
  const auto a = expert_forward(routed[0], stacks).to_vector(), b = expert_forward(routed[1], stacks).to_vector();
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(p[0] * a[i] + p[1] * b[i]).epsilon(1e-13));
}

TEST_CASE("fusion errors") {
  std::mt19937_64 rng(6);
  auto stacks = testing::random_stacks(rng, 2, 2, 3, 4);
  const auto e = make_expert(2, 3, 1, 4, rng, "e");
  CHECK_THROWS_AS(fuse_layers(e, stacks), DimensionError);
  auto ragged = stacks;
  ragged[1].states[0] = testing::random_tensor({2, 4}, rng, 1.0, false);
  CHECK_THROWS_AS(fusion_pool(ragged), DimensionError);
  CHECK_THROWS_AS(fusion_pool({}), DimensionError);

  FusionConfig cfg;
  cfg.num_routed_experts = 2;
  cfg.num_fused = 1;
  const auto ok = make_expert(2, 2, 1, 4, rng, "ok");
  CHECK_THROWS_AS(pam_forward(cfg, ok, {ok}, one_hot_gate({0}, 2), stacks), DimensionError);
  CHECK_THROWS_AS(pam_forward(cfg, ok, {ok, ok}, one_hot_gate({0, 1}, 2), stacks), DimensionError);
  CHECK_THROWS_AS(one_hot_gate({2}, 2), IndexError);

  FusionConfig bad;
  bad.num_fused = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  CHECK_THROWS_AS(parse_baseline_mode("median"), ConfigError);
}

TEST_CASE("baselines") {
  std::mt19937_64 rng(7);
  const auto s0 = stack_of(0, {Tensor::matrix({{9, 9}}), Tensor::matrix({{1, 2}})});
  const auto s1 = stack_of(1, {Tensor::matrix({{9, 9}}), Tensor::matrix({{3, 6}})});
  const auto avg = make_baseline(BaselineMode::kAverage, 2, 2, rng, "b");
  CHECK(avg.parameters().empty());
  CHECK(baseline_forward(BaselineMode::kAverage, avg, {s0, s1}).values.to_vector() == std::vector<double>{2, 4});
  const auto cat = make_baseline(BaselineMode::kConcatLinear, 2, 2, rng, "b");
  CHECK(cat.proj_w.shape() == ag::Shape{4, 2});
  CHECK(baseline_forward(BaselineMode::kConcatLinear, cat, {s0, s1}).values.shape() == ag::Shape{1, 2});
  CHECK_THROWS_AS(baseline_forward(BaselineMode::kPam, cat, {s0, s1}), ConfigError);
  CHECK(parse_baseline_mode(to_string(BaselineMode::kConcatLinear)) == BaselineMode::kConcatLinear);
}
