#include <doctest.h>

#include <random>

#include "pam/adapters.hpp"
#include "pam/errors.hpp"
#include "pam/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/suites.hpp"

using namespace pam;
using ag::Tensor;

TEST_CASE("adapter shapes and per-state application") {
  std::mt19937_64 rng(1);
  const auto a = make_adapter(2, 16, 24, 32, rng, "adapter.2");
  CHECK(a.input_dim() == 16);
  CHECK(a.output_dim() == 32);
  CHECK(a.parameters().size() == 4);
  for (const auto& p : a.parameters()) {
    CHECK(p.requires_grad());
    CHECK(p.name().rfind("adapter.2.", 0) == 0);
  }
  const auto stacks = testing::random_stacks(rng, 3, 4, 5, 16);
  auto stack = stacks[2];
  const auto out = adapt(a, stack);
  CHECK(out.encoder_id == 2);
  REQUIRE(out.states.size() == 5);
  for (std::size_t l = 0; l < 5; ++l) {
    CHECK(out.states[l].shape() == ag::Shape{5, 32});
    CHECK(out.states[l].to_vector() == adapt_state(a, stack.states[l]).to_vector());
  }
}

TEST_CASE("identity adapter with unit weights is the identity") {
  std::mt19937_64 rng(2);
  auto a = make_adapter(0, 3, 3, 3, rng, "a", Activation::kIdentity);
  for (auto* w : {&a.w1, &a.w2}) {
    auto v = w->mutable_data();
    for (std::size_t i = 0; i < 9; ++i) v[i] = (i % 4 == 0) ? 1.0 : 0.0;
  }
  const auto x = Tensor::matrix({{1, -2, 3}, {0.5, 0, -1}});
  CHECK(adapt_state(a, x).to_vector() == x.to_vector());
}

TEST_CASE("adapter rows are independent") {
  std::mt19937_64 rng(3);
  const auto a = make_adapter(0, 4, 6, 5, rng, "a");
  const auto x = testing::random_tensor({7, 4}, rng, 1.0, false);
  const std::vector<std::size_t> rows{6, 0, 3};
  CHECK(ag::take_rows(adapt_state(a, x), rows).to_vector() == adapt_state(a, ag::take_rows(x, rows)).to_vector());
}

TEST_CASE("adapter errors") {
  std::mt19937_64 rng(4);
  const auto a = make_adapter(0, 4, 6, 5, rng, "a");
  auto stacks = testing::random_stacks(rng, 2, 2, 3, 4);
  CHECK_THROWS_AS(adapt(a, stacks[1]), ConfigError);
  auto wide = testing::random_stacks(rng, 1, 2, 3, 5);
  CHECK_THROWS_AS(adapt(a, wide[0]), ConfigError);
}

TEST_CASE("adapter gradients") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    const auto a = make_adapter(0, 4, 6, 3, rng, "a");
    const auto x = testing::random_tensor({5, 4}, rng, 1.0, false);
    const auto probe = testing::random_tensor({5, 3}, rng, 1.0, false);
    auto loss = [&] { return ag::sum(ag::mul(adapt_state(a, x), probe)); };
    const auto report = testing::check_scalar_grad(loss, a.parameters(), rng);
    INFO(report.worst_input);
    CHECK(report.worst_relative < 1e-5);
  }
}
