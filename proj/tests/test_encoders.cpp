#include <doctest.h>

#include <cmath>
#include <random>

#include "pam/data.hpp"
#include "pam/encoders.hpp"
#include "pam/errors.hpp"
#include "pam/model.hpp"
#include "pam/ops.hpp"
#include "support/gradcheck.hpp"

using namespace pam;
using ag::Tensor;

namespace {

double dot_cols(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) s += a.at(r, i) * b.at(r, j);
  return s;
}

SyntheticAudio random_audio(std::size_t frames, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {testing::random_tensor({frames, dim}, rng, 1.0, false), seed};
}

// Ridge least squares onto one-hot labels, solved by Gaussian elimination.
struct LinearProbe {
  std::size_t dim = 0, classes = 0;
  std::vector<double> beta;  // (dim + 1) x classes

  void fit(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& y, double ridge = 1e-6) {
    dim = x.front().size();
    const std::size_t p = dim + 1;
    std::vector<double> a(p * p, 0.0), b(p * classes, 0.0);
    for (std::size_t n = 0; n < x.size(); ++n) {
      std::vector<double> f(x[n]);
      f.push_back(1.0);
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) a[i * p + j] += f[i] * f[j];
        b[i * classes + y[n]] += f[i];
      }
    }
    for (std::size_t i = 0; i < p; ++i) a[i * p + i] += ridge;
    for (std::size_t col = 0; col < p; ++col) {
      std::size_t piv = col;
      for (std::size_t r = col + 1; r < p; ++r)
        if (std::abs(a[r * p + col]) > std::abs(a[piv * p + col])) piv = r;
      for (std::size_t k = 0; k < p; ++k) std::swap(a[col * p + k], a[piv * p + k]);
      for (std::size_t k = 0; k < classes; ++k) std::swap(b[col * classes + k], b[piv * classes + k]);
      for (std::size_t r = 0; r < p; ++r) {
        if (r == col) continue;
        const double f = a[r * p + col] / a[col * p + col];
        for (std::size_t k = 0; k < p; ++k) a[r * p + k] -= f * a[col * p + k];
        for (std::size_t k = 0; k < classes; ++k) b[r * classes + k] -= f * b[col * classes + k];
      }
    }
    beta.assign(p * classes, 0.0);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t k = 0; k < classes; ++k) beta[i * classes + k] = b[i * classes + k] / a[i * p + i];
  }

  std::size_t predict(const std::vector<double>& x) const {
    std::size_t best = 0;
    double best_v = -1e300;
    for (std::size_t k = 0; k < classes; ++k) {
      double v = beta[dim * classes + k];
      for (std::size_t i = 0; i < dim; ++i) v += x[i] * beta[i * classes + k];
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    return best;
  }
};

std::vector<double> time_mean(const Tensor& state) {
  std::vector<double> m(state.cols(), 0.0);
  for (std::size_t t = 0; t < state.rows(); ++t)
    for (std::size_t d = 0; d < state.cols(); ++d) m[d] += state.at(t, d) / static_cast<double>(state.rows());
  return m;
}

}  // namespace

TEST_CASE("default bank layout") {
  const auto bank = default_bank();
  REQUIRE(bank.size() == 3);
  CHECK(bank[0].frame_stride == 2);
  CHECK(bank[1].frame_stride == 1);
  CHECK(bank[2].frame_stride == 1);
  for (const auto& spec : bank) {
    CHECK(spec.num_layers == 4);
    CHECK(spec.hidden_dim == 16);
    CHECK(spec.input_dim == 32);
    CHECK(spec.planted_subspaces.size() == 5);
    CHECK(spec.frame_stride <= 2);
  }
}

TEST_CASE("planted subspaces are orthonormal and pairwise orthogonal") {
  const auto bank = default_bank();
  std::vector<Tensor> all;
  for (const auto& spec : bank)
    for (const auto& u : spec.planted_subspaces) all.push_back(u);
  for (std::size_t a = 0; a < all.size(); ++a) {
    for (std::size_t b = a; b < all.size(); ++b) {
      for (std::size_t i = 0; i < all[a].cols(); ++i) {
        for (std::size_t j = 0; j < all[b].cols(); ++j) {
          const double want = (a == b && i == j) ? 1.0 : 0.0;
          CHECK(std::abs(dot_cols(all[a], i, all[b], j) - want) < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("encode shapes, alignment and determinism") {
  const auto bank = default_bank();
  const auto audio = random_audio(16, 32, 4);
  const auto stacks = encode_all(bank, audio);
  for (const auto& s : stacks) {
    CHECK(s.states.size() == 5);
    CHECK(s.frames() == 8);
    CHECK(s.dim() == 16);
    for (const auto& st : s.states) CHECK_FALSE(st.requires_grad());
  }
  const auto eight = encode(bank[0], random_audio(8, 32, 1));
  CHECK(eight.frames() == 4);
  const auto again = encode_all(bank, audio);
  for (std::size_t e = 0; e < 3; ++e)
    for (std::size_t l = 0; l < 5; ++l) CHECK(stacks[e].states[l].to_vector() == again[e].states[l].to_vector());
}

TEST_CASE("encode errors") {
  const auto bank = default_bank();
  CHECK_THROWS_AS(encode(bank[0], random_audio(8, 31, 1)), ConfigError);
  CHECK_THROWS_AS(encode(bank[1], random_audio(7, 32, 1)), DataError);
}

TEST_CASE("input confined to one layer's subspace leaves the next layer with only the mixing term") {
  BankConfig cfg;
  cfg.num_encoders = 1;
  cfg.num_layers = 2;
  const auto spec = make_bank(cfg).front();
  // x = U(0,1) c for every frame
  const auto& u = spec.planted_subspaces[1];
  std::vector<double> frames;
  for (int t = 0; t < 2; ++t)
    for (std::size_t i = 0; i < spec.input_dim; ++i) frames.push_back(u.at(i, 0) * 0.6 - u.at(i, 1) * 0.8);
  const auto stack = encode(spec, {Tensor::from({2, spec.input_dim}, frames), 0});
  const auto h1 = stack.states[1].to_vector();
  const auto h2 = stack.states[2].to_vector();
  double novel = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < h2.size(); ++i) {
    novel = std::max(novel, std::abs(h2[i] - spec.mixing * h1[i]));
    norm = std::max(norm, std::abs(h1[i]));
  }
  CHECK(norm > 0.1);
  CHECK(novel < 1e-12);
  for (double v : stack.states[0].to_vector()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("downsample") {
  const auto x = Tensor::matrix({{1, 5}, {2, 6}});
  CHECK(downsample(x, 1).to_vector() == x.to_vector());
  CHECK(downsample(Tensor::matrix({{2}, {4}, {6}, {8}}), 2).to_vector() == std::vector<double>{3, 7});
  std::mt19937_64 rng(6);
  const auto r = testing::random_tensor({6, 3}, rng, 1.0, false);
  const auto d = downsample(r, 3);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c) {
      const double m = (r.at(3 * b, c) + r.at(3 * b + 1, c) + r.at(3 * b + 2, c)) / 3.0;
      CHECK(d.at(b, c) == doctest::Approx(m).epsilon(1e-14));
    }
  CHECK_THROWS_AS(downsample(r, 4), DataError);
}

TEST_CASE("encoder parameters are never trainable") {
  RunConfig cfg;
  const auto model = make_model(cfg.model, 1);
  for (const auto& p : model.parameters()) CHECK(p.name().rfind("enc", 0) != 0);
  for (const auto& spec : model.bank)
    for (const auto& u : spec.planted_subspaces) CHECK_FALSE(u.requires_grad());
}

TEST_CASE("linear probes separate planted signals by encoder and layer") {
  RunConfig cfg;
  cfg.data.seed = 3;
  const auto data = generate_dataset(cfg);
  const auto bank = make_bank(cfg.model.bank);

  // Planted pair -> (task, index in that task's target).
  struct Pair {
    PlantedPair pair;
    std::size_t task;
    std::size_t index;
  };
  std::vector<Pair> pairs;
  for (const auto& t : data.tasks)
    for (std::size_t i = 0; i < t.planted.size(); ++i) pairs.push_back({t.planted[i], t.task_id, i});

  auto labels = [&](const std::vector<Example>& split, const Pair& p) {
    std::vector<std::size_t> y;
    for (const auto& ex : split) {
      const auto target = derive_target(data.tasks[p.task], {}, bank, data.vocab, ex.audio);
      y.push_back(static_cast<std::size_t>(target[p.index] - kFirstSymbolToken));
    }
    return y;
  };
  auto accuracy = [&](const Pair& p, std::size_t e, std::size_t l) {
    std::vector<std::vector<double>> xtr, xte;
    for (const auto& ex : data.train) xtr.push_back(time_mean(ex.stacks[e].states[l]));
    for (const auto& ex : data.test) xte.push_back(time_mean(ex.stacks[e].states[l]));
    LinearProbe probe;
    probe.classes = cfg.data.num_classes;
    probe.fit(xtr, labels(data.train, p));
    const auto y = labels(data.test, p);
    std::size_t hit = 0;
    for (std::size_t n = 0; n < xte.size(); ++n) hit += probe.predict(xte[n]) == y[n] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(xte.size());
  };

  for (const auto& p : pairs) {
    INFO("planted pair (" << p.pair.encoder << "," << p.pair.layer << ")");
    CHECK(accuracy(p, p.pair.encoder, p.pair.layer) >= 0.99);
    for (std::size_t e = 0; e < bank.size(); ++e) {
      for (std::size_t l = 0; l <= cfg.model.bank.num_layers; ++l) {
        const bool near = e == p.pair.encoder && (l + 1 >= p.pair.layer && l <= p.pair.layer + 1);
        if (near) continue;
        INFO("probe on (" << e << "," << l << ")");
        CHECK(accuracy(p, e, l) <= 0.60);
      }
    }
  }
}
