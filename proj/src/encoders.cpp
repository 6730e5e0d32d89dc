#include "pam/encoders.hpp"

#include <cmath>
#include <random>
#include <string>

#include "pam/errors.hpp"
#include "pam/ops.hpp"

namespace pam {

namespace {

// Orthonormal columns via modified Gram-Schmidt, applied twice.
std::vector<std::vector<double>> random_orthonormal(std::size_t dim, std::size_t count, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> cols;
  while (cols.size() < count) {
    std::vector<double> v(dim);
    for (auto& x : v) x = normal(rng);
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : cols) {
        double dot = 0.0;
        for (std::size_t i = 0; i < dim; ++i) dot += v[i] * q[i];
        for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * q[i];
      }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (auto& x : v) x /= norm;
    cols.push_back(std::move(v));
  }
  return cols;
}

ag::Tensor columns_to_matrix(const std::vector<std::vector<double>>& cols, std::size_t first, std::size_t count) {
  const std::size_t dim = cols.front().size();
  std::vector<double> data(dim * count);
  for (std::size_t j = 0; j < count; ++j)
    for (std::size_t i = 0; i < dim; ++i) data[i * count + j] = cols[first + j][i];
  return ag::Tensor::from({dim, count}, std::move(data));
}

ag::Tensor transposed(const ag::Tensor& m) {
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> t(r * c);
  auto v = m.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = v[i * c + j];
  return ag::Tensor::from({c, r}, std::move(t));
}

}  // namespace

std::size_t EncoderSpec::subspace_rank() const {
  return planted_subspaces.empty() ? 0 : planted_subspaces.front().dim(1);
}

std::size_t HiddenStack::frames() const { return states.empty() ? 0 : states.front().rows(); }
std::size_t HiddenStack::dim() const { return states.empty() ? 0 : states.front().cols(); }

std::size_t planted_rank(const BankConfig& config) {
  if (config.num_encoders == 0 || config.num_layers == 0 || config.hidden_dim == 0) {
    throw ConfigError("encoder bank needs at least one encoder, one layer and a positive hidden size");
  }
  const std::size_t pairs = config.num_encoders * (config.num_layers + 1);
  const std::size_t r = config.input_dim / pairs;
  if (r == 0) {
    throw ConfigError("input_dim " + std::to_string(config.input_dim) + " is too small for " +
                      std::to_string(pairs) + " planted subspaces");
  }
  if (r > config.hidden_dim) throw ConfigError("planted rank exceeds encoder hidden_dim");
  return r;
}

std::vector<EncoderSpec> make_bank(const BankConfig& config) {
  const std::size_t r = planted_rank(config);
  std::mt19937_64 rng(config.seed);
  const std::size_t layers = config.num_layers + 1;
  auto basis = random_orthonormal(config.input_dim, config.num_encoders * layers * r, rng);

  std::vector<EncoderSpec> bank;
  for (std::size_t e = 0; e < config.num_encoders; ++e) {
    EncoderSpec spec;
    spec.encoder_id = e;
    spec.num_layers = config.num_layers;
    spec.hidden_dim = config.hidden_dim;
    spec.input_dim = config.input_dim;
    spec.mixing = config.mixing;
    spec.frontend_hop = e == 0 ? 1 : 2;
    spec.frame_stride = e == 0 ? 2 : 1;
    // Shared range for all layers of this encoder, rotated per layer.
    auto range = random_orthonormal(config.hidden_dim, r, rng);
    for (std::size_t l = 0; l < layers; ++l) {
      spec.planted_subspaces.push_back(columns_to_matrix(basis, (e * layers + l) * r, r));
      auto rot = random_orthonormal(r, r, rng);
      std::vector<double> map(config.hidden_dim * r, 0.0);
      for (std::size_t i = 0; i < config.hidden_dim; ++i)
        for (std::size_t j = 0; j < r; ++j)
          for (std::size_t k = 0; k < r; ++k) map[i * r + j] += range[k][i] * rot[j][k];
      spec.layer_maps.push_back(ag::Tensor::from({config.hidden_dim, r}, std::move(map)));
    }
    bank.push_back(std::move(spec));
  }
  return bank;
}

std::vector<EncoderSpec> default_bank() { return make_bank(BankConfig{}); }

ag::Tensor downsample(const ag::Tensor& x, std::size_t factor) {
  if (factor == 0) throw ConfigError("downsample factor must be positive");
  if (x.rank() != 2 || x.rows() % factor != 0) {
    throw DataError("cannot downsample " + ag::to_string(x.shape()) + " by " + std::to_string(factor) +
                    ": length not divisible");
  }
  ag::NoGradGuard guard;
  if (factor == 1) return x.detach();
  return ag::mean_pool_rows(x, factor).detach();
}

HiddenStack encode(const EncoderSpec& spec, const SyntheticAudio& audio) {
  const auto& x = audio.frames;
  if (x.rank() != 2 || x.cols() != spec.input_dim) {
    throw ConfigError("encoder " + std::to_string(spec.encoder_id) + " expects " + std::to_string(spec.input_dim) +
                      " input features, got " + ag::to_string(x.shape()));
  }
  if (x.rows() % spec.frames_per_output() != 0) {
    throw DataError("audio length " + std::to_string(x.rows()) + " is not divisible by " +
                    std::to_string(spec.frames_per_output()));
  }
  ag::NoGradGuard guard;
  const auto front = downsample(x, spec.frontend_hop);
  HiddenStack stack;
  stack.encoder_id = spec.encoder_id;
  ag::Tensor prev;
  for (std::size_t l = 0; l <= spec.num_layers; ++l) {
    auto proj = ag::matmul(front, spec.planted_subspaces[l]);
    const auto maps_t = transposed(spec.layer_maps[l]);
    auto state = ag::matmul(proj, maps_t);
    if (prev.defined()) state = ag::add(state, ag::scale(prev, spec.mixing));
    prev = state;
    stack.states.push_back(state);
  }
  for (auto& s : stack.states) s = downsample(s, spec.frame_stride);
  return stack;
}

std::vector<HiddenStack> encode_all(const std::vector<EncoderSpec>& bank, const SyntheticAudio& audio) {
  std::vector<HiddenStack> out;
  out.reserve(bank.size());
  for (const auto& spec : bank) out.push_back(encode(spec, audio));
  for (const auto& s : out) {
    if (s.frames() != out.front().frames()) {
      throw ConfigError("encoder bank is not frame aligned: " + std::to_string(s.frames()) + " vs " +
                        std::to_string(out.front().frames()) + " frames");
    }
  }
  return out;
}

}  // namespace pam
