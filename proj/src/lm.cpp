#include "pam/lm.hpp"

#include <cmath>

#include "pam/errors.hpp"
#include "pam/init.hpp"
#include "pam/ops.hpp"

namespace pam {

void validate(const LmConfig& c) {
  if (c.vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  if (c.model_dim == 0 || c.num_heads == 0 || c.model_dim % c.num_heads != 0) {
    throw ConfigError("model_dim " + std::to_string(c.model_dim) + " must be a positive multiple of num_heads " +
                      std::to_string(c.num_heads));
  }
  if (c.num_blocks == 0 || c.ffn_mult == 0 || c.max_positions == 0) {
    throw ConfigError("num_blocks, ffn_mult and max_positions must be positive");
  }
}

std::vector<ag::Tensor> TinyLM::parameters() const {
  std::vector<ag::Tensor> p{tok_emb, pos_emb};
  for (const auto& b : blocks) {
    for (const auto& t : {b.ln1_g, b.ln1_b, b.qkv_w, b.qkv_b, b.out_w, b.out_b, b.ln2_g, b.ln2_b, b.ff1_w, b.ff1_b,
                          b.ff2_w, b.ff2_b}) {
      p.push_back(t);
    }
  }
  for (const auto& t : {lnf_g, lnf_b, head_w, head_b}) p.push_back(t);
  return p;
}

TinyLM make_lm(const LmConfig& config, std::mt19937_64& rng, const std::string& prefix) {
  validate(config);
  const std::size_t d = config.model_dim, f = config.ffn_mult * d;
  TinyLM lm;
  lm.config = config;
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  lm.tok_emb = init::normal({config.vocab_size, d}, emb_std, rng, prefix + ".tok_emb");
  lm.pos_emb = init::normal({config.max_positions, d}, 0.1 * emb_std, rng, prefix + ".pos_emb");
  for (std::size_t i = 0; i < config.num_blocks; ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    DecoderBlock b;
    b.ln1_g = init::constant({d}, 1.0, p + ".ln1_g");
    b.ln1_b = init::zeros({d}, p + ".ln1_b");
    b.qkv_w = init::fan_in_normal({d, 3 * d}, rng, p + ".qkv_w");
    b.qkv_b = init::zeros({3 * d}, p + ".qkv_b");
    b.out_w = init::fan_in_normal({d, d}, rng, p + ".out_w");
    b.out_b = init::zeros({d}, p + ".out_b");
    b.ln2_g = init::constant({d}, 1.0, p + ".ln2_g");
    b.ln2_b = init::zeros({d}, p + ".ln2_b");
    b.ff1_w = init::fan_in_normal({d, f}, rng, p + ".ff1_w");
    b.ff1_b = init::zeros({f}, p + ".ff1_b");
    b.ff2_w = init::fan_in_normal({f, d}, rng, p + ".ff2_w");
    b.ff2_b = init::zeros({d}, p + ".ff2_b");
    lm.blocks.push_back(std::move(b));
  }
  lm.lnf_g = init::constant({d}, 1.0, prefix + ".lnf_g");
  lm.lnf_b = init::zeros({d}, prefix + ".lnf_b");
  lm.head_w = init::fan_in_normal({d, config.vocab_size}, rng, prefix + ".head_w");
  lm.head_b = init::zeros({config.vocab_size}, prefix + ".head_b");
  return lm;
}

std::vector<SequenceLayout> LmBatch::layouts() const {
  if (audio_frames.size() != prompts.size() || targets.size() != prompts.size()) {
    throw ContractError("LM batch has " + std::to_string(prompts.size()) + " prompts, " +
                        std::to_string(audio_frames.size()) + " audio spans and " + std::to_string(targets.size()) +
                        " targets");
  }
  std::vector<SequenceLayout> out;
  for (std::size_t b = 0; b < prompts.size(); ++b) out.push_back({prompts[b].size(), audio_frames[b], targets[b].size()});
  return out;
}

namespace {

ag::Tensor block_forward(const DecoderBlock& b, const ag::Tensor& x, std::span<const ag::Span> spans,
                         std::size_t heads) {
  auto h = ag::layer_norm(x, b.ln1_g, b.ln1_b);
  auto qkv = ag::add_bias(ag::matmul(h, b.qkv_w), b.qkv_b);
  auto attn = ag::causal_attention(qkv, spans, heads);
  auto x1 = ag::add(x, ag::add_bias(ag::matmul(attn, b.out_w), b.out_b));
  auto h2 = ag::layer_norm(x1, b.ln2_g, b.ln2_b);
  auto ff = ag::add_bias(ag::matmul(ag::gelu(ag::add_bias(ag::matmul(h2, b.ff1_w), b.ff1_b)), b.ff2_w), b.ff2_b);
  return ag::add(x1, ff);
}

}  // namespace

LmOutput lm_forward(const TinyLM& lm, const LmBatch& batch) {
  LmOutput out;
  out.layouts = batch.layouts();
  if (out.layouts.empty()) throw ContractError("LM batch is empty");
  const auto& cfg = lm.config;

  std::size_t audio_total = 0;
  for (auto a : batch.audio_frames) audio_total += a;
  if (audio_total > 0) {
    if (!batch.audio.defined() || batch.audio.rank() != 2 || batch.audio.rows() != audio_total ||
        batch.audio.cols() != cfg.model_dim) {
      throw ContractError("audio rows " + (batch.audio.defined() ? ag::to_string(batch.audio.shape()) : "[]") +
                          " do not match layout total " + std::to_string(audio_total) + " x " +
                          std::to_string(cfg.model_dim));
    }
  }

  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> source;  // packed row -> row of [token rows ; audio rows]
  std::vector<std::size_t> positions;
  std::vector<ag::Span> spans;
  std::size_t token_count = 0;
  for (const auto& b : batch.prompts) token_count += b.size();
  for (const auto& t : batch.targets) token_count += t.empty() ? 0 : t.size() - 1;

  auto push_token = [&](int id) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(cfg.vocab_size));
    }
    source.push_back(token_ids.size());
    token_ids.push_back(static_cast<std::size_t>(id));
  };

  std::size_t audio_row = 0;
  for (std::size_t b = 0; b < out.layouts.size(); ++b) {
    const auto& lay = out.layouts[b];
    if (lay.prompt + lay.audio == 0) throw ContractError("sequence " + std::to_string(b) + " has no prompt or audio");
    if (lay.input_rows() > cfg.max_positions) {
      throw ContractError("sequence " + std::to_string(b) + " needs " + std::to_string(lay.input_rows()) +
                          " positions, model has " + std::to_string(cfg.max_positions));
    }
    out.offsets.push_back(source.size());
    spans.push_back({source.size(), lay.input_rows()});
    for (int id : batch.prompts[b]) push_token(id);
    for (std::size_t t = 0; t < lay.audio; ++t) source.push_back(token_count + audio_row++);
    const auto& tgt = batch.targets[b];
    for (std::size_t i = 0; i + 1 < tgt.size(); ++i) push_token(tgt[i]);
    for (std::size_t p = 0; p < lay.input_rows(); ++p) positions.push_back(p);
  }

  std::vector<ag::Tensor> parts;
  if (!token_ids.empty()) parts.push_back(ag::take_rows(lm.tok_emb, token_ids));
  if (audio_total > 0) parts.push_back(batch.audio);
  auto rows = parts.size() == 1 ? parts.front() : ag::concat_rows(parts);
  auto x = ag::add(ag::take_rows(rows, source), ag::take_rows(lm.pos_emb, positions));

  for (const auto& blk : lm.blocks) x = block_forward(blk, x, spans, cfg.num_heads);
  out.hidden = ag::layer_norm(x, lm.lnf_g, lm.lnf_b);

  std::vector<std::size_t> predict;
  for (std::size_t b = 0; b < out.layouts.size(); ++b) {
    const auto& lay = out.layouts[b];
    for (std::size_t i = 0; i < lay.target; ++i) predict.push_back(out.offsets[b] + lay.first_prediction_row() + i);
  }
  if (!predict.empty()) {
    out.logits = ag::add_bias(ag::matmul(ag::take_rows(out.hidden, predict), lm.head_w), lm.head_b);
  }
  return out;
}

ag::Tensor lm_loss(const ag::Tensor& logits, const std::vector<std::vector<int>>& targets) {
  std::vector<int> flat;
  for (const auto& t : targets) flat.insert(flat.end(), t.begin(), t.end());
  if (flat.empty()) throw ContractError("lm_loss: empty target span");
  if (!logits.defined() || logits.rank() != 2 || logits.rows() != flat.size()) {
    throw ContractError("lm_loss: " + std::to_string(flat.size()) + " targets for logits " +
                        (logits.defined() ? ag::to_string(logits.shape()) : std::string("[]")));
  }
  return ag::cross_entropy(logits, flat);
}

std::vector<std::vector<int>> greedy_decode(const TinyLM& lm, const LmBatch& batch, std::size_t max_len, int eos) {
  if (max_len == 0) throw ContractError("greedy_decode: max_len must be at least 1");
  ag::NoGradGuard guard;
  LmBatch work = batch;
  const std::size_t n = batch.prompts.size();
  work.targets.assign(n, {});
  std::vector<std::vector<int>> generated(n);
  std::vector<bool> done(n, false);
  for (std::size_t step = 0; step < max_len; ++step) {
    for (std::size_t b = 0; b < n; ++b) {
      work.targets[b] = generated[b];
      work.targets[b].push_back(0);  // placeholder; the last target is never fed
    }
    const auto out = lm_forward(lm, work);
    const auto next = ag::argmax_rows(out.logits);
    std::size_t row = 0;
    bool all_done = true;
    for (std::size_t b = 0; b < n; ++b) {
      row += work.targets[b].size();
      if (!done[b]) {
        const int tok = static_cast<int>(next[row - 1]);
        generated[b].push_back(tok);
        done[b] = tok == eos;
      }
      all_done = all_done && done[b];
    }
    if (all_done) break;
  }
  return generated;
}

}  // namespace pam
