#include "pam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "pam/errors.hpp"

namespace pam {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'M', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kMaxRank = 8;

using Kind = CheckpointError::Kind;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::string& buffer() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}

  std::size_t remaining() const { return end_ - pos_; }
  void skip(std::size_t n) {
    need(n, "header");
    pos_ += n;
  }
  void need(std::uint64_t n, const char* what) const {
    if (n > remaining()) {
      throw CheckpointError(Kind::kCorrupt, std::string("checkpoint truncated while reading ") + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const char* what) {
    const auto n = u64(what);
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void copy_into(ag::Tensor& t, const NamedArray& a) {
  if (a.shape != t.shape()) {
    throw CheckpointError(Kind::kShape, "array '" + a.name + "' has shape " + ag::to_string(a.shape) +
                                            ", the config implies " + ag::to_string(t.shape()));
  }
  auto dst = t.mutable_data();
  std::copy(a.data.begin(), a.data.end(), dst.begin());
}

std::vector<std::pair<std::string, ag::Tensor>> bank_arrays(const std::vector<EncoderSpec>& bank) {
  std::vector<std::pair<std::string, ag::Tensor>> out;
  for (const auto& spec : bank) {
    const std::string p = "enc" + std::to_string(spec.encoder_id);
    for (std::size_t l = 0; l < spec.planted_subspaces.size(); ++l) {
      out.emplace_back("enc." + p + ".U" + std::to_string(l), spec.planted_subspaces[l]);
      out.emplace_back("enc." + p + ".A" + std::to_string(l), spec.layer_maps[l]);
    }
  }
  return out;
}

NamedArray to_array(const std::string& name, const ag::Tensor& t) {
  const auto v = t.data();
  return {name, t.shape(), std::vector<double>(v.begin(), v.end())};
}

}  // namespace

std::string encode_checkpoint(const CheckpointFile& file) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(file.version);
  w.u64(file.fingerprint);
  w.str(file.config_json);
  w.u64(file.step);
  w.str(file.rng_state);
  w.u64(file.arrays.size());
  for (const auto& a : file.arrays) {
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) w.u64(d);
    for (double v : a.data) w.f64(v);
  }
  const auto sum = fnv1a(w.buffer().data(), w.buffer().size());
  w.u64(sum);
  return std::move(w.buffer());
}

CheckpointFile decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 8) throw CheckpointError(Kind::kCorrupt, "checkpoint is too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(Kind::kCorrupt, "not a checkpoint file (bad magic)");
  }
  CheckpointFile f;
  Reader r(bytes, bytes.size() - 8);
  r.skip(sizeof kMagic);
  f.version = r.u32("version");
  if (f.version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersion, "checkpoint version " + std::to_string(f.version) + " is not supported (expected " +
                                              std::to_string(kCheckpointVersion) + ")");
  }
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) {
    stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[bytes.size() - 8 + i])) << (8 * i);
  }
  if (stored != fnv1a(bytes.data(), bytes.size() - 8)) {
    throw CheckpointError(Kind::kCorrupt, "checkpoint checksum mismatch");
  }
  f.fingerprint = r.u64("fingerprint");
  f.config_json = r.str("config");
  f.step = r.u64("step");
  f.rng_state = r.str("rng state");
  const auto count = r.u64("array count");
  std::set<std::string> names;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.str("array name");
    if (!names.insert(a.name).second) throw CheckpointError(Kind::kCorrupt, "duplicate array '" + a.name + "'");
    const auto rank = r.u32("array rank");
    if (rank == 0 || rank > kMaxRank) {
      throw CheckpointError(Kind::kCorrupt, "array '" + a.name + "' has invalid rank " + std::to_string(rank));
    }
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.u64("array dims");
      if (d == 0 || n > r.remaining() / 8 / d) {
        throw CheckpointError(Kind::kCorrupt, "array '" + a.name + "' has an impossible shape");
      }
      n *= d;
      a.shape.push_back(static_cast<std::size_t>(d));
    }
    r.need(n * 8, "array payload");
    a.data.resize(n);
    for (auto& v : a.data) v = r.f64("array payload");
    f.arrays.push_back(std::move(a));
  }
  if (r.remaining() != 0) throw CheckpointError(Kind::kCorrupt, "trailing bytes after the last array");
  return f;
}

CheckpointFile snapshot(const TrainState& state) {
  CheckpointFile f;
  f.fingerprint = fingerprint(state.config);
  f.config_json = canonical_json(state.config);
  f.step = state.step;
  f.rng_state = rng_text(state.rng);
  for (const auto& p : state.model.parameters()) f.arrays.push_back(to_array(p.name(), p));
  for (const auto& [name, t] : bank_arrays(state.model.bank)) f.arrays.push_back(to_array(name, t));
  for (const auto& [name, m] : state.optimizer.moments()) {
    f.arrays.push_back({"opt.m." + name, {m.first.size()}, m.first});
    f.arrays.push_back({"opt.v." + name, {m.second.size()}, m.second});
  }
  return f;
}

TrainState restore(const CheckpointFile& file) {
  RunConfig config;
  try {
    config = config_from_json(nlohmann::json::parse(file.config_json));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("embedded config is not valid JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("embedded config is invalid: ") + e.what());
  }
  if (fingerprint(config) != file.fingerprint || canonical_json(config) != file.config_json) {
    throw CheckpointError(Kind::kFingerprint, "checkpoint fingerprint does not match its embedded config");
  }

  TrainState state = init_state(config);
  state.step = file.step;
  std::istringstream rs(file.rng_state);
  rs >> state.rng;
  if (rs.fail()) throw CheckpointError(Kind::kCorrupt, "checkpoint RNG state is unreadable");

  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : file.arrays) by_name[a.name] = &a;
  std::set<std::string> used;

  auto params = state.model.parameters();
  for (auto& p : params) {
    auto it = by_name.find(p.name());
    if (it == by_name.end()) throw CheckpointError(Kind::kShape, "checkpoint lacks array '" + p.name() + "'");
    copy_into(p, *it->second);
    used.insert(p.name());
  }
  for (const auto& [name, t] : bank_arrays(state.model.bank)) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError(Kind::kShape, "checkpoint lacks array '" + name + "'");
    if (it->second->shape != t.shape()) {
      throw CheckpointError(Kind::kShape, "array '" + name + "' has shape " + ag::to_string(it->second->shape) +
                                              ", the config implies " + ag::to_string(t.shape()));
    }
    const auto v = t.data();
    if (!std::equal(v.begin(), v.end(), it->second->data.begin())) {
      throw CheckpointError(Kind::kCorrupt, "frozen encoder array '" + name + "' differs from the configured bank");
    }
    used.insert(name);
  }
  std::map<std::string, ag::Adam::Moments> moments;
  for (const auto& p : params) {
    auto m = by_name.find("opt.m." + p.name());
    auto v = by_name.find("opt.v." + p.name());
    if (m == by_name.end() && v == by_name.end()) continue;
    if (m == by_name.end() || v == by_name.end()) {
      throw CheckpointError(Kind::kCorrupt, "incomplete optimizer state for '" + p.name() + "'");
    }
    const ag::Shape flat{p.numel()};
    if (m->second->shape != flat || v->second->shape != flat) {
      throw CheckpointError(Kind::kShape, "optimizer state for '" + p.name() + "' does not match its parameter");
    }
    moments[p.name()] = {m->second->data, v->second->data};
    used.insert(m->first);
    used.insert(v->first);
  }
  for (const auto& a : file.arrays) {
    if (!used.count(a.name)) throw CheckpointError(Kind::kCorrupt, "unexpected array '" + a.name + "'");
  }
  state.optimizer.restore(file.step, std::move(moments));
  return state;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::kIo, "cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::kIo, "write to '" + path + "' failed");
}

void save_checkpoint(const TrainState& state, const std::string& path) {
  write_file(path, encode_checkpoint(snapshot(state)));
}

TrainState load_checkpoint(const std::string& path) { return restore(decode_checkpoint(read_file(path))); }

TrainState load_checkpoint(const std::string& path, std::uint64_t expected_fingerprint) {
  const auto file = decode_checkpoint(read_file(path));
  if (file.fingerprint != expected_fingerprint) {
    throw CheckpointError(Kind::kFingerprint, "checkpoint was written for a different config");
  }
  return restore(file);
}

}  // namespace pam
