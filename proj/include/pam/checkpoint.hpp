#pragma once
// Binary checkpoint container. All integers and floats are little-endian.
//
//   magic      8 bytes  "PAMCKPT\0"
//   version    u32
//   fingerprint u64     FNV-1a of the canonical config JSON
//   config     u64 length + UTF-8 JSON
//   step       u64
//   rng        u64 length + text state of the sampler
//   count      u64 number of arrays
//   arrays     count x { u64 name length, name, u32 rank, rank x u64 dims, f64 payload }
//   checksum   u64      FNV-1a of every preceding byte
//
// Arrays hold every trainable tensor under its parameter name, the frozen
// encoder bank under "enc.*", and Adam moments under "opt.m.*" / "opt.v.*".
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pam/tensor.hpp"
#include "pam/train.hpp"

namespace pam {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  ag::Shape shape;
  std::vector<double> data;
};

struct CheckpointFile {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t fingerprint = 0;
  std::string config_json;
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<NamedArray> arrays;
};

std::string encode_checkpoint(const CheckpointFile& file);
/// Parses and validates the container; throws CheckpointError.
CheckpointFile decode_checkpoint(const std::string& bytes);

CheckpointFile snapshot(const TrainState& state);
/// Rebuilds a training state. Every array must be present with the shape the
/// config implies; the fingerprint must match the embedded config.
TrainState restore(const CheckpointFile& file);

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);
/// Also rejects a checkpoint whose fingerprint differs from `expected`.
TrainState load_checkpoint(const std::string& path, std::uint64_t expected_fingerprint);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace pam
