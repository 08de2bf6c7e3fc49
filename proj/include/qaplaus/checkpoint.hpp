#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "qaplaus/model.hpp"

namespace qaplaus {

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::uint64_t vocab_fingerprint = 0;
};

// Layout: 8-byte magic "QAPCKPT1", little-endian u64 header length, a JSON
// header (config, vocabulary fingerprint, tensor names and shapes), then
// every tensor's doubles in declaration order, little-endian.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace qaplaus
