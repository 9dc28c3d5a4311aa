#pragma once

#include <cstdint>
#include <string>

#include "kalm/model.hpp"

namespace kalm {

// Versioned binary checkpoint: magic, JSON header (hyperparameters, vocab
// hash, epoch, RNG seed, tensor manifest), then little-endian float64
// payload. Saving then loading reproduces byte-identical files.
struct Checkpoint {
  ModelParams params;
  uint64_t vocab_hash = 0;
  uint64_t seed = 0;
  size_t epoch = 0;

  // Atomic: writes to a temp file, then renames.
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
  // Throws DataError if the checkpoint's vocabulary hash differs.
  static Checkpoint load(const std::string& path, uint64_t expected_vocab_hash);
};

}  // namespace kalm
