#pragma once

#include <limits>
#include <string>

#include "qreform/config.hpp"
#include "qreform/model.hpp"
#include "qreform/optim.hpp"

namespace qreform {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  Vocabulary vocab;
  Model model;
  AdamState optimizer;
  std::size_t epoch = 0;
  double best_validation_loss = std::numeric_limits<double>::infinity();
};

/// Layout: a text header (magic, version, config, vocabulary, tensor table)
/// followed by the tensors as little-endian IEEE doubles, in table order.
/// The header carries the payload size and an FNV-1a checksum of it.
void save_checkpoint(const std::string& path, Checkpoint& ckpt);

/// Rebuilds the model from the stored config and vocabulary, then overwrites
/// every tensor. Any structural mismatch, truncation or checksum failure
/// raises DataError.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace qreform
