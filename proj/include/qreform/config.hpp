#pragma once

#include <cstdint>
#include <string>

#include "qreform/corpus.hpp"
#include "qreform/decoder.hpp"
#include "qreform/model.hpp"

namespace qreform {

/// Everything a run needs. Parsed from a plain "key = value" file; see
/// README for the key list. Defaults are the desk-scale profile.
struct RunConfig {
  Regime regime = Regime::NextQuery;
  RankerMode ranker = RankerMode::Off;
  double alpha = 0.45;
  double lambda = 0.1;
  EntropyMode entropy = EntropyMode::Reward;
  Reduction reduction = Reduction::Sum;

  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 30;
  std::size_t patience = 3;

  ModelDims dims;
  std::size_t vocab_max = 500;

  std::size_t beam_width = 3;
  bool length_normalize = false;
  /// Score only the top beam candidate instead of the best of K.
  bool top1 = false;

  /// Model initialization and batch order.
  std::uint64_t seed = 1;
  /// Train/validation/test partition.
  std::uint64_t split_seed = 1;
  SynthConfig synth;

  std::string pretrained_path;
  std::string stopwords_path;

  std::size_t grad_check_coordinates = 200;
  /// Test hook for grad-check: offset added to one analytic gradient entry.
  double debug_corrupt_gradient = 0.0;

  LossConfig loss() const { return LossConfig{regime, ranker, ReformLossOptions{lambda, entropy}}; }
  BeamConfig beam() const { return BeamConfig{beam_width, kTargetLen, length_normalize}; }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Desk-scale defaults.
RunConfig desk_profile();
/// Sizes of the original full-scale setup (300-d embeddings, 512-d session
/// state, batches of 512).
RunConfig paper_profile();

/// Parses "key = value" lines; '#' starts a comment. A `profile` key (desk or
/// paper) is applied before every other key regardless of its position.
/// Unknown keys and malformed values raise UsageError naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
/// Canonical text form; parse_config(to_text(c)) == c.
std::string to_text(const RunConfig& config);

/// Raises UsageError unless alpha is in [0, 1], dims/batch/beam are >= 1,
/// lr > 0 and lambda >= 0.
void validate(const RunConfig& config);

std::string to_string(Regime regime);
std::string to_string(RankerMode mode);

}  // namespace qreform
