#pragma once

#include <string>
#include <vector>

#include "qreform/checkpoint.hpp"
#include "qreform/config.hpp"
#include "qreform/optim.hpp"
#include "qreform/trainer.hpp"

namespace qreform {

/// Splits, a vocabulary built from the training split only, and every split
/// encoded against it.
struct PreparedData {
  Vocabulary vocab;
  DatasetSplits splits;
};

PreparedData prepare_data(std::vector<SessionRecord> sessions, const RunConfig& config);

struct LossCheck {
  std::string name;
  GradCheckResult result;
};

/// Finite-difference check of every training objective (generation loss with
/// both entropy signs, cross-entropy ranking, pairwise ranking, multitask)
/// on a small synthetic corpus built from `config` (dims, synth_* keys, seed).
std::vector<LossCheck> run_grad_checks(const RunConfig& config);

}  // namespace qreform
