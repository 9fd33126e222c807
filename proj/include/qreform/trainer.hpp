#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "qreform/config.hpp"
#include "qreform/metrics.hpp"
#include "qreform/model.hpp"
#include "qreform/optim.hpp"

namespace qreform {

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean batch objective over the epoch
  double validation_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_validation_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

/// Validation-based stopping rule. `patience` consecutive epochs without a
/// new best end training; patience 0 behaves like 1.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(std::max<std::size_t>(patience, 1)) {}
  /// Records one epoch's validation loss; returns true when training should stop.
  bool update(double validation_loss);
  /// True when the last update set a new best.
  bool improved() const { return improved_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t bad_epochs_ = 0;
  bool improved_ = false;
  double best_ = std::numeric_limits<double>::infinity();
};

struct TrainOptions {
  /// Appended with one "epoch train_loss validation_loss" line per epoch when set.
  std::string log_path;
  /// Called after every epoch; returning false stops training.
  std::function<bool(const EpochLog&)> on_epoch;
};

/// Objective of a whole split with the same formula as a training batch,
/// evaluated without recording gradients.
double dataset_loss(Model& model, const std::vector<SessionRecord>& sessions, const RunConfig& config);

/// Mini-batch Adam over shuffled whole sessions with validation-based early
/// stopping: training stops once `patience` consecutive epochs fail to improve
/// the best validation loss (patience 0 behaves like 1), or after max_epochs.
/// The best-validation parameters are restored before returning.
/// Throws NumericError on a non-finite batch loss.
TrainResult train(Model& model, AdamState& optimizer, const RunConfig& config,
                  const std::vector<SessionRecord>& train_sessions,
                  const std::vector<SessionRecord>& validation_sessions, const TrainOptions& options = {});

// ---- inference ------------------------------------------------------------

struct QueryCandidates {
  std::string session_id;
  std::size_t query_index = 0;
  std::vector<Hypothesis> candidates;
};

/// Beam candidates for every query of every session, in input order.
std::vector<QueryCandidates> generate(Model& model, const std::vector<SessionRecord>& sessions,
                                      const BeamConfig& beam);

struct EvalOptions {
  BeamConfig beam;
  bool top1 = false;
  bool with_ranker = true;
  std::vector<bool> stopwords;  // indexed by token id
};

/// Relevance metrics (oracle-best over the beam, or top-1) against the next
/// query on every query that has one; descriptiveness of the top candidate
/// on the same queries; diversity over the K-set when K >= 2; MRR of the
/// ranker ordering over queries with a click. Throws UsageError when no
/// session contributes a query.
EvalReport evaluate_model(Model& model, const std::vector<SessionRecord>& sessions, const EvalOptions& options);

EvalOptions eval_options(const RunConfig& config, const Vocabulary& vocab);

}  // namespace qreform
