#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qreform/beam.hpp"
#include "qreform/corpus.hpp"
#include "qreform/decoder.hpp"
#include "qreform/encoder.hpp"
#include "qreform/ranker.hpp"

namespace qreform {

struct ModelDims {
  std::size_t embedding = 32;
  std::size_t query_hidden = 16;  // per direction
  std::size_t attention = 16;
  std::size_t session_hidden = 64;
  std::size_t decoder_hidden = 32;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

enum class RankerMode { Off, CrossEntropy, Pairwise };

/// Every trainable tensor of the reformulator plus the frozen copy of the
/// initial embedding table that the embedding-based metrics read.
struct Model {
  ModelDims dims;
  Parameter embeddings;
  QueryEncoder query_encoder;
  SessionEncoder session_encoder;
  Decoder decoder;
  Ranker ranker;
  Tensor metric_embeddings;

  /// Embeddings come from init_embeddings(seed); the remaining weights are
  /// drawn from a generator seeded with `seed` + 1.
  static Model create(const Vocabulary& vocab, const ModelDims& dims, const std::string& pretrained_path,
                      std::uint64_t seed);

  std::size_t vocab_size() const { return embeddings.value.rows(); }
  /// All trainable parameters in a fixed order; names are unique.
  std::vector<Parameter*> params();
  void zero_grad();
};

/// The model's parameters bound into one graph.
struct BoundModel {
  Graph* graph = nullptr;
  Parameter* embeddings = nullptr;
  QueryEncoderVars query_encoder;
  SessionEncoderVars session_encoder;
  DecoderVars decoder;
  RankerVars ranker;
};

BoundModel bind(Graph& g, Model& model);

struct LossConfig {
  Regime regime = Regime::NextQuery;
  RankerMode ranker = RankerMode::Off;
  ReformLossOptions reform;
};

/// Loss pieces of one encoded session. Empty optionals mean no term.
struct SessionLoss {
  std::optional<Var> reform;  // sum over the session's generation examples
  std::size_t reform_examples = 0;
  std::optional<Var> rank;    // sum over clicked queries of the ranking loss
  std::size_t queries = 0;    // every query of the session, clicked or not
};

SessionLoss session_loss(BoundModel& model, const SessionRecord& session, const LossConfig& config);

enum class Reduction { Sum, Mean };

/// Objective over a group of sessions:
///   ranker off: R
///   ranker on:  alpha * R + (1 - alpha) * (sum of ranking losses / queries)
/// where R is the summed generation loss (divided by the number of
/// generation examples under Reduction::Mean).
Var batch_objective(Graph& g, const std::vector<SessionLoss>& parts, RankerMode ranker, double alpha,
                    Reduction reduction);

/// V_q and V_S for every prefix of a session.
struct SessionEncodings {
  std::vector<Var> query_vectors;
  std::vector<Var> session_vectors;
};

SessionEncodings encode_prefixes(BoundModel& model, const SessionRecord& session);

/// Ranker scores of one query's impressions, in the stored impression order.
std::vector<double> rank_scores(BoundModel& model, Var query_vector, Var session_vector, const QueryEvent& query);

}  // namespace qreform
