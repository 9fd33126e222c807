#pragma once

#include <span>
#include <vector>

#include "qreform/corpus.hpp"
#include "qreform/graph.hpp"
#include "qreform/rng.hpp"

namespace qreform {

/// Affine map from [V_q ; V_S] into the embedding space, where captions live.
struct Ranker {
  Parameter proj_W;  // emb x (query + session)
  Parameter proj_b;

  static Ranker create(std::size_t input_dim, std::size_t embedding_dim, Rng& rng);
  std::vector<Parameter*> params() { return {&proj_W, &proj_b}; }
};

struct RankerVars {
  Var proj_W, proj_b;
};

RankerVars bind(Graph& g, Ranker& ranker);

/// Mean embedding of the non-PAD caption tokens; zeros for an all-PAD caption.
Var image_repr(Graph& g, Parameter& embeddings, std::span<const TokenId> caption);

/// S_i^j = cos(W [V_q ; V_S] + b, C_i^j) for every caption representation.
Var score_impressions(const RankerVars& ranker, Var query_vector, Var session_vector, std::span<const Var> captions);

/// Mean over impressions of BCE(sigmoid(S_j), R_j).
Var ce_rank_loss(Var scores, const std::vector<bool>& clicked);

/// -(1/m^2) sum over ordered pairs (j, k) with exactly one click of
/// M log sigmoid(S_j - S_k) + (1 - M) log(1 - sigmoid(S_j - S_k)).
/// A query without both clicked and unclicked results contributes 0.
Var pairwise_rank_loss(Var scores, const std::vector<bool>& clicked);

/// alpha * reform + (1 - alpha) * rank; alpha must lie in [0, 1].
Var multitask_loss(Var reform, Var rank, double alpha);

}  // namespace qreform
