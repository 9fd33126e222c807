#include "qreform/ranker.hpp"

#include <cmath>

#include "qreform/error.hpp"

namespace qreform {

Ranker Ranker::create(std::size_t input_dim, std::size_t embedding_dim, Rng& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(input_dim));
  Tensor W({embedding_dim, input_dim});
  for (double& v : W.data()) v = rng.uniform(-k, k);
  return Ranker{Parameter("ranker.proj_W", std::move(W)), Parameter("ranker.proj_b", Tensor({embedding_dim}))};
}

RankerVars bind(Graph& g, Ranker& ranker) { return RankerVars{g.param(ranker.proj_W), g.param(ranker.proj_b)}; }

Var image_repr(Graph& g, Parameter& embeddings, std::span<const TokenId> caption) {
  std::vector<Var> rows;
  for (TokenId t : caption) {
    if (t != kPad) rows.push_back(ad::embedding_lookup(g, embeddings, t));
  }
  if (rows.empty()) return g.constant(Tensor({embeddings.value.cols()}));
  return ad::divide(ad::add_n(rows), static_cast<double>(rows.size()));
}

Var score_impressions(const RankerVars& ranker, Var query_vector, Var session_vector, std::span<const Var> captions) {
  if (captions.empty()) throw UsageError("score_impressions: no captions");
  Var projected = ad::affine(ad::concat(query_vector, session_vector), ranker.proj_W, ranker.proj_b);
  std::vector<Var> scores;
  scores.reserve(captions.size());
  for (Var c : captions) {
    if (c.value().size() != projected.value().size()) {
      throw UsageError("score_impressions: caption representation has " + std::to_string(c.value().size()) +
                       " dims, ranker projects to " + std::to_string(projected.value().size()));
    }
    scores.push_back(ad::cosine(projected, c));
  }
  return ad::concat(scores);
}

Var ce_rank_loss(Var scores, const std::vector<bool>& clicked) {
  const std::size_t m = scores.value().size();
  if (clicked.size() != m) throw UsageError("ce_rank_loss: label count does not match scores");
  // log(1 - sigmoid(s)) = log sigmoid(-s)
  Tensor signs({m});
  for (std::size_t j = 0; j < m; ++j) signs[j] = clicked[j] ? 1.0 : -1.0;
  Graph& g = *scores.graph;
  Var signed_scores = ad::mul(scores, g.constant(std::move(signs)));
  return ad::scale(ad::sum(ad::log_sigmoid(signed_scores)), -1.0 / static_cast<double>(m));
}

Var pairwise_rank_loss(Var scores, const std::vector<bool>& clicked) {
  const std::size_t m = scores.value().size();
  if (clicked.size() != m) throw UsageError("pairwise_rank_loss: label count does not match scores");
  Graph& g = *scores.graph;
  // One row per ordered pair (j, k) with exactly one click. For M_jk = 1 the
  // term is log sigmoid(S_j - S_k); for M_jk = 0 it is log sigmoid(S_k - S_j).
  // Either way: log sigmoid(S_clicked - S_unclicked).
  std::vector<double> rows;
  std::size_t n_pairs = 0;
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k < m; ++k) {
      if (j == k || clicked[j] == clicked[k]) continue;
      const std::size_t pos = clicked[j] ? j : k;
      const std::size_t neg = clicked[j] ? k : j;
      std::vector<double> row(m, 0.0);
      row[pos] = 1.0;
      row[neg] = -1.0;
      rows.insert(rows.end(), row.begin(), row.end());
      ++n_pairs;
    }
  }
  if (n_pairs == 0) return g.constant(Tensor({1}));
  Var diffs = ad::matvec(g.constant(Tensor::matrix(n_pairs, m, std::move(rows))), scores);
  return ad::scale(ad::sum(ad::log_sigmoid(diffs)), -1.0 / static_cast<double>(m * m));
}

Var multitask_loss(Var reform, Var rank, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("multitask_loss: alpha must lie in [0, 1]");
  return ad::add(ad::scale(reform, alpha), ad::scale(rank, 1.0 - alpha));
}

}  // namespace qreform
