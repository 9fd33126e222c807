#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qreform/corpus.hpp"
#include "qreform/stopwords.hpp"
#include "qreform/tensor.hpp"

namespace qreform {

using Phrase = std::vector<TokenId>;

/// Sentence-level BLEU x 100. N-gram orders up to min(4, |candidate|); the
/// unigram precision is unsmoothed, higher orders use (matches+1)/(total+1);
/// standard brevity penalty. Empty candidate scores 0. Throws on an empty
/// reference.
double bleu(std::span<const TokenId> candidate, std::span<const TokenId> reference);

/// Per dimension, the word value with the largest magnitude (sign kept,
/// first word wins ties). Zero vector for an empty phrase.
std::vector<double> vector_extrema(std::span<const TokenId> phrase, const Tensor& embeddings);

/// Cosine between vector-extrema phrase embeddings; 0 if either is empty.
double sim_emb(std::span<const TokenId> a, std::span<const TokenId> b, const Tensor& embeddings);

/// Mean of 1/rank over queries; ranks are 1-based positions of the first
/// clicked result. Throws on an empty list or a rank below 1.
double mrr(std::span<const std::size_t> first_click_ranks);

/// 1-based rank of the first clicked item when items are ordered by
/// descending score (ties keep the original order). Throws if nothing is clicked.
std::size_t first_click_rank(std::span<const double> scores, const std::vector<bool>& clicked);

/// 1 - mean over ordered pairs i != j of sim_emb(r_i, r_j). Needs K >= 2.
double diversity(const std::vector<Phrase>& candidates, const Tensor& embeddings);

struct Descriptiveness {
  std::size_t generated = 0;  // tokens left after stopword removal
  std::size_t novel = 0;      // distinct generated words absent from the source
  std::size_t dropped = 0;    // distinct source words absent from the output
  /// Mean embedding cosine over (novel, dropped) pairs; empty when either set is.
  std::optional<double> insert_drop_similarity;
};

Descriptiveness descriptiveness(std::span<const TokenId> source, std::span<const TokenId> generated,
                                const std::vector<bool>& is_stopword, const Tensor& embeddings);

/// Marks vocabulary ids whose word is in `stopwords`.
std::vector<bool> stopword_mask(const Vocabulary& vocab, const StopwordSet& stopwords);

/// Evaluation summary. Optional entries are absent when undefined (no ranker,
/// K < 2, no defined insert/drop pairs).
struct EvalReport {
  std::size_t beam_width = 0;
  std::size_t queries = 0;            // queries with a next query (relevance set)
  std::size_t ranked_queries = 0;     // queries with at least one click
  double bleu_pct = 0.0;
  double sim_emb_pct = 0.0;
  std::optional<double> diversity;
  std::optional<double> mrr;
  double avg_generated_words = 0.0;
  double avg_novel_words = 0.0;
  double avg_dropped_words = 0.0;
  std::optional<double> avg_insert_drop_similarity;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Flat "key = value" lines; absent optionals are written as "na".
std::string to_key_value(const EvalReport& report);
std::string to_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::string& path_prefix);

struct RunAggregate {
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t runs = 0;
};

/// Mean and sample standard deviation of each metric across seeded runs.
std::vector<RunAggregate> aggregate_runs(const std::vector<EvalReport>& runs);

}  // namespace qreform
