#include "qreform/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "qreform/error.hpp"

namespace qreform {
namespace {

double cosine_values(std::span<const double> u, std::span<const double> v) {
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) return 0.0;
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

std::map<std::vector<TokenId>, std::size_t> ngram_counts(std::span<const TokenId> tokens, std::size_t n) {
  std::map<std::vector<TokenId>, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[std::vector<TokenId>(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

void check_table(const Tensor& embeddings) {
  if (embeddings.rank() != 2) throw UsageError("metrics: embedding table must be a matrix");
}

}  // namespace

double bleu(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
  if (reference.empty()) throw UsageError("bleu: empty reference");
  if (candidate.empty()) return 0.0;
  const std::size_t max_n = std::min<std::size_t>(4, candidate.size());
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    std::size_t matches = 0, total = 0;
    for (const auto& [gram, count] : cand) {
      total += count;
      auto it = ref.find(gram);
      if (it != ref.end()) matches += std::min(count, it->second);
    }
    double precision = 0.0;
    if (n == 1) {
      if (matches == 0) return 0.0;
      precision = static_cast<double>(matches) / static_cast<double>(total);
    } else {
      precision = static_cast<double>(matches + 1) / static_cast<double>(total + 1);
    }
    log_sum += std::log(precision);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double brevity = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * brevity * std::exp(log_sum / static_cast<double>(max_n));
}

std::vector<double> vector_extrema(std::span<const TokenId> phrase, const Tensor& embeddings) {
  check_table(embeddings);
  std::vector<double> out(embeddings.cols(), 0.0);
  bool first = true;
  for (TokenId t : phrase) {
    if (t >= embeddings.rows()) throw UsageError("vector_extrema: token outside embedding table");
    auto row = embeddings.row(t);
    for (std::size_t j = 0; j < out.size(); ++j) {
      if (first || std::abs(row[j]) > std::abs(out[j])) out[j] = row[j];
    }
    first = false;
  }
  return out;
}

double sim_emb(std::span<const TokenId> a, std::span<const TokenId> b, const Tensor& embeddings) {
  if (a.empty() || b.empty()) return 0.0;
  const std::vector<double> ea = vector_extrema(a, embeddings);
  const std::vector<double> eb = vector_extrema(b, embeddings);
  return cosine_values(ea, eb);
}

double mrr(std::span<const std::size_t> first_click_ranks) {
  if (first_click_ranks.empty()) throw UsageError("mrr: no ranked queries");
  double total = 0.0;
  for (std::size_t r : first_click_ranks) {
    if (r < 1) throw UsageError("mrr: ranks are 1-based");
    total += 1.0 / static_cast<double>(r);
  }
  return total / static_cast<double>(first_click_ranks.size());
}

std::size_t first_click_rank(std::span<const double> scores, const std::vector<bool>& clicked) {
  if (clicked.size() != scores.size()) throw UsageError("first_click_rank: label count mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    if (clicked[order[pos]]) return pos + 1;
  }
  throw UsageError("first_click_rank: query has no click");
}

double diversity(const std::vector<Phrase>& candidates, const Tensor& embeddings) {
  const std::size_t k = candidates.size();
  if (k < 2) throw UsageError("diversity: needs at least 2 candidates");
  std::vector<std::vector<double>> extrema;
  for (const Phrase& p : candidates) extrema.push_back(vector_extrema(p, embeddings));
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      total += candidates[i].empty() || candidates[j].empty() ? 0.0 : cosine_values(extrema[i], extrema[j]);
    }
  }
  return 1.0 - total / static_cast<double>(k * (k - 1));
}

Descriptiveness descriptiveness(std::span<const TokenId> source, std::span<const TokenId> generated,
                                const std::vector<bool>& is_stopword, const Tensor& embeddings) {
  check_table(embeddings);
  auto content = [&](std::span<const TokenId> words) {
    std::vector<TokenId> kept;
    for (TokenId t : words) {
      if (t < is_stopword.size() && is_stopword[t]) continue;
      kept.push_back(t);
    }
    return kept;
  };
  const std::vector<TokenId> src = content(source);
  const std::vector<TokenId> gen = content(generated);
  const std::set<TokenId> src_set(src.begin(), src.end());
  const std::set<TokenId> gen_set(gen.begin(), gen.end());

  Descriptiveness d;
  d.generated = gen.size();
  std::vector<TokenId> novel, dropped;
  for (TokenId t : gen_set) {
    if (!src_set.count(t)) novel.push_back(t);
  }
  for (TokenId t : src_set) {
    if (!gen_set.count(t)) dropped.push_back(t);
  }
  d.novel = novel.size();
  d.dropped = dropped.size();
  if (!novel.empty() && !dropped.empty()) {
    double total = 0.0;
    for (TokenId a : novel) {
      for (TokenId b : dropped) total += cosine_values(embeddings.row(a), embeddings.row(b));
    }
    d.insert_drop_similarity = total / static_cast<double>(novel.size() * dropped.size());
  }
  return d;
}

std::vector<bool> stopword_mask(const Vocabulary& vocab, const StopwordSet& stopwords) {
  std::vector<bool> mask(vocab.size(), false);
  for (TokenId id = 0; id < vocab.size(); ++id) mask[id] = stopwords.count(vocab.word(id)) > 0;
  return mask;
}

// ---- reports --------------------------------------------------------------

namespace {

std::vector<std::pair<std::string, std::optional<double>>> report_fields(const EvalReport& r) {
  return {
      {"beam_width", static_cast<double>(r.beam_width)},
      {"queries", static_cast<double>(r.queries)},
      {"ranked_queries", static_cast<double>(r.ranked_queries)},
      {"bleu_pct", r.bleu_pct},
      {"sim_emb_pct", r.sim_emb_pct},
      {"diversity", r.diversity},
      {"mrr", r.mrr},
      {"avg_generated_words", r.avg_generated_words},
      {"avg_novel_words", r.avg_novel_words},
      {"avg_dropped_words", r.avg_dropped_words},
      {"avg_insert_drop_similarity", r.avg_insert_drop_similarity},
  };
}

}  // namespace

std::string to_key_value(const EvalReport& report) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const auto& [key, value] : report_fields(report)) {
    out << key << " = ";
    if (value) {
      out << *value;
    } else {
      out << "na";
    }
    out << '\n';
  }
  return out.str();
}

std::string to_json(const EvalReport& report) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, value] : report_fields(report)) {
    if (value) {
      j[key] = *value;
    } else {
      j[key] = nullptr;
    }
  }
  return j.dump(2);
}

void write_report(const EvalReport& report, const std::string& path_prefix) {
  std::ofstream kv(path_prefix + ".txt");
  std::ofstream js(path_prefix + ".json");
  if (!kv || !js) throw DataError("cannot write report files at " + path_prefix);
  kv << to_key_value(report);
  js << to_json(report) << '\n';
}

std::vector<RunAggregate> aggregate_runs(const std::vector<EvalReport>& runs) {
  if (runs.empty()) throw UsageError("aggregate_runs: no runs");
  std::vector<RunAggregate> out;
  const auto names = report_fields(runs.front());
  for (std::size_t f = 0; f < names.size(); ++f) {
    std::vector<double> values;
    for (const EvalReport& r : runs) {
      if (const auto v = report_fields(r)[f].second) values.push_back(*v);
    }
    RunAggregate agg{names[f].first, 0.0, 0.0, values.size()};
    if (!values.empty()) {
      agg.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
      if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - agg.mean) * (v - agg.mean);
        agg.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
      }
    }
    out.push_back(agg);
  }
  return out;
}

}  // namespace qreform
