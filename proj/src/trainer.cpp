#include "qreform/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "qreform/error.hpp"

namespace qreform {
namespace {

struct LossParts {
  double reform = 0.0;
  std::size_t examples = 0;
  double rank = 0.0;
  std::size_t queries = 0;
};

double combine(const LossParts& p, const RunConfig& config) {
  double reform = p.reform;
  if (config.reduction == Reduction::Mean && p.examples > 0) reform /= static_cast<double>(p.examples);
  if (config.ranker == RankerMode::Off) return reform;
  const double rank = p.queries == 0 ? 0.0 : p.rank / static_cast<double>(p.queries);
  return config.alpha * reform + (1.0 - config.alpha) * rank;
}

std::vector<Tensor> snapshot(Model& model) {
  std::vector<Tensor> out;
  for (Parameter* p : model.params()) out.push_back(p->value);
  return out;
}

void restore(Model& model, const std::vector<Tensor>& values) {
  std::vector<Parameter*> params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

bool EarlyStopping::update(double validation_loss) {
  improved_ = validation_loss < best_;
  if (improved_) {
    best_ = validation_loss;
    bad_epochs_ = 0;
    return false;
  }
  return ++bad_epochs_ >= patience_;
}

double dataset_loss(Model& model, const std::vector<SessionRecord>& sessions, const RunConfig& config) {
  const LossConfig loss = config.loss();
  LossParts parts;
  for (const SessionRecord& s : sessions) {
    Graph g(false);
    BoundModel bound = bind(g, model);
    SessionLoss l = session_loss(bound, s, loss);
    if (l.reform) parts.reform += l.reform->scalar();
    if (l.rank) parts.rank += l.rank->scalar();
    parts.examples += l.reform_examples;
    parts.queries += l.queries;
  }
  return combine(parts, config);
}

TrainResult train(Model& model, AdamState& optimizer, const RunConfig& config,
                  const std::vector<SessionRecord>& train_sessions,
                  const std::vector<SessionRecord>& validation_sessions, const TrainOptions& options) {
  validate(config);
  if (train_sessions.empty()) throw UsageError("train: empty training split");
  if (validation_sessions.empty()) throw UsageError("train: empty validation split");
  std::vector<Parameter*> params = model.params();
  if (optimizer.m.size() != params.size()) optimizer = AdamState(AdamOptions{config.lr}, params);

  std::ofstream log;
  if (!options.log_path.empty()) {
    log.open(options.log_path, std::ios::app);
    if (!log) throw DataError("cannot append to training log " + options.log_path);
    log.precision(17);
  }

  const LossConfig loss = config.loss();
  Rng rng(config.seed + 2);
  std::vector<std::size_t> order(train_sessions.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::vector<Tensor> best = snapshot(model);
  EarlyStopping stopping(config.patience);
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      model.zero_grad();
      Graph g;
      BoundModel bound = bind(g, model);
      std::vector<SessionLoss> parts;
      for (std::size_t k = start; k < end; ++k) parts.push_back(session_loss(bound, train_sessions[order[k]], loss));
      Var objective = batch_objective(g, parts, config.ranker, config.alpha, config.reduction);
      const double value = objective.scalar();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches + 1));
      }
      g.backward(objective);
      adam_step(params, optimizer);
      loss_total += value;
      ++batches;
    }

    EpochLog entry{epoch, loss_total / static_cast<double>(batches),
                   dataset_loss(model, validation_sessions, config)};
    if (!std::isfinite(entry.validation_loss)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.epochs.push_back(entry);
    if (log) log << entry.epoch << ' ' << entry.train_loss << ' ' << entry.validation_loss << '\n' << std::flush;

    result.stopped_early = stopping.update(entry.validation_loss);
    if (stopping.improved()) {
      result.best_validation_loss = entry.validation_loss;
      result.best_epoch = epoch;
      best = snapshot(model);
    }
    const bool keep_going = !options.on_epoch || options.on_epoch(entry);
    if (result.stopped_early || !keep_going) break;
  }
  restore(model, best);
  return result;
}

std::vector<QueryCandidates> generate(Model& model, const std::vector<SessionRecord>& sessions,
                                      const BeamConfig& beam) {
  std::vector<QueryCandidates> out;
  for (const SessionRecord& s : sessions) {
    Graph g(false);
    BoundModel bound = bind(g, model);
    SessionEncodings enc = encode_prefixes(bound, s);
    for (std::size_t i = 0; i < s.queries.size(); ++i) {
      out.push_back(QueryCandidates{s.session_id, i,
                                    beam_search(bound.decoder, model.embeddings, enc.session_vectors[i], beam)});
    }
  }
  return out;
}

EvalOptions eval_options(const RunConfig& config, const Vocabulary& vocab) {
  EvalOptions o;
  o.beam = config.beam();
  o.top1 = config.top1;
  o.with_ranker = config.ranker != RankerMode::Off;
  const StopwordSet words = config.stopwords_path.empty() ? default_stopwords() : load_stopwords(config.stopwords_path);
  o.stopwords = stopword_mask(vocab, words);
  return o;
}

EvalReport evaluate_model(Model& model, const std::vector<SessionRecord>& sessions, const EvalOptions& options) {
  EvalReport r;
  r.beam_width = options.beam.width;
  double bleu_sum = 0.0, sim_sum = 0.0, div_sum = 0.0;
  double gen_sum = 0.0, novel_sum = 0.0, dropped_sum = 0.0, insdrop_sum = 0.0;
  std::size_t div_count = 0, insdrop_count = 0;
  std::vector<std::size_t> click_ranks;

  for (const SessionRecord& s : sessions) {
    Graph g(false);
    BoundModel bound = bind(g, model);
    SessionEncodings enc = encode_prefixes(bound, s);
    for (std::size_t i = 0; i < s.queries.size(); ++i) {
      const QueryEvent& q = s.queries[i];
      if (options.with_ranker && q.has_click()) {
        const std::vector<double> scores = rank_scores(bound, enc.query_vectors[i], enc.session_vectors[i], q);
        std::vector<std::size_t> by_rank(q.impressions.size());
        std::iota(by_rank.begin(), by_rank.end(), 0);
        std::stable_sort(by_rank.begin(), by_rank.end(), [&](std::size_t a, std::size_t b) {
          return q.impressions[a].display_rank < q.impressions[b].display_rank;
        });
        std::vector<double> ordered_scores;
        std::vector<bool> ordered_clicks;
        for (std::size_t j : by_rank) {
          ordered_scores.push_back(scores[j]);
          ordered_clicks.push_back(q.impressions[j].clicked);
        }
        click_ranks.push_back(first_click_rank(ordered_scores, ordered_clicks));
      }
      if (i + 1 >= s.queries.size()) continue;

      // A next query with no words left after normalization has nothing to score against.
      const Phrase reference = strip_padding(s.queries[i + 1].tokens);
      if (reference.empty()) continue;
      const std::vector<Hypothesis> beam =
          beam_search(bound.decoder, model.embeddings, enc.session_vectors[i], options.beam);
      std::vector<Phrase> candidates;
      for (const Hypothesis& h : beam) candidates.push_back(strip_padding(h.tokens));

      double best_bleu = 0.0, best_sim = 0.0;
      const std::size_t scored = options.top1 ? std::min<std::size_t>(1, candidates.size()) : candidates.size();
      for (std::size_t k = 0; k < scored; ++k) {
        const double b = bleu(candidates[k], reference);
        const double e = sim_emb(candidates[k], reference, model.metric_embeddings);
        if (k == 0 || b > best_bleu) best_bleu = b;
        if (k == 0 || e > best_sim) best_sim = e;
      }
      bleu_sum += best_bleu;
      sim_sum += best_sim;
      if (candidates.size() >= 2) {
        div_sum += diversity(candidates, model.metric_embeddings);
        ++div_count;
      }
      const Phrase source = strip_padding(q.tokens);
      const Phrase top = candidates.empty() ? Phrase{} : candidates.front();
      const Descriptiveness d = descriptiveness(source, top, options.stopwords, model.metric_embeddings);
      gen_sum += static_cast<double>(d.generated);
      novel_sum += static_cast<double>(d.novel);
      dropped_sum += static_cast<double>(d.dropped);
      if (d.insert_drop_similarity) {
        insdrop_sum += *d.insert_drop_similarity;
        ++insdrop_count;
      }
      ++r.queries;
    }
  }
  if (r.queries == 0) throw UsageError("evaluate_model: no query with a following query to score against");
  const double n = static_cast<double>(r.queries);
  r.bleu_pct = bleu_sum / n;
  r.sim_emb_pct = 100.0 * sim_sum / n;
  if (options.beam.width >= 2 && div_count > 0) r.diversity = div_sum / static_cast<double>(div_count);
  r.ranked_queries = click_ranks.size();
  if (options.with_ranker && !click_ranks.empty()) r.mrr = mrr(click_ranks);
  r.avg_generated_words = gen_sum / n;
  r.avg_novel_words = novel_sum / n;
  r.avg_dropped_words = dropped_sum / n;
  if (insdrop_count > 0) r.avg_insert_drop_similarity = insdrop_sum / static_cast<double>(insdrop_count);
  return r;
}

}  // namespace qreform
