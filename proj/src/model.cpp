#include "qreform/model.hpp"

#include "qreform/error.hpp"

namespace qreform {

Model Model::create(const Vocabulary& vocab, const ModelDims& dims, const std::string& pretrained_path,
                    std::uint64_t seed) {
  for (std::size_t d : {dims.embedding, dims.query_hidden, dims.attention, dims.session_hidden, dims.decoder_hidden}) {
    if (d == 0) throw UsageError("model dimensions must be at least 1");
  }
  Model m;
  m.dims = dims;
  m.embeddings = init_embeddings(vocab, dims.embedding, pretrained_path, seed);
  m.metric_embeddings = m.embeddings.value;
  Rng rng(seed + 1);
  m.query_encoder = QueryEncoder::create(dims.embedding, dims.query_hidden, dims.attention, rng);
  m.session_encoder = SessionEncoder::create(m.query_encoder.output_size(), dims.session_hidden, rng);
  m.decoder = Decoder::create(dims.embedding, dims.session_hidden, dims.decoder_hidden, vocab.size(), rng);
  m.ranker = Ranker::create(m.query_encoder.output_size() + dims.session_hidden, dims.embedding, rng);
  return m;
}

std::vector<Parameter*> Model::params() {
  std::vector<Parameter*> out{&embeddings};
  for (Parameter* p : query_encoder.params()) out.push_back(p);
  for (Parameter* p : session_encoder.params()) out.push_back(p);
  for (Parameter* p : decoder.params()) out.push_back(p);
  for (Parameter* p : ranker.params()) out.push_back(p);
  return out;
}

void Model::zero_grad() {
  for (Parameter* p : params()) p->zero_grad();
}

BoundModel bind(Graph& g, Model& model) {
  BoundModel b;
  b.graph = &g;
  b.embeddings = &model.embeddings;
  b.query_encoder = bind(g, model.query_encoder);
  b.session_encoder = bind(g, model.session_encoder);
  b.decoder = bind(g, model.decoder);
  b.ranker = bind(g, model.ranker);
  return b;
}

namespace {

Var ranking_loss(BoundModel& model, Var query_vector, Var session_vector, const QueryEvent& query, RankerMode mode) {
  Graph& g = *model.graph;
  std::vector<Var> captions;
  std::vector<bool> clicked;
  for (const Impression& imp : query.impressions) {
    captions.push_back(image_repr(g, *model.embeddings, imp.caption_tokens));
    clicked.push_back(imp.clicked);
  }
  Var scores = score_impressions(model.ranker, query_vector, session_vector, captions);
  return mode == RankerMode::CrossEntropy ? ce_rank_loss(scores, clicked) : pairwise_rank_loss(scores, clicked);
}

}  // namespace

SessionLoss session_loss(BoundModel& model, const SessionRecord& session, const LossConfig& config) {
  Graph& g = *model.graph;
  const std::vector<TrainingExample> examples = build_targets(session, config.regime);
  SessionLoss out;
  out.queries = session.queries.size();

  std::vector<Var> reform_terms;
  std::vector<Var> rank_terms;
  std::size_t next_example = 0;
  SessionState state = start_session(g, model.session_encoder, session.session_id);
  for (std::size_t i = 0; i < session.queries.size(); ++i) {
    const QueryEvent& q = session.queries[i];
    QueryEncoding enc = encode_query(g, model.query_encoder, *model.embeddings, q.tokens);
    Var vs = encode_session_step(model.session_encoder, state, enc.vector, session.session_id);
    if (next_example < examples.size() && examples[next_example].query_index == i) {
      reform_terms.push_back(
          reform_loss(model.decoder, *model.embeddings, vs, examples[next_example].target, config.reform));
      ++next_example;
    }
    if (config.ranker != RankerMode::Off && q.has_click()) {
      rank_terms.push_back(ranking_loss(model, enc.vector, vs, q, config.ranker));
    }
  }
  if (!reform_terms.empty()) out.reform = ad::add_n(reform_terms);
  out.reform_examples = reform_terms.size();
  if (!rank_terms.empty()) out.rank = ad::add_n(rank_terms);
  return out;
}

Var batch_objective(Graph& g, const std::vector<SessionLoss>& parts, RankerMode ranker, double alpha,
                    Reduction reduction) {
  std::vector<Var> reform, rank;
  std::size_t examples = 0, queries = 0;
  for (const SessionLoss& p : parts) {
    if (p.reform) reform.push_back(*p.reform);
    if (p.rank) rank.push_back(*p.rank);
    examples += p.reform_examples;
    queries += p.queries;
  }
  Var reform_total = reform.empty() ? g.constant(Tensor({1})) : ad::add_n(reform);
  if (reduction == Reduction::Mean && examples > 0) {
    reform_total = ad::scale(reform_total, 1.0 / static_cast<double>(examples));
  }
  if (ranker == RankerMode::Off) return reform_total;
  Var rank_mean = rank.empty() || queries == 0
                      ? g.constant(Tensor({1}))
                      : ad::scale(ad::add_n(rank), 1.0 / static_cast<double>(queries));
  return multitask_loss(reform_total, rank_mean, alpha);
}

SessionEncodings encode_prefixes(BoundModel& model, const SessionRecord& session) {
  Graph& g = *model.graph;
  SessionEncodings out;
  SessionState state = start_session(g, model.session_encoder, session.session_id);
  for (const QueryEvent& q : session.queries) {
    QueryEncoding enc = encode_query(g, model.query_encoder, *model.embeddings, q.tokens);
    out.query_vectors.push_back(enc.vector);
    out.session_vectors.push_back(encode_session_step(model.session_encoder, state, enc.vector, session.session_id));
  }
  return out;
}

std::vector<double> rank_scores(BoundModel& model, Var query_vector, Var session_vector, const QueryEvent& query) {
  Graph& g = *model.graph;
  std::vector<Var> captions;
  for (const Impression& imp : query.impressions) captions.push_back(image_repr(g, *model.embeddings, imp.caption_tokens));
  const Tensor& s = score_impressions(model.ranker, query_vector, session_vector, captions).value();
  return std::vector<double>(s.values().begin(), s.values().end());
}

}  // namespace qreform
