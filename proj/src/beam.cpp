#include "qreform/beam.hpp"

#include <algorithm>

#include "qreform/error.hpp"

namespace qreform {
namespace {

struct LiveHypothesis {
  Hypothesis hyp;
  LstmState state;
};

struct Candidate {
  std::size_t parent;
  TokenId token;
  double logprob;
  double score;
};

double score_of(double logprob, std::size_t length, bool normalize) {
  return normalize && length > 0 ? logprob / static_cast<double>(length) : logprob;
}

bool better(const Hypothesis& a, const Hypothesis& b, bool normalize) {
  const double sa = score_of(a.logprob, a.tokens.size(), normalize);
  const double sb = score_of(b.logprob, b.tokens.size(), normalize);
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

}  // namespace

Hypothesis greedy_decode(const DecoderVars& dec, Parameter& embeddings, Var session_vector, std::size_t max_len) {
  if (max_len == 0) throw UsageError("greedy_decode: max_len must be positive");
  LstmState state = init_state(dec, session_vector);
  Hypothesis hyp;
  TokenId prev = kBos;
  while (hyp.tokens.size() < max_len) {
    DecodeStep step = decode_step(dec, embeddings, prev, state);
    state = step.state;
    const Tensor& logp = ad::log_softmax(step.logits).value();
    TokenId best = 0;
    for (TokenId w = 1; w < logp.size(); ++w) {
      if (logp[w] > logp[best]) best = w;
    }
    hyp.tokens.push_back(best);
    hyp.logprob += logp[best];
    prev = best;
    if (best == kPad) break;
  }
  hyp.finished = true;
  return hyp;
}

std::vector<Hypothesis> beam_search(const DecoderVars& dec, Parameter& embeddings, Var session_vector,
                                    const BeamConfig& config) {
  if (config.width < 1) throw UsageError("beam_search: beam width must be at least 1");
  if (config.max_len == 0) throw UsageError("beam_search: max_len must be positive");
  const bool normalize = config.length_normalize;

  std::vector<LiveHypothesis> live;
  live.push_back(LiveHypothesis{Hypothesis{}, init_state(dec, session_vector)});
  std::vector<Hypothesis> finished;

  for (std::size_t t = 0; t < config.max_len && !live.empty(); ++t) {
    std::vector<Candidate> candidates;
    std::vector<LstmState> next_states;
    for (std::size_t p = 0; p < live.size(); ++p) {
      const Hypothesis& h = live[p].hyp;
      const TokenId prev = h.tokens.empty() ? kBos : h.tokens.back();
      DecodeStep step = decode_step(dec, embeddings, prev, live[p].state);
      next_states.push_back(step.state);
      const Tensor& logp = ad::log_softmax(step.logits).value();
      for (TokenId w = 0; w < logp.size(); ++w) {
        const double lp = h.logprob + logp[w];
        candidates.push_back(Candidate{p, w, lp, score_of(lp, h.tokens.size() + 1, normalize)});
      }
    }
    const std::size_t keep = std::min(config.width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<LiveHypothesis> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const Candidate& c = candidates[k];
      Hypothesis h = live[c.parent].hyp;
      h.tokens.push_back(c.token);
      h.logprob = c.logprob;
      h.finished = c.token == kPad || h.tokens.size() == config.max_len;
      if (h.finished) {
        finished.push_back(std::move(h));
      } else {
        next.push_back(LiveHypothesis{std::move(h), next_states[c.parent]});
      }
    }
    live = std::move(next);

    // Without length normalization scores only fall, so once `width`
    // finished hypotheses beat every live one nothing can change.
    if (!normalize && finished.size() >= config.width && !live.empty()) {
      std::vector<double> done;
      for (const Hypothesis& h : finished) done.push_back(h.logprob);
      std::nth_element(done.begin(), done.begin() + static_cast<std::ptrdiff_t>(config.width - 1), done.end(),
                       std::greater<>());
      double best_live = live.front().hyp.logprob;
      for (const LiveHypothesis& l : live) best_live = std::max(best_live, l.hyp.logprob);
      if (best_live < done[config.width - 1]) break;
    }
  }

  std::vector<Hypothesis> pool = std::move(finished);
  pool.push_back(greedy_decode(dec, embeddings, session_vector, config.max_len));
  std::sort(pool.begin(), pool.end(), [normalize](const Hypothesis& a, const Hypothesis& b) {
    return better(a, b, normalize);
  });
  std::vector<Hypothesis> out;
  for (Hypothesis& h : pool) {
    if (out.size() == config.width) break;
    const bool duplicate =
        std::any_of(out.begin(), out.end(), [&h](const Hypothesis& o) { return o.tokens == h.tokens; });
    if (!duplicate) out.push_back(std::move(h));
  }
  return out;
}

}  // namespace qreform
