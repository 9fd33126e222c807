#include "qreform/pipeline.hpp"

#include <algorithm>

#include "qreform/error.hpp"

namespace qreform {

PreparedData prepare_data(std::vector<SessionRecord> sessions, const RunConfig& config) {
  PreparedData out;
  out.splits = split_dataset(std::move(sessions), config.split_seed);
  out.vocab = Vocabulary::build(out.splits.train, config.vocab_max);
  encode_sessions(out.splits.train, out.vocab);
  encode_sessions(out.splits.validation, out.vocab);
  encode_sessions(out.splits.test, out.vocab);
  return out;
}

std::vector<LossCheck> run_grad_checks(const RunConfig& config) {
  SynthConfig synth = config.synth;
  synth.n_sessions = std::max<std::size_t>(synth.n_sessions, 10);
  std::vector<SessionRecord> pool = synth_generate(synth);
  std::vector<SessionRecord> sessions;
  for (SessionRecord& s : pool) {
    bool clicked = false;
    for (const QueryEvent& q : s.queries) clicked = clicked || q.has_click();
    if (s.queries.size() >= 2 && clicked) sessions.push_back(std::move(s));
    if (sessions.size() == 2) break;
  }
  if (sessions.size() < 2) throw DataError("grad-check: synthetic corpus has no multi-query clicked sessions");
  const Vocabulary vocab = Vocabulary::build(sessions, config.vocab_max);
  encode_sessions(sessions, vocab);
  Model model = Model::create(vocab, config.dims, "", config.seed);
  std::vector<Parameter*> params = model.params();

  struct Variant {
    std::string name;
    RankerMode ranker;
    EntropyMode entropy;
    double alpha;
  };
  const std::vector<Variant> variants = {
      {"reform_entropy_reward", RankerMode::Off, EntropyMode::Reward, 1.0},
      {"reform_entropy_literal", RankerMode::Off, EntropyMode::Literal, 1.0},
      {"rank_cross_entropy", RankerMode::CrossEntropy, EntropyMode::Reward, 0.0},
      {"rank_pairwise", RankerMode::Pairwise, EntropyMode::Reward, 0.0},
      {"multitask_pairwise", RankerMode::Pairwise, EntropyMode::Reward, config.alpha},
  };

  std::vector<LossCheck> out;
  for (const Variant& v : variants) {
    const LossConfig loss{config.regime, v.ranker, ReformLossOptions{config.lambda, v.entropy}};
    auto loss_fn = [&](bool with_backward) {
      Graph g(with_backward);
      BoundModel bound = bind(g, model);
      std::vector<SessionLoss> parts;
      for (const SessionRecord& s : sessions) parts.push_back(session_loss(bound, s, loss));
      Var objective = batch_objective(g, parts, v.ranker, v.alpha, config.reduction);
      if (with_backward) g.backward(objective);
      return objective.scalar();
    };
    GradCheckOptions options;
    options.coordinates = config.grad_check_coordinates;
    options.seed = config.seed;
    options.corrupt_analytic = config.debug_corrupt_gradient;
    out.push_back(LossCheck{v.name, grad_check(loss_fn, params, options)});
  }
  return out;
}

}  // namespace qreform
