// reformulator: synthetic data, training, evaluation, generation and gradient
// checks for the session-aware query reformulation model.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "qreform/checkpoint.hpp"
#include "qreform/error.hpp"
#include "qreform/pipeline.hpp"

namespace fs = std::filesystem;
using namespace qreform;

namespace {

struct Args {
  std::string config;
  std::string data;
  std::string checkpoint;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool top1 = false;
};

RunConfig config_from(const Args& a) {
  RunConfig c = a.config.empty() ? desk_profile() : load_config(a.config);
  if (a.seed) c.seed = *a.seed;
  if (a.top1) c.top1 = true;
  return c;
}

void require(const std::string& value, const char* option) {
  if (value.empty()) throw UsageError(std::string("missing required option ") + option);
}

int cmd_synth(const Args& a) {
  RunConfig c = config_from(a);
  if (a.seed) c.synth.seed = *a.seed;
  require(a.out, "--out");
  const std::vector<SessionRecord> sessions = synth_generate(c.synth);
  write_sessions(a.out, sessions);
  const SynthSummary s = summarize(sessions);
  std::printf("sessions = %zu\nqueries = %zu\nimpressions = %zu\nclicks = %zu\nclick_rate = %.6f\n", s.sessions,
              s.queries, s.impressions, s.clicks, s.click_rate);
  std::printf("mean_query_words = %.4f\nmean_clicked_caption_words = %.4f\ndisplay_mrr = %.6f\n", s.mean_query_words,
              s.mean_clicked_caption_words, s.display_mrr);
  return 0;
}

int cmd_train(const Args& a) {
  const RunConfig c = config_from(a);
  require(a.data, "--data");
  require(a.out, "--out");
  fs::create_directories(a.out);
  const fs::path dir(a.out);

  PreparedData data = prepare_data(read_sessions(a.data), c);
  write_sessions((dir / "train.jsonl").string(), data.splits.train);
  write_sessions((dir / "val.jsonl").string(), data.splits.validation);
  write_sessions((dir / "test.jsonl").string(), data.splits.test);
  data.vocab.save((dir / "vocab.txt").string());

  Checkpoint ckpt;
  ckpt.config = c;
  ckpt.vocab = data.vocab;
  ckpt.model = Model::create(data.vocab, c.dims, c.pretrained_path, c.seed);
  ckpt.optimizer = AdamState(AdamOptions{c.lr}, ckpt.model.params());

  TrainOptions options;
  options.log_path = (dir / "train_log.txt").string();
  options.on_epoch = [](const EpochLog& e) {
    std::printf("epoch %zu train_loss %.6f val_loss %.6f\n", e.epoch, e.train_loss, e.validation_loss);
    std::fflush(stdout);
    return true;
  };
  const TrainResult result =
      train(ckpt.model, ckpt.optimizer, c, data.splits.train, data.splits.validation, options);
  ckpt.epoch = result.epochs.size();
  ckpt.best_validation_loss = result.best_validation_loss;
  save_checkpoint((dir / "model.ckpt").string(), ckpt);
  std::printf("best epoch %zu (val_loss %.6f)%s\n", result.best_epoch, result.best_validation_loss,
              result.stopped_early ? ", stopped early" : "");

  const EvalReport report = evaluate_model(ckpt.model, data.splits.test, eval_options(c, data.vocab));
  write_report(report, (dir / "report").string());
  std::fputs(to_key_value(report).c_str(), stdout);
  return 0;
}

std::vector<SessionRecord> load_against(const std::string& path, const Vocabulary& vocab) {
  std::vector<SessionRecord> sessions = read_sessions(path);
  std::size_t known = 0, total = 0;
  for (const SessionRecord& s : sessions) {
    for (const QueryEvent& q : s.queries) {
      for (const std::string& w : q.words) {
        ++total;
        known += vocab.contains(w) ? 1 : 0;
      }
    }
  }
  if (total > 0 && known == 0) throw DataError(path + ": no query word is in the checkpoint vocabulary");
  encode_sessions(sessions, vocab);
  return sessions;
}

int cmd_evaluate(const Args& a) {
  require(a.checkpoint, "--checkpoint");
  require(a.data, "--data");
  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  if (a.top1) ckpt.config.top1 = true;
  const std::vector<SessionRecord> sessions = load_against(a.data, ckpt.vocab);
  if (sessions.empty()) throw DataError(a.data + ": no sessions");
  const EvalReport report = evaluate_model(ckpt.model, sessions, eval_options(ckpt.config, ckpt.vocab));
  if (!a.out.empty()) write_report(report, a.out);
  std::fputs(to_key_value(report).c_str(), stdout);
  return 0;
}

int cmd_generate(const Args& a) {
  require(a.checkpoint, "--checkpoint");
  require(a.data, "--data");
  require(a.out, "--out");
  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const std::vector<SessionRecord> sessions = load_against(a.data, ckpt.vocab);
  const std::vector<QueryCandidates> results = generate(ckpt.model, sessions, ckpt.config.beam());

  std::ofstream out(a.out);
  if (!out) throw DataError("cannot write " + a.out);
  std::size_t next = 0;
  for (const SessionRecord& s : sessions) {
    for (std::size_t i = 0; i < s.queries.size(); ++i, ++next) {
      const QueryCandidates& r = results[next];
      nlohmann::json line;
      line["session_id"] = s.session_id;
      line["query_index"] = i;
      line["query"] = detokenize(strip_padding(s.queries[i].tokens), ckpt.vocab);
      nlohmann::json list = nlohmann::json::array();
      for (const Hypothesis& h : r.candidates) {
        nlohmann::json c;
        c["text"] = detokenize(strip_padding(h.tokens), ckpt.vocab);
        c["tokens"] = h.tokens;
        c["logprob"] = h.logprob;
        list.push_back(c);
        if (a.top1) break;
      }
      line["candidates"] = list;
      out << line.dump() << '\n';
    }
  }
  std::printf("wrote %zu queries to %s\n", results.size(), a.out.c_str());
  return 0;
}

int cmd_grad_check(const Args& a) {
  const RunConfig c = config_from(a);
  constexpr double kTolerance = 1e-4;
  bool ok = true;
  for (const LossCheck& check : run_grad_checks(c)) {
    const bool pass = check.result.max_rel_error < kTolerance;
    ok = ok && pass;
    std::printf("%-24s max_rel_error %.3e over %zu coordinates (worst: %s, analytic %.6e, numeric %.6e) %s\n",
                check.name.c_str(), check.result.max_rel_error, check.result.coordinates,
                check.result.worst_parameter.c_str(), check.result.worst_analytic, check.result.worst_numeric,
                pass ? "ok" : "FAILED");
  }
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Session-aware query reformulation"};
  app.require_subcommand(1);
  Args args;
  auto add_common = [&args](CLI::App* cmd) {
    cmd->add_option("--config", args.config, "key = value config file");
    cmd->add_option("--data", args.data, "session log (JSONL)");
    cmd->add_option("--checkpoint", args.checkpoint, "model checkpoint");
    cmd->add_option("--out", args.out, "output file or directory");
    cmd->add_option("--seed", args.seed, "overrides the config seed");
    cmd->add_flag("--top1", args.top1, "score or emit only the top candidate");
  };
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Args&);
  };
  const Command commands[] = {
      {"synth", "write a synthetic session log", cmd_synth},
      {"train", "train a model and write checkpoint, log and test report", cmd_train},
      {"evaluate", "evaluate a checkpoint on a session log", cmd_evaluate},
      {"generate", "beam-search reformulations for every query of a session log", cmd_generate},
      {"grad-check", "finite-difference check of every training loss", cmd_grad_check},
  };
  std::vector<std::pair<CLI::App*, int (*)(const Args&)>> subs;
  for (const Command& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    subs.emplace_back(sub, c.run);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (auto& [sub, run] : subs) {
      if (sub->parsed()) return run(args);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
