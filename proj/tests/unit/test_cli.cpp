// Runs the reformulator binary as a subprocess.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "qreform/checkpoint.hpp"
#include "qreform/pipeline.hpp"

namespace fs = std::filesystem;
using namespace qreform;

namespace {

const fs::path kDir = fs::temp_directory_path() / "qreform-cli";

int run(const std::string& args, std::string* output = nullptr) {
  const fs::path out = kDir / "stdout.txt";
  const std::string cmd = std::string(REFORMULATOR_PATH) + " " + args + " > " + out.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(out);
    std::ostringstream s;
    s << in.rdbuf();
    *output = s.str();
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += line.empty() ? 0 : 1;
  return n;
}

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path p = kDir / name;
  std::ofstream(p) << text;
  return p;
}

// Small corpus and model shared by the tests below; trained once.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
    config = write_config("run.cfg",
                          "synth_sessions = 60\nranker = ro\nmax_epochs = 3\nembedding_dim = 8\nquery_hidden = 6\n"
                          "attention_dim = 4\nsession_hidden = 10\ndecoder_hidden = 10\nbeam_width = 3\n");
    data = kDir / "synth.jsonl";
    ASSERT_EQ(run("synth --config " + config.string() + " --out " + data.string()), 0);
    run_dir = kDir / "run";
    ASSERT_EQ(run("train --config " + config.string() + " --data " + data.string() + " --out " + run_dir.string()), 0);
  }
  static fs::path config, data, run_dir;
};
fs::path Cli::config, Cli::data, Cli::run_dir;

}  // namespace

TEST_F(Cli, SynthLineCountAndDeterminism) {
  const fs::path cfg = write_config("synth.cfg", "synth_sessions = 100\nsynth_seed = 7\n");
  std::string summary;
  ASSERT_EQ(run("synth --config " + cfg.string() + " --out " + (kDir / "a.jsonl").string(), &summary), 0);
  ASSERT_EQ(run("synth --config " + cfg.string() + " --out " + (kDir / "b.jsonl").string()), 0);
  EXPECT_EQ(line_count(kDir / "a.jsonl"), 100u);
  EXPECT_EQ(slurp(kDir / "a.jsonl"), slurp(kDir / "b.jsonl"));

  // The printed click rate agrees with a recount of the file.
  std::size_t impressions = 0, clicks = 0;
  std::ifstream in(kDir / "a.jsonl");
  for (std::string line; std::getline(in, line);) {
    const nlohmann::json session = nlohmann::json::parse(line);
    for (const auto& q : session["queries"]) {
      for (const auto& im : q["impressions"]) {
        ++impressions;
        clicks += im["clicked"].get<bool>() ? 1 : 0;
      }
    }
  }
  char expect[64];
  std::snprintf(expect, sizeof expect, "click_rate = %.6f", static_cast<double>(clicks) / impressions);
  EXPECT_NE(summary.find(expect), std::string::npos) << summary;
}

TEST_F(Cli, TrainWritesArtifacts) {
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "vocab.txt", "train_log.txt", "model.ckpt",
                        "report.txt", "report.json"}) {
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  }
  EXPECT_EQ(line_count(run_dir / "train_log.txt"), 3u);
  EXPECT_EQ(line_count(run_dir / "train.jsonl") + line_count(run_dir / "val.jsonl") + line_count(run_dir / "test.jsonl"),
            60u);
}

TEST_F(Cli, TrainingLogIsReproducible) {
  const fs::path again = kDir / "again";
  ASSERT_EQ(run("train --config " + config.string() + " --data " + data.string() + " --out " + again.string()), 0);
  EXPECT_EQ(slurp(again / "train_log.txt"), slurp(run_dir / "train_log.txt"));
  EXPECT_EQ(slurp(again / "report.txt"), slurp(run_dir / "report.txt"));
}

TEST_F(Cli, EvaluateMatchesTrainerReport) {
  const fs::path prefix = kDir / "eval";
  ASSERT_EQ(run("evaluate --checkpoint " + (run_dir / "model.ckpt").string() + " --data " +
                (run_dir / "test.jsonl").string() + " --out " + prefix.string()),
            0);
  EXPECT_EQ(slurp(prefix.string() + ".txt"), slurp(run_dir / "report.txt"));
  const auto report = nlohmann::json::parse(slurp(prefix.string() + ".json"));
  EXPECT_GT(report["mrr"].get<double>(), 0.0);
}

TEST_F(Cli, GenerateCandidatesAndLogprobs) {
  const fs::path out = kDir / "gen.jsonl";
  ASSERT_EQ(run("generate --checkpoint " + (run_dir / "model.ckpt").string() + " --data " +
                (run_dir / "test.jsonl").string() + " --out " + out.string()),
            0);
  Checkpoint ck = load_checkpoint((run_dir / "model.ckpt").string());
  std::vector<SessionRecord> sessions = read_sessions((run_dir / "test.jsonl").string());
  encode_sessions(sessions, ck.vocab);

  std::ifstream in(out);
  std::vector<nlohmann::json> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(nlohmann::json::parse(line));
  std::size_t next = 0;
  for (const SessionRecord& s : sessions) {
    Graph g(false);
    BoundModel bm = bind(g, ck.model);
    const SessionEncodings enc = encode_prefixes(bm, s);
    for (std::size_t i = 0; i < s.queries.size(); ++i, ++next) {
      ASSERT_LT(next, lines.size());
      const auto& cands = lines[next]["candidates"];
      EXPECT_EQ(cands.size(), 3u);
      for (const auto& c : cands) {
        const std::vector<TokenId> tokens = c["tokens"].get<std::vector<TokenId>>();
        const double lp = sequence_logprob(bm.decoder, ck.model.embeddings, enc.session_vectors[i], tokens).scalar();
        EXPECT_NEAR(c["logprob"].get<double>(), lp, 1e-9);
      }
    }
  }
  EXPECT_EQ(next, lines.size());
}

TEST_F(Cli, GenerateWidthOneIsGreedy) {
  // Same checkpoint, config rewritten to K = 1.
  Checkpoint ck = load_checkpoint((run_dir / "model.ckpt").string());
  ck.config.beam_width = 1;
  const fs::path ckpt = kDir / "k1.ckpt";
  save_checkpoint(ckpt.string(), ck);
  const fs::path out = kDir / "gen1.jsonl";
  ASSERT_EQ(run("generate --checkpoint " + ckpt.string() + " --data " + (run_dir / "test.jsonl").string() +
                " --out " + out.string()),
            0);
  std::vector<SessionRecord> sessions = read_sessions((run_dir / "test.jsonl").string());
  encode_sessions(sessions, ck.vocab);
  std::ifstream in(out);
  for (const SessionRecord& s : sessions) {
    Graph g(false);
    BoundModel bm = bind(g, ck.model);
    const SessionEncodings enc = encode_prefixes(bm, s);
    for (std::size_t i = 0; i < s.queries.size(); ++i) {
      std::string line;
      ASSERT_TRUE(std::getline(in, line));
      const auto cands = nlohmann::json::parse(line)["candidates"];
      ASSERT_EQ(cands.size(), 1u);
      const Hypothesis greedy = greedy_decode(bm.decoder, ck.model.embeddings, enc.session_vectors[i], kTargetLen);
      EXPECT_EQ(cands[0]["tokens"].get<std::vector<TokenId>>(), greedy.tokens);
    }
  }
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("train --data " + data.string()), 1);  // missing --out
  EXPECT_EQ(run("train --config " + write_config("bad.cfg", "alpha = 7\n").string() + " --data " + data.string() +
                " --out " + (kDir / "x").string()),
            1);
  EXPECT_EQ(run("train --data " + (kDir / "nope.jsonl").string() + " --out " + (kDir / "x").string()), 2);

  const std::string bytes = slurp(run_dir / "model.ckpt");
  std::string flipped = bytes;
  flipped[flipped.size() / 2 + bytes.size() / 4] ^= 0x10;
  const fs::path bad = kDir / "corrupt.ckpt";
  std::ofstream(bad, std::ios::binary) << flipped;
  std::string err;
  EXPECT_EQ(run("evaluate --checkpoint " + bad.string() + " --data " + (run_dir / "test.jsonl").string(), &err), 2);
  EXPECT_NE(err.find("data error"), std::string::npos) << err;
}

TEST_F(Cli, GradCheckHarness) {
  const fs::path tiny = write_config("tiny.cfg",
                                     "embedding_dim = 4\nquery_hidden = 3\nattention_dim = 3\nsession_hidden = 4\n"
                                     "decoder_hidden = 4\nvocab_max = 40\nsynth_sessions = 10\n");
  std::string a, b;
  run("grad-check --config " + tiny.string(), &a);
  run("grad-check --config " + tiny.string(), &b);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.find("rank_pairwise"), std::string::npos);
  const fs::path broken = write_config("broken.cfg", slurp(tiny) + "debug_corrupt_gradient = 1\n");
  EXPECT_EQ(run("grad-check --config " + broken.string()), 3);
}
