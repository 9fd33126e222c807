#include "qreform/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "qreform/error.hpp"
#include "qreform/rng.hpp"

namespace qreform {

bool QueryEvent::has_click() const {
  return std::any_of(impressions.begin(), impressions.end(), [](const Impression& im) { return im.clicked; });
}

std::optional<std::size_t> QueryEvent::top_clicked() const {
  std::optional<std::size_t> best;
  for (std::size_t j = 0; j < impressions.size(); ++j) {
    if (!impressions[j].clicked) continue;
    if (!best || impressions[j].display_rank < impressions[*best].display_rank) best = j;
  }
  return best;
}

// ---- text -----------------------------------------------------------------

std::string normalize_text(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    const char lower = static_cast<char>(std::tolower(c));
    const bool keep = (lower >= 'a' && lower <= 'z') || (lower >= '0' && lower <= '9');
    if (!keep) continue;
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(lower);
  }
  return out;
}

std::vector<std::string> split_words(std::string_view normalized) {
  std::vector<std::string> words;
  std::istringstream in{std::string(normalized)};
  for (std::string w; in >> w;) words.push_back(std::move(w));
  return words;
}

// ---- vocabulary -----------------------------------------------------------

Vocabulary::Vocabulary() {
  add(std::string(kPadWord));
  add(std::string(kBosWord));
  add(std::string(kUnkWord));
  add(std::string(kEndOfSessionWord));
}

void Vocabulary::add(std::string word) {
  if (index_.count(word)) throw DataError("duplicate vocabulary word '" + word + "'");
  index_.emplace(word, static_cast<TokenId>(words_.size()));
  words_.push_back(std::move(word));
}

Vocabulary Vocabulary::build(const std::vector<SessionRecord>& sessions, std::size_t max_size) {
  if (max_size < 4) throw UsageError("vocabulary cap must leave room for the 4 reserved tokens");
  std::map<std::string, std::size_t> counts;
  for (const SessionRecord& s : sessions) {
    for (const QueryEvent& q : s.queries) {
      for (const std::string& w : q.words) ++counts[w];
      for (const Impression& im : q.impressions) {
        for (const std::string& w : im.words) ++counts[w];
      }
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (auto& [word, count] : ranked) {
    if (vocab.size() >= max_size) break;
    if (vocab.contains(word)) continue;
    vocab.add(word);
  }
  return vocab;
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary vocab;
  for (const std::string& w : words) vocab.add(w);
  return vocab;
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

const std::string& Vocabulary::word(TokenId id) const {
  if (id >= words_.size()) throw UsageError("token id " + std::to_string(id) + " outside vocabulary");
  return words_[id];
}

std::vector<std::string> Vocabulary::regular_words() const { return {words_.begin() + 4, words_.end()}; }

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary file " + path);
  for (std::size_t i = 4; i < words_.size(); ++i) out << words_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary file " + path);
  std::vector<std::string> words;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) words.push_back(line);
  }
  return from_words(words);
}

std::vector<TokenId> encode_and_pad(const std::vector<std::string>& words, std::size_t max_len,
                                    const Vocabulary& vocab) {
  std::vector<TokenId> ids(max_len, kPad);
  for (std::size_t i = 0; i < std::min(max_len, words.size()); ++i) ids[i] = vocab.id(words[i]);
  return ids;
}

std::vector<TokenId> strip_padding(const std::vector<TokenId>& tokens) {
  std::vector<TokenId> out;
  for (TokenId t : tokens) {
    if (t == kPad || t == kEndOfSession) break;
    out.push_back(t);
  }
  return out;
}

std::string detokenize(const std::vector<TokenId>& tokens, const Vocabulary& vocab) {
  std::string out;
  for (TokenId t : strip_padding(tokens)) {
    if (!out.empty()) out.push_back(' ');
    out += vocab.word(t);
  }
  return out;
}

void encode_session(SessionRecord& session, const Vocabulary& vocab) {
  for (QueryEvent& q : session.queries) {
    q.tokens = encode_and_pad(q.words, kQueryLen, vocab);
    for (Impression& im : q.impressions) im.caption_tokens = encode_and_pad(im.words, kCaptionLen, vocab);
  }
}

void encode_sessions(std::vector<SessionRecord>& sessions, const Vocabulary& vocab) {
  for (SessionRecord& s : sessions) encode_session(s, vocab);
}

// ---- sessions -------------------------------------------------------------

std::vector<SessionRecord> segment_sessions(const std::vector<LogEvent>& events) {
  std::vector<SessionRecord> sessions;
  std::map<std::string, std::size_t> finished_users;
  std::map<std::string, std::size_t> session_counter;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const LogEvent& e = events[i];
    const bool same_user = i > 0 && events[i - 1].user_id == e.user_id;
    if (same_user) {
      if (e.query.timestamp < events[i - 1].query.timestamp) {
        throw UsageError("segment_sessions: events of user '" + e.user_id + "' are not time-ordered");
      }
    } else {
      if (finished_users.count(e.user_id)) {
        throw UsageError("segment_sessions: events of user '" + e.user_id + "' are not contiguous");
      }
      if (i > 0) finished_users[events[i - 1].user_id] = 1;
    }
    const bool new_session = !same_user || e.query.timestamp - events[i - 1].query.timestamp > kSessionGapSeconds;
    if (new_session) {
      SessionRecord s;
      s.user_id = e.user_id;
      s.session_id = e.user_id + "-" + std::to_string(session_counter[e.user_id]++);
      sessions.push_back(std::move(s));
    }
    sessions.back().queries.push_back(e.query);
  }
  return sessions;
}

void truncate_session(SessionRecord& session) {
  if (session.queries.size() > kMaxSessionQueries) session.queries.resize(kMaxSessionQueries);
}

// ---- targets --------------------------------------------------------------

std::vector<TrainingExample> build_targets(const SessionRecord& session, Regime regime) {
  std::vector<TrainingExample> examples;
  const std::size_t n = session.queries.size();
  for (std::size_t i = 0; i < n; ++i) {
    const QueryEvent& q = session.queries[i];
    TrainingExample ex;
    ex.query_index = i;
    if (regime == Regime::NextQuery) {
      if (i + 1 < n) {
        const QueryEvent& next = session.queries[i + 1];
        if (next.tokens.size() != kQueryLen) throw UsageError("build_targets: session is not encoded");
        ex.target.assign(kTargetLen, kPad);
        std::copy(next.tokens.begin(), next.tokens.end(), ex.target.begin());
      } else {
        ex.target.assign(kTargetLen, kPad);
        ex.target[0] = kEndOfSession;
      }
    } else {
      const auto clicked = q.top_clicked();
      if (!clicked) continue;
      ex.target = q.impressions[*clicked].caption_tokens;
      if (ex.target.size() != kTargetLen) throw UsageError("build_targets: session is not encoded");
    }
    examples.push_back(std::move(ex));
  }
  return examples;
}

// ---- splits ---------------------------------------------------------------

DatasetSplits split_dataset(std::vector<SessionRecord> sessions, std::uint64_t seed) {
  const std::size_t n = sessions.size();
  if (n < 3) throw UsageError("split_dataset: need at least 3 sessions, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_val = std::max<std::size_t>(1, n / 10);
  const std::size_t n_test = std::max<std::size_t>(1, n / 10);
  const std::size_t n_train = n - n_val - n_test;
  DatasetSplits out;
  for (std::size_t k = 0; k < n; ++k) {
    SessionRecord& s = sessions[order[k]];
    if (k < n_train) {
      out.train.push_back(std::move(s));
    } else if (k < n_train + n_val) {
      out.validation.push_back(std::move(s));
    } else {
      out.test.push_back(std::move(s));
    }
  }
  return out;
}

// ---- embeddings -----------------------------------------------------------

Parameter init_embeddings(const Vocabulary& vocab, std::size_t dim, const std::string& pretrained_path,
                          std::uint64_t seed) {
  Tensor table({vocab.size(), dim});
  Rng rng(seed);
  for (std::size_t r = 1; r < vocab.size(); ++r) {
    for (std::size_t c = 0; c < dim; ++c) table.at(r, c) = rng.normal();
  }
  if (!pretrained_path.empty()) {
    std::ifstream in(pretrained_path);
    if (!in) throw DataError("cannot read pretrained embeddings " + pretrained_path);
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      std::istringstream fields(line);
      std::string word;
      if (!(fields >> word)) continue;
      std::vector<double> values;
      for (double v; fields >> v;) values.push_back(v);
      if (values.size() != dim) {
        throw DataError("pretrained embeddings line " + std::to_string(line_no) + ": expected " +
                        std::to_string(dim) + " values, got " + std::to_string(values.size()));
      }
      if (!vocab.contains(word)) continue;
      const TokenId id = vocab.id(word);
      if (id == kPad) continue;
      std::copy(values.begin(), values.end(), table.row(id).begin());
    }
  }
  for (double& v : table.row(kPad)) v = 0.0;
  Parameter p("embeddings", std::move(table));
  p.pinned_rows = {kPad};
  return p;
}

// ---- JSONL ----------------------------------------------------------------

std::string session_to_json_line(const SessionRecord& session) {
  nlohmann::json j;
  j["session_id"] = session.session_id;
  j["user_id"] = session.user_id;
  j["queries"] = nlohmann::json::array();
  for (const QueryEvent& q : session.queries) {
    nlohmann::json jq;
    jq["text"] = q.raw_text;
    jq["ts"] = q.timestamp;
    jq["impressions"] = nlohmann::json::array();
    for (const Impression& im : q.impressions) {
      jq["impressions"].push_back(
          {{"image_id", im.image_id}, {"caption", im.caption}, {"clicked", im.clicked}, {"rank", im.display_rank}});
    }
    j["queries"].push_back(std::move(jq));
  }
  return j.dump();
}

SessionRecord session_from_json_line(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed session JSON: ") + e.what());
  }
  try {
    SessionRecord s;
    s.session_id = j.at("session_id").get<std::string>();
    s.user_id = j.value("user_id", std::string());
    const auto& queries = j.at("queries");
    if (!queries.is_array() || queries.empty()) throw DataError("session " + s.session_id + " has no queries");
    for (const auto& jq : queries) {
      QueryEvent q;
      q.raw_text = jq.at("text").get<std::string>();
      q.words = split_words(normalize_text(q.raw_text));
      q.timestamp = jq.at("ts").get<std::int64_t>();
      std::vector<bool> seen(kImpressions + 1, false);
      for (const auto& ji : jq.at("impressions")) {
        Impression im;
        im.image_id = ji.at("image_id").get<std::string>();
        im.caption = ji.at("caption").get<std::string>();
        im.words = split_words(normalize_text(im.caption));
        im.clicked = ji.at("clicked").get<bool>();
        im.display_rank = ji.at("rank").get<int>();
        if (im.display_rank < 1 || im.display_rank > static_cast<int>(kImpressions) || seen[im.display_rank]) {
          throw DataError("session " + s.session_id + ": invalid or duplicate display rank " +
                          std::to_string(im.display_rank));
        }
        seen[im.display_rank] = true;
        q.impressions.push_back(std::move(im));
      }
      if (q.impressions.size() != kImpressions) {
        throw DataError("session " + s.session_id + ": expected " + std::to_string(kImpressions) +
                        " impressions per query, got " + std::to_string(q.impressions.size()));
      }
      if (!s.queries.empty() && q.timestamp < s.queries.back().timestamp) {
        throw DataError("session " + s.session_id + ": queries are not time-ordered");
      }
      s.queries.push_back(std::move(q));
    }
    truncate_session(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("session JSON missing or mistyped field: ") + e.what());
  }
}

std::vector<SessionRecord> read_sessions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read session log " + path);
  std::vector<SessionRecord> sessions;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      sessions.push_back(session_from_json_line(line));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return sessions;
}

void write_sessions(const std::string& path, const std::vector<SessionRecord>& sessions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write session log " + path);
  for (const SessionRecord& s : sessions) out << session_to_json_line(s) << '\n';
  if (!out) throw DataError("failed writing session log " + path);
}

}  // namespace qreform
