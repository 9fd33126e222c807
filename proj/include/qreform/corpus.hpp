#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qreform/tensor.hpp"

namespace qreform {

using TokenId = std::uint32_t;

inline constexpr std::size_t kQueryLen = 5;
inline constexpr std::size_t kCaptionLen = 10;
inline constexpr std::size_t kTargetLen = 10;
inline constexpr std::size_t kMaxSessionQueries = 5;
inline constexpr std::size_t kImpressions = 10;
/// Gap (seconds) above which a user's next query opens a new session.
inline constexpr std::int64_t kSessionGapSeconds = 1800;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kUnk = 2;
inline constexpr TokenId kEndOfSession = 3;

struct Impression {
  std::string image_id;
  std::string caption;
  std::vector<std::string> words;  // normalized, unpadded
  std::vector<TokenId> caption_tokens;  // exactly kCaptionLen once encoded
  bool clicked = false;
  int display_rank = 0;  // 1..kImpressions, unique within a query
};

struct QueryEvent {
  std::string raw_text;
  std::vector<std::string> words;
  std::vector<TokenId> tokens;  // exactly kQueryLen once encoded
  std::int64_t timestamp = 0;
  std::vector<Impression> impressions;

  bool has_click() const;
  /// Index of the clicked impression with the smallest display rank.
  std::optional<std::size_t> top_clicked() const;
};

struct SessionRecord {
  std::string session_id;
  std::string user_id;
  std::vector<QueryEvent> queries;
};

/// One query of a user's raw log stream, before sessionization.
struct LogEvent {
  std::string user_id;
  QueryEvent query;
};

// ---- text -----------------------------------------------------------------

/// Lowercases, drops everything outside [a-z0-9 ], collapses whitespace, trims.
std::string normalize_text(std::string_view raw);
std::vector<std::string> split_words(std::string_view normalized);

// ---- vocabulary -----------------------------------------------------------

class Vocabulary {
 public:
  static constexpr std::string_view kPadWord = "<p>";
  static constexpr std::string_view kBosWord = "<s>";
  static constexpr std::string_view kUnkWord = "<unk>";
  static constexpr std::string_view kEndOfSessionWord = "<eosess>";

  Vocabulary();

  /// Frequency-ordered vocabulary over query and caption words, ties broken
  /// lexicographically, capped at `max_size` entries including the 4 specials.
  static Vocabulary build(const std::vector<SessionRecord>& sessions, std::size_t max_size);
  static Vocabulary from_words(const std::vector<std::string>& words);

  std::size_t size() const { return words_.size(); }
  TokenId id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(TokenId id) const;
  /// Non-special words in id order (the vocabulary file body).
  std::vector<std::string> regular_words() const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  void add(std::string word);

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Truncates to `max_len`, maps OOV words to UNK, right-pads with PAD.
std::vector<TokenId> encode_and_pad(const std::vector<std::string>& words, std::size_t max_len,
                                    const Vocabulary& vocab);
/// Tokens up to (excluding) the first PAD or end-of-session token.
std::vector<TokenId> strip_padding(const std::vector<TokenId>& tokens);
std::string detokenize(const std::vector<TokenId>& tokens, const Vocabulary& vocab);

/// Fills tokens/caption_tokens of every query from its words.
void encode_session(SessionRecord& session, const Vocabulary& vocab);
void encode_sessions(std::vector<SessionRecord>& sessions, const Vocabulary& vocab);

// ---- sessions -------------------------------------------------------------

/// Splits a per-user, time-ordered stream into sessions at gaps above
/// kSessionGapSeconds. Session ids are "<user>-<n>". No truncation happens here.
std::vector<SessionRecord> segment_sessions(const std::vector<LogEvent>& events);

/// Keeps the first kMaxSessionQueries queries.
void truncate_session(SessionRecord& session);

// ---- targets --------------------------------------------------------------

enum class Regime { NextQuery, ClickedCaption };

struct TrainingExample {
  std::size_t query_index = 0;  // q_i; the prefix is queries[0..query_index]
  std::vector<TokenId> target;  // exactly kTargetLen ids
};

/// Generation examples for one encoded session. NextQuery targets q_{i+1}
/// (end-of-session marker for the last query); ClickedCaption targets the
/// caption of the top-ranked clicked image and skips unclicked queries.
std::vector<TrainingExample> build_targets(const SessionRecord& session, Regime regime);

// ---- splits ---------------------------------------------------------------

struct DatasetSplits {
  std::vector<SessionRecord> train;
  std::vector<SessionRecord> validation;
  std::vector<SessionRecord> test;
};

/// Seeded 80:10:10 partition at session granularity.
DatasetSplits split_dataset(std::vector<SessionRecord> sessions, std::uint64_t seed);

// ---- embeddings -----------------------------------------------------------

/// |V| x dim table: rows found in `pretrained_path` are copied verbatim, the
/// rest are N(0,1) draws in id order; the PAD row is zero and pinned.
Parameter init_embeddings(const Vocabulary& vocab, std::size_t dim, const std::string& pretrained_path,
                          std::uint64_t seed);

// ---- JSONL session logs ---------------------------------------------------

/// Reads a session log; text is normalized, sessions truncated to
/// kMaxSessionQueries, every query must carry kImpressions impressions.
std::vector<SessionRecord> read_sessions(const std::string& path);
void write_sessions(const std::string& path, const std::vector<SessionRecord>& sessions);
std::string session_to_json_line(const SessionRecord& session);
SessionRecord session_from_json_line(std::string_view line);

// ---- synthetic logs -------------------------------------------------------

struct SynthConfig {
  std::size_t n_sessions = 100;
  std::size_t n_themes = 12;
  std::size_t words_per_theme = 6;
  std::size_t modifiers_per_theme = 4;
  std::size_t shared_modifiers = 24;
  std::uint64_t seed = 7;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

/// Themed sessions with planted click preference; see README for the model.
std::vector<SessionRecord> synth_generate(const SynthConfig& config);

struct SynthSummary {
  std::size_t sessions = 0;
  std::size_t queries = 0;
  std::size_t impressions = 0;
  std::size_t clicks = 0;
  double click_rate = 0.0;  // clicks / impressions
  double mean_query_words = 0.0;
  double mean_clicked_caption_words = 0.0;
  /// MRR of the logged display order over queries with at least one click.
  double display_mrr = 0.0;
};

SynthSummary summarize(const std::vector<SessionRecord>& sessions);

}  // namespace qreform
