#include <algorithm>
#include <set>

#include "qreform/corpus.hpp"
#include "qreform/error.hpp"
#include "qreform/rng.hpp"
#include "qreform/stopwords.hpp"

// Synthetic session logs with planted structure.
//
// Each session is drawn from one theme (a small bag of content words plus a
// few preferred modifiers). Successive queries perturb the previous one by
// adding, dropping or substituting theme words. Every query shows
// kImpressions captions; roughly half are on-theme (they reuse query words,
// add other theme words and modifiers), the rest come from other themes.
// Click probability is the product of a relevance term (on-theme, overlap
// with the query) and a position term decaying with display rank.

namespace qreform {
namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

struct Theme {
  std::vector<std::string> words;
  std::vector<std::string> modifiers;
};

class WordMaker {
 public:
  explicit WordMaker(Rng& rng) : rng_(rng) {}

  std::string fresh() {
    for (;;) {
      std::string w;
      const std::size_t syllables = 2 + rng_.below(2);
      for (std::size_t s = 0; s < syllables; ++s) {
        w.push_back(kConsonants[rng_.below(kConsonants.size())]);
        w.push_back(kVowels[rng_.below(kVowels.size())]);
      }
      if (default_stopwords().count(w) || !used_.insert(w).second) continue;
      return w;
    }
  }

 private:
  Rng& rng_;
  std::set<std::string> used_;
};

bool contains(const std::vector<std::string>& words, const std::string& w) {
  return std::find(words.begin(), words.end(), w) != words.end();
}

std::string pick_absent(Rng& rng, const std::vector<std::string>& pool, const std::vector<std::string>& present) {
  std::vector<std::string> candidates;
  for (const std::string& w : pool) {
    if (!contains(present, w)) candidates.push_back(w);
  }
  if (candidates.empty()) return {};
  return candidates[rng.below(candidates.size())];
}

std::vector<std::string> first_query(Rng& rng, const Theme& theme) {
  const double u = rng.uniform();
  const std::size_t len = u < 0.2 ? 1 : (u < 0.65 ? 2 : 3);
  std::vector<std::string> q;
  while (q.size() < len) q.push_back(pick_absent(rng, theme.words, q));
  return q;
}

std::vector<std::string> perturb(Rng& rng, const Theme& theme, const std::vector<std::string>& prev) {
  for (int attempt = 0; attempt < 16; ++attempt) {
    std::vector<std::string> q = prev;
    switch (rng.below(4)) {
      case 0:
        if (q.size() < 4) q.push_back(pick_absent(rng, theme.words, q));
        break;
      case 1:
        if (q.size() > 1) q.erase(q.begin() + static_cast<std::ptrdiff_t>(rng.below(q.size())));
        break;
      case 2: {
        const std::string sub = pick_absent(rng, theme.words, q);
        if (!sub.empty()) q[rng.below(q.size())] = sub;
        break;
      }
      default:
        if (q.size() < 4) q.push_back(pick_absent(rng, theme.modifiers, q));
        break;
    }
    q.erase(std::remove(q.begin(), q.end(), std::string()), q.end());
    if (!q.empty() && q != prev) return q;
  }
  return prev;
}

/// Modifiers first, then theme words in the theme's canonical order.
std::vector<std::string> make_caption(Rng& rng, const Theme& theme, const std::vector<std::string>& shared_modifiers,
                                      const std::vector<std::string>& query) {
  std::vector<std::string> caption;
  const std::size_t n_mod = 1 + (rng.bernoulli(0.6) ? 1 : 0);
  for (std::size_t k = 0; k < n_mod; ++k) {
    const auto& pool = rng.bernoulli(0.8) ? theme.modifiers : shared_modifiers;
    const std::string m = pick_absent(rng, pool, caption);
    if (!m.empty()) caption.push_back(m);
  }
  std::vector<std::string> content;
  for (const std::string& w : query) {
    if (contains(theme.words, w) && rng.bernoulli(0.75)) content.push_back(w);
  }
  const std::size_t extra = 2 + (rng.bernoulli(0.4) ? 1 : 0);
  for (std::size_t k = 0; k < extra; ++k) {
    const std::string w = pick_absent(rng, theme.words, content);
    if (!w.empty()) content.push_back(w);
  }
  for (const std::string& w : theme.words) {
    if (contains(content, w)) caption.push_back(w);
  }
  return caption;
}

std::string join_words(const std::vector<std::string>& words, Rng& rng) {
  std::string out;
  for (const std::string& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  // Occasional surface noise that normalization must undo.
  if (!out.empty() && rng.bernoulli(0.1)) out[0] = static_cast<char>(out[0] - 'a' + 'A');
  if (rng.bernoulli(0.05)) out += "!";
  return out;
}

}  // namespace

std::vector<SessionRecord> synth_generate(const SynthConfig& config) {
  if (config.n_themes < 2) throw UsageError("synth: need at least 2 themes");
  if (config.words_per_theme < 4) throw UsageError("synth: need at least 4 words per theme");
  if (config.modifiers_per_theme < 1 || config.shared_modifiers < 1) throw UsageError("synth: need modifiers");

  Rng rng(config.seed);
  WordMaker maker(rng);
  std::vector<Theme> themes(config.n_themes);
  for (Theme& t : themes) {
    for (std::size_t k = 0; k < config.words_per_theme; ++k) t.words.push_back(maker.fresh());
    for (std::size_t k = 0; k < config.modifiers_per_theme; ++k) t.modifiers.push_back(maker.fresh());
  }
  std::vector<std::string> shared;
  for (std::size_t k = 0; k < config.shared_modifiers; ++k) shared.push_back(maker.fresh());

  std::vector<SessionRecord> sessions;
  sessions.reserve(config.n_sessions);
  std::size_t image_counter = 0;
  for (std::size_t s = 0; s < config.n_sessions; ++s) {
    const std::size_t theme_id = rng.below(themes.size());
    const Theme& theme = themes[theme_id];
    const double u = rng.uniform();
    const std::size_t n_queries = u < 0.25 ? 1 : u < 0.70 ? 2 : u < 0.88 ? 3 : u < 0.96 ? 4 : 5;

    SessionRecord session;
    session.session_id = "s" + std::to_string(s);
    session.user_id = "u" + std::to_string(rng.below(std::max<std::size_t>(1, config.n_sessions / 3 + 1)));
    std::int64_t ts = 1'600'000'000 + static_cast<std::int64_t>(s) * 86'400;
    std::vector<std::string> words = first_query(rng, theme);
    for (std::size_t i = 0; i < n_queries; ++i) {
      if (i > 0) {
        words = perturb(rng, theme, words);
        ts += 20 + static_cast<std::int64_t>(rng.below(1500));
      }
      QueryEvent q;
      q.words = words;
      q.raw_text = join_words(words, rng);
      q.timestamp = ts;

      std::vector<int> on_theme(kImpressions, 0);
      const std::size_t n_on = 3 + rng.below(4);
      for (std::size_t k = 0; k < n_on; ++k) on_theme[k] = 1;
      rng.shuffle(std::span<int>(on_theme));
      for (std::size_t r = 0; r < kImpressions; ++r) {
        Impression im;
        im.display_rank = static_cast<int>(r + 1);
        im.image_id = "img" + std::to_string(image_counter++);
        double relevance = 0.03;
        if (on_theme[r]) {
          im.words = make_caption(rng, theme, shared, words);
          std::size_t overlap = 0;
          for (const std::string& w : words) overlap += contains(im.words, w) ? 1 : 0;
          relevance = 0.3 + 0.5 * static_cast<double>(overlap) / static_cast<double>(words.size());
        } else {
          std::size_t other = rng.below(themes.size() - 1);
          if (other >= theme_id) ++other;
          im.words = make_caption(rng, themes[other], shared, {});
        }
        const double position = 1.0 / (1.0 + 0.3 * static_cast<double>(r));
        im.clicked = rng.bernoulli(std::min(0.95, relevance * position));
        im.caption = join_words(im.words, rng);
        q.impressions.push_back(std::move(im));
      }
      session.queries.push_back(std::move(q));
    }
    sessions.push_back(std::move(session));
  }
  return sessions;
}

SynthSummary summarize(const std::vector<SessionRecord>& sessions) {
  SynthSummary out;
  out.sessions = sessions.size();
  double query_words = 0.0, caption_words = 0.0, rr = 0.0;
  std::size_t clicked_queries = 0;
  for (const SessionRecord& s : sessions) {
    for (const QueryEvent& q : s.queries) {
      ++out.queries;
      query_words += static_cast<double>(q.words.size());
      out.impressions += q.impressions.size();
      for (const Impression& im : q.impressions) out.clicks += im.clicked ? 1 : 0;
      if (const auto top = q.top_clicked()) {
        ++clicked_queries;
        caption_words += static_cast<double>(q.impressions[*top].words.size());
        rr += 1.0 / static_cast<double>(q.impressions[*top].display_rank);
      }
    }
  }
  if (out.impressions) out.click_rate = static_cast<double>(out.clicks) / static_cast<double>(out.impressions);
  if (out.queries) out.mean_query_words = query_words / static_cast<double>(out.queries);
  if (clicked_queries) {
    out.mean_clicked_caption_words = caption_words / static_cast<double>(clicked_queries);
    out.display_mrr = rr / static_cast<double>(clicked_queries);
  }
  return out;
}

}  // namespace qreform
