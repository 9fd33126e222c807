#include "qreform/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "qreform/error.hpp"

namespace qreform {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw UsageError("expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_unsigned(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw UsageError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("expected true or false, got '" + v + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

Field size_field(std::string key, std::size_t RunConfig::*member) {
  return {std::move(key), [member](const RunConfig& c) { return std::to_string(c.*member); },
          [member](RunConfig& c, const std::string& v) { c.*member = parse_unsigned(v); }};
}

Field double_field(std::string key, double RunConfig::*member) {
  return {std::move(key), [member](const RunConfig& c) { return format_double(c.*member); },
          [member](RunConfig& c, const std::string& v) { c.*member = parse_double(v); }};
}

Field dim_field(std::string key, std::size_t ModelDims::*member) {
  return {std::move(key), [member](const RunConfig& c) { return std::to_string(c.dims.*member); },
          [member](RunConfig& c, const std::string& v) { c.dims.*member = parse_unsigned(v); }};
}

Field synth_field(std::string key, std::size_t SynthConfig::*member) {
  return {std::move(key), [member](const RunConfig& c) { return std::to_string(c.synth.*member); },
          [member](RunConfig& c, const std::string& v) { c.synth.*member = parse_unsigned(v); }};
}

Field string_field(std::string key, std::string RunConfig::*member) {
  return {std::move(key), [member](const RunConfig& c) { return c.*member; },
          [member](RunConfig& c, const std::string& v) { c.*member = v; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"regime", [](const RunConfig& c) { return to_string(c.regime); },
       [](RunConfig& c, const std::string& v) {
         if (v == "next_query") {
           c.regime = Regime::NextQuery;
         } else if (v == "clicked_caption") {
           c.regime = Regime::ClickedCaption;
         } else {
           throw UsageError("regime must be next_query or clicked_caption, got '" + v + "'");
         }
       }},
      {"ranker", [](const RunConfig& c) { return to_string(c.ranker); },
       [](RunConfig& c, const std::string& v) {
         if (v == "off") {
           c.ranker = RankerMode::Off;
         } else if (v == "ce") {
           c.ranker = RankerMode::CrossEntropy;
         } else if (v == "ro") {
           c.ranker = RankerMode::Pairwise;
         } else {
           throw UsageError("ranker must be off, ce or ro, got '" + v + "'");
         }
       }},
      double_field("alpha", &RunConfig::alpha),
      double_field("lambda", &RunConfig::lambda),
      {"entropy", [](const RunConfig& c) { return std::string(c.entropy == EntropyMode::Reward ? "reward" : "literal"); },
       [](RunConfig& c, const std::string& v) {
         if (v == "reward") {
           c.entropy = EntropyMode::Reward;
         } else if (v == "literal") {
           c.entropy = EntropyMode::Literal;
         } else {
           throw UsageError("entropy must be reward or literal, got '" + v + "'");
         }
       }},
      {"reduction", [](const RunConfig& c) { return std::string(c.reduction == Reduction::Sum ? "sum" : "mean"); },
       [](RunConfig& c, const std::string& v) {
         if (v == "sum") {
           c.reduction = Reduction::Sum;
         } else if (v == "mean") {
           c.reduction = Reduction::Mean;
         } else {
           throw UsageError("reduction must be sum or mean, got '" + v + "'");
         }
       }},
      double_field("lr", &RunConfig::lr),
      size_field("batch_size", &RunConfig::batch_size),
      size_field("max_epochs", &RunConfig::max_epochs),
      size_field("patience", &RunConfig::patience),
      dim_field("embedding_dim", &ModelDims::embedding),
      dim_field("query_hidden", &ModelDims::query_hidden),
      dim_field("attention_dim", &ModelDims::attention),
      dim_field("session_hidden", &ModelDims::session_hidden),
      dim_field("decoder_hidden", &ModelDims::decoder_hidden),
      size_field("vocab_max", &RunConfig::vocab_max),
      size_field("beam_width", &RunConfig::beam_width),
      {"length_normalize", [](const RunConfig& c) { return std::string(c.length_normalize ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.length_normalize = parse_bool(v); }},
      {"top1", [](const RunConfig& c) { return std::string(c.top1 ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.top1 = parse_bool(v); }},
      {"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& v) { c.seed = parse_unsigned(v); }},
      {"split_seed", [](const RunConfig& c) { return std::to_string(c.split_seed); },
       [](RunConfig& c, const std::string& v) { c.split_seed = parse_unsigned(v); }},
      synth_field("synth_sessions", &SynthConfig::n_sessions),
      synth_field("synth_themes", &SynthConfig::n_themes),
      synth_field("synth_words_per_theme", &SynthConfig::words_per_theme),
      synth_field("synth_modifiers_per_theme", &SynthConfig::modifiers_per_theme),
      synth_field("synth_shared_modifiers", &SynthConfig::shared_modifiers),
      {"synth_seed", [](const RunConfig& c) { return std::to_string(c.synth.seed); },
       [](RunConfig& c, const std::string& v) { c.synth.seed = parse_unsigned(v); }},
      string_field("pretrained_embeddings", &RunConfig::pretrained_path),
      string_field("stopwords", &RunConfig::stopwords_path),
      size_field("grad_check_coordinates", &RunConfig::grad_check_coordinates),
      double_field("debug_corrupt_gradient", &RunConfig::debug_corrupt_gradient),
  };
  return table;
}

}  // namespace

std::string to_string(Regime regime) { return regime == Regime::NextQuery ? "next_query" : "clicked_caption"; }

std::string to_string(RankerMode mode) {
  switch (mode) {
    case RankerMode::Off:
      return "off";
    case RankerMode::CrossEntropy:
      return "ce";
    case RankerMode::Pairwise:
      return "ro";
  }
  return "off";
}

RunConfig desk_profile() { return RunConfig{}; }

RunConfig paper_profile() {
  RunConfig c;
  c.dims = ModelDims{300, 128, 64, 512, 256};
  c.vocab_max = 37648;
  c.batch_size = 512;
  return c;
}

RunConfig parse_config(const std::string& text) {
  struct Entry {
    std::size_t line;
    std::string key, value;
  };
  std::vector<Entry> entries;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  std::string profile = "desk";
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
    Entry e{line_no, trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
    if (e.key.empty()) throw UsageError("config line " + std::to_string(line_no) + ": empty key");
    if (e.key == "profile") {
      if (e.value != "desk" && e.value != "paper") {
        throw UsageError("config line " + std::to_string(line_no) + ": profile must be desk or paper");
      }
      profile = e.value;
      continue;
    }
    entries.push_back(std::move(e));
  }
  RunConfig c = profile == "paper" ? paper_profile() : desk_profile();
  for (const Entry& e : entries) {
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == e.key; });
    if (it == table.end()) throw UsageError("config line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
    try {
      it->set(c, e.value);
    } catch (const UsageError& err) {
      throw UsageError("config line " + std::to_string(e.line) + " (" + e.key + "): " + err.what());
    }
  }
  validate(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

void validate(const RunConfig& c) {
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw UsageError("alpha must lie in [0, 1]");
  if (!(c.lambda >= 0.0)) throw UsageError("lambda must be non-negative");
  if (!(c.lr > 0.0)) throw UsageError("lr must be positive");
  for (std::size_t d : {c.dims.embedding, c.dims.query_hidden, c.dims.attention, c.dims.session_hidden,
                        c.dims.decoder_hidden}) {
    if (d == 0) throw UsageError("model dimensions must be at least 1");
  }
  if (c.batch_size == 0) throw UsageError("batch_size must be at least 1");
  if (c.beam_width == 0) throw UsageError("beam_width must be at least 1");
  if (c.vocab_max < 5) throw UsageError("vocab_max must leave room for at least one regular word");
  if (c.max_epochs == 0) throw UsageError("max_epochs must be at least 1");
}

}  // namespace qreform
