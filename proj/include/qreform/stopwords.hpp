#pragma once

#include <string>
#include <unordered_set>

namespace qreform {

using StopwordSet = std::unordered_set<std::string>;

/// The standard English list (same content as data/stopwords.txt), normalized
/// the way query text is, so "don't" is stored as "dont".
const StopwordSet& default_stopwords();

/// One word per line; entries are normalized on load.
StopwordSet load_stopwords(const std::string& path);

}  // namespace qreform
