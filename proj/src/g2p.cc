#include "sfusion/g2p.h"

#include <fstream>
#include <istream>

#include "sfusion/error.h"
#include "sfusion/text.h"

namespace sfusion {

namespace {

// Splits "key<TAB>a b c" lines; the phoneme part may be empty (silent).
template <typename Fn>
void read_tab_lines(std::istream& is, const char* what, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ParseError(std::string(what) + ": line " + std::to_string(lineno) +
                       " is not key<TAB>phonemes");
    }
    fn(line.substr(0, tab), split_words(std::string_view(line).substr(tab + 1)), lineno);
  }
}

}  // namespace

void G2PMap::add(const std::string& graphemes, Pronunciation phonemes) {
  if (graphemes.empty()) throw ContractError("g2p: grapheme key must be non-empty");
  entries_[graphemes].insert(std::move(phonemes));
  max_key_ = std::max(max_key_, graphemes.size());
}

std::size_t G2PMap::correspondence_count() const {
  std::size_t n = 0;
  for (const auto& [k, alts] : entries_) n += alts.size();
  return n;
}

std::set<std::string> G2PMap::phoneme_alphabet() const {
  std::set<std::string> out;
  for (const auto& [k, alts] : entries_) {
    for (const auto& p : alts) out.insert(p.begin(), p.end());
  }
  return out;
}

G2PMap G2PMap::read(std::istream& is) {
  G2PMap m;
  read_tab_lines(is, "g2p map", [&m](std::string key, Pronunciation p, std::size_t) {
    m.add(key, std::move(p));
  });
  return m;
}

G2PMap G2PMap::read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open g2p map '" + path + "'");
  return read(in);
}

void Lexicon::add(const std::string& word, Pronunciation phonemes) {
  if (!entries_.emplace(word, std::move(phonemes)).second) {
    throw ContractError("lexicon: duplicate word '" + word + "'");
  }
}

const Pronunciation& Lexicon::at(const std::string& word) const {
  auto it = entries_.find(word);
  if (it == entries_.end()) throw ContractError("lexicon: word '" + word + "' not found");
  return it->second;
}

Lexicon Lexicon::read(std::istream& is) {
  Lexicon lex;
  read_tab_lines(is, "lexicon", [&lex](std::string word, Pronunciation p, std::size_t lineno) {
    if (lex.contains(word)) {
      throw ParseError("lexicon: duplicate word '" + word + "' on line " + std::to_string(lineno));
    }
    lex.add(word, std::move(p));
  });
  return lex;
}

Lexicon Lexicon::read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open lexicon '" + path + "'");
  return read(in);
}

bool surprising_pronunciation(const std::string& word, const Lexicon& lexicon, const G2PMap& g2p) {
  const Pronunciation& truth = lexicon.at(word);
  const std::size_t n = word.size();
  const std::size_t m = truth.size();
  // reach[i][j]: graphemes [0, i) can yield phonemes [0, j) under some
  // segmentation. Membership of the truth in the cross-product prediction
  // set is exactly reach[n][m].
  std::vector<char> reach((n + 1) * (m + 1), 0);
  auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  reach[at(0, 0)] = 1;
  const auto& entries = g2p.entries();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= m; ++j) {
      if (!reach[at(i, j)]) continue;
      for (std::size_t len = 1; len <= g2p.max_key_length() && i + len <= n; ++len) {
        auto it = entries.find(word.substr(i, len));
        if (it == entries.end()) continue;
        for (const auto& alt : it->second) {
          if (j + alt.size() > m) continue;
          if (std::equal(alt.begin(), alt.end(), truth.begin() + static_cast<std::ptrdiff_t>(j))) {
            reach[at(i + len, j + alt.size())] = 1;
          }
        }
      }
    }
  }
  return !reach[at(n, m)];
}

}  // namespace sfusion
