#include "sfusion/text.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "sfusion/error.h"

namespace sfusion {

namespace {

constexpr std::string_view kSosSymbol = "<s>";
constexpr std::string_view kEosSymbol = "</s>";
constexpr std::string_view kSpaceSymbol = "<space>";

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace

CharVocab::CharVocab(std::string_view chars) {
  add(std::string(kSosSymbol));
  add(std::string(kEosSymbol));
  add(std::string(kSpaceSymbol));
  index_[' '] = kSpace;
  for (char c : chars) {
    if (c == ' ' || index_.contains(c)) continue;
    index_[c] = static_cast<TokenId>(symbols_.size());
    add(std::string(1, c));
  }
}

CharVocab CharVocab::latin() { return CharVocab("abcdefghijklmnopqrstuvwxyz"); }

CharVocab CharVocab::from_text(std::span<const std::string> lines) {
  std::set<char> seen;
  for (const auto& line : lines) seen.insert(line.begin(), line.end());
  return CharVocab(std::string(seen.begin(), seen.end()));
}

void CharVocab::add(std::string symbol) { symbols_.push_back(std::move(symbol)); }

bool CharVocab::contains(char c) const { return index_.contains(c); }

TokenId CharVocab::id(char c) const {
  auto it = index_.find(c);
  if (it == index_.end()) {
    throw ContractError(std::string("vocab: character '") + c + "' is not in the vocabulary");
  }
  return it->second;
}

std::string CharVocab::symbol(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw ContractError("vocab: token id " + std::to_string(id) + " out of range");
  }
  if (id == kSpace) return " ";
  return symbols_[id];
}

std::vector<TokenId> CharVocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  ids.reserve(text.size() + 2);
  ids.push_back(kSos);
  for (std::size_t i = 0; i < text.size(); ++i) {
    auto it = index_.find(text[i]);
    if (it == index_.end()) {
      throw ContractError(std::string("encode: out-of-vocabulary character '") + text[i] +
                          "' at position " + std::to_string(i));
    }
    ids.push_back(it->second);
  }
  ids.push_back(kEos);
  return ids;
}

std::string CharVocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id == kSos || id == kEos) continue;
    out += symbol(id);
  }
  return out;
}

std::uint64_t CharVocab::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& s : symbols_) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  }
  return h;
}

void CharVocab::write(std::ostream& os) const {
  for (const auto& s : symbols_) os << s << '\n';
}

CharVocab CharVocab::read(std::istream& is) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    lines.push_back(line);
  }
  if (lines.size() < 3 || lines[0] != kSosSymbol || lines[1] != kEosSymbol ||
      lines[2] != kSpaceSymbol) {
    throw ParseError("vocab: file must start with <s>, </s>, <space>");
  }
  std::string chars;
  for (std::size_t i = 3; i < lines.size(); ++i) {
    if (lines[i].size() != 1) {
      throw ParseError("vocab: line " + std::to_string(i + 1) + " is not a single character");
    }
    chars += lines[i];
  }
  CharVocab v(chars);
  if (v.size() != lines.size()) throw ParseError("vocab: duplicate symbols");
  return v;
}

std::string normalize_line(std::string_view line) {
  std::string out(line);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) words.emplace_back(line.substr(start, i - start));
  }
  return words;
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

bool valid_utf8(std::string_view bytes) {
  std::size_t i = 0;
  while (i < bytes.size()) {
    auto c = static_cast<unsigned char>(bytes[i]);
    std::size_t extra;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= bytes.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      auto cc = static_cast<unsigned char>(bytes[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong encodings, surrogates and out-of-range code points.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) ||
        (extra == 3 && cp < 0x10000) || cp > 0x10FFFF ||
        (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += extra + 1;
  }
  return true;
}

std::vector<std::string> read_corpus(std::istream& is) {
  std::vector<std::string> lines;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!valid_utf8(line)) {
      throw ParseError("corpus: invalid UTF-8 on line " + std::to_string(lineno));
    }
    if (split_words(line).empty()) continue;
    lines.push_back(normalize_line(line));
  }
  return lines;
}

std::vector<std::string> read_corpus_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file '" + path + "'");
  return read_corpus(in);
}

void write_corpus(std::ostream& os, std::span<const std::string> lines) {
  for (const auto& l : lines) os << l << '\n';
}

void write_corpus_file(const std::string& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file '" + path + "'");
  write_corpus(out, lines);
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::uint64_t CorpusStats::count(const std::string& word) const {
  auto it = counts.find(word);
  return it == counts.end() ? 0 : it->second;
}

void CorpusStats::merge(const CorpusStats& other) {
  for (const auto& [w, c] : other.counts) counts[w] += c;
  total_words += other.total_words;
  total_sentences += other.total_sentences;
}

void CorpusStats::write(std::ostream& os) const {
  for (const auto& [w, c] : counts) os << w << '\t' << c << '\n';
}

CorpusStats CorpusStats::read(std::istream& is) {
  CorpusStats stats;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ParseError("stats: line " + std::to_string(lineno) + " is not word<TAB>count");
    }
    std::string word = line.substr(0, tab);
    std::uint64_t count = 0;
    try {
      std::size_t used = 0;
      count = std::stoull(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("stats: bad count on line " + std::to_string(lineno));
    }
    if (count == 0) throw ParseError("stats: zero count on line " + std::to_string(lineno));
    if (!stats.counts.emplace(word, count).second) {
      throw ParseError("stats: duplicate word '" + word + "' on line " + std::to_string(lineno));
    }
    stats.total_words += count;
  }
  return stats;
}

CorpusStats CorpusStats::read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stats file '" + path + "'");
  return read(in);
}

void CorpusStats::write_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write stats file '" + path + "'");
  write(out);
}

CorpusStats count_unigrams(std::span<const std::string> lines, unsigned workers) {
  workers = std::max(1u, workers);
  auto count_range = [&lines](std::size_t begin, std::size_t end) {
    CorpusStats s;
    for (std::size_t i = begin; i < end; ++i) {
      auto words = split_words(lines[i]);
      if (words.empty()) continue;
      ++s.total_sentences;
      for (auto& w : words) {
        ++s.counts[normalize_line(w)];
        ++s.total_words;
      }
    }
    return s;
  };
  if (workers == 1 || lines.size() < 2) return count_range(0, lines.size());

  std::vector<CorpusStats> shards(workers);
  std::vector<std::thread> threads;
  std::size_t chunk = (lines.size() + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    std::size_t begin = std::min(lines.size(), w * chunk);
    std::size_t end = std::min(lines.size(), begin + chunk);
    threads.emplace_back([&, w, begin, end] { shards[w] = count_range(begin, end); });
  }
  for (auto& t : threads) t.join();
  CorpusStats total;
  for (const auto& s : shards) total.merge(s);
  return total;
}

CorpusStats count_unigrams(std::istream& is) {
  auto lines = read_corpus(is);
  return count_unigrams(lines, 1);
}

std::vector<std::string> make_word_list(std::size_t n, std::uint64_t seed) {
  static constexpr std::string_view kConsonants = "bcdfghjklmnprstvwz";
  static constexpr std::string_view kVowels = "aeiou";
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len_dist(3, 8);
  std::unordered_set<std::string> seen;
  std::vector<std::string> words;
  words.reserve(n);
  while (words.size() < n) {
    std::size_t len = len_dist(rng);
    std::string w;
    bool vowel = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    for (std::size_t i = 0; i < len; ++i) {
      std::string_view pool = vowel ? kVowels : kConsonants;
      w += pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      vowel = !vowel;
    }
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

std::vector<std::string> synth_corpus(std::span<const std::string> words,
                                      const SynthCorpusConfig& config) {
  if (words.empty()) throw ContractError("synth_corpus: empty word list");
  if (config.n_sentences < 1) throw ContractError("synth_corpus: n_sentences must be >= 1");
  if (config.min_words < 1 || config.max_words < config.min_words) {
    throw ContractError("synth_corpus: need 1 <= min_words <= max_words");
  }
  std::vector<double> weights(words.size());
  for (std::size_t r = 0; r < words.size(); ++r) {
    weights[r] = std::pow(static_cast<double>(r + 1), -config.zipf_exponent);
  }
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::uniform_int_distribution<std::size_t> len_dist(config.min_words, config.max_words);
  std::mt19937_64 rng(config.seed);
  std::vector<std::string> out;
  out.reserve(config.n_sentences);
  for (std::size_t s = 0; s < config.n_sentences; ++s) {
    std::size_t len = len_dist(rng);
    std::string line;
    for (std::size_t i = 0; i < len; ++i) {
      if (i) line += ' ';
      line += words[pick(rng)];
    }
    out.push_back(std::move(line));
  }
  return out;
}

}  // namespace sfusion
