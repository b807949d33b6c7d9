#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sfusion {

using TokenId = int;

// Character vocabulary. Ids are dense from 0; SOS, EOS and SPACE are
// always ids 0, 1, 2.
class CharVocab {
 public:
  static constexpr TokenId kSos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kSpace = 2;

  // Reserved symbols followed by the given characters in order.
  // Duplicates and the space character are ignored.
  explicit CharVocab(std::string_view chars);
  // Lowercase latin letters.
  static CharVocab latin();
  // Every distinct character of the text, sorted.
  static CharVocab from_text(std::span<const std::string> lines);

  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  bool contains(char c) const;
  TokenId id(char c) const;
  // Printable form of a token; SPACE decodes to " ".
  std::string symbol(TokenId id) const;

  // SOS + chars + EOS. Throws ContractError naming the character and its
  // position when a character is outside the vocabulary.
  std::vector<TokenId> encode(std::string_view text) const;
  // Drops SOS/EOS and concatenates the rest.
  std::string decode(std::span<const TokenId> ids) const;

  // FNV-1a over the symbol list; stored in checkpoints.
  std::uint64_t hash() const;

  // One symbol per line, line index = id. Reserved symbols are written as
  // <s>, </s> and <space>.
  void write(std::ostream& os) const;
  static CharVocab read(std::istream& is);

 private:
  CharVocab() = default;
  void add(std::string symbol);

  std::vector<std::string> symbols_;
  std::unordered_map<char, TokenId> index_;
};

// ASCII lowercasing applied at ingestion.
std::string normalize_line(std::string_view line);
// Whitespace split of an already-normalized line.
std::vector<std::string> split_words(std::string_view line);
std::string join_words(std::span<const std::string> words);

// True when the bytes form valid UTF-8.
bool valid_utf8(std::string_view bytes);

// Reads one sentence per line: lowercased, trailing '\r' stripped, blank
// lines skipped. Invalid UTF-8 throws ParseError with the 1-based line.
std::vector<std::string> read_corpus(std::istream& is);
std::vector<std::string> read_corpus_file(const std::string& path);
void write_corpus(std::ostream& os, std::span<const std::string> lines);
void write_corpus_file(const std::string& path, std::span<const std::string> lines);

struct CorpusStats {
  std::map<std::string, std::uint64_t> counts;
  std::uint64_t total_words = 0;
  std::uint64_t total_sentences = 0;

  std::uint64_t count(const std::string& word) const;
  void merge(const CorpusStats& other);
  bool operator==(const CorpusStats&) const = default;

  // TSV word<TAB>count sorted by word. Totals are recomputed on read.
  void write(std::ostream& os) const;
  static CorpusStats read(std::istream& is);
  static CorpusStats read_file(const std::string& path);
  void write_file(const std::string& path) const;
};

// Counts words of already-read sentences. Shards by line range over the
// given number of workers and merges; the result is worker-independent.
CorpusStats count_unigrams(std::span<const std::string> lines, unsigned workers = 1);
// Streaming form: validates UTF-8 and skips blank lines.
CorpusStats count_unigrams(std::istream& is);

// Distinct lowercase pseudo-words of 3..8 letters.
std::vector<std::string> make_word_list(std::size_t n, std::uint64_t seed);

struct SynthCorpusConfig {
  double zipf_exponent = 1.0;
  std::size_t n_sentences = 1000;
  std::size_t min_words = 2;
  std::size_t max_words = 5;
  std::uint64_t seed = 1;
};

// Sentences whose words are drawn i.i.d. with P(rank r) proportional to
// r^-exponent over the given word list (rank 1 = first word).
std::vector<std::string> synth_corpus(std::span<const std::string> words,
                                      const SynthCorpusConfig& config);

}  // namespace sfusion
