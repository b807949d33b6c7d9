#pragma once

#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace sfusion {

using Pronunciation = std::vector<std::string>;

// Grapheme sequence -> alternative phoneme sequences.
class G2PMap {
 public:
  // Repeated keys merge their alternatives.
  void add(const std::string& graphemes, Pronunciation phonemes);
  const std::map<std::string, std::set<Pronunciation>>& entries() const { return entries_; }
  // Number of (grapheme, phoneme sequence) correspondences.
  std::size_t correspondence_count() const;
  std::size_t max_key_length() const { return max_key_; }
  std::set<std::string> phoneme_alphabet() const;

  // grapheme_seq<TAB>phoneme phoneme ... one alternative per line.
  static G2PMap read(std::istream& is);
  static G2PMap read_file(const std::string& path);

 private:
  std::map<std::string, std::set<Pronunciation>> entries_;
  std::size_t max_key_ = 0;
};

class Lexicon {
 public:
  void add(const std::string& word, Pronunciation phonemes);
  const Pronunciation& at(const std::string& word) const;
  bool contains(const std::string& word) const { return entries_.contains(word); }
  const std::map<std::string, Pronunciation>& entries() const { return entries_; }

  // word<TAB>phoneme phoneme ...
  static Lexicon read(std::istream& is);
  static Lexicon read_file(const std::string& path);

 private:
  std::map<std::string, Pronunciation> entries_;
};

// True when no segmentation of the word into map keys, with any choice of
// alternatives per segment, concatenates to the lexicon pronunciation. A
// word with no full segmentation is surprising. Throws ContractError when
// the word is not in the lexicon.
bool surprising_pronunciation(const std::string& word, const Lexicon& lexicon, const G2PMap& g2p);

}  // namespace sfusion
