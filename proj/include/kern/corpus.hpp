#pragma once

// Aligned-sentence construction: tokenization, gazetteer mention matching
// (leftmost-longest), first-token alignment, and the minimum-entity filter.
// Also the JSON-lines annotated-corpus format shared with pretraining.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kern/common.hpp"
#include "kern/vocab.hpp"

namespace kern::corpus {

struct Mention {
  int entity = 0;       // dense entity index
  int token_begin = 0;  // inclusive
  int token_end = 0;    // exclusive
};

struct AlignedSentence {
  std::vector<int> tokens;
  std::vector<Mention> mentions;
  // token index -> local mention index; keys are exactly the mention start
  // positions.
  std::map<int, int> alignment;
  int doc = 0;
  int sent = 0;

  int entity_count() const { return static_cast<int>(mentions.size()); }
  void validate() const;
};

// surface string -> entity id string, plus the dense mapping applied at
// annotation time.
class Gazetteer {
 public:
  void add(const std::string& surface, const std::string& entity);
  static Gazetteer load(const std::string& path);
  void save(const std::string& path) const;

  bool empty() const { return entries_.empty(); }
  std::size_t max_surface_len() const { return max_surface_len_; }
  const std::string* find(const std::string& surface) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
  std::size_t max_surface_len_ = 0;
};

// Leftmost-longest non-overlapping matching of gazetteer surfaces against
// the raw text covered by token spans. Returns mentions carrying the
// gazetteer's entity-id STRING resolved through `entity_ids`; surfaces
// whose entity is not in the vocabulary are skipped and counted.
struct MatchStats {
  std::size_t matched = 0;
  std::size_t skipped_unknown_entity = 0;
};
std::vector<Mention> match_mentions(
    const std::string& text, const std::vector<TokenSpan>& tokens,
    const Gazetteer& gazetteer, const std::map<std::string, int>& entity_ids,
    MatchStats* stats = nullptr);

// The first-token alignment map f(w)=e from non-overlapping mentions.
std::map<int, int> align(const std::vector<Mention>& mentions);

// Keeps sentences with at least `min_entities` mentions.
std::vector<AlignedSentence> filter_sentences(
    std::vector<AlignedSentence> sentences, int min_entities = 3);

// Raw corpus text: one sentence per line, blank line = document boundary.
struct RawCorpus {
  // documents[d][s] = sentence text
  std::vector<std::vector<std::string>> documents;
};
RawCorpus load_raw_corpus(const std::string& path);

std::map<std::string, int> load_entity_vocab(const std::string& path);
void save_entity_vocab(const std::vector<std::string>& names,
                       const std::string& path);

struct AnnotateResult {
  std::vector<AlignedSentence> sentences;  // already filtered
  MatchStats stats;
  std::size_t dropped_sentences = 0;  // below the entity threshold
};
AnnotateResult annotate(const RawCorpus& corpus, const SubwordVocab& vocab,
                        const Gazetteer& gazetteer,
                        const std::map<std::string, int>& entity_ids,
                        int min_entities = 3);

// JSON-lines annotated corpus:
// {"tokens":[...],"mentions":[[entity,start,end],...],"doc":d,"sent":s}
void save_annotated(const std::vector<AlignedSentence>& sentences,
                    const std::string& path);
std::vector<AlignedSentence> load_annotated(const std::string& path);

}  // namespace kern::corpus
