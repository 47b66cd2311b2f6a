#pragma once

// Subword vocabulary: reserved control tokens + units learned by iterative
// pair-frequency merging, segmented at use time by greedy longest match
// within whitespace-delimited words. Continuation units carry a "##"
// prefix. Byte-level; spans are byte offsets into the input string.

#include <string>
#include <unordered_map>
#include <vector>

#include "kern/common.hpp"

namespace kern::corpus {

// Reserved token ids, fixed and disjoint from learned subwords.
enum ReservedToken : int {
  kPad = 0,
  kUnk = 1,
  kCls = 2,
  kSep = 3,
  kMask = 4,
  kEnt = 5,
  kHead = 6,
  kTail = 7,
};
inline constexpr int kReservedCount = 8;
inline constexpr const char* kReservedNames[kReservedCount] = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[ENT]", "[HD]", "[TL]"};

struct TokenSpan {
  int id = 0;
  std::size_t begin = 0;  // byte offsets into the source string
  std::size_t end = 0;
};

class SubwordVocab {
 public:
  SubwordVocab();

  // Learns merges from `corpus_lines` until the vocabulary holds
  // `target_size` tokens (reserved included). All bytes seen in the corpus
  // are kept as single-unit tokens even if that overshoots the target.
  static SubwordVocab learn(const std::vector<std::string>& corpus_lines,
                            int target_size);

  static SubwordVocab load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  // -1 when absent.
  int id_of(const std::string& token) const;

  bool is_reserved(int id) const { return id >= 0 && id < kReservedCount; }

  // Greedy longest-match segmentation. A word with no match anywhere
  // becomes a single [UNK] spanning the whole word.
  std::vector<TokenSpan> tokenize(const std::string& text) const;

  // Surface string of a token with the continuation marker stripped.
  std::string surface(int id) const;

  std::vector<std::string> token_list() const { return tokens_; }

 private:
  int add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  std::size_t max_unit_len_ = 1;
};

}  // namespace kern::corpus
