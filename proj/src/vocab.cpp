#include "kern/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

namespace kern::corpus {

namespace {

constexpr const char* kContinuation = "##";

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r';
}

// Whitespace-delimited pieces with byte offsets.
std::vector<std::pair<std::size_t, std::size_t>> split_words(
    const std::string& text) {
  std::vector<std::pair<std::size_t, std::size_t>> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    words.emplace_back(i, j);
    i = j;
  }
  return words;
}

}  // namespace

SubwordVocab::SubwordVocab() {
  for (int i = 0; i < kReservedCount; ++i) add(kReservedNames[i]);
}

int SubwordVocab::add(const std::string& token) {
  auto [it, inserted] = ids_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) {
    tokens_.push_back(token);
    const std::size_t unit_len =
        token.rfind(kContinuation, 0) == 0 ? token.size() - 2 : token.size();
    max_unit_len_ = std::max(max_unit_len_, unit_len);
  }
  return it->second;
}

const std::string& SubwordVocab::token(int id) const {
  if (id < 0 || id >= size())
    throw IndexError("token id " + std::to_string(id) + " out of range [0," +
                     std::to_string(size()) + ")");
  return tokens_[static_cast<std::size_t>(id)];
}

int SubwordVocab::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? -1 : it->second;
}

std::string SubwordVocab::surface(int id) const {
  const std::string& t = token(id);
  if (t.rfind(kContinuation, 0) == 0) return t.substr(2);
  return t;
}

SubwordVocab SubwordVocab::learn(const std::vector<std::string>& corpus_lines,
                                 int target_size) {
  if (target_size < kReservedCount)
    throw ConfigError("subword vocab target must be at least " +
                      std::to_string(kReservedCount));

  // Word type -> frequency; each word is held as a sequence of symbols,
  // where a symbol is a token string ("a" or "##b").
  std::map<std::string, long long> word_freq;
  for (const auto& line : corpus_lines)
    for (const auto& [b, e] : split_words(line)) ++word_freq[line.substr(b, e - b)];

  std::map<std::string, std::vector<std::string>> word_symbols;
  std::set<std::string> alphabet;
  for (const auto& [word, freq] : word_freq) {
    (void)freq;
    std::vector<std::string> symbols;
    for (std::size_t i = 0; i < word.size(); ++i) {
      std::string s = i == 0 ? std::string(1, word[i])
                             : kContinuation + std::string(1, word[i]);
      alphabet.insert(s);
      symbols.push_back(std::move(s));
    }
    word_symbols.emplace(word, std::move(symbols));
  }

  SubwordVocab vocab;
  for (const auto& s : alphabet) vocab.add(s);

  while (vocab.size() < target_size) {
    // Count adjacent pairs over word types weighted by frequency.
    std::map<std::pair<std::string, std::string>, long long> pair_freq;
    for (const auto& [word, symbols] : word_symbols) {
      const long long freq = word_freq[word];
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i)
        pair_freq[{symbols[i], symbols[i + 1]}] += freq;
    }
    if (pair_freq.empty()) break;
    // Most frequent pair; std::map iteration order breaks ties toward the
    // lexicographically smallest pair, which keeps learning deterministic.
    auto best = pair_freq.begin();
    for (auto it = pair_freq.begin(); it != pair_freq.end(); ++it)
      if (it->second > best->second) best = it;
    if (best->second < 2) break;

    const std::string& left = best->first.first;
    const std::string& right = best->first.second;
    // Merged token keeps the left part's continuation status.
    const std::string merged =
        left + (right.rfind(kContinuation, 0) == 0 ? right.substr(2) : right);
    vocab.add(merged);

    for (auto& [word, symbols] : word_symbols) {
      (void)word;
      std::vector<std::string> next;
      next.reserve(symbols.size());
      std::size_t i = 0;
      while (i < symbols.size()) {
        if (i + 1 < symbols.size() && symbols[i] == left &&
            symbols[i + 1] == right) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(symbols[i]);
          ++i;
        }
      }
      symbols = std::move(next);
    }
  }
  return vocab;
}

std::vector<TokenSpan> SubwordVocab::tokenize(const std::string& text) const {
  std::vector<TokenSpan> out;
  for (const auto& [wb, we] : split_words(text)) {
    std::size_t i = wb;
    bool first = true;
    std::vector<TokenSpan> word_tokens;
    bool failed = false;
    while (i < we) {
      const std::size_t remaining = we - i;
      const std::size_t cap = std::min(remaining, max_unit_len_);
      int match_id = -1;
      std::size_t match_len = 0;
      for (std::size_t len = cap; len >= 1; --len) {
        std::string candidate = text.substr(i, len);
        if (!first) candidate = kContinuation + candidate;
        const int id = id_of(candidate);
        if (id >= 0) {
          match_id = id;
          match_len = len;
          break;
        }
      }
      if (match_id < 0) {
        failed = true;
        break;
      }
      word_tokens.push_back(TokenSpan{match_id, i, i + match_len});
      i += match_len;
      first = false;
    }
    if (failed) {
      out.push_back(TokenSpan{kUnk, wb, we});
    } else {
      out.insert(out.end(), word_tokens.begin(), word_tokens.end());
    }
  }
  return out;
}

void SubwordVocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocab file: " + path);
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("failed writing vocab file: " + path);
}

SubwordVocab SubwordVocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocab file: " + path);
  SubwordVocab vocab;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    if (lineno < kReservedCount) {
      if (line != kReservedNames[lineno])
        throw FormatError("vocab file " + path + " line " +
                          std::to_string(lineno) + ": expected reserved token " +
                          kReservedNames[lineno]);
    } else {
      if (line.empty())
        throw FormatError("vocab file " + path + " line " +
                          std::to_string(lineno) + ": empty token");
      vocab.add(line);
    }
    ++lineno;
  }
  if (lineno < kReservedCount)
    throw FormatError("vocab file " + path + " is truncated");
  return vocab;
}

}  // namespace kern::corpus
