#include "kern/corpus.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "kern/io_util.hpp"

namespace kern::corpus {

void AlignedSentence::validate() const {
  const int n = static_cast<int>(tokens.size());
  int last_end = -1;
  for (const auto& m : mentions) {
    if (m.token_begin < 0 || m.token_begin >= m.token_end || m.token_end > n)
      throw DataError("mention span [" + std::to_string(m.token_begin) + "," +
                      std::to_string(m.token_end) + ") invalid for " +
                      std::to_string(n) + " tokens");
    if (m.token_begin < last_end)
      throw DataError("mentions overlap at token " +
                      std::to_string(m.token_begin));
    last_end = m.token_end;
  }
  if (static_cast<int>(mentions.size()) > n)
    throw DataError("more mentions than tokens");
  auto expected = corpus::align(mentions);
  if (alignment != expected)
    throw DataError("alignment keys do not match mention start positions");
}

void Gazetteer::add(const std::string& surface, const std::string& entity) {
  if (surface.empty()) throw DataError("empty gazetteer surface");
  entries_[surface] = entity;
  max_surface_len_ = std::max(max_surface_len_, surface.size());
}

const std::string* Gazetteer::find(const std::string& surface) const {
  auto it = entries_.find(surface);
  return it == entries_.end() ? nullptr : &it->second;
}

Gazetteer Gazetteer::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open gazetteer: " + path);
  Gazetteer g;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      throw FormatError("gazetteer " + path + " line " + std::to_string(lineno) +
                        ": expected surface<TAB>entity_id");
    g.add(line.substr(0, tab), line.substr(tab + 1));
  }
  return g;
}

void Gazetteer::save(const std::string& path) const {
  io::atomic_write(path, [&](std::ostream& out) {
    for (const auto& [surface, entity] : entries_)
      out << surface << '\t' << entity << '\n';
  });
}

std::vector<Mention> match_mentions(const std::string& text,
                                    const std::vector<TokenSpan>& tokens,
                                    const Gazetteer& gazetteer,
                                    const std::map<std::string, int>& entity_ids,
                                    MatchStats* stats) {
  if (gazetteer.empty()) throw ConfigError("gazetteer is empty");
  std::vector<Mention> mentions;
  const int n = static_cast<int>(tokens.size());
  int i = 0;
  while (i < n) {
    int matched_end = -1;
    const std::string* matched_entity = nullptr;
    // Longest span first; the covered surface is the raw text between the
    // first and last token, so multi-token and multi-word keys both work.
    for (int j = n; j > i; --j) {
      const std::size_t b = tokens[static_cast<std::size_t>(i)].begin;
      const std::size_t e = tokens[static_cast<std::size_t>(j - 1)].end;
      if (e - b > gazetteer.max_surface_len()) continue;
      const std::string* entity = gazetteer.find(text.substr(b, e - b));
      if (entity != nullptr) {
        matched_end = j;
        matched_entity = entity;
        break;
      }
    }
    if (matched_end < 0) {
      ++i;
      continue;
    }
    auto it = entity_ids.find(*matched_entity);
    if (it == entity_ids.end()) {
      if (stats) ++stats->skipped_unknown_entity;
      i = matched_end;  // still consume the span to stay non-overlapping
      continue;
    }
    mentions.push_back(Mention{it->second, i, matched_end});
    if (stats) ++stats->matched;
    i = matched_end;
  }
  return mentions;
}

std::map<int, int> align(const std::vector<Mention>& mentions) {
  std::map<int, int> alignment;
  int last_end = -1;
  for (std::size_t k = 0; k < mentions.size(); ++k) {
    const auto& m = mentions[k];
    if (m.token_begin < last_end)
      throw DataError("align: overlapping mentions at token " +
                      std::to_string(m.token_begin));
    last_end = m.token_end;
    alignment[m.token_begin] = static_cast<int>(k);
  }
  return alignment;
}

std::vector<AlignedSentence> filter_sentences(
    std::vector<AlignedSentence> sentences, int min_entities) {
  std::vector<AlignedSentence> kept;
  kept.reserve(sentences.size());
  for (auto& s : sentences)
    if (s.entity_count() >= min_entities) kept.push_back(std::move(s));
  return kept;
}

RawCorpus load_raw_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus: " + path);
  RawCorpus corpus;
  std::vector<std::string> current;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      if (!current.empty()) corpus.documents.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(line);
    }
  }
  if (!current.empty()) corpus.documents.push_back(std::move(current));
  return corpus;
}

std::map<std::string, int> load_entity_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open entity vocab: " + path);
  std::map<std::string, int> ids;
  std::string line;
  int index = 0;
  while (std::getline(in, line)) {
    if (line.empty())
      throw FormatError("entity vocab " + path + ": empty line " +
                        std::to_string(index));
    if (!ids.emplace(line, index).second)
      throw FormatError("entity vocab " + path + ": duplicate id " + line);
    ++index;
  }
  return ids;
}

void save_entity_vocab(const std::vector<std::string>& names,
                       const std::string& path) {
  io::atomic_write(path, [&](std::ostream& out) {
    for (const auto& n : names) out << n << '\n';
  });
}

AnnotateResult annotate(const RawCorpus& corpus, const SubwordVocab& vocab,
                        const Gazetteer& gazetteer,
                        const std::map<std::string, int>& entity_ids,
                        int min_entities) {
  AnnotateResult result;
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
    int kept_in_doc = 0;
    for (std::size_t s = 0; s < corpus.documents[d].size(); ++s) {
      const std::string& text = corpus.documents[d][s];
      const auto spans = vocab.tokenize(text);
      AlignedSentence sentence;
      sentence.tokens.reserve(spans.size());
      for (const auto& t : spans) sentence.tokens.push_back(t.id);
      sentence.mentions =
          match_mentions(text, spans, gazetteer, entity_ids, &result.stats);
      sentence.alignment = align(sentence.mentions);
      sentence.doc = static_cast<int>(d);
      sentence.sent = kept_in_doc;
      if (sentence.entity_count() >= min_entities) {
        ++kept_in_doc;
        result.sentences.push_back(std::move(sentence));
      } else {
        ++result.dropped_sentences;
      }
    }
  }
  return result;
}

void save_annotated(const std::vector<AlignedSentence>& sentences,
                    const std::string& path) {
  io::atomic_write(path, [&](std::ostream& out) {
    for (const auto& s : sentences) {
      nlohmann::json j;
      j["tokens"] = s.tokens;
      auto mentions = nlohmann::json::array();
      for (const auto& m : s.mentions)
        mentions.push_back({m.entity, m.token_begin, m.token_end});
      j["mentions"] = std::move(mentions);
      j["doc"] = s.doc;
      j["sent"] = s.sent;
      out << j.dump() << '\n';
    }
  });
}

std::vector<AlignedSentence> load_annotated(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open annotated corpus: " + path);
  std::vector<AlignedSentence> sentences;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("annotated corpus " + path + " line " +
                        std::to_string(lineno) + ": " + e.what());
    }
    AlignedSentence s;
    try {
      s.tokens = j.at("tokens").get<std::vector<int>>();
      for (const auto& m : j.at("mentions"))
        s.mentions.push_back(
            Mention{m.at(0).get<int>(), m.at(1).get<int>(), m.at(2).get<int>()});
      s.doc = j.at("doc").get<int>();
      s.sent = j.at("sent").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("annotated corpus " + path + " line " +
                        std::to_string(lineno) + ": " + e.what());
    }
    s.alignment = align(s.mentions);
    s.validate();
    sentences.push_back(std::move(s));
  }
  return sentences;
}

}  // namespace kern::corpus
