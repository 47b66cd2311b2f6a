#include "kern/task_data.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <json.hpp>

#include "kern/vocab.hpp"

namespace kern::tasks {

namespace {

void check_mentions_sorted(const std::vector<corpus::Mention>& mentions,
                           int token_count) {
  int last_end = 0;
  for (const auto& m : mentions) {
    if (m.token_begin < last_end || m.token_begin >= m.token_end ||
        m.token_end > token_count)
      throw DataError("task mention span [" + std::to_string(m.token_begin) +
                      "," + std::to_string(m.token_end) +
                      ") overlaps or exceeds " + std::to_string(token_count) +
                      " tokens");
    last_end = m.token_end;
  }
}

// Inserts `mark` before and after the spans of the selected mentions, plus
// [CLS]/[SEP] framing. mark_of maps a mention index to its mark token id,
// or -1 for unmarked mentions.
TaskExample rewrite(const RawTaskExample& raw,
                    const std::map<int, int>& mark_of, TaskKind kind) {
  check_mentions_sorted(raw.mentions, static_cast<int>(raw.tokens.size()));
  for (const auto& [idx, mark] : mark_of) {
    (void)mark;
    if (idx < 0 || idx >= static_cast<int>(raw.mentions.size()))
      throw DataError("task mark references mention " + std::to_string(idx) +
                      " of " + std::to_string(raw.mentions.size()));
  }

  // Marks scheduled at original token boundaries; closes before opens so
  // adjacent mentions nest correctly.
  const int n = static_cast<int>(raw.tokens.size());
  std::vector<std::vector<int>> before(static_cast<std::size_t>(n) + 1);
  for (const auto& [idx, mark] : mark_of) {
    const auto& m = raw.mentions[static_cast<std::size_t>(idx)];
    before[static_cast<std::size_t>(m.token_end)].push_back(mark);  // close
  }
  for (const auto& [idx, mark] : mark_of) {
    const auto& m = raw.mentions[static_cast<std::size_t>(idx)];
    before[static_cast<std::size_t>(m.token_begin)].push_back(mark);  // open
  }

  TaskExample out;
  out.kind = kind;
  out.labels = raw.labels;
  out.tokens.push_back(corpus::kCls);
  std::vector<int> new_pos(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) {
    // Close marks scheduled at i were pushed first and emit first.
    for (const int mark : before[static_cast<std::size_t>(i)])
      out.tokens.push_back(mark);
    new_pos[static_cast<std::size_t>(i)] = static_cast<int>(out.tokens.size());
    if (i < n) out.tokens.push_back(raw.tokens[static_cast<std::size_t>(i)]);
  }
  out.tokens.push_back(corpus::kSep);
  out.segments.assign(out.tokens.size(), 0);

  for (const auto& m : raw.mentions) {
    corpus::Mention shifted = m;
    shifted.token_begin = new_pos[static_cast<std::size_t>(m.token_begin)];
    // The close mark sits between the mention's last token and new_pos of
    // token_end, so the shifted end is start + span length.
    shifted.token_end = shifted.token_begin + (m.token_end - m.token_begin);
    out.mentions.push_back(shifted);
  }
  for (std::size_t k = 0; k < out.mentions.size(); ++k)
    out.alignment.emplace_back(out.mentions[k].token_begin, static_cast<int>(k));
  out.validate();
  return out;
}

int count_token(const std::vector<int>& tokens, int id) {
  return static_cast<int>(std::count(tokens.begin(), tokens.end(), id));
}

}  // namespace

void TaskExample::validate() const {
  if (tokens.empty() || tokens.front() != corpus::kCls ||
      tokens.back() != corpus::kSep)
    throw DataError("task example must be framed by [CLS] .. [SEP]");
  if (kind == TaskKind::kRelation) {
    if (count_token(tokens, corpus::kHead) != 2 ||
        count_token(tokens, corpus::kTail) != 2)
      throw DataError("relation example needs exactly one [HD]- and one "
                      "[TL]-enclosed span");
    if (labels.size() != 1)
      throw DataError("relation example needs exactly one label");
  } else {
    if (count_token(tokens, corpus::kEnt) != 2)
      throw DataError("typing example needs exactly one [ENT]-enclosed span");
    if (labels.empty()) throw DataError("typing example needs labels");
  }
  for (const auto& m : mentions) {
    if (m.token_begin < 0 || m.token_begin >= m.token_end ||
        m.token_end > static_cast<int>(tokens.size()))
      throw DataError("rewritten mention span out of range");
  }
}

TaskExample rewrite_relation(const RawTaskExample& raw) {
  if (raw.head < 0 || raw.tail < 0)
    throw DataError("relation example needs head and tail mentions");
  if (raw.head == raw.tail)
    throw DataError("head and tail must be distinct mentions");
  return rewrite(raw,
                 {{raw.head, corpus::kHead}, {raw.tail, corpus::kTail}},
                 TaskKind::kRelation);
}

TaskExample rewrite_typing(const RawTaskExample& raw) {
  if (raw.mention < 0)
    throw DataError("typing example needs a marked mention");
  return rewrite(raw, {{raw.mention, corpus::kEnt}}, TaskKind::kTyping);
}

std::vector<RawTaskExample> load_task_file(const std::string& path,
                                           TaskKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open task file: " + path);
  std::vector<RawTaskExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    RawTaskExample ex;
    try {
      auto j = nlohmann::json::parse(line);
      ex.tokens = j.at("tokens").get<std::vector<int>>();
      for (const auto& m : j.at("mentions"))
        ex.mentions.push_back(corpus::Mention{
            m.at(0).get<int>(), m.at(1).get<int>(), m.at(2).get<int>()});
      if (kind == TaskKind::kRelation) {
        ex.head = j.at("head").get<int>();
        ex.tail = j.at("tail").get<int>();
        ex.labels = {j.at("label").get<std::string>()};
      } else {
        ex.mention = j.at("mention").get<int>();
        ex.labels = j.at("labels").get<std::vector<std::string>>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("task file " + path + " line " + std::to_string(lineno) +
                        ": " + e.what());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace kern::tasks
