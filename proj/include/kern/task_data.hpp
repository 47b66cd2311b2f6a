#pragma once

// Fine-tuning inputs: mark-token rewrites of annotated sentences and the
// JSON-lines task file format. Marks enclose the mention (one before, one
// after); mention content and order are unchanged and every span shifts by
// the number of tokens inserted before it.

#include <string>
#include <vector>

#include "kern/common.hpp"
#include "kern/corpus.hpp"

namespace kern::tasks {

enum class TaskKind { kTyping, kRelation };

// One parsed task-file line, before rewriting.
struct RawTaskExample {
  std::vector<int> tokens;
  std::vector<corpus::Mention> mentions;  // sorted, non-overlapping
  int head = -1;     // relation: mention indices
  int tail = -1;
  int mention = -1;  // typing: mention index
  std::vector<std::string> labels;
};

struct TaskExample {
  std::vector<int> tokens;    // [CLS] ... [SEP] with marks inserted
  std::vector<int> segments;  // all zero
  std::vector<corpus::Mention> mentions;  // shifted spans
  std::vector<std::pair<int, int>> alignment;  // first-token rule
  std::vector<std::string> labels;
  TaskKind kind = TaskKind::kTyping;

  void validate() const;
};

TaskExample rewrite_relation(const RawTaskExample& raw);
TaskExample rewrite_typing(const RawTaskExample& raw);

std::vector<RawTaskExample> load_task_file(const std::string& path,
                                           TaskKind kind);

}  // namespace kern::tasks
