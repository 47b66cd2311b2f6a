#pragma once

// Deterministic synthetic world: a small KG, a corpus verbalizing its
// facts, a gazetteer, and relation/typing task files. With ambiguity > 0,
// entities are paired up to share surface forms and every shared surface
// pair carries two facts with distinct relations, so task text alone cannot
// identify the label beyond a computable ceiling; the gold entity
// annotations in the task files can.

#include <cstdint>
#include <string>
#include <vector>

#include "kern/common.hpp"

namespace kern::synth {

struct SynthSpec {
  int entities = 16;
  int relations = 4;
  int vocab_size = 200;  // subword vocabulary target
  int sentences = 64;    // pretraining corpus size
  double ambiguity = 0.0;  // fraction of entities sharing a surface form
  std::uint64_t seed = 1;

  // Secondary knobs with workable defaults.
  int facts = 0;  // task facts; 0 derives 3 * relations
  int types = 5;
  int relation_train_per_fact = 4;
  int relation_test_per_fact = 2;
  int typing_train_per_entity = 3;
  int typing_test_per_entity = 1;
  int doc_size = 8;

  void validate() const;
};

struct SynthStats {
  int entities = 0;
  int relations = 0;
  int task_facts = 0;  // shadows included
  int triples = 0;
  int sentences = 0;
  double ambiguity = 0.0;
  // Best test accuracy achievable from surface forms alone, by exhaustive
  // enumeration of the emitted relation test set.
  double relation_text_bayes_bound = 0.0;
  int relation_train_instances = 0;
  int relation_test_instances = 0;
};

// Writes corpus.txt, gazetteer.tsv, triples.tsv, vocab.txt,
// task_relation_{train,test}.jsonl, task_typing_{train,test}.jsonl and
// stats.json into `out_dir`.
SynthStats generate(const SynthSpec& spec, const std::string& out_dir);

}  // namespace kern::synth
