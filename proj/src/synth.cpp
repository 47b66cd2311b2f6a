#include "kern/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include <json.hpp>

#include "kern/corpus.hpp"
#include "kern/kg.hpp"
#include "kern/io_util.hpp"
#include "kern/rng.hpp"
#include "kern/vocab.hpp"

namespace kern::synth {

namespace {

struct Fact {
  int head, relation, tail;
  bool background;
};

std::string make_word(Rng& rng, std::set<std::string>& used) {
  for (;;) {
    const int len = 4 + rng.below_int(4);
    std::string w;
    for (int i = 0; i < len; ++i)
      w.push_back(static_cast<char>('a' + rng.below_int(26)));
    if (used.insert(w).second) return w;
  }
}

struct TaskInstance {
  std::string text;
  // (entity, char_begin, char_end) per mention, in sentence order.
  std::vector<std::tuple<int, std::size_t, std::size_t>> mentions;
  std::vector<int> marked;  // indices into mentions: {head, tail} or {mention}
  std::vector<std::string> labels;
};

// Builds "<a> <b> <c> ..." and records the char span of each piece.
std::string join_with_spans(const std::vector<std::string>& pieces,
                            std::vector<std::pair<std::size_t, std::size_t>>* spans) {
  std::string text;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (i) text.push_back(' ');
    const std::size_t b = text.size();
    text += pieces[i];
    if (spans) spans->emplace_back(b, text.size());
  }
  return text;
}

void write_task_file(const std::vector<TaskInstance>& instances,
                     const corpus::SubwordVocab& vocab, bool relation,
                     const std::string& path) {
  io::atomic_write(path, [&](std::ostream& out) {
    for (const auto& inst : instances) {
      const auto spans = vocab.tokenize(inst.text);
      nlohmann::json j;
      std::vector<int> ids;
      for (const auto& t : spans) ids.push_back(t.id);
      j["tokens"] = ids;
      auto mentions = nlohmann::json::array();
      for (const auto& [entity, cb, ce] : inst.mentions) {
        // Token range covering the mention's characters. Surfaces are
        // whole words, so token boundaries line up exactly.
        int tb = -1, te = -1;
        for (std::size_t k = 0; k < spans.size(); ++k) {
          if (spans[k].begin >= cb && spans[k].end <= ce) {
            if (tb < 0) tb = static_cast<int>(k);
            te = static_cast<int>(k) + 1;
          }
        }
        if (tb < 0) throw DataError("synth: mention span lost in tokenization");
        mentions.push_back({entity, tb, te});
      }
      j["mentions"] = std::move(mentions);
      if (relation) {
        j["head"] = inst.marked[0];
        j["tail"] = inst.marked[1];
        j["label"] = inst.labels[0];
      } else {
        j["mention"] = inst.marked[0];
        j["labels"] = inst.labels;
      }
      out << j.dump() << '\n';
    }
  });
}

}  // namespace

void SynthSpec::validate() const {
  if (entities < 2) throw ConfigError("synth: need at least 2 entities");
  if (relations < 1) throw ConfigError("synth: need at least 1 relation");
  if (vocab_size < corpus::kReservedCount + 26)
    throw ConfigError("synth: vocab size too small");
  if (sentences < 1) throw ConfigError("synth: need at least 1 sentence");
  if (ambiguity < 0.0 || ambiguity > 1.0)
    throw ConfigError("synth: ambiguity must be in [0,1]");
  if (types < 2) throw ConfigError("synth: need at least 2 types");
  if (relation_train_per_fact < 1 || relation_test_per_fact < 1 ||
      typing_train_per_entity < 1 || typing_test_per_entity < 1)
    throw ConfigError("synth: instance counts must be positive");
  if (doc_size < 1) throw ConfigError("synth: doc size must be positive");
  if (ambiguity > 0.0 && relations < 2)
    throw ConfigError("synth: ambiguity needs at least 2 relations");
}

SynthStats generate(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  const auto path = [&](const char* name) {
    return (std::filesystem::path(out_dir) / name).string();
  };

  Rng rng(derive_seed(spec.seed, 0x73796e /*syn*/));
  const int num_entities = spec.entities;
  const int num_relations = spec.relations;
  const int num_facts = spec.facts > 0 ? spec.facts : 3 * spec.relations;

  // --- surfaces ---------------------------------------------------------
  // The first `shared` entities pair up (2i, 2i+1) and share surface i.
  int shared = static_cast<int>(spec.ambiguity * num_entities);
  shared -= shared % 2;
  const auto partner = [shared](int e) { return e < shared ? (e ^ 1) : e; };

  std::set<std::string> used_words;
  std::vector<std::string> surface_of(static_cast<std::size_t>(num_entities));
  for (int e = 0; e < num_entities; ++e) {
    if (e < shared && (e % 2) == 1) {
      surface_of[static_cast<std::size_t>(e)] = surface_of[static_cast<std::size_t>(e - 1)];
      continue;
    }
    std::string s = make_word(rng, used_words);
    // A quarter of the surfaces are two-word phrases, so mention matching
    // has multi-token work to do.
    if (rng.bernoulli(0.25)) s += " " + make_word(rng, used_words);
    surface_of[static_cast<std::size_t>(e)] = std::move(s);
  }
  std::vector<std::string> relation_words;
  for (int r = 0; r < num_relations; ++r)
    relation_words.push_back(make_word(rng, used_words));
  std::vector<std::string> connectors;
  for (int i = 0; i < 4; ++i) connectors.push_back(make_word(rng, used_words));
  std::vector<std::string> fillers;
  for (int i = 0; i < 8; ++i) fillers.push_back(make_word(rng, used_words));

  // --- facts --------------------------------------------------------------
  // Task facts occupy unique ordered surface pairs. Under ambiguity each
  // fact is emitted together with its shadow (partner entities, different
  // relation) on the same surface pair.
  std::vector<Fact> facts;
  std::set<std::pair<std::string, std::string>> used_surface_pairs;
  std::set<std::pair<int, int>> used_entity_pairs;
  int attempts = 0;
  while (static_cast<int>(facts.size()) < num_facts) {
    if (++attempts > 200 * num_facts + 1000)
      throw ConfigError("synth: cannot place the requested fact count; "
                        "increase entities or decrease facts");
    const int h = rng.below_int(num_entities);
    const int t = rng.below_int(num_entities);
    if (h == t) continue;
    const auto& sh = surface_of[static_cast<std::size_t>(h)];
    const auto& st = surface_of[static_cast<std::size_t>(t)];
    if (sh == st) continue;
    if (used_surface_pairs.count({sh, st})) continue;
    const int r = rng.below_int(num_relations);
    used_surface_pairs.insert({sh, st});
    used_entity_pairs.insert({h, t});
    facts.push_back(Fact{h, r, t, false});
    const int ph = partner(h), pt = partner(t);
    if (ph != h || pt != t) {
      int r2 = rng.below_int(num_relations - 1);
      if (r2 >= r) ++r2;
      used_entity_pairs.insert({ph, pt});
      facts.push_back(Fact{ph, r2, pt, false});
    }
  }

  // Background triples so every entity occurs in the KG; they avoid the
  // task facts' ordered entity pairs.
  std::set<int> covered;
  for (const auto& f : facts) {
    covered.insert(f.head);
    covered.insert(f.tail);
  }
  for (int e = 0; e < num_entities; ++e) {
    if (covered.count(e)) continue;
    for (;;) {
      const int other = rng.below_int(num_entities);
      if (other == e) continue;
      const int r = rng.below_int(num_relations);
      const bool as_head = rng.bernoulli(0.5);
      const int h = as_head ? e : other;
      const int t = as_head ? other : e;
      if (used_entity_pairs.count({h, t})) continue;
      used_entity_pairs.insert({h, t});
      facts.push_back(Fact{h, r, t, true});
      covered.insert(e);
      break;
    }
  }

  // --- triple file ----------------------------------------------------------
  io::atomic_write(path("triples.tsv"), [&](std::ostream& out) {
    for (const auto& f : facts)
      out << "Q" << f.head << "\tP" << f.relation << "\tQ" << f.tail << '\n';
  });

  // Dense entity ids everywhere downstream follow the triple file's
  // first-appearance order (what kg-train exports). Intern the same fact
  // sequence here so task-file mention ids land in that id space.
  kg::TripleStore store;
  for (const auto& f : facts)
    store.add("Q" + std::to_string(f.head), "P" + std::to_string(f.relation),
              "Q" + std::to_string(f.tail));
  const auto dense_id = [&store](int e) {
    return store.entity_id("Q" + std::to_string(e));
  };

  // --- gazetteer --------------------------------------------------------
  // One entity per surface: the first (lowest-numbered) entity wins, so
  // shared surfaces resolve to the even partner during annotation.
  corpus::Gazetteer gazetteer;
  for (int e = 0; e < num_entities; ++e) {
    const auto& s = surface_of[static_cast<std::size_t>(e)];
    if (gazetteer.find(s) == nullptr) gazetteer.add(s, "Q" + std::to_string(e));
  }
  gazetteer.save(path("gazetteer.tsv"));

  // --- pretraining corpus -------------------------------------------------
  std::vector<std::string> corpus_lines;
  std::vector<std::string> all_text_lines;
  for (int s = 0; s < spec.sentences; ++s) {
    const Fact& f = facts[static_cast<std::size_t>(rng.below(facts.size()))];
    int third = rng.below_int(num_entities);
    while (surface_of[static_cast<std::size_t>(third)] ==
               surface_of[static_cast<std::size_t>(f.head)] ||
           surface_of[static_cast<std::size_t>(third)] ==
               surface_of[static_cast<std::size_t>(f.tail)])
      third = rng.below_int(num_entities);
    std::vector<std::string> pieces;
    if (rng.bernoulli(0.5))
      pieces.push_back(fillers[static_cast<std::size_t>(rng.below(fillers.size()))]);
    pieces.push_back(surface_of[static_cast<std::size_t>(f.head)]);
    pieces.push_back(relation_words[static_cast<std::size_t>(f.relation)]);
    pieces.push_back(surface_of[static_cast<std::size_t>(f.tail)]);
    pieces.push_back(connectors[static_cast<std::size_t>(rng.below(connectors.size()))]);
    pieces.push_back(surface_of[static_cast<std::size_t>(third)]);
    if (rng.bernoulli(0.5))
      pieces.push_back(fillers[static_cast<std::size_t>(rng.below(fillers.size()))]);
    corpus_lines.push_back(join_with_spans(pieces, nullptr));
  }
  io::atomic_write(path("corpus.txt"), [&](std::ostream& out) {
    for (std::size_t i = 0; i < corpus_lines.size(); ++i) {
      if (i > 0 && i % static_cast<std::size_t>(spec.doc_size) == 0) out << '\n';
      out << corpus_lines[i] << '\n';
    }
  });
  all_text_lines = corpus_lines;

  // --- relation task ----------------------------------------------------
  // Fixed template "<head> <connector0> <tail>": the text is a pure
  // function of the surface pair, which makes the text-only ceiling exact.
  const auto relation_instance = [&](const Fact& f) {
    TaskInstance inst;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    inst.text = join_with_spans({surface_of[static_cast<std::size_t>(f.head)],
                                 connectors[0],
                                 surface_of[static_cast<std::size_t>(f.tail)]},
                                &spans);
    inst.mentions.emplace_back(dense_id(f.head), spans[0].first, spans[0].second);
    inst.mentions.emplace_back(dense_id(f.tail), spans[2].first, spans[2].second);
    inst.marked = {0, 1};
    inst.labels = {"P" + std::to_string(f.relation)};
    return inst;
  };
  std::vector<TaskInstance> rel_train, rel_test;
  for (const auto& f : facts) {
    if (f.background) continue;
    for (int i = 0; i < spec.relation_train_per_fact; ++i)
      rel_train.push_back(relation_instance(f));
    for (int i = 0; i < spec.relation_test_per_fact; ++i)
      rel_test.push_back(relation_instance(f));
  }
  rng.shuffle(rel_train);
  rng.shuffle(rel_test);

  // --- typing task --------------------------------------------------------
  const auto types_of = [&](int e) {
    std::vector<std::string> labels = {"T" + std::to_string(e % spec.types)};
    if (e % 2 == 0)
      labels.push_back("T" + std::to_string((e * 3 + 1) % spec.types));
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    return labels;
  };
  const auto typing_instance = [&](int e) {
    TaskInstance inst;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    inst.text = join_with_spans(
        {surface_of[static_cast<std::size_t>(e)], connectors[1],
         fillers[static_cast<std::size_t>(e) % fillers.size()]},
        &spans);
    inst.mentions.emplace_back(dense_id(e), spans[0].first, spans[0].second);
    inst.marked = {0};
    inst.labels = types_of(e);
    return inst;
  };
  std::vector<TaskInstance> typ_train, typ_test;
  for (int e = 0; e < num_entities; ++e) {
    for (int i = 0; i < spec.typing_train_per_entity; ++i)
      typ_train.push_back(typing_instance(e));
    for (int i = 0; i < spec.typing_test_per_entity; ++i)
      typ_test.push_back(typing_instance(e));
  }
  rng.shuffle(typ_train);
  rng.shuffle(typ_test);

  for (const auto& inst : rel_train) all_text_lines.push_back(inst.text);
  for (const auto& inst : rel_test) all_text_lines.push_back(inst.text);
  for (const auto& inst : typ_train) all_text_lines.push_back(inst.text);
  for (const auto& inst : typ_test) all_text_lines.push_back(inst.text);

  auto vocab = corpus::SubwordVocab::learn(all_text_lines, spec.vocab_size);
  vocab.save(path("vocab.txt"));

  write_task_file(rel_train, vocab, true, path("task_relation_train.jsonl"));
  write_task_file(rel_test, vocab, true, path("task_relation_test.jsonl"));
  write_task_file(typ_train, vocab, false, path("task_typing_train.jsonl"));
  write_task_file(typ_test, vocab, false, path("task_typing_test.jsonl"));

  // --- stats ----------------------------------------------------------------
  SynthStats stats;
  stats.entities = num_entities;
  stats.relations = num_relations;
  stats.triples = static_cast<int>(facts.size());
  stats.task_facts =
      static_cast<int>(std::count_if(facts.begin(), facts.end(),
                                     [](const Fact& f) { return !f.background; }));
  stats.sentences = spec.sentences;
  stats.ambiguity = spec.ambiguity;
  stats.relation_train_instances = static_cast<int>(rel_train.size());
  stats.relation_test_instances = static_cast<int>(rel_test.size());

  // Exhaustive enumeration of the emitted test set: the best text-only
  // classifier predicts the majority label of each text group.
  std::map<std::string, std::map<std::string, int>> by_text;
  for (const auto& inst : rel_test) ++by_text[inst.text][inst.labels[0]];
  int best = 0, total = 0;
  for (const auto& [text, counts] : by_text) {
    (void)text;
    int mx = 0;
    for (const auto& [label, c] : counts) {
      (void)label;
      mx = std::max(mx, c);
      total += c;
    }
    best += mx;
  }
  stats.relation_text_bayes_bound =
      total > 0 ? static_cast<double>(best) / total : 0.0;

  io::atomic_write(path("stats.json"), [&](std::ostream& out) {
    nlohmann::json j;
    j["entities"] = stats.entities;
    j["relations"] = stats.relations;
    j["triples"] = stats.triples;
    j["task_facts"] = stats.task_facts;
    j["sentences"] = stats.sentences;
    j["ambiguity"] = stats.ambiguity;
    j["relation_text_bayes_bound"] = stats.relation_text_bayes_bound;
    j["relation_train_instances"] = stats.relation_train_instances;
    j["relation_test_instances"] = stats.relation_test_instances;
    out << j.dump(2) << '\n';
  });
  return stats;
}

}  // namespace kern::synth
