#pragma once

// PretrainExample construction: NSP pairing of aligned sentences, dEA
// alignment corruption (5% replace / 15% mask / 80% keep), and BERT-style
// MLM masking. Corruption is sampled fresh per epoch pass with per-sentence
// rng streams, so the whole stream is a pure function of (corpus, seed,
// config).

#include <cstdint>
#include <map>
#include <vector>

#include "kern/common.hpp"
#include "kern/corpus.hpp"
#include "kern/rng.hpp"

namespace kern::corpus {

enum class SlotState { kKept, kReplaced, kMasked };

struct EntitySlot {
  int original_entity = 0;  // dense entity index before corruption
  int input_entity = 0;     // what the encoder sees (ignored when masked)
  SlotState state = SlotState::kKept;
};

struct PretrainExample {
  std::vector<int> tokens;    // [CLS] A [SEP] B [SEP], MLM applied
  std::vector<int> segments;  // 0 over [CLS] A [SEP], 1 over B [SEP]
  std::vector<EntitySlot> slots;
  // token position -> slot index; kept through corruption.
  std::vector<std::pair<int, int>> alignment;
  std::vector<std::pair<int, int>> mlm_targets;  // (position, original id)
  std::vector<std::pair<int, int>> dea_targets;  // (position, original slot)
  bool is_next = false;

  std::vector<int> candidate_entities() const {
    std::vector<int> out;
    out.reserve(slots.size());
    for (const auto& s : slots) out.push_back(s.original_entity);
    return out;
  }
};

struct CorruptionConfig {
  double dea_replace = 0.05;
  double dea_mask = 0.15;
  double mlm_select = 0.15;
  double mlm_mask = 0.80;    // of selected
  double mlm_random = 0.10;  // of selected; remainder kept
  // When false, dea_targets cover every originally aligned token; when
  // true, only corrupted alignments.
  bool dea_targets_corrupted_only = false;
};

struct CorruptionStats {
  std::size_t kept = 0;
  std::size_t replaced = 0;
  std::size_t masked = 0;
  std::size_t replace_fallback_to_mask = 0;  // entity vocabulary of size 1
};

// Packs two aligned sentences into an uncorrupted example. Sequences longer
// than max_len are trimmed from the end of the longer sentence first;
// mentions that lose their span are dropped.
PretrainExample pack_pair(const AlignedSentence& first,
                          const AlignedSentence& second, bool is_next,
                          int max_len);

// dEA corruption over alignment slots. Never touches token ids.
void corrupt_dea(PretrainExample& example, int entity_vocab_size, Rng& rng,
                 const CorruptionConfig& config, CorruptionStats* stats = nullptr);

// MLM corruption over non-special token positions. Never touches the
// entity stream or the alignment. Selection count = round(0.15 * maskable),
// at least 1 when maskable >= 1. Random replacements draw learned subword
// ids (>= kReservedCount).
void corrupt_mlm(PretrainExample& example, int vocab_size, Rng& rng,
                 const CorruptionConfig& config);

// NSP pair stream over one epoch: every sentence appears once as the first
// segment; with p=0.5 (when a successor exists in the same document) the
// true successor follows, otherwise a random sentence from another
// document. Throws ConfigError when no valid pairing exists at all.
struct PairedSentences {
  const AlignedSentence* first;
  const AlignedSentence* second;
  bool is_next;
};
std::vector<PairedSentences> pair_nsp(const std::vector<AlignedSentence>& corpus,
                                      Rng& rng);

// Deterministic epoch-based example stream used by pretraining.
class PretrainBatcher {
 public:
  PretrainBatcher(std::vector<AlignedSentence> corpus, int vocab_size,
                  int entity_vocab_size, int max_len, std::uint64_t seed,
                  CorruptionConfig config = {});

  // Examples are corrupted with streams derived from
  // (seed, epoch, doc, sent) and shuffled per epoch.
  std::vector<PretrainExample> next_batch(int batch_size);

  // All examples of the next epoch at once (in shuffled order).
  std::vector<PretrainExample> epoch_examples();

  std::uint64_t epoch() const { return epoch_; }
  const CorruptionStats& stats() const { return stats_; }

 private:
  void start_epoch();

  std::vector<AlignedSentence> corpus_;
  int vocab_size_;
  int entity_vocab_size_;
  int max_len_;
  std::uint64_t seed_;
  CorruptionConfig config_;
  CorruptionStats stats_;
  std::uint64_t epoch_ = 0;
  std::vector<PretrainExample> pending_;  // current epoch, consumed back-to-front
};

}  // namespace kern::corpus
