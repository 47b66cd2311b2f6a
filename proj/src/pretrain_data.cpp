#include "kern/pretrain_data.hpp"

#include <algorithm>
#include <cmath>

namespace kern::corpus {

namespace {

// Appends a sentence's tokens at `offset` and its surviving mentions
// (those fully inside the first `kept_tokens`) to the example.
void append_sentence(PretrainExample& example, const AlignedSentence& sentence,
                     int kept_tokens, int offset, int segment) {
  for (int i = 0; i < kept_tokens; ++i) {
    example.tokens.push_back(sentence.tokens[static_cast<std::size_t>(i)]);
    example.segments.push_back(segment);
  }
  for (const auto& m : sentence.mentions) {
    if (m.token_end > kept_tokens) continue;
    const int slot = static_cast<int>(example.slots.size());
    example.slots.push_back(EntitySlot{m.entity, m.entity, SlotState::kKept});
    example.alignment.emplace_back(offset + m.token_begin, slot);
  }
}

}  // namespace

PretrainExample pack_pair(const AlignedSentence& first,
                          const AlignedSentence& second, bool is_next,
                          int max_len) {
  int len_a = static_cast<int>(first.tokens.size());
  int len_b = static_cast<int>(second.tokens.size());
  // Trim the longer sentence token by token until the packed length fits.
  while (len_a + len_b + 3 > max_len) {
    if (len_a >= len_b)
      --len_a;
    else
      --len_b;
    if (len_a <= 0 && len_b <= 0)
      throw DataError("max_len " + std::to_string(max_len) +
                      " too small to pack a sentence pair");
  }

  PretrainExample example;
  example.is_next = is_next;
  example.tokens.push_back(kCls);
  example.segments.push_back(0);
  append_sentence(example, first, len_a, 1, 0);
  example.tokens.push_back(kSep);
  example.segments.push_back(0);
  append_sentence(example, second, len_b, 2 + len_a, 1);
  example.tokens.push_back(kSep);
  example.segments.push_back(1);

  // Uncorrupted default: a dEA target at every aligned token.
  for (const auto& [pos, slot] : example.alignment)
    example.dea_targets.emplace_back(pos, slot);
  return example;
}

void corrupt_dea(PretrainExample& example, int entity_vocab_size, Rng& rng,
                 const CorruptionConfig& config, CorruptionStats* stats) {
  for (auto& slot : example.slots) {
    const double u = rng.uniform01();
    if (u < config.dea_replace) {
      if (entity_vocab_size <= 1) {
        // Cannot draw a different entity; fall back to masking.
        slot.state = SlotState::kMasked;
        if (stats) {
          ++stats->replace_fallback_to_mask;
          ++stats->masked;
        }
        continue;
      }
      int replacement = rng.below_int(entity_vocab_size - 1);
      if (replacement >= slot.original_entity) ++replacement;
      slot.state = SlotState::kReplaced;
      slot.input_entity = replacement;
      if (stats) ++stats->replaced;
    } else if (u < config.dea_replace + config.dea_mask) {
      slot.state = SlotState::kMasked;
      if (stats) ++stats->masked;
    } else {
      slot.state = SlotState::kKept;
      slot.input_entity = slot.original_entity;
      if (stats) ++stats->kept;
    }
  }
  example.dea_targets.clear();
  for (const auto& [pos, slot] : example.alignment) {
    if (config.dea_targets_corrupted_only &&
        example.slots[static_cast<std::size_t>(slot)].state == SlotState::kKept)
      continue;
    example.dea_targets.emplace_back(pos, slot);
  }
}

void corrupt_mlm(PretrainExample& example, int vocab_size, Rng& rng,
                 const CorruptionConfig& config) {
  std::vector<int> maskable;
  for (std::size_t i = 0; i < example.tokens.size(); ++i)
    if (example.tokens[i] >= kReservedCount)
      maskable.push_back(static_cast<int>(i));
  if (maskable.empty()) {
    example.mlm_targets.clear();
    return;
  }

  const std::size_t want = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(
             config.mlm_select * static_cast<double>(maskable.size()))));
  const std::size_t count = std::min(want, maskable.size());
  // Partial Fisher-Yates, then sort the chosen positions so the corruption
  // draws below consume the rng in a canonical order.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j =
        i + static_cast<std::size_t>(rng.below(maskable.size() - i));
    std::swap(maskable[i], maskable[j]);
  }
  maskable.resize(count);
  std::sort(maskable.begin(), maskable.end());

  example.mlm_targets.clear();
  const int learned = vocab_size - kReservedCount;
  for (const int pos : maskable) {
    const int original = example.tokens[static_cast<std::size_t>(pos)];
    example.mlm_targets.emplace_back(pos, original);
    const double u = rng.uniform01();
    if (u < config.mlm_mask) {
      example.tokens[static_cast<std::size_t>(pos)] = kMask;
    } else if (u < config.mlm_mask + config.mlm_random && learned > 0) {
      example.tokens[static_cast<std::size_t>(pos)] =
          kReservedCount + rng.below_int(learned);
    }
    // else: selected but kept unchanged
  }
}

std::vector<PairedSentences> pair_nsp(const std::vector<AlignedSentence>& corpus,
                                      Rng& rng) {
  const std::size_t n = corpus.size();
  // Contiguous [begin,end) range of each sentence's document, assuming the
  // corpus is in (doc, sent) order as produced by annotation.
  std::vector<std::pair<std::size_t, std::size_t>> doc_range(n);
  std::size_t begin = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (corpus[i].doc != corpus[begin].doc) begin = i;
    std::size_t end = i + 1;
    doc_range[i] = {begin, end};
  }
  for (std::size_t i = n; i-- > 0;) {
    if (i + 1 < n && corpus[i].doc == corpus[i + 1].doc)
      doc_range[i].second = doc_range[i + 1].second;
  }

  std::vector<PairedSentences> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    const bool has_successor =
        i + 1 < n && corpus[i + 1].doc == corpus[i].doc;
    const auto [db, de] = doc_range[i];
    const std::size_t outside = n - (de - db);
    const bool take_next = has_successor && rng.bernoulli(0.5);
    if (take_next) {
      pairs.push_back({&corpus[i], &corpus[i + 1], true});
    } else if (outside > 0) {
      std::size_t pick = rng.below(outside);
      if (pick >= db) pick += de - db;
      pairs.push_back({&corpus[i], &corpus[pick], false});
    } else if (has_successor) {
      // Single-document corpus: no negative candidates exist.
      pairs.push_back({&corpus[i], &corpus[i + 1], true});
    }
    // A lone sentence with neither successor nor outside candidates is
    // unusable and skipped.
  }
  if (pairs.empty())
    throw ConfigError("corpus cannot form any NSP pair (single sentence?)");
  return pairs;
}

PretrainBatcher::PretrainBatcher(std::vector<AlignedSentence> corpus,
                                 int vocab_size, int entity_vocab_size,
                                 int max_len, std::uint64_t seed,
                                 CorruptionConfig config)
    : corpus_(std::move(corpus)),
      vocab_size_(vocab_size),
      entity_vocab_size_(entity_vocab_size),
      max_len_(max_len),
      seed_(seed),
      config_(config) {
  if (corpus_.empty()) throw ConfigError("pretraining corpus is empty");
}

void PretrainBatcher::start_epoch() {
  Rng epoch_rng(derive_seed(seed_, 0x6e7370 /*nsp*/, epoch_));
  auto pairs = pair_nsp(corpus_, epoch_rng);
  pending_.clear();
  pending_.reserve(pairs.size());
  for (const auto& p : pairs) {
    PretrainExample example =
        pack_pair(*p.first, *p.second, p.is_next, max_len_);
    Rng ex_rng(derive_seed(seed_, epoch_,
                           static_cast<std::uint64_t>(p.first->doc),
                           static_cast<std::uint64_t>(p.first->sent)));
    corrupt_dea(example, entity_vocab_size_, ex_rng, config_, &stats_);
    corrupt_mlm(example, vocab_size_, ex_rng, config_);
    pending_.push_back(std::move(example));
  }
  epoch_rng.shuffle(pending_);
  ++epoch_;
}

std::vector<PretrainExample> PretrainBatcher::next_batch(int batch_size) {
  std::vector<PretrainExample> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  while (static_cast<int>(batch.size()) < batch_size) {
    if (pending_.empty()) start_epoch();
    batch.push_back(std::move(pending_.back()));
    pending_.pop_back();
  }
  return batch;
}

std::vector<PretrainExample> PretrainBatcher::epoch_examples() {
  if (pending_.empty()) start_epoch();
  std::vector<PretrainExample> out = std::move(pending_);
  pending_.clear();
  return out;
}

}  // namespace kern::corpus
