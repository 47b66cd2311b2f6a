#pragma once

// Fine-tuning: a fresh linear head over the [CLS] output of the encoder.
// Relation classification is single-label softmax; entity typing is
// multi-label with independent sigmoids thresholded at 0.5. All encoder
// layers train; the entity table stays frozen. The "w/o entities" ablation
// strips the mention stream from every example.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kern/common.hpp"
#include "kern/encoder.hpp"
#include "kern/metrics.hpp"
#include "kern/objectives.hpp"
#include "kern/task_data.hpp"

namespace kern::tasks {

using model::EncoderInput;
using model::ModelParams;
using nn::Tensor;

inline EncoderInput to_encoder_input(const TaskExample& ex,
                                     bool strip_entities) {
  EncoderInput in;
  in.tokens = ex.tokens;
  in.segments = ex.segments;
  if (!strip_entities) {
    for (const auto& m : ex.mentions) {
      in.entity_inputs.push_back(m.entity);
      in.entity_masked.push_back(false);
    }
    in.alignment = ex.alignment;
  }
  return in;
}

template <typename S>
struct TaskModel {
  ModelParams<S> enc;
  model::Linear<S> head;  // [H_w -> #labels]
  std::vector<std::string> labels;
  TaskKind kind = TaskKind::kRelation;

  int label_index(const std::string& label) const {
    auto it = std::lower_bound(labels.begin(), labels.end(), label);
    if (it == labels.end() || *it != label) return -1;
    return static_cast<int>(it - labels.begin());
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    enc.visit(fn);
    fn("head.task.w", head.w, true);
    fn("head.task.b", head.b, true);
  }

  std::vector<Tensor<S>> trainable() {
    std::vector<Tensor<S>> out;
    visit([&out](const std::string&, Tensor<S>& t, bool is_trainable) {
      if (is_trainable) out.push_back(t);
    });
    return out;
  }
};

// Raw head outputs on the [CLS] embedding, shape [1, #labels].
template <typename S>
Tensor<S> classify(TaskModel<S>& m, const TaskExample& ex, bool strip_entities,
                   Rng* rng = nullptr) {
  auto out = model::forward(m.enc, to_encoder_input(ex, strip_entities), rng);
  return m.head(nn::gather_rows(out.tokens, {0}));
}

template <typename S>
Tensor<S> task_loss(TaskModel<S>& m, const TaskExample& ex, bool strip_entities,
                    Rng* rng = nullptr) {
  auto logits = classify(m, ex, strip_entities, rng);
  if (m.kind == TaskKind::kRelation) {
    const int target = m.label_index(ex.labels[0]);
    if (target < 0)
      throw DataError("relation label not in training vocabulary: " +
                      ex.labels[0]);
    return nn::cross_entropy(logits, {target});
  }
  std::vector<S> multi_hot(m.labels.size(), S(0));
  for (const auto& label : ex.labels) {
    const int idx = m.label_index(label);
    if (idx >= 0) multi_hot[static_cast<std::size_t>(idx)] = S(1);
  }
  return nn::bce_with_logits(logits, multi_hot);
}

// Relation: argmax label. Typing: sigmoid(logit) > 0.5 label set.
template <typename S>
std::vector<std::string> predict(TaskModel<S>& m, const TaskExample& ex,
                                 bool strip_entities) {
  auto logits = classify(m, ex, strip_entities);
  if (m.kind == TaskKind::kRelation) {
    int best = 0;
    for (std::size_t j = 1; j < logits.numel(); ++j)
      if (logits.values()[j] > logits.values()[static_cast<std::size_t>(best)])
        best = static_cast<int>(j);
    return {m.labels[static_cast<std::size_t>(best)]};
  }
  std::vector<std::string> out;
  for (std::size_t j = 0; j < logits.numel(); ++j)
    if (logits.values()[j] > S(0)) out.push_back(m.labels[j]);  // sigmoid > .5
  return out;
}

struct FinetuneOptions {
  int epochs = 3;
  int batch_size = 8;
  double learning_rate = 1e-3;  // desk default; 5e-5/3e-5/2e-5 at paper scale
  double warmup_frac = 0.1;
  std::uint64_t seed = 1;
  bool strip_entities = false;  // the "w/o entities" ablation
  std::optional<std::string> null_label;
};

template <typename S>
MetricReport evaluate(TaskModel<S>& m, const std::vector<TaskExample>& eval_set,
                      bool strip_entities,
                      const std::optional<std::string>& null_label) {
  MetricReport report;
  std::vector<std::string> warnings;
  if (m.kind == TaskKind::kRelation) {
    std::vector<std::string> pred, gold;
    for (const auto& ex : eval_set) {
      pred.push_back(predict(m, ex, strip_entities)[0]);
      gold.push_back(ex.labels[0]);
      if (m.label_index(ex.labels[0]) < 0)
        warnings.push_back("unseen test label scored as always-wrong: " +
                           ex.labels[0]);
    }
    report = metrics_relation(pred, gold, null_label);
  } else {
    std::vector<LabelSet> pred, gold;
    for (const auto& ex : eval_set) {
      auto p = predict(m, ex, strip_entities);
      pred.emplace_back(p.begin(), p.end());
      gold.emplace_back(ex.labels.begin(), ex.labels.end());
      for (const auto& label : ex.labels)
        if (m.label_index(label) < 0)
          warnings.push_back("unseen test label scored as always-wrong: " +
                             label);
    }
    report = metrics_typing(pred, gold);
  }
  std::sort(warnings.begin(), warnings.end());
  warnings.erase(std::unique(warnings.begin(), warnings.end()), warnings.end());
  report.warnings = std::move(warnings);
  return report;
}

// Builds the label vocabulary from the training set, attaches a fresh
// seeded head to the given encoder, trains, and reports on the eval set.
template <typename S>
struct FinetuneResult {
  TaskModel<S> model;
  MetricReport report;
};

template <typename S>
FinetuneResult<S> finetune(ModelParams<S> encoder, TaskKind kind,
                           const std::vector<TaskExample>& train_set,
                           const std::vector<TaskExample>& eval_set,
                           const FinetuneOptions& opts) {
  if (train_set.empty()) throw ConfigError("empty fine-tuning training set");
  std::set<std::string> label_set;
  for (const auto& ex : train_set)
    label_set.insert(ex.labels.begin(), ex.labels.end());

  FinetuneResult<S> result;
  result.model.enc = std::move(encoder);
  result.model.kind = kind;
  result.model.labels.assign(label_set.begin(), label_set.end());
  Rng init_rng(derive_seed(opts.seed, 0x7461736b /*task*/));
  result.model.head = model::Linear<S>::init(
      result.model.enc.cfg.hidden_w,
      static_cast<int>(result.model.labels.size()), init_rng);
  auto& m = result.model;

  train::Adam<S> optimizer(m.trainable());
  std::vector<int> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng shuffle_rng(derive_seed(opts.seed, 0x73687566 /*shuf*/));

  const std::uint64_t total_steps =
      static_cast<std::uint64_t>(opts.epochs) *
      ((train_set.size() + static_cast<std::size_t>(opts.batch_size) - 1) /
       static_cast<std::size_t>(opts.batch_size));
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      const std::size_t end = std::min(
          order.size(), cursor + static_cast<std::size_t>(opts.batch_size));
      optimizer.zero_grad();
      {
        nn::Tape<S> tape;
        Tensor<S> loss;
        const S weight = S(1.0 / static_cast<double>(end - cursor));
        for (std::size_t i = cursor; i < end; ++i) {
          auto term = nn::scale(
              task_loss(m, train_set[static_cast<std::size_t>(
                               order[i])],
                        opts.strip_entities),
              weight);
          loss = loss.defined() ? nn::add(loss, term) : term;
        }
        if (!std::isfinite(static_cast<double>(loss.item())))
          throw VerifyError("non-finite fine-tuning loss at step " +
                            std::to_string(step));
        tape.backward(loss);
      }
      optimizer.step(train::warmup_lr(opts.learning_rate, step, total_steps,
                               opts.warmup_frac));
      ++step;
      cursor = end;
    }
  }
  result.report = evaluate(m, eval_set, opts.strip_entities, opts.null_label);
  return result;
}

}  // namespace kern::tasks
