#pragma once

// Pretraining objectives and loop. The dEA head projects token outputs into
// the entity space; its logits are dot products against the candidate
// entity vectors (the pair's original entity sequence, frozen table rows),
// normalized over those candidates only. MLM and NSP follow the usual
// encoder pretraining setup. The three losses are summed unweighted.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kern/common.hpp"
#include "kern/encoder.hpp"
#include "kern/io_util.hpp"
#include "kern/pretrain_data.hpp"
#include "kern/rng.hpp"
#include "kern/tensor.hpp"

namespace kern::train {

using model::EncoderInput;
using model::ModelConfig;
using model::ModelParams;
using nn::Tensor;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
class Adam {
 public:
  Adam(std::vector<Tensor<S>> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    moments_m_.resize(params_.size());
    moments_v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      moments_m_[i].assign(params_[i].numel(), 0.0);
      moments_v_[i].assign(params_[i].numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::uint64_t step_count() const { return t_; }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& value = params_[i].values();
      const auto& grad = params_[i].grad();
      auto& m = moments_m_[i];
      auto& v = moments_v_[i];
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = static_cast<double>(grad[j]);
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        const double update =
            lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
        value[j] = static_cast<S>(static_cast<double>(value[j]) - update);
      }
    }
  }

 private:
  std::vector<Tensor<S>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> moments_m_;
  std::vector<std::vector<double>> moments_v_;
  std::uint64_t t_ = 0;
};

// Linear warmup over the first fraction of the run, then constant.
inline double warmup_lr(double base, std::uint64_t step, std::uint64_t total,
                        double warmup_frac = 0.1) {
  const auto warmup = static_cast<std::uint64_t>(
      warmup_frac * static_cast<double>(total));
  if (warmup == 0 || step >= warmup) return base;
  return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

template <typename S>
struct PretrainHeads {
  model::Linear<S> dea;  // [H_w -> H_e]
  model::Linear<S> mlm;  // [H_w -> V]
  model::Linear<S> nsp;  // [H_w -> 2]

  static PretrainHeads init(const ModelConfig& cfg, Rng& rng) {
    return PretrainHeads{
        model::Linear<S>::init(cfg.hidden_w, cfg.hidden_e, rng),
        model::Linear<S>::init(cfg.hidden_w, cfg.vocab_size, rng),
        model::Linear<S>::init(cfg.hidden_w, 2, rng)};
  }
};

template <typename S>
struct PretrainModel {
  ModelParams<S> enc;
  PretrainHeads<S> heads;

  static PretrainModel init(const ModelConfig& cfg) {
    PretrainModel m;
    m.enc = ModelParams<S>::init(cfg);
    Rng rng(derive_seed(cfg.seed, 0x68656164 /*head*/));
    m.heads = PretrainHeads<S>::init(cfg, rng);
    return m;
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    enc.visit(fn);
    fn("head.dea.w", heads.dea.w, true);
    fn("head.dea.b", heads.dea.b, true);
    fn("head.mlm.w", heads.mlm.w, true);
    fn("head.mlm.b", heads.mlm.b, true);
    fn("head.nsp.w", heads.nsp.w, true);
    fn("head.nsp.b", heads.nsp.b, true);
  }

  std::vector<Tensor<S>> trainable() {
    std::vector<Tensor<S>> out;
    visit([&out](const std::string&, Tensor<S>& t, bool is_trainable) {
      if (is_trainable) out.push_back(t);
    });
    return out;
  }
};

inline EncoderInput to_encoder_input(const corpus::PretrainExample& ex) {
  EncoderInput in;
  in.tokens = ex.tokens;
  in.segments = ex.segments;
  in.entity_inputs.reserve(ex.slots.size());
  in.entity_masked.reserve(ex.slots.size());
  for (const auto& slot : ex.slots) {
    in.entity_inputs.push_back(slot.input_entity);
    in.entity_masked.push_back(slot.state == corpus::SlotState::kMasked);
  }
  in.alignment = ex.alignment;
  return in;
}

// Candidate-restricted entity logits: one row per queried token output,
// one column per candidate.
template <typename S>
Tensor<S> dea_logits(const model::Linear<S>& head, const Tensor<S>& token_rows,
                     const Tensor<S>& candidates) {
  if (candidates.dim(0) < 1)
    throw ShapeError("dea_logits needs at least one candidate");
  return nn::matmul(head(token_rows), nn::transpose(candidates));
}

struct LossWeights {
  bool include_dea = true;
  bool include_mlm = true;
  bool include_nsp = true;
};

// NSP class indices.
inline constexpr int kIsNext = 0;
inline constexpr int kNotNext = 1;

template <typename S>
struct BatchLoss {
  Tensor<S> total;  // graph node used for backward
  double dea = 0.0, mlm = 0.0, nsp = 0.0;
  std::size_t dea_targets = 0, mlm_targets = 0;
  std::size_t dea_skipped = 0, mlm_skipped = 0;

  double total_value() const { return dea + mlm + nsp; }
};

template <typename S>
BatchLoss<S> build_losses(PretrainModel<S>& m,
                          const std::vector<corpus::PretrainExample>& batch,
                          const LossWeights& weights = {}, Rng* rng = nullptr) {
  if (batch.empty()) throw ConfigError("empty pretraining batch");

  struct PerExample {
    Tensor<S> dea, mlm;
    std::size_t dea_count = 0, mlm_count = 0;
    Tensor<S> nsp;
  };
  std::vector<PerExample> parts;
  parts.reserve(batch.size());
  std::size_t dea_total = 0, mlm_total = 0;
  BatchLoss<S> out;

  for (const auto& ex : batch) {
    PerExample pe;
    auto enc_out = model::forward(m.enc, to_encoder_input(ex), rng);

    if (weights.include_dea && !ex.dea_targets.empty() && !ex.slots.empty()) {
      std::vector<int> positions, targets;
      positions.reserve(ex.dea_targets.size());
      for (const auto& [pos, slot] : ex.dea_targets) {
        positions.push_back(pos);
        targets.push_back(slot);
      }
      auto rows = nn::gather_rows(enc_out.tokens, positions);
      auto candidates =
          nn::embedding_lookup(m.enc.entity_table, ex.candidate_entities());
      pe.dea = nn::cross_entropy(dea_logits(m.heads.dea, rows, candidates),
                                 targets);
      pe.dea_count = targets.size();
      dea_total += pe.dea_count;
    } else if (weights.include_dea) {
      ++out.dea_skipped;
    }

    if (weights.include_mlm && !ex.mlm_targets.empty()) {
      std::vector<int> positions, targets;
      for (const auto& [pos, original] : ex.mlm_targets) {
        positions.push_back(pos);
        targets.push_back(original);
      }
      auto rows = nn::gather_rows(enc_out.tokens, positions);
      pe.mlm = nn::cross_entropy(m.heads.mlm(rows), targets);
      pe.mlm_count = targets.size();
      mlm_total += pe.mlm_count;
    } else if (weights.include_mlm) {
      ++out.mlm_skipped;
    }

    if (weights.include_nsp) {
      auto cls = nn::gather_rows(enc_out.tokens, {0});
      pe.nsp = nn::cross_entropy(m.heads.nsp(cls),
                                 {ex.is_next ? kIsNext : kNotNext});
    }
    parts.push_back(std::move(pe));
  }

  // Pool per-example means into batch means weighted by target counts, so
  // the batch loss is the plain mean over all targets.
  Tensor<S> dea_sum, mlm_sum, nsp_sum;
  const auto accumulate = [](Tensor<S>& acc, const Tensor<S>& term) {
    acc = acc.defined() ? nn::add(acc, term) : term;
  };
  for (const auto& pe : parts) {
    if (pe.dea.defined())
      accumulate(dea_sum,
                 nn::scale(pe.dea, static_cast<S>(static_cast<double>(pe.dea_count) /
                                                  static_cast<double>(dea_total))));
    if (pe.mlm.defined())
      accumulate(mlm_sum,
                 nn::scale(pe.mlm, static_cast<S>(static_cast<double>(pe.mlm_count) /
                                                  static_cast<double>(mlm_total))));
    if (pe.nsp.defined())
      accumulate(nsp_sum,
                 nn::scale(pe.nsp, static_cast<S>(1.0 / static_cast<double>(
                                                            batch.size()))));
  }

  Tensor<S> total;
  const auto add_component = [&total, &accumulate](const Tensor<S>& t) {
    if (t.defined()) accumulate(total, t);
  };
  add_component(dea_sum);
  add_component(mlm_sum);
  add_component(nsp_sum);
  if (!total.defined()) total = Tensor<S>::scalar(S(0));

  out.total = total;
  out.dea = dea_sum.defined() ? static_cast<double>(dea_sum.item()) : 0.0;
  out.mlm = mlm_sum.defined() ? static_cast<double>(mlm_sum.item()) : 0.0;
  out.nsp = nsp_sum.defined() ? static_cast<double>(nsp_sum.item()) : 0.0;
  out.dea_targets = dea_total;
  out.mlm_targets = mlm_total;
  return out;
}

struct StepReport {
  std::uint64_t step = 0;
  double total = 0.0, dea = 0.0, mlm = 0.0, nsp = 0.0;
  std::size_t dea_targets = 0, mlm_targets = 0;
};

struct PretrainOptions {
  std::uint64_t steps = 500;
  int batch_size = 8;
  double learning_rate = 1e-3;  // desk default; 5e-5 at paper scale
  double warmup_frac = 0.1;
  bool include_dea = true;
  std::string loss_log_path;  // empty = no log
};

template <typename S>
struct PretrainState {
  PretrainModel<S> model;
  Adam<S> optimizer;
  corpus::PretrainBatcher batcher;
  PretrainOptions options;
  std::uint64_t step = 0;

  PretrainState(PretrainModel<S> m, corpus::PretrainBatcher b, PretrainOptions o)
      : model(std::move(m)),
        optimizer(model.trainable()),
        batcher(std::move(b)),
        options(std::move(o)) {}
};

template <typename S>
StepReport pretrain_step(PretrainState<S>& state,
                         const std::vector<corpus::PretrainExample>& batch) {
  LossWeights weights;
  weights.include_dea = state.options.include_dea;
  state.optimizer.zero_grad();
  BatchLoss<S> loss;
  {
    nn::Tape<S> tape;
    loss = build_losses(state.model, batch, weights);
    if (!std::isfinite(loss.total_value()))
      throw VerifyError("non-finite pretraining loss at step " +
                        std::to_string(state.step) + " (dea=" +
                        std::to_string(loss.dea) + " mlm=" +
                        std::to_string(loss.mlm) + " nsp=" +
                        std::to_string(loss.nsp) + ")");
    tape.backward(loss.total);
  }
  state.optimizer.step(warmup_lr(state.options.learning_rate, state.step,
                                 state.options.steps, state.options.warmup_frac));
  ++state.step;

  StepReport report;
  report.step = state.step;
  report.dea = loss.dea;
  report.mlm = loss.mlm;
  report.nsp = loss.nsp;
  report.total = loss.total_value();
  report.dea_targets = loss.dea_targets;
  report.mlm_targets = loss.mlm_targets;
  return report;
}

template <typename S>
std::vector<StepReport> pretrain_run(PretrainState<S>& state) {
  std::vector<StepReport> history;
  history.reserve(state.options.steps);
  while (state.step < state.options.steps) {
    auto batch = state.batcher.next_batch(state.options.batch_size);
    history.push_back(pretrain_step(state, batch));
  }
  if (!state.options.loss_log_path.empty()) {
    io::atomic_write(state.options.loss_log_path, [&](std::ostream& log) {
      log << "step,total,dea,mlm,nsp\n";
      for (const auto& r : history)
        log << r.step << ',' << r.total << ',' << r.dea << ',' << r.mlm << ','
            << r.nsp << '\n';
    });
  }
  return history;
}

// Top-1 dEA accuracy over one freshly corrupted pass of the corpus
// (separate eval seed), pooled over all dEA targets.
template <typename S>
double dea_top1_accuracy(PretrainModel<S>& m,
                         const std::vector<corpus::AlignedSentence>& corpus,
                         int vocab_size, std::uint64_t eval_seed) {
  corpus::PretrainBatcher batcher(corpus, vocab_size, m.enc.cfg.entity_count,
                                  m.enc.cfg.max_len, eval_seed);
  std::size_t correct = 0, total = 0;
  for (const auto& ex : batcher.epoch_examples()) {
    if (ex.dea_targets.empty() || ex.slots.empty()) continue;
    auto enc_out = model::forward(m.enc, to_encoder_input(ex));
    std::vector<int> positions;
    for (const auto& [pos, slot] : ex.dea_targets) positions.push_back(pos);
    auto rows = nn::gather_rows(enc_out.tokens, positions);
    auto candidates =
        nn::embedding_lookup(m.enc.entity_table, ex.candidate_entities());
    auto logits = dea_logits(m.heads.dea, rows, candidates);
    const int mcand = logits.dim(1);
    for (std::size_t t = 0; t < ex.dea_targets.size(); ++t) {
      int best = 0;
      for (int j = 1; j < mcand; ++j)
        if (logits.values()[t * mcand + static_cast<std::size_t>(j)] >
            logits.values()[t * mcand + static_cast<std::size_t>(best)])
          best = j;
      if (best == ex.dea_targets[t].second) ++correct;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace kern::train
