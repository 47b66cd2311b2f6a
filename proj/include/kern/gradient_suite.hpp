#pragma once

// The gradient verification suite behind `grad-check` and acceptance
// criterion 1: central finite differences in f64 against every
// parameterized op, the attention block, the fusion layer, and the full
// pretraining loss on the desk-shaped config. Weight matrices are probed
// at 10x their init scale so no sampled gradient sits below what central
// differences can resolve.

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "kern/grad_check.hpp"
#include "kern/objectives.hpp"

namespace kern::verify {

struct SuiteResult {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t coords = 0;
  bool pass = false;
};

inline bool all_pass(const std::vector<SuiteResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

inline std::vector<SuiteResult> run_gradient_suite(bool quick,
                                                   std::ostream* progress) {
  using D = double;
  using kern::nn::Tensor;
  constexpr double kTol = 1e-6;
  std::vector<SuiteResult> results;
  Rng data_rng(2024);

  const auto randn = [&data_rng](std::vector<int> shape, bool rg = true) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    std::vector<double> v(n);
    for (auto& x : v) x = data_rng.normal();
    return Tensor<D>::from(std::move(shape), std::move(v), rg);
  };

  const auto check = [&results, progress, kTol](
                         const std::string& name,
                         const std::function<Tensor<D>()>& fn,
                         const std::vector<Tensor<D>>& params,
                         std::size_t coords_per_param = 0) {
    nn::GradCheckOptions opts;
    opts.max_coords_per_param = coords_per_param;
    auto report = nn::grad_check<D>(fn, params, opts);
    SuiteResult r;
    r.name = name;
    r.max_rel_err = report.max_rel_err;
    r.coords = report.coords_checked;
    r.pass = report.ok(kTol);
    if (progress)
      *progress << (r.pass ? "  ok   " : "  FAIL ") << name
                << "  rel_err=" << r.max_rel_err << " (" << r.coords
                << " coords)\n";
    results.push_back(r);
  };

  {
    auto a = randn({3, 4});
    auto b = randn({4, 2});
    check("matmul", [&] { return nn::sum_all(nn::gelu(nn::matmul(a, b))); },
          {a, b});
  }
  {
    auto x = randn({2, 5});
    auto w = randn({2, 5}, false);
    check("softmax", [&] { return nn::sum_all(nn::mul(nn::softmax(x), w)); },
          {x});
  }
  {
    auto x = randn({3, 3});
    check("gelu", [&] { return nn::sum_all(nn::gelu(x)); }, {x});
  }
  {
    auto x = randn({4, 6});
    auto g = randn({6});
    auto b = randn({6});
    check("layer_norm",
          [&] { return nn::sum_all(nn::gelu(nn::layer_norm(x, g, b, 1e-12))); },
          {x, g, b});
  }
  {
    auto table = randn({5, 3});
    auto w = randn({4, 3}, false);
    check("embedding_lookup",
          [&] {
            return nn::sum_all(
                nn::mul(nn::embedding_lookup(table, {2, 0, 2, 4}), w));
          },
          {table});
  }
  {
    auto logits = randn({3, 5});
    check("cross_entropy",
          [&] { return nn::cross_entropy(logits, {1, 4, 0}); }, {logits});
  }
  {
    auto logits = randn({6});
    const std::vector<double> targets = {1, 0, 1, 0, 1, 1};
    check("bce_with_logits",
          [&] { return nn::bce_with_logits(logits, targets); }, {logits});
  }
  {
    auto a = randn({3, 4});
    auto b = randn({3, 4});
    auto bias = randn({4});
    check("elementwise_structural",
          [&] {
            auto h = nn::add_bias(nn::add(nn::mul(a, b), a), bias);
            h = nn::scale(h, 0.7);
            auto heads = nn::split_heads(h, 2);
            return nn::add(nn::sum_all(nn::transpose(h)),
                           nn::sum_all(nn::sigmoid(nn::merge_heads(heads))));
          },
          {a, b, bias});
  }
  {
    auto x = randn({4, 4});
    check("dropout",
          [&] {
            Rng drop(7);  // reseeded per evaluation: deterministic mask
            return nn::sum_all(nn::dropout(x, 0.3, &drop));
          },
          {x});
  }

  // Attention block and fusion layer on small dims.
  model::ModelConfig micro = model::ModelConfig::desk(40, 8);
  micro.t_layers = 1;
  micro.k_layers = 1;
  micro.hidden_w = 8;
  micro.hidden_e = 4;
  micro.heads_w = 2;
  micro.heads_e = 2;
  micro.max_len = 24;
  micro.ff_mult = 2;
  {
    auto p = model::ModelParams<D>::init(micro);
    auto& attn = p.t_layers[0].attn;
    for (auto* t : {&attn.q.w, &attn.k.w, &attn.v.w, &attn.o.w})
      for (auto& v : t->values()) v *= 10.0;
    auto x = randn({3, micro.hidden_w});
    std::vector<Tensor<D>> params = {x,        attn.q.w, attn.q.b, attn.k.w,
                                     attn.k.b, attn.v.w, attn.v.b, attn.o.w,
                                     attn.o.b, attn.ln.gain, attn.ln.bias};
    check("mh_att",
          [&] {
            return nn::sum_all(nn::gelu(mh_att(x, attn, micro.heads_w)));
          },
          params);
  }
  {
    auto p = model::ModelParams<D>::init(micro);
    auto& layer = p.k_layers[0];
    for (auto* t : {&layer.fuse_wt, &layer.fuse_we, &layer.out_t.w,
                    &layer.out_e.w})
      for (auto& v : t->values()) v *= 10.0;
    auto token_state = randn({1, micro.hidden_w});
    auto entity_state = randn({1, micro.hidden_e});
    std::vector<Tensor<D>> params = {
        token_state,  entity_state,  layer.fuse_wt, layer.fuse_we,
        layer.fuse_b, layer.out_t.w, layer.out_t.b, layer.out_e.w,
        layer.out_e.b};
    check("fusion_layer",
          [&] {
            auto out = model::fuse(layer, token_state, &entity_state);
            return nn::add(nn::sum_all(out.token), nn::sum_all(out.entity));
          },
          params);
  }

  // Full pretraining loss at the desk shape.
  {
    model::ModelConfig desk = model::ModelConfig::desk(60, 12);
    auto m = train::PretrainModel<D>::init(desk);
    {
      Rng table_rng(51);
      std::vector<double> table(static_cast<std::size_t>(desk.entity_count) *
                                desk.hidden_e);
      for (auto& v : table) v = table_rng.normal(0.0, 0.5);
      m.enc.set_entity_table(std::move(table));
    }
    m.visit([](const std::string&, Tensor<D>& t, bool trainable) {
      if (trainable && t.rank() == 2)
        for (auto& v : t.values()) v *= 10.0;
    });

    std::vector<corpus::AlignedSentence> sentences;
    Rng corpus_rng(1234);
    for (int d = 0; d < 2; ++d)
      for (int s = 0; s < 3; ++s) {
        corpus::AlignedSentence sent;
        for (int i = 0; i < 7; ++i)
          sent.tokens.push_back(8 + corpus_rng.below_int(50));
        sent.mentions = {
            corpus::Mention{corpus_rng.below_int(12), 0, 2},
            corpus::Mention{corpus_rng.below_int(12), 3, 4},
            corpus::Mention{corpus_rng.below_int(12), 5, 6}};
        sent.alignment = corpus::align(sent.mentions);
        sent.doc = d;
        sent.sent = s;
        sentences.push_back(std::move(sent));
      }
    corpus::PretrainBatcher batcher(sentences, desk.vocab_size,
                                    desk.entity_count, desk.max_len, 91);
    const auto batch = batcher.next_batch(2);
    auto params = m.trainable();
    check("pretrain_loss_desk",
          [&] { return train::build_losses(m, batch).total; }, params,
          quick ? 2 : 4);
  }

  return results;
}

}  // namespace kern::verify
