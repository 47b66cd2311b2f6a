#pragma once

// The two-stack encoder: a lower textual transformer over tokens and an
// upper stack of aggregators that run separate multi-head self-attentions
// over the token and entity streams and then mix them through a shared
// inner state per aligned token. Entity inputs come from a frozen embedding
// table; masked alignment slots feed a learned mask vector instead. The
// entity stream carries no positional information, so it is equivariant
// under slot permutation.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kern/common.hpp"
#include "kern/rng.hpp"
#include "kern/tensor.hpp"

namespace kern::model {

using nn::Tensor;

struct ModelConfig {
  int t_layers = 2;       // lower textual stack depth
  int k_layers = 2;       // upper aggregator stack depth
  int hidden_w = 64;      // token hidden size
  int hidden_e = 16;      // entity hidden size (= frozen table dimension)
  int heads_w = 4;
  int heads_e = 2;
  int vocab_size = 200;
  int entity_count = 16;
  int max_len = 128;
  int ff_mult = 4;
  double dropout = 0.0;
  std::uint64_t seed = 1;

  // Paper-scale shape; not runnable on a desk but kept as a named preset.
  static ModelConfig full_scale(int vocab, int entities) {
    ModelConfig cfg;
    cfg.t_layers = 6;
    cfg.k_layers = 6;
    cfg.hidden_w = 768;
    cfg.hidden_e = 100;
    cfg.heads_w = 12;
    cfg.heads_e = 4;
    cfg.max_len = 256;
    cfg.vocab_size = vocab;
    cfg.entity_count = entities;
    return cfg;
  }

  static ModelConfig desk(int vocab, int entities) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.entity_count = entities;
    return cfg;
  }

  void validate() const {
    if (t_layers <= 0 || k_layers <= 0 || hidden_w <= 0 || hidden_e <= 0 ||
        heads_w <= 0 || heads_e <= 0 || vocab_size <= 0 || entity_count <= 0 ||
        max_len <= 0 || ff_mult <= 0)
      throw ConfigError("model config: all shape fields must be positive");
    if (hidden_w % heads_w != 0)
      throw ConfigError("hidden_w " + std::to_string(hidden_w) +
                        " not divisible by heads_w " + std::to_string(heads_w));
    if (hidden_e % heads_e != 0)
      throw ConfigError("hidden_e " + std::to_string(hidden_e) +
                        " not divisible by heads_e " + std::to_string(heads_e));
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("dropout must be in [0,1)");
  }
};

template <typename S>
struct Linear {
  Tensor<S> w;  // [in, out]
  Tensor<S> b;  // [out]

  static Linear init(int in, int out, Rng& rng) {
    std::vector<S> w(static_cast<std::size_t>(in) * out);
    for (auto& v : w) v = static_cast<S>(rng.normal(0.0, 0.02));
    return Linear{Tensor<S>::from({in, out}, std::move(w), true),
                  Tensor<S>::zeros({out}, true)};
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    return nn::add_bias(nn::matmul(x, w), b);
  }
};

template <typename S>
struct LayerNormParams {
  Tensor<S> gain;
  Tensor<S> bias;

  static LayerNormParams init(int d) {
    return LayerNormParams{Tensor<S>::full({d}, S(1), true),
                           Tensor<S>::zeros({d}, true)};
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    return nn::layer_norm(x, gain, bias, S(1e-12));
  }
};

template <typename S>
struct AttentionParams {
  Linear<S> q, k, v, o;
  LayerNormParams<S> ln;

  static AttentionParams init(int hidden, Rng& rng) {
    return AttentionParams{Linear<S>::init(hidden, hidden, rng),
                           Linear<S>::init(hidden, hidden, rng),
                           Linear<S>::init(hidden, hidden, rng),
                           Linear<S>::init(hidden, hidden, rng),
                           LayerNormParams<S>::init(hidden)};
  }
};

template <typename S>
struct TEncoderLayer {
  AttentionParams<S> attn;
  Linear<S> ff1, ff2;
  LayerNormParams<S> ln_ff;

  static TEncoderLayer init(int hidden, int ff_mult, Rng& rng) {
    return TEncoderLayer{AttentionParams<S>::init(hidden, rng),
                         Linear<S>::init(hidden, hidden * ff_mult, rng),
                         Linear<S>::init(hidden * ff_mult, hidden, rng),
                         LayerNormParams<S>::init(hidden)};
  }
};

// One aggregator: per-stream attention plus the fusion maps. The fusion
// weights differ per layer; the unaligned path reuses the token-side
// weights of the aligned path.
template <typename S>
struct Aggregator {
  AttentionParams<S> tok_attn;
  AttentionParams<S> ent_attn;
  Tensor<S> fuse_wt;  // [H_w, H_w]
  Tensor<S> fuse_we;  // [H_e, H_w]
  Tensor<S> fuse_b;   // [H_w]
  Linear<S> out_t;    // [H_w -> H_w]
  Linear<S> out_e;    // [H_w -> H_e]

  static Aggregator init(int hidden_w, int hidden_e, Rng& rng) {
    const auto mat = [&rng](int in, int out) {
      std::vector<S> v(static_cast<std::size_t>(in) * out);
      for (auto& x : v) x = static_cast<S>(rng.normal(0.0, 0.02));
      return Tensor<S>::from({in, out}, std::move(v), true);
    };
    return Aggregator{AttentionParams<S>::init(hidden_w, rng),
                      AttentionParams<S>::init(hidden_e, rng),
                      mat(hidden_w, hidden_w),
                      mat(hidden_e, hidden_w),
                      Tensor<S>::zeros({hidden_w}, true),
                      Linear<S>::init(hidden_w, hidden_w, rng),
                      Linear<S>::init(hidden_w, hidden_e, rng)};
  }
};

template <typename S>
struct ModelParams {
  ModelConfig cfg;
  Tensor<S> tok_emb;  // [V, H_w]
  Tensor<S> seg_emb;  // [2, H_w]
  Tensor<S> pos_emb;  // [max_len, H_w]
  LayerNormParams<S> emb_ln;
  std::vector<TEncoderLayer<S>> t_layers;
  std::vector<Aggregator<S>> k_layers;
  Tensor<S> entity_table;  // [E, H_e]; frozen, never updated
  Tensor<S> emask;         // [1, H_e]; learned mask-slot vector

  static ModelParams init(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, 0x696e6974 /*init*/));
    ModelParams p;
    p.cfg = cfg;
    const auto emb = [&rng](int rows, int cols) {
      std::vector<S> v(static_cast<std::size_t>(rows) * cols);
      for (auto& x : v) x = static_cast<S>(rng.normal(0.0, 0.02));
      return Tensor<S>::from({rows, cols}, std::move(v), true);
    };
    p.tok_emb = emb(cfg.vocab_size, cfg.hidden_w);
    p.seg_emb = emb(2, cfg.hidden_w);
    p.pos_emb = emb(cfg.max_len, cfg.hidden_w);
    p.emb_ln = LayerNormParams<S>::init(cfg.hidden_w);
    for (int i = 0; i < cfg.t_layers; ++i)
      p.t_layers.push_back(TEncoderLayer<S>::init(cfg.hidden_w, cfg.ff_mult, rng));
    for (int i = 0; i < cfg.k_layers; ++i)
      p.k_layers.push_back(Aggregator<S>::init(cfg.hidden_w, cfg.hidden_e, rng));
    // The frozen table is filled from a trained KG export (or by the
    // caller in tests); requires_grad stays off so no gradient ever
    // reaches it.
    p.entity_table =
        Tensor<S>::zeros({cfg.entity_count, cfg.hidden_e}, false);
    p.emask = emb(1, cfg.hidden_e);
    return p;
  }

  void set_entity_table(std::vector<S> values) {
    p_check_table_size(values.size());
    entity_table = Tensor<S>::from({cfg.entity_count, cfg.hidden_e},
                                   std::move(values), false);
  }

  // Fixed-order traversal of every named tensor. `trainable` is false only
  // for the frozen entity table.
  template <typename Fn>
  void visit(Fn&& fn) {
    fn("tok_emb", tok_emb, true);
    fn("seg_emb", seg_emb, true);
    fn("pos_emb", pos_emb, true);
    fn("emb_ln.gain", emb_ln.gain, true);
    fn("emb_ln.bias", emb_ln.bias, true);
    const auto visit_attn = [&fn](const std::string& prefix,
                                  AttentionParams<S>& a) {
      fn(prefix + ".wq", a.q.w, true);
      fn(prefix + ".bq", a.q.b, true);
      fn(prefix + ".wk", a.k.w, true);
      fn(prefix + ".bk", a.k.b, true);
      fn(prefix + ".wv", a.v.w, true);
      fn(prefix + ".bv", a.v.b, true);
      fn(prefix + ".wo", a.o.w, true);
      fn(prefix + ".bo", a.o.b, true);
      fn(prefix + ".ln.gain", a.ln.gain, true);
      fn(prefix + ".ln.bias", a.ln.bias, true);
    };
    for (std::size_t i = 0; i < t_layers.size(); ++i) {
      const std::string p = "t" + std::to_string(i);
      visit_attn(p + ".attn", t_layers[i].attn);
      fn(p + ".ff1.w", t_layers[i].ff1.w, true);
      fn(p + ".ff1.b", t_layers[i].ff1.b, true);
      fn(p + ".ff2.w", t_layers[i].ff2.w, true);
      fn(p + ".ff2.b", t_layers[i].ff2.b, true);
      fn(p + ".ln_ff.gain", t_layers[i].ln_ff.gain, true);
      fn(p + ".ln_ff.bias", t_layers[i].ln_ff.bias, true);
    }
    for (std::size_t i = 0; i < k_layers.size(); ++i) {
      const std::string p = "k" + std::to_string(i);
      visit_attn(p + ".tok_attn", k_layers[i].tok_attn);
      visit_attn(p + ".ent_attn", k_layers[i].ent_attn);
      fn(p + ".fuse.wt", k_layers[i].fuse_wt, true);
      fn(p + ".fuse.we", k_layers[i].fuse_we, true);
      fn(p + ".fuse.b", k_layers[i].fuse_b, true);
      fn(p + ".out_t.w", k_layers[i].out_t.w, true);
      fn(p + ".out_t.b", k_layers[i].out_t.b, true);
      fn(p + ".out_e.w", k_layers[i].out_e.w, true);
      fn(p + ".out_e.b", k_layers[i].out_e.b, true);
    }
    fn("emask", emask, true);
    fn("entity.table", entity_table, false);
  }

  std::vector<Tensor<S>> trainable() {
    std::vector<Tensor<S>> out;
    visit([&out](const std::string&, Tensor<S>& t, bool is_trainable) {
      if (is_trainable) out.push_back(t);
    });
    return out;
  }

 private:
  void p_check_table_size(std::size_t n) const {
    const std::size_t want =
        static_cast<std::size_t>(cfg.entity_count) * cfg.hidden_e;
    if (n != want)
      throw ShapeError("entity table size " + std::to_string(n) +
                       " != " + std::to_string(want));
  }
};

template <typename S>
struct EncoderOutput {
  Tensor<S> tokens;    // [n, H_w]
  Tensor<S> entities;  // [m, H_e]; undefined when m == 0
};

// One entity slot per mention, in mention order; masked slots feed the
// learned mask vector instead of a table row.
struct EncoderInput {
  std::vector<int> tokens;
  std::vector<int> segments;
  std::vector<int> entity_inputs;   // frozen-table ids (ignored when masked)
  std::vector<bool> entity_masked;
  std::vector<std::pair<int, int>> alignment;  // token pos -> slot
};

// Self-attention block: multi-head scaled dot product wrapped in residual
// + layer norm.
template <typename S>
Tensor<S> mh_att(const Tensor<S>& x, const AttentionParams<S>& params,
                 int heads, double dropout_p = 0.0, Rng* rng = nullptr) {
  const int dh = x.dim(1) / heads;
  auto q = split_heads(params.q(x), heads);
  auto k = split_heads(params.k(x), heads);
  auto v = split_heads(params.v(x), heads);
  std::vector<Tensor<S>> ctx;
  ctx.reserve(q.size());
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
  for (int h = 0; h < heads; ++h) {
    auto scores = nn::scale(
        nn::matmul(q[static_cast<std::size_t>(h)],
                   nn::transpose(k[static_cast<std::size_t>(h)])),
        inv_sqrt);
    auto attn = nn::softmax(scores);
    ctx.push_back(nn::matmul(attn, v[static_cast<std::size_t>(h)]));
  }
  auto out = params.o(merge_heads(ctx));
  out = nn::dropout(out, dropout_p, rng);
  return params.ln(nn::add(x, out));
}

// Raw attention weights of head 0 for inspection in tests.
template <typename S>
Tensor<S> attention_weights(const Tensor<S>& x, const AttentionParams<S>& params,
                            int heads) {
  const int dh = x.dim(1) / heads;
  auto q = split_heads(params.q(x), heads);
  auto k = split_heads(params.k(x), heads);
  return nn::softmax(
      nn::scale(nn::matmul(q[0], nn::transpose(k[0])),
                S(1) / std::sqrt(static_cast<S>(dh))));
}

template <typename S>
Tensor<S> t_encode(const ModelParams<S>& p, const std::vector<int>& tokens,
                   const std::vector<int>& segments, Rng* rng = nullptr) {
  const int n = static_cast<int>(tokens.size());
  if (n == 0) throw DataError("t_encode on empty token sequence");
  if (n > p.cfg.max_len)
    throw DataError("sequence length " + std::to_string(n) +
                    " exceeds max_len " + std::to_string(p.cfg.max_len) +
                    "; caller must pre-truncate");
  if (segments.size() != tokens.size())
    throw ShapeError("segments length " + std::to_string(segments.size()) +
                     " != tokens length " + std::to_string(tokens.size()));
  std::vector<int> positions(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = i;

  auto x = nn::add(nn::add(nn::embedding_lookup(p.tok_emb, tokens),
                           nn::embedding_lookup(p.seg_emb, segments)),
                   nn::embedding_lookup(p.pos_emb, positions));
  x = p.emb_ln(x);
  x = nn::dropout(x, p.cfg.dropout, rng);
  for (const auto& layer : p.t_layers) {
    x = mh_att(x, layer.attn, p.cfg.heads_w, p.cfg.dropout, rng);
    auto ff = layer.ff2(nn::gelu(layer.ff1(x)));
    ff = nn::dropout(ff, p.cfg.dropout, rng);
    x = layer.ln_ff(nn::add(x, ff));
  }
  return x;
}

// Per-token information fusion. Aligned tokens (entity state present) mix
// through the shared inner state and emit both a token and an entity
// output; unaligned tokens use the same token-side weights and emit only a
// token output. A zero entity state collapses the aligned path onto the
// unaligned one exactly.
template <typename S>
struct FuseResult {
  Tensor<S> token;   // [1, H_w]
  Tensor<S> entity;  // [1, H_e]; undefined on the unaligned path
};

template <typename S>
FuseResult<S> fuse(const Aggregator<S>& layer, const Tensor<S>& token_state,
                   const Tensor<S>* entity_state) {
  auto pre = nn::add_bias(nn::matmul(token_state, layer.fuse_wt), layer.fuse_b);
  if (entity_state != nullptr)
    pre = nn::add(pre, nn::matmul(*entity_state, layer.fuse_we));
  auto inner = nn::gelu(pre);
  FuseResult<S> result;
  result.token = nn::gelu(layer.out_t(inner));
  if (entity_state != nullptr) result.entity = nn::gelu(layer.out_e(inner));
  return result;
}

namespace detail {

template <typename S>
void check_alignment(const std::vector<std::pair<int, int>>& alignment, int n,
                     int m) {
  std::vector<bool> token_used(static_cast<std::size_t>(n), false);
  std::vector<bool> slot_used(static_cast<std::size_t>(m), false);
  for (const auto& [pos, slot] : alignment) {
    if (pos < 0 || pos >= n || slot < 0 || slot >= m)
      throw DataError("alignment entry (" + std::to_string(pos) + "," +
                      std::to_string(slot) + ") out of range for n=" +
                      std::to_string(n) + " m=" + std::to_string(m));
    if (token_used[static_cast<std::size_t>(pos)] ||
        slot_used[static_cast<std::size_t>(slot)])
      throw DataError("alignment is not injective at token " +
                      std::to_string(pos));
    token_used[static_cast<std::size_t>(pos)] = true;
    slot_used[static_cast<std::size_t>(slot)] = true;
  }
}

}  // namespace detail

// The aggregator stack. `entities` may be an undefined tensor when m == 0,
// in which case every token takes the no-integration path.
template <typename S>
EncoderOutput<S> k_encode(const ModelParams<S>& p, Tensor<S> tokens,
                          Tensor<S> entities,
                          const std::vector<std::pair<int, int>>& alignment,
                          Rng* rng = nullptr) {
  const int n = tokens.dim(0);
  const int m = entities.defined() ? entities.dim(0) : 0;
  detail::check_alignment<S>(alignment, n, m);

  // Constant selection matrices. align_nm[j,k] = 1 iff token j is aligned
  // to slot k; pass_mask keeps the attention output of slots no token
  // produces.
  Tensor<S> align_nm, align_mn, pass_mask;
  if (m > 0) {
    std::vector<S> a(static_cast<std::size_t>(n) * m, S(0));
    std::vector<S> at(static_cast<std::size_t>(m) * n, S(0));
    std::vector<S> pass(static_cast<std::size_t>(m) * p.cfg.hidden_e, S(1));
    for (const auto& [pos, slot] : alignment) {
      a[static_cast<std::size_t>(pos) * m + slot] = S(1);
      at[static_cast<std::size_t>(slot) * n + pos] = S(1);
      for (int j = 0; j < p.cfg.hidden_e; ++j)
        pass[static_cast<std::size_t>(slot) * p.cfg.hidden_e + j] = S(0);
    }
    align_nm = Tensor<S>::from({n, m}, std::move(a), false);
    align_mn = Tensor<S>::from({m, n}, std::move(at), false);
    pass_mask = Tensor<S>::from({m, p.cfg.hidden_e}, std::move(pass), false);
  }

  for (const auto& layer : p.k_layers) {
    tokens = mh_att(tokens, layer.tok_attn, p.cfg.heads_w, p.cfg.dropout, rng);
    if (m > 0)
      entities = mh_att(entities, layer.ent_attn, p.cfg.heads_e, p.cfg.dropout, rng);

    // Inner state: aligned tokens add the entity transform, unaligned rows
    // of align_nm are all zero so they reduce to the plain token path
    // exactly.
    auto pre = nn::add_bias(nn::matmul(tokens, layer.fuse_wt), layer.fuse_b);
    if (m > 0)
      pre = nn::add(pre, nn::matmul(nn::matmul(align_nm, entities), layer.fuse_we));
    auto inner = nn::gelu(pre);
    tokens = nn::gelu(layer.out_t(inner));
    if (m > 0) {
      auto fused = nn::gelu(layer.out_e(inner));
      entities = nn::add(nn::matmul(align_mn, fused),
                         nn::mul(pass_mask, entities));
    }
  }
  EncoderOutput<S> out;
  out.tokens = std::move(tokens);
  if (m > 0) out.entities = std::move(entities);
  return out;
}

// Rows of the entity-stream input: frozen table rows for kept/replaced
// slots, the learned mask vector for masked slots.
template <typename S>
Tensor<S> entity_stream_input(const ModelParams<S>& p,
                              const std::vector<int>& entity_inputs,
                              const std::vector<bool>& entity_masked) {
  const int m = static_cast<int>(entity_inputs.size());
  if (entity_masked.size() != entity_inputs.size())
    throw ShapeError("entity input/mask length mismatch");
  if (m == 0) return Tensor<S>();
  std::vector<int> ids(static_cast<std::size_t>(m));
  std::vector<S> keep(static_cast<std::size_t>(m) * p.cfg.hidden_e, S(1));
  std::vector<S> mask_col(static_cast<std::size_t>(m), S(0));
  for (int k = 0; k < m; ++k) {
    if (entity_masked[static_cast<std::size_t>(k)]) {
      ids[static_cast<std::size_t>(k)] = 0;  // dummy row, zeroed by the mask
      mask_col[static_cast<std::size_t>(k)] = S(1);
      for (int j = 0; j < p.cfg.hidden_e; ++j)
        keep[static_cast<std::size_t>(k) * p.cfg.hidden_e + j] = S(0);
    } else {
      ids[static_cast<std::size_t>(k)] = entity_inputs[static_cast<std::size_t>(k)];
    }
  }
  auto rows = nn::embedding_lookup(p.entity_table, ids);
  auto kept = nn::mul(rows, Tensor<S>::from({m, p.cfg.hidden_e}, std::move(keep),
                                            false));
  auto masked = nn::matmul(Tensor<S>::from({m, 1}, std::move(mask_col), false),
                           p.emask);
  return nn::add(kept, masked);
}

template <typename S>
EncoderOutput<S> forward(const ModelParams<S>& p, const EncoderInput& input,
                         Rng* rng = nullptr) {
  auto tokens = t_encode(p, input.tokens, input.segments, rng);
  auto entities =
      entity_stream_input(p, input.entity_inputs, input.entity_masked);
  return k_encode(p, std::move(tokens), std::move(entities), input.alignment,
                  rng);
}

}  // namespace kern::model
