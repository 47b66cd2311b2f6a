#pragma once

// Test-only scalar reference of the textual encoder stack: plain
// double-precision loops over std::vector matrices, no Tensor machinery.
// Used to cross-check the production forward pass.

#include <cmath>
#include <vector>

#include "kern/encoder.hpp"

namespace kern::testref {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const kern::nn::Tensor<float>& t) {
  Mat m(static_cast<std::size_t>(t.dim(0)),
        std::vector<double>(static_cast<std::size_t>(t.dim(1))));
  for (int i = 0; i < t.dim(0); ++i)
    for (int j = 0; j < t.dim(1); ++j)
      m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          static_cast<double>(
              t.values()[static_cast<std::size_t>(i) * t.dim(1) + j]);
  return m;
}

inline std::vector<double> to_vec(const kern::nn::Tensor<float>& t) {
  std::vector<double> v(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i)
    v[i] = static_cast<double>(t.values()[i]);
  return v;
}

inline double ref_gelu(double x) {
  return 0.5 * x *
         (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

inline Mat ref_linear(const Mat& x, const Mat& w, const std::vector<double>& b) {
  const std::size_t n = x.size(), in = w.size(), out = w[0].size();
  Mat y(n, std::vector<double>(out, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < in; ++k)
      for (std::size_t j = 0; j < out; ++j) y[i][j] += x[i][k] * w[k][j];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out; ++j) y[i][j] += b[j];
  return y;
}

inline Mat ref_layer_norm(const Mat& x, const std::vector<double>& gain,
                          const std::vector<double>& bias) {
  const double eps = 1e-12;
  Mat y = x;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double mean = 0;
    for (double v : x[i]) mean += v;
    mean /= static_cast<double>(x[i].size());
    double var = 0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x[i].size());
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x[i].size(); ++j)
      y[i][j] = gain[j] * ((x[i][j] - mean) * inv) + bias[j];
  }
  return y;
}

inline Mat ref_attention(const Mat& x, const kern::model::AttentionParams<float>& p,
                         int heads) {
  const auto q = ref_linear(x, to_mat(p.q.w), to_vec(p.q.b));
  const auto k = ref_linear(x, to_mat(p.k.w), to_vec(p.k.b));
  const auto v = ref_linear(x, to_mat(p.v.w), to_vec(p.v.b));
  const std::size_t n = x.size();
  const std::size_t hidden = q[0].size();
  const std::size_t dh = hidden / static_cast<std::size_t>(heads);
  Mat ctx(n, std::vector<double>(hidden, 0.0));
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> scores(n, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0;
        for (std::size_t d = 0; d < dh; ++d) dot += q[i][off + d] * k[j][off + d];
        scores[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      double mx = scores[0];
      for (double s : scores) mx = std::max(mx, s);
      double denom = 0;
      for (auto& s : scores) {
        s = std::exp(s - mx);
        denom += s;
      }
      for (auto& s : scores) s /= denom;
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t d = 0; d < dh; ++d)
          ctx[i][off + d] += scores[j] * v[j][off + d];
    }
  }
  auto out = ref_linear(ctx, to_mat(p.o.w), to_vec(p.o.b));
  Mat res = x;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < hidden; ++j) res[i][j] += out[i][j];
  return ref_layer_norm(res, to_vec(p.ln.gain), to_vec(p.ln.bias));
}

inline Mat ref_t_encode(const kern::model::ModelParams<float>& p,
                        const std::vector<int>& tokens,
                        const std::vector<int>& segments) {
  const std::size_t n = tokens.size();
  const std::size_t hidden = static_cast<std::size_t>(p.cfg.hidden_w);
  const auto tok_emb = to_mat(p.tok_emb);
  const auto seg_emb = to_mat(p.seg_emb);
  const auto pos_emb = to_mat(p.pos_emb);
  Mat x(n, std::vector<double>(hidden, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < hidden; ++j)
      x[i][j] = tok_emb[static_cast<std::size_t>(tokens[i])][j] +
                seg_emb[static_cast<std::size_t>(segments[i])][j] + pos_emb[i][j];
  x = ref_layer_norm(x, to_vec(p.emb_ln.gain), to_vec(p.emb_ln.bias));
  for (const auto& layer : p.t_layers) {
    x = ref_attention(x, layer.attn, p.cfg.heads_w);
    auto f1 = ref_linear(x, to_mat(layer.ff1.w), to_vec(layer.ff1.b));
    for (auto& row : f1)
      for (auto& v : row) v = ref_gelu(v);
    const auto f2 = ref_linear(f1, to_mat(layer.ff2.w), to_vec(layer.ff2.b));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < hidden; ++j) x[i][j] += f2[i][j];
    x = ref_layer_norm(x, to_vec(layer.ln_ff.gain), to_vec(layer.ln_ff.bias));
  }
  return x;
}

}  // namespace kern::testref
