#pragma once

// Central-difference gradient verification. The forward function is run
// once under a tape to collect analytic gradients, then re-evaluated with
// perturbed parameters for the numeric estimate. Run this in double; the
// tolerances are meaningless in float.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "kern/common.hpp"
#include "kern/rng.hpp"
#include "kern/tensor.hpp"

namespace kern::nn {

struct GradCheckOptions {
  double step = 1e-5;
  double abs_floor = 1e-8;
  // 0 checks every coordinate; otherwise a seeded sample per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 17;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "param#/coord analytic=... numeric=..."

  bool ok(double threshold = 1e-6) const { return max_rel_err < threshold; }
};

template <typename S>
GradCheckReport grad_check(const std::function<Tensor<S>()>& fn,
                           const std::vector<Tensor<S>>& params,
                           const GradCheckOptions& opts = {}) {
  static_assert(sizeof(S) >= 8, "grad_check is only meaningful in double");
  for (const auto& p : params) {
    if (!p.requires_grad())
      throw VerifyError("grad_check parameter does not require grad");
  }
  for (const auto& p : params) const_cast<Tensor<S>&>(p).zero_grad();

  // Analytic pass.
  {
    Tape<S> tape;
    Tensor<S> loss = fn();
    if (loss.numel() != 1)
      throw VerifyError("grad_check function must return a scalar");
    if (!std::isfinite(static_cast<double>(loss.item())))
      throw VerifyError("grad_check: non-finite loss");
    tape.backward(loss);
  }
  std::vector<std::vector<S>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  const auto eval = [&fn]() -> double {
    Tensor<S> loss = fn();
    const double v = static_cast<double>(loss.item());
    if (!std::isfinite(v)) throw VerifyError("grad_check: non-finite loss");
    return v;
  };

  GradCheckReport report;
  Rng rng(opts.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto node = params[pi].node();
    const std::size_t n = node->value.size();
    std::vector<std::size_t> coords;
    if (opts.max_coords_per_param == 0 || n <= opts.max_coords_per_param) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (std::size_t k = 0; k < opts.max_coords_per_param; ++k)
        coords.push_back(static_cast<std::size_t>(rng.below(n)));
    }
    for (const std::size_t ci : coords) {
      const S saved = node->value[ci];
      node->value[ci] = saved + static_cast<S>(opts.step);
      const double up = eval();
      node->value[ci] = saved - static_cast<S>(opts.step);
      const double down = eval();
      node->value[ci] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic_v = static_cast<double>(analytic[pi][ci]);
      // Differences below the absolute floor are within what central
      // differences can resolve in f64 and count as exact; above it the
      // error is relative to the larger gradient magnitude.
      const double diff = std::abs(numeric - analytic_v);
      const double denom = std::max(
          opts.abs_floor, std::max(std::abs(numeric), std::abs(analytic_v)));
      const double rel = diff <= opts.abs_floor ? 0.0 : diff / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = "param" + std::to_string(pi) + "/" + std::to_string(ci) +
                       " analytic=" + std::to_string(analytic_v) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return report;
}

}  // namespace kern::nn
