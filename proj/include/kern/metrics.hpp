#pragma once

// Task metrics. Typing: strict accuracy plus loose macro/micro P/R/F1 in
// the figer-style convention (macro averages per-instance precision and
// recall, micro pools counts). Relation: per-class macro and pooled micro
// P/R/F1 with an optional null label excluded from scoring.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kern/common.hpp"

namespace kern::tasks {

struct MetricReport {
  double strict = 0.0;
  double loose_macro_p = 0.0, loose_macro_r = 0.0, loose_macro_f1 = 0.0;
  double loose_micro_p = 0.0, loose_micro_r = 0.0, loose_micro_f1 = 0.0;
  double macro_p = 0.0, macro_r = 0.0, macro_f1 = 0.0;
  double micro_p = 0.0, micro_r = 0.0, micro_f1 = 0.0;
  bool has_loose = false;          // typing metrics populated
  bool has_class_metrics = false;  // relation metrics populated
  std::vector<std::string> warnings;

  std::string to_json() const;  // fixed key names
};

// F1 = 0 when P + R = 0, else the harmonic mean.
double f1_score(double precision, double recall);

using LabelSet = std::set<std::string>;

MetricReport metrics_typing(const std::vector<LabelSet>& predictions,
                            const std::vector<LabelSet>& gold);

MetricReport metrics_relation(
    const std::vector<std::string>& predictions,
    const std::vector<std::string>& gold,
    const std::optional<std::string>& null_label = std::nullopt);

}  // namespace kern::tasks
