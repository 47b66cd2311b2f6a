#include "kern/metrics.hpp"

#include <algorithm>
#include <map>

#include <json.hpp>

namespace kern::tasks {

double f1_score(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["strict"] = strict;
  if (has_loose) {
    j["loose_macro_p"] = loose_macro_p;
    j["loose_macro_r"] = loose_macro_r;
    j["loose_macro_f1"] = loose_macro_f1;
    j["loose_micro_p"] = loose_micro_p;
    j["loose_micro_r"] = loose_micro_r;
    j["loose_micro_f1"] = loose_micro_f1;
  }
  if (has_class_metrics) {
    j["macro_p"] = macro_p;
    j["macro_r"] = macro_r;
    j["macro_f1"] = macro_f1;
    j["micro_p"] = micro_p;
    j["micro_r"] = micro_r;
    j["micro_f1"] = micro_f1;
  }
  if (!warnings.empty()) j["warnings"] = warnings;
  return j.dump(2);
}

namespace {

std::size_t intersection_size(const LabelSet& a, const LabelSet& b) {
  std::size_t n = 0;
  for (const auto& x : a) n += b.count(x);
  return n;
}

}  // namespace

MetricReport metrics_typing(const std::vector<LabelSet>& predictions,
                            const std::vector<LabelSet>& gold) {
  if (predictions.size() != gold.size())
    throw DataError("metrics_typing: " + std::to_string(predictions.size()) +
                    " predictions vs " + std::to_string(gold.size()) + " gold");
  MetricReport report;
  report.has_loose = true;
  if (predictions.empty()) return report;

  const double n = static_cast<double>(predictions.size());
  std::size_t exact = 0;
  double sum_p = 0.0, sum_r = 0.0;
  std::size_t pooled_hit = 0, pooled_pred = 0, pooled_gold = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& pred = predictions[i];
    const auto& gd = gold[i];
    const std::size_t hit = intersection_size(pred, gd);
    if (pred == gd) ++exact;
    // Per-instance precision/recall; an empty side scores 1 only when the
    // other side is empty too.
    sum_p += pred.empty() ? (gd.empty() ? 1.0 : 0.0)
                          : static_cast<double>(hit) / static_cast<double>(pred.size());
    sum_r += gd.empty() ? (pred.empty() ? 1.0 : 0.0)
                        : static_cast<double>(hit) / static_cast<double>(gd.size());
    pooled_hit += hit;
    pooled_pred += pred.size();
    pooled_gold += gd.size();
  }
  report.strict = static_cast<double>(exact) / n;
  report.loose_macro_p = sum_p / n;
  report.loose_macro_r = sum_r / n;
  report.loose_macro_f1 = f1_score(report.loose_macro_p, report.loose_macro_r);
  report.loose_micro_p =
      pooled_pred == 0 ? 0.0
                       : static_cast<double>(pooled_hit) /
                             static_cast<double>(pooled_pred);
  report.loose_micro_r =
      pooled_gold == 0 ? 0.0
                       : static_cast<double>(pooled_hit) /
                             static_cast<double>(pooled_gold);
  report.loose_micro_f1 = f1_score(report.loose_micro_p, report.loose_micro_r);
  return report;
}

MetricReport metrics_relation(const std::vector<std::string>& predictions,
                              const std::vector<std::string>& gold,
                              const std::optional<std::string>& null_label) {
  if (predictions.size() != gold.size())
    throw DataError("metrics_relation: " + std::to_string(predictions.size()) +
                    " predictions vs " + std::to_string(gold.size()) + " gold");
  MetricReport report;
  report.has_class_metrics = true;
  if (predictions.empty()) return report;

  std::size_t exact = 0;
  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
  };
  std::map<std::string, Counts> per_class;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == gold[i]) {
      ++exact;
      ++per_class[gold[i]].tp;
    } else {
      ++per_class[predictions[i]].fp;
      ++per_class[gold[i]].fn;
    }
  }
  report.strict = static_cast<double>(exact) / static_cast<double>(gold.size());

  // The null label participates in strict accuracy but is excluded from
  // per-class averaging and pooled counts.
  double sum_p = 0.0, sum_r = 0.0, sum_f1 = 0.0;
  std::size_t classes = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& [label, c] : per_class) {
    if (null_label && label == *null_label) continue;
    const double p =
        c.tp + c.fp == 0 ? 0.0
                         : static_cast<double>(c.tp) /
                               static_cast<double>(c.tp + c.fp);
    const double r =
        c.tp + c.fn == 0 ? 0.0
                         : static_cast<double>(c.tp) /
                               static_cast<double>(c.tp + c.fn);
    sum_p += p;
    sum_r += r;
    sum_f1 += f1_score(p, r);
    ++classes;
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
  }
  if (classes > 0) {
    report.macro_p = sum_p / static_cast<double>(classes);
    report.macro_r = sum_r / static_cast<double>(classes);
    report.macro_f1 = sum_f1 / static_cast<double>(classes);
  }
  report.micro_p =
      tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  report.micro_r =
      tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  report.micro_f1 = f1_score(report.micro_p, report.micro_r);
  return report;
}

}  // namespace kern::tasks
