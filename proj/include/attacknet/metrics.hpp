#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>

#include <json.hpp>

#include "attacknet/dataset.hpp"
#include "attacknet/errors.hpp"

namespace attacknet {

// ---------------------------------------------------------------------------
// Biometric evaluation metrics. Convention throughout: the positive class for
// acceptance is bonafide, so FAR counts attackers wrongly accepted as genuine
// and FRR counts genuine samples wrongly rejected.
// ---------------------------------------------------------------------------

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
  std::uint8_t positive_class = kBonafideLabel;

  std::int64_t total() const { return tp + fp + fn + tn; }
};

inline ConfusionCounts confusion_counts(std::span<const std::uint8_t> predictions,
                                        std::span<const std::uint8_t> labels,
                                        std::uint8_t positive_class) {
  if (predictions.size() != labels.size()) {
    throw InputError("predictions and labels differ in length: " +
                     std::to_string(predictions.size()) + " vs " +
                     std::to_string(labels.size()));
  }
  if (predictions.empty()) {
    throw InputError("cannot compute a confusion matrix over zero samples");
  }
  if (positive_class > 1) {
    throw LabelError("positive_class must be 0 or 1");
  }
  ConfusionCounts c;
  c.positive_class = positive_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] > 1 || labels[i] > 1) {
      throw LabelError("class at index " + std::to_string(i) +
                       " must be 0 or 1");
    }
    const bool pred_pos = predictions[i] == positive_class;
    const bool label_pos = labels[i] == positive_class;
    if (pred_pos && label_pos) ++c.tp;
    if (pred_pos && !label_pos) ++c.fp;
    if (!pred_pos && label_pos) ++c.fn;
    if (!pred_pos && !label_pos) ++c.tn;
  }
  return c;
}

// Zero denominators yield an empty optional, never a silent 0 or 1.
struct ClassMetrics {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

inline ClassMetrics class_metrics(const ConfusionCounts& c) {
  ClassMetrics m;
  if (c.tp + c.fp > 0) {
    m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  }
  if (c.tp + c.fn > 0) {
    m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  }
  if (m.precision && m.recall && *m.precision + *m.recall > 0.0) {
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  }
  return m;
}

inline double hter(double far, double frr) {
  if (!(far >= 0.0 && far <= 1.0) || !(frr >= 0.0 && frr <= 1.0)) {
    throw InputError("FAR and FRR must lie in [0,1]");
  }
  return (far + frr) / 2.0;
}

struct ErrorRates {
  double far = 0.0;
  double frr = 0.0;
  double hter = 0.0;
  double decision_threshold = 0.5;
};

// scores[i] is the bonafide probability of sample i. A sample is accepted as
// bonafide iff its score strictly exceeds the threshold; a score exactly at
// the threshold rejects (the safer error).
inline ErrorRates error_rates(std::span<const double> scores,
                              std::span<const std::uint8_t> labels,
                              double threshold) {
  if (scores.size() != labels.size()) {
    throw InputError("scores and labels differ in length: " +
                     std::to_string(scores.size()) + " vs " +
                     std::to_string(labels.size()));
  }
  if (scores.empty()) {
    throw InputError("cannot compute error rates over zero samples");
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw InputError("decision threshold must lie in [0,1]");
  }
  std::int64_t bonafide = 0, attackers = 0;
  std::int64_t rejected_bonafide = 0, accepted_attackers = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!(scores[i] >= 0.0 && scores[i] <= 1.0)) {
      throw InputError("score at index " + std::to_string(i) +
                       " lies outside [0,1]");
    }
    if (labels[i] > 1) {
      throw LabelError("label at index " + std::to_string(i) +
                       " must be 0 or 1");
    }
    const bool accepted = scores[i] > threshold;
    if (labels[i] == kBonafideLabel) {
      ++bonafide;
      if (!accepted) ++rejected_bonafide;
    } else {
      ++attackers;
      if (accepted) ++accepted_attackers;
    }
  }
  if (bonafide == 0) {
    throw UndefinedRateError("no bonafide samples present; FRR is undefined");
  }
  if (attackers == 0) {
    throw UndefinedRateError("no attacker samples present; FAR is undefined");
  }
  ErrorRates r;
  r.far = static_cast<double>(accepted_attackers) /
          static_cast<double>(attackers);
  r.frr = static_cast<double>(rejected_bonafide) /
          static_cast<double>(bonafide);
  r.hter = hter(r.far, r.frr);
  r.decision_threshold = threshold;
  return r;
}

struct EvalReport {
  std::string dataset;
  std::int64_t n_bonafide = 0;
  std::int64_t n_attacker = 0;
  ClassMetrics bonafide;  // positive class = bonafide
  ClassMetrics attacker;  // positive class = attacker
  ErrorRates rates;
};

inline EvalReport build_report(const std::string& dataset_name,
                               std::span<const double> scores,
                               std::span<const std::uint8_t> labels,
                               double threshold = 0.5) {
  EvalReport report;
  report.dataset = dataset_name;
  report.rates = error_rates(scores, labels, threshold);

  std::vector<std::uint8_t> predictions(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    predictions[i] =
        scores[i] > threshold ? kBonafideLabel : kAttackerLabel;
    if (labels[i] == kBonafideLabel) {
      ++report.n_bonafide;
    } else {
      ++report.n_attacker;
    }
  }
  report.bonafide =
      class_metrics(confusion_counts(predictions, labels, kBonafideLabel));
  report.attacker =
      class_metrics(confusion_counts(predictions, labels, kAttackerLabel));
  return report;
}

// ---------------------------------------------------------------------------
// Report rendering.
// ---------------------------------------------------------------------------

enum class OutputFormat { json, markdown, csv };

inline OutputFormat parse_output_format(const std::string& name) {
  if (name == "json") return OutputFormat::json;
  if (name == "md" || name == "markdown") return OutputFormat::markdown;
  if (name == "csv") return OutputFormat::csv;
  throw ConfigError("unknown output format '" + name +
                    "' (expected json, md, or csv)");
}

namespace detail {

// Three decimals, matching the precision the tables are printed at.
inline std::string round3(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", value);
  return buf;
}

inline std::string round3(const std::optional<double>& value) {
  return value ? round3(*value) : std::string("—");
}

inline nlohmann::json json_or_null(const std::optional<double>& value) {
  return value ? nlohmann::json(*value) : nlohmann::json(nullptr);
}

}  // namespace detail

inline std::string render_report(const EvalReport& r, OutputFormat format) {
  if (format == OutputFormat::json) {
    nlohmann::json j;
    j["dataset"] = r.dataset;
    j["n_bonafide"] = r.n_bonafide;
    j["n_attacker"] = r.n_attacker;
    j["threshold"] = r.rates.decision_threshold;
    j["precision_b"] = detail::json_or_null(r.bonafide.precision);
    j["precision_a"] = detail::json_or_null(r.attacker.precision);
    j["recall_b"] = detail::json_or_null(r.bonafide.recall);
    j["recall_a"] = detail::json_or_null(r.attacker.recall);
    j["f1_b"] = detail::json_or_null(r.bonafide.f1);
    j["f1_a"] = detail::json_or_null(r.attacker.f1);
    j["far"] = r.rates.far;
    j["frr"] = r.rates.frr;
    j["hter"] = r.rates.hter;
    return j.dump(2) + "\n";
  }
  if (format == OutputFormat::csv) {
    std::string out =
        "dataset,n_bonafide,n_attacker,threshold,precision_b,precision_a,"
        "recall_b,recall_a,f1_b,f1_a,far,frr,hter\n";
    out += r.dataset + ',' + std::to_string(r.n_bonafide) + ',' +
           std::to_string(r.n_attacker) + ',' +
           detail::round3(r.rates.decision_threshold) + ',' +
           detail::round3(r.bonafide.precision) + ',' +
           detail::round3(r.attacker.precision) + ',' +
           detail::round3(r.bonafide.recall) + ',' +
           detail::round3(r.attacker.recall) + ',' +
           detail::round3(r.bonafide.f1) + ',' +
           detail::round3(r.attacker.f1) + ',' +
           detail::round3(r.rates.far) + ',' + detail::round3(r.rates.frr) +
           ',' + detail::round3(r.rates.hter) + '\n';
    return out;
  }
  std::string out = "Samples: " + std::to_string(r.n_bonafide) +
                    " bonafide, " + std::to_string(r.n_attacker) +
                    " attacker; threshold " +
                    detail::round3(r.rates.decision_threshold) + "\n\n";
  out +=
      "| Dataset | Precision (B) | Precision (A) | Recall (B) | Recall (A) "
      "| F1 (B) | F1 (A) | FAR | FRR | HTER |\n"
      "| --- | --- | --- | --- | --- | --- | --- | --- | --- | --- |\n";
  out += "| " + r.dataset + " | " + detail::round3(r.bonafide.precision) +
         " | " + detail::round3(r.attacker.precision) + " | " +
         detail::round3(r.bonafide.recall) + " | " +
         detail::round3(r.attacker.recall) + " | " +
         detail::round3(r.bonafide.f1) + " | " +
         detail::round3(r.attacker.f1) + " | " +
         detail::round3(r.rates.far) + " | " + detail::round3(r.rates.frr) +
         " | " + detail::round3(r.rates.hter) + " |\n";
  return out;
}

}  // namespace attacknet
