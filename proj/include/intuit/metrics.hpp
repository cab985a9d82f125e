#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "intuit/tensor.hpp"

namespace intuit {

struct MetricsReport {
  int num_classes = 0;
  std::vector<long> confusion;       // C x C, rows = gold, cols = predicted
  double accuracy = 0.0;
  std::vector<double> per_class_f1;  // F1 = 0 when P + R = 0
  std::vector<bool> class_absent;    // absent from both predictions and gold
  double macro_f1 = 0.0;
  double ece = 0.0;
  long n = 0;

  long confusion_at(int gold, int pred) const {
    return confusion[static_cast<std::size_t>(gold * num_classes + pred)];
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["num_classes"] = num_classes;
    j["confusion"] = confusion;
    j["accuracy"] = accuracy;
    j["per_class_f1"] = per_class_f1;
    j["class_absent"] = std::vector<int>(class_absent.begin(),
                                         class_absent.end());
    j["macro_f1"] = macro_f1;
    j["ece"] = ece;
    j["n"] = n;
    return j;
  }
};

inline MetricsReport confusion_and_scores(const std::vector<int>& predictions,
                                          const std::vector<int>& gold,
                                          int num_classes) {
  if (predictions.size() != gold.size())
    throw ContractError("confusion_and_scores: " +
                        std::to_string(predictions.size()) +
                        " predictions vs " + std::to_string(gold.size()) +
                        " gold labels");
  MetricsReport r;
  r.num_classes = num_classes;
  r.n = static_cast<long>(predictions.size());
  r.confusion.assign(static_cast<std::size_t>(num_classes * num_classes), 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    int p = predictions[i], g = gold[i];
    if (p < 0 || p >= num_classes || g < 0 || g >= num_classes)
      throw ParameterError("confusion_and_scores: label out of range");
    r.confusion[static_cast<std::size_t>(g * num_classes + p)] += 1;
  }
  long correct = 0;
  for (int c = 0; c < num_classes; ++c) correct += r.confusion_at(c, c);
  r.accuracy = r.n == 0 ? 0.0
                        : static_cast<double>(correct) /
                              static_cast<double>(r.n);
  r.per_class_f1.assign(static_cast<std::size_t>(num_classes), 0.0);
  r.class_absent.assign(static_cast<std::size_t>(num_classes), false);
  double f1_sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    long tp = r.confusion_at(c, c);
    long fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += r.confusion_at(o, c);
      fn += r.confusion_at(c, o);
    }
    double f1 = 0.0;
    if (2 * tp + fp + fn > 0)
      f1 = 2.0 * static_cast<double>(tp) /
           static_cast<double>(2 * tp + fp + fn);
    r.per_class_f1[static_cast<std::size_t>(c)] = f1;
    r.class_absent[static_cast<std::size_t>(c)] = (tp + fp + fn == 0);
    f1_sum += f1;
  }
  r.macro_f1 = f1_sum / static_cast<double>(num_classes);
  return r;
}

// Equal-width binned gap between confidence and empirical accuracy.
inline double expected_calibration_error(const std::vector<double>& confidences,
                                         const std::vector<bool>& correct,
                                         int bins = 10) {
  if (confidences.size() != correct.size())
    throw ContractError("expected_calibration_error: length mismatch");
  if (bins <= 0)
    throw ParameterError("expected_calibration_error: bins must be positive");
  if (confidences.empty()) return 0.0;
  std::vector<long> count(static_cast<std::size_t>(bins), 0);
  std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<long> correct_sum(static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    double c = confidences[i];
    int b = static_cast<int>(c * bins);
    if (b >= bins) b = bins - 1;
    if (b < 0) b = 0;
    count[static_cast<std::size_t>(b)] += 1;
    conf_sum[static_cast<std::size_t>(b)] += c;
    correct_sum[static_cast<std::size_t>(b)] += correct[i] ? 1 : 0;
  }
  double n = static_cast<double>(confidences.size());
  double ece = 0.0;
  for (int b = 0; b < bins; ++b) {
    long nb = count[static_cast<std::size_t>(b)];
    if (nb == 0) continue;  // empty bins contribute nothing
    double acc = static_cast<double>(correct_sum[static_cast<std::size_t>(b)]) /
                 static_cast<double>(nb);
    double conf = conf_sum[static_cast<std::size_t>(b)] /
                  static_cast<double>(nb);
    ece += (static_cast<double>(nb) / n) * std::fabs(acc - conf);
  }
  return ece;
}

}  // namespace intuit
