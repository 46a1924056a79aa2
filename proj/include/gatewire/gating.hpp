#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gatewire/dataset.hpp"
#include "gatewire/model.hpp"

namespace gatewire {

struct GateConfig {
  // An input exits at a SideNet when its confidence is >= theta. Values
  // above 1 disable early exit.
  double theta = 0.9;
  CountMode count_mode = CountMode::exact;

  void validate() const;
};

struct InferenceResult {
  int predicted_class = 0;
  ExitPoint source;
  double confidence = 0.0;
  std::size_t params_used = 0;
  bool operator==(const InferenceResult&) const = default;
};

// Max softmax probability, or max(p, 1 - p) for a sigmoid head.
double confidence(std::span<const double> probs, Head head);

// Gated prediction for one input row (model input space).
InferenceResult infer_one(const Model& model, std::span<const double> x, const GateConfig& gate);

struct BatchInference {
  std::vector<InferenceResult> results;  // input order
  double accuracy = 0.0;
  double early_exit_fraction = 0.0;
  double avg_params = 0.0;
};

// Each row's outcome is identical to infer_one on that row. Rows that exit are
// dropped before the remaining MainNet blocks run.
BatchInference infer_batch(const Model& model, const Dataset& data, const GateConfig& gate);

// Aggregates a list of results against labels.
BatchInference aggregate(std::vector<InferenceResult> results, std::span<const int> labels);

// argmax(side + main), ties to the lowest class index.
int ensemble_predict(std::span<const double> side_probs, std::span<const double> main_probs);

// Two-class expansion of a sigmoid row; softmax rows pass through.
std::vector<double> class_probabilities(std::span<const double> probs, Head head);

// Per-input CSV `index,true_label,pred,source,confidence,params_used`.
std::string results_to_csv(const std::vector<InferenceResult>& results, std::span<const int> labels);

}  // namespace gatewire
