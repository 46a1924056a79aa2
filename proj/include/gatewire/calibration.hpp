#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gatewire/dataset.hpp"
#include "gatewire/gating.hpp"
#include "gatewire/model.hpp"

namespace gatewire {

struct PredictionRecord {
  double confidence = 0.0;
  bool correct = false;
};

struct BinStats {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t n = 0;
  double mean_confidence = 0.0;  // 0 for an empty bin
  double accuracy = 0.0;         // 0 for an empty bin
  bool operator==(const BinStats&) const = default;
};

struct CalibrationReport {
  std::vector<BinStats> bins;
  double ece = 0.0;
  std::size_t total_n = 0;

  // `bin_lower,bin_upper,n,mean_confidence,accuracy`
  std::string reliability_csv() const;
  // {"ece", "total_n", "bins"}
  std::string to_json() const;
};

// paper: 8 bins with edges 0.2, 0.3, ..., 1.0. full: 10 bins over [0, 1].
enum class BinScheme { paper, full };

std::vector<double> bin_edges(BinScheme scheme);

// Bins are [lo, hi) except the last, which is closed. A confidence outside
// [edges.front(), edges.back()] raises RangeError naming the record.
std::vector<BinStats> bin_predictions(std::span<const PredictionRecord> records, std::span<const double> edges);

// sum_i (n_i / n) |accuracy_i - mean_confidence_i|.
double ece(std::span<const BinStats> bins);

// Which classifier's predictions to assess. `gated` runs the early-exit
// pipeline at `theta` and records the confidence of whichever head answered.
struct HeadSelector {
  enum class Kind { side, main, gated };
  Kind kind = Kind::main;
  std::size_t index = 0;
  double theta = 0.9;

  static HeadSelector side(std::size_t j) { return {Kind::side, j, 0.0}; }
  static HeadSelector main() { return {Kind::main, 0, 0.0}; }
  static HeadSelector gated(double theta) { return {Kind::gated, 0, theta}; }
  static HeadSelector parse(const std::string& text);  // "side0", "main"
  std::string str() const;
};

std::vector<PredictionRecord> gather_predictions(const Model& model, const Dataset& data, HeadSelector head);

CalibrationReport calibration_report(const Model& model, const Dataset& data, HeadSelector head,
                                     BinScheme scheme = BinScheme::paper);
CalibrationReport calibration_report(std::span<const PredictionRecord> records, BinScheme scheme = BinScheme::paper);

// Re-parses a reliability CSV.
std::vector<BinStats> parse_reliability_csv(const std::string& text);

}  // namespace gatewire
