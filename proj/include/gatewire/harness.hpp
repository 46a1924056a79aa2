#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatewire/dataset.hpp"
#include "gatewire/gating.hpp"
#include "gatewire/model.hpp"
#include "gatewire/training.hpp"

namespace gatewire {

struct SweepRow {
  double theta = 0.0;
  std::size_t n = 0;
  double accuracy = 0.0;
  double early_exit_fraction = 0.0;
  double avg_params = 0.0;
  double side_acc_exited = 0.0;     // NaN when nothing exited
  double main_acc_forwarded = 0.0;  // NaN when nothing was forwarded
};

bool same_row(const SweepRow& a, const SweepRow& b);  // NaN-aware bitwise equality

struct SweepResult {
  std::vector<SweepRow> rows;  // ascending theta
  SweepRow side_only;          // first SideNet answers every input
  SweepRow main_only;          // MainNet answers every input
};

SweepRow summarize(double theta, const BatchInference& batch, std::span<const int> labels);

SweepResult sweep(const Model& model, const Dataset& test, std::vector<double> thetas,
                  CountMode count_mode = CountMode::exact);

// `theta,n,accuracy,early_exit_fraction,avg_params,side_acc_exited,main_acc_forwarded`
std::string sweep_to_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_sweep_csv(const std::string& text);
// Same columns with a leading `baseline` name column.
std::string baselines_to_csv(const SweepResult& result);

std::vector<double> default_theta_grid();

struct ExperimentConfig {
  SyntheticSpec data;
  std::array<double, 3> split_fractions{};
  NetworkSpec network;
  TrainConfig train;
  std::vector<double> thetas = default_theta_grid();
};

// d = 16, 6 classes (3 easy, 3 hard), 2000/500/1004 split, residual MainNet
// with a SideNet after the first Linear+BN+ReLU stage.
ExperimentConfig desk_scale_experiment();

struct ExperimentRun {
  Model model;
  Splits splits;
  TrainLog log;
};

// Generates data, splits, builds and trains, all derived from `seed`.
ExperimentRun run_experiment(const ExperimentConfig& config, std::uint64_t seed);

// Fraction of early exits among easy-class and hard-class inputs.
struct TierExitStats {
  double easy_exit_fraction = 0.0;
  double hard_exit_fraction = 0.0;
  std::size_t easy_n = 0;
  std::size_t hard_n = 0;
};

TierExitStats exit_by_tier(const BatchInference& batch, std::span<const int> labels, std::size_t easy_classes);

struct CompareSeedResult {
  std::uint64_t seed = 0;
  double with_sidenet = 0.0;
  double without_sidenet = 0.0;
  double ensemble = 0.0;
};

struct CompareReport {
  std::vector<CompareSeedResult> per_seed;
  double alpha = 1.0;
  CompareSeedResult mean;    // seed field unused
  CompareSeedResult stddev;  // sample standard deviation; 0 for one seed

  nlohmann::json to_json() const;
};

// Trains the MainNet alone and MainNet + SideNets jointly from the same seed
// and reports both MainNet test accuracies plus the ensemble accuracy.
CompareReport compare_with_without(const ExperimentConfig& config, std::span<const std::uint64_t> seeds);

}  // namespace gatewire
