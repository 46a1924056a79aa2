#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatewire/model.hpp"
#include "gatewire/tensor.hpp"

namespace gatewire {

struct Dataset {
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> features;  // row-major [size x dim]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * dim, dim);
  }
  Tensor features_tensor() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  // Labels in range and finite features; `require_all_classes` additionally
  // demands every class be present.
  void validate(bool require_all_classes = true) const;
  bool operator==(const Dataset&) const = default;
};

// Gaussian clusters in two tiers. The first round(easy_fraction * C) classes
// are "easy": their centres are pairwise `separation` sigma apart and far from
// every hard class. The remaining "hard" classes sit around a common anchor
// with pairwise centre distance `hard_separation` sigma (< 1). Hard clusters
// use a per-dimension spread of `hard_spread` sigma.
struct SyntheticSpec {
  std::size_t num_classes = 6;
  std::size_t per_class_count = 584;
  std::size_t dim = 16;
  double easy_fraction = 0.5;
  double separation = 8.0;
  double hard_separation = 0.8;
  double hard_spread = 0.2;
  double sigma = 1.0;
  std::uint64_t seed = 0;

  std::size_t easy_classes() const;
  void validate() const;  // throws SpecError naming the field
  bool operator==(const SyntheticSpec&) const = default;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

Dataset gen_synthetic(const SyntheticSpec& spec);

// Header `label,f0,...,f{d-1}`.
std::string dataset_to_csv(const Dataset& d);
Dataset dataset_from_csv(const std::string& text);
void save_csv(const Dataset& d, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path);

Standardizer fit_standardizer(const Dataset& train);
Dataset standardize(const Dataset& d, const Standardizer& s);

struct Splits {
  Dataset train, val, test;
  // Raw (unstandardized) splits, kept for export.
  Dataset raw_train, raw_val, raw_test;
  std::vector<std::size_t> train_index, val_index, test_index;
  Standardizer standardizer;
};

// Seeded permutation partition; standardization statistics come from the
// train part only and are applied to all three.
Splits split(const Dataset& d, std::span<const double> fractions, std::uint64_t seed);

// Shortest representation that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace gatewire
