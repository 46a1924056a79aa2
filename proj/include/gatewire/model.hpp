#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gatewire/spec.hpp"
#include "gatewire/tensor.hpp"

namespace gatewire {

struct LinearLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out], undefined when the layer has no bias
};

struct ReluLayer {};

struct BatchNormLayer {
  BatchNormState state;
};

struct Layer;

struct ResidualLayer {
  std::vector<Layer> inner;
};

struct Layer {
  std::variant<LinearLayer, ReluLayer, BatchNormLayer, ResidualLayer> impl;
};

struct SideNet {
  SideNetSpec spec;
  LinearLayer fc1;
  BatchNormLayer bn;
  LinearLayer fc2;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Per-feature input standardization carried alongside a trained model.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;
  bool operator==(const Standardizer&) const = default;
};

struct ExitPoint {
  enum class Kind { side, main };
  Kind kind = Kind::main;
  std::size_t index = 0;  // SideNet index into the spec when kind == side

  static ExitPoint side(std::size_t j) { return {Kind::side, j}; }
  static ExitPoint main() { return {Kind::main, 0}; }
  bool is_main() const { return kind == Kind::main; }
  std::string str() const { return is_main() ? "main" : "side" + std::to_string(index); }
  bool operator==(const ExitPoint&) const = default;
};

enum class CountMode { exact, weights_only };

Tensor apply_head(Head head, const Tensor& logits);
// Argmax of a probability row (ties go to the lowest class). A sigmoid row
// holds the single probability of class 1.
int predict_class(std::span<const double> probs, Head head);

struct ForwardResult {
  Tensor main_probs;
  std::vector<Tensor> side_probs;     // indexed like spec().sidenets
  std::vector<Tensor> intermediates;  // output of every main block
};

class Model {
 public:
  static Model build(const NetworkSpec& spec, std::uint64_t seed);

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // Deep copy: no tensor is shared with the original.
  Model clone() const;

  const NetworkSpec& spec() const { return spec_; }
  std::size_t num_blocks() const { return main_.size(); }
  std::size_t num_sidenets() const { return sides_.size(); }

  // Training-capable forward. Batchnorm layers run in train mode where the
  // corresponding flag is set, updating their running statistics.
  ForwardResult forward(const Tensor& x, bool main_training, bool side_training);
  // Eval-mode forward; never mutates the model.
  ForwardResult forward(const Tensor& x) const;

  Tensor forward_block(std::size_t i, const Tensor& x, bool training);
  Tensor forward_block(std::size_t i, const Tensor& x) const;
  Tensor forward_sidenet(std::size_t j, const Tensor& x, bool training);
  Tensor forward_sidenet(std::size_t j, const Tensor& x) const;

  // Learnable tensors, in deterministic order.
  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> main_parameters() const;
  std::vector<NamedTensor> sidenet_parameters(std::size_t j) const;
  // Every tensor that defines the model: parameters, batchnorm running
  // statistics, and the optional input standardization.
  std::vector<NamedTensor> state_tensors() const;
  // Overwrites the values of every state tensor from `tensors`. Names and
  // shapes must match exactly.
  void load_state(const std::vector<NamedTensor>& tensors);

  std::size_t block_param_count(std::size_t i, CountMode mode = CountMode::exact) const;
  std::size_t sidenet_param_count(std::size_t j, CountMode mode = CountMode::exact) const;
  // Parameters touched by an input that leaves at `exit`. SideNets consulted
  // before the exit point are included since they ran.
  std::size_t param_count(ExitPoint exit, CountMode mode = CountMode::exact) const;

  const std::optional<Standardizer>& standardizer() const { return standardizer_; }
  void set_standardizer(std::optional<Standardizer> s) { standardizer_ = std::move(s); }

  const std::vector<Layer>& main_layers() const { return main_; }
  std::vector<Layer>& main_layers() { return main_; }
  const SideNet& sidenet(std::size_t j) const { return sides_.at(j); }
  SideNet& sidenet(std::size_t j) { return sides_.at(j); }

 private:
  Model() = default;

  NetworkSpec spec_;
  std::vector<Layer> main_;
  std::vector<SideNet> sides_;
  std::optional<Standardizer> standardizer_;
};

}  // namespace gatewire
