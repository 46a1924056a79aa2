#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace gatewire {

enum class LayerKind { linear, relu, batchnorm, residual_block };
enum class Head { softmax, sigmoid };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;
  std::size_t width = 0;
  std::vector<LayerSpec> inner;

  static LayerSpec linear(std::size_t in, std::size_t out, bool bias = true);
  static LayerSpec relu();
  static LayerSpec batchnorm(std::size_t width);
  static LayerSpec residual(std::vector<LayerSpec> inner);

  bool operator==(const LayerSpec&) const = default;
};

struct SideNetSpec {
  // The output of main block attach_index feeds the SideNet.
  std::size_t attach_index = 0;
  std::size_t input_dim = 0;
  std::size_t hidden_units = 32;
  std::size_t num_classes = 2;
  Head head = Head::softmax;

  // Width of the final linear layer: 1 for a sigmoid head.
  std::size_t output_units() const { return head == Head::sigmoid ? 1 : num_classes; }
  bool operator==(const SideNetSpec&) const = default;
};

struct NetworkSpec {
  std::vector<LayerSpec> main_blocks;
  std::vector<SideNetSpec> sidenets;
  std::size_t num_classes = 2;
  Head head = Head::softmax;

  std::size_t output_units() const { return head == Head::sigmoid ? 1 : num_classes; }
  NetworkSpec without_sidenets() const;
  bool operator==(const NetworkSpec&) const = default;
};

// Throws SpecError naming the offending block.
void validate(const NetworkSpec& spec);

// Width entering the first main block.
std::size_t input_width(const NetworkSpec& spec);
// Width of the output of each main block, in order.
std::vector<std::size_t> block_output_widths(const NetworkSpec& spec);

// Indices into spec.sidenets sorted by attach point (stable), which is the
// order in which gated inference consults them.
std::vector<std::size_t> gating_order(const NetworkSpec& spec);

std::string describe(const LayerSpec& layer);

const char* head_name(Head head);
Head parse_head(const std::string& name);

void to_json(nlohmann::json& j, const LayerSpec& s);
void from_json(const nlohmann::json& j, LayerSpec& s);
void to_json(nlohmann::json& j, const SideNetSpec& s);
void from_json(const nlohmann::json& j, SideNetSpec& s);
void to_json(nlohmann::json& j, const NetworkSpec& s);
void from_json(const nlohmann::json& j, NetworkSpec& s);

// Rejects keys outside `allowed`; used by every strict JSON reader.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& where);

}  // namespace gatewire
