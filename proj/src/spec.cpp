#include "gatewire/spec.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <set>

#include "gatewire/errors.hpp"

namespace gatewire {

using nlohmann::json;

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::linear;
  s.in = in;
  s.out = out;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::batchnorm(std::size_t width) {
  LayerSpec s;
  s.kind = LayerKind::batchnorm;
  s.width = width;
  return s;
}

LayerSpec LayerSpec::residual(std::vector<LayerSpec> inner) {
  LayerSpec s;
  s.kind = LayerKind::residual_block;
  s.inner = std::move(inner);
  return s;
}

NetworkSpec NetworkSpec::without_sidenets() const {
  NetworkSpec s = *this;
  s.sidenets.clear();
  return s;
}

std::string describe(const LayerSpec& layer) {
  switch (layer.kind) {
    case LayerKind::linear:
      return "Linear(" + std::to_string(layer.in) + ", " + std::to_string(layer.out) +
             (layer.bias ? "" : ", bias=false") + ")";
    case LayerKind::relu: return "ReLU";
    case LayerKind::batchnorm: return "BatchNorm(" + std::to_string(layer.width) + ")";
    case LayerKind::residual_block: {
      std::string s = "Residual[";
      for (std::size_t i = 0; i < layer.inner.size(); ++i) s += (i ? " -> " : "") + describe(layer.inner[i]);
      return s + "]";
    }
  }
  return "?";
}

namespace {

// Width propagation. An unknown width (nullopt) is resolved by the first layer
// that declares one.
std::optional<std::size_t> propagate(const LayerSpec& layer, std::optional<std::size_t> width,
                                     const std::string& where) {
  switch (layer.kind) {
    case LayerKind::linear:
      if (layer.in == 0 || layer.out == 0) throw SpecError(where + ": linear widths must be positive");
      if (width && *width != layer.in) {
        throw SpecError(where + ": " + describe(layer) + " expects width " + std::to_string(layer.in) +
                        " but receives " + std::to_string(*width));
      }
      return layer.out;
    case LayerKind::relu:
      return width;
    case LayerKind::batchnorm:
      if (layer.width == 0) throw SpecError(where + ": batchnorm width must be positive");
      if (width && *width != layer.width) {
        throw SpecError(where + ": " + describe(layer) + " receives width " + std::to_string(*width));
      }
      return layer.width;
    case LayerKind::residual_block: {
      if (layer.inner.empty()) throw SpecError(where + ": residual_block needs at least one inner layer");
      std::optional<std::size_t> w = width;
      std::optional<std::size_t> in_w;
      for (std::size_t k = 0; k < layer.inner.size(); ++k) {
        auto before = w;
        w = propagate(layer.inner[k], w, where + "." + std::to_string(k));
        if (!in_w) {
          if (before) {
            in_w = before;
          } else if (layer.inner[k].kind == LayerKind::linear) {
            in_w = layer.inner[k].in;
          } else if (layer.inner[k].kind == LayerKind::batchnorm) {
            in_w = layer.inner[k].width;
          }
        }
      }
      if (in_w && w && *in_w != *w) {
        throw SpecError(where + ": residual_block maps width " + std::to_string(*in_w) + " to " +
                        std::to_string(*w) + "; inner input and output widths must match");
      }
      return w ? w : in_w;
    }
  }
  return width;
}

}  // namespace

std::vector<std::size_t> block_output_widths(const NetworkSpec& spec) {
  std::vector<std::optional<std::size_t>> widths;
  std::optional<std::size_t> w;
  for (std::size_t i = 0; i < spec.main_blocks.size(); ++i) {
    w = propagate(spec.main_blocks[i], w, "main block " + std::to_string(i));
    widths.push_back(w);
  }
  // A leading run of width-free blocks (ReLU) inherits the first declared width.
  std::optional<std::size_t> first_known;
  for (const auto& x : widths)
    if (x) {
      first_known = x;
      break;
    }
  if (!first_known) throw SpecError("main blocks declare no width; add a linear or batchnorm block");
  std::vector<std::size_t> out;
  const std::size_t in = input_width(spec);
  for (const auto& x : widths) out.push_back(x ? *x : in);
  return out;
}

std::size_t input_width(const NetworkSpec& spec) {
  std::function<std::optional<std::size_t>(const LayerSpec&)> first = [&](const LayerSpec& l)
      -> std::optional<std::size_t> {
    switch (l.kind) {
      case LayerKind::linear: return l.in;
      case LayerKind::batchnorm: return l.width;
      case LayerKind::relu: return std::nullopt;
      case LayerKind::residual_block:
        for (const auto& k : l.inner)
          if (auto w = first(k)) return w;
        return std::nullopt;
    }
    return std::nullopt;
  };
  for (const auto& b : spec.main_blocks)
    if (auto w = first(b)) return *w;
  throw SpecError("main blocks declare no width; add a linear or batchnorm block");
}

void validate(const NetworkSpec& spec) {
  if (spec.main_blocks.empty()) throw SpecError("network needs at least one main block");
  if (spec.head == Head::softmax && spec.num_classes < 2) {
    throw SpecError("softmax head needs num_classes >= 2");
  }
  if (spec.head == Head::sigmoid && spec.num_classes != 2) {
    throw SpecError("sigmoid head needs num_classes == 2");
  }
  const auto widths = block_output_widths(spec);
  if (widths.back() != spec.output_units()) {
    throw SpecError("main block " + std::to_string(widths.size() - 1) + ": MainNet output width " +
                    std::to_string(widths.back()) + " does not match head width " +
                    std::to_string(spec.output_units()));
  }
  std::set<std::size_t> attach;
  for (std::size_t j = 0; j < spec.sidenets.size(); ++j) {
    const auto& s = spec.sidenets[j];
    const std::string where = "sidenet " + std::to_string(j);
    if (s.attach_index + 1 >= spec.main_blocks.size()) {
      throw SpecError(where + ": attach_index " + std::to_string(s.attach_index) +
                      " must be strictly before the final main block " +
                      std::to_string(spec.main_blocks.size() - 1));
    }
    if (!attach.insert(s.attach_index).second) {
      throw SpecError(where + ": attach_index " + std::to_string(s.attach_index) + " already used");
    }
    if (s.hidden_units < 1) throw SpecError(where + ": hidden_units must be >= 1");
    if (s.head == Head::softmax && s.num_classes < 2) throw SpecError(where + ": softmax head needs num_classes >= 2");
    if (s.head == Head::sigmoid && s.num_classes != 2) throw SpecError(where + ": sigmoid head needs num_classes == 2");
    if (s.num_classes != spec.num_classes || s.head != spec.head) {
      throw SpecError(where + ": head and num_classes must match the MainNet");
    }
    if (s.input_dim != widths[s.attach_index]) {
      throw SpecError(where + ": input_dim " + std::to_string(s.input_dim) + " but main block " +
                      std::to_string(s.attach_index) + " outputs width " +
                      std::to_string(widths[s.attach_index]));
    }
  }
}

std::vector<std::size_t> gating_order(const NetworkSpec& spec) {
  std::vector<std::size_t> order(spec.sidenets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return spec.sidenets[a].attach_index < spec.sidenets[b].attach_index;
  });
  return order;
}

const char* head_name(Head head) { return head == Head::softmax ? "softmax" : "sigmoid"; }

Head parse_head(const std::string& name) {
  if (name == "softmax") return Head::softmax;
  if (name == "sigmoid") return Head::sigmoid;
  throw SpecError("unknown head '" + name + "' (expected softmax or sigmoid)");
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

namespace {

template <class T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": field '" + key + "' has the wrong type");
  }
}

template <class T>
T get_field_or(const json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) ? get_field<T>(j, key, where) : fallback;
}

}  // namespace

void to_json(json& j, const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::linear: j = {{"kind", "linear"}, {"in", s.in}, {"out", s.out}, {"bias", s.bias}}; break;
    case LayerKind::relu: j = {{"kind", "relu"}}; break;
    case LayerKind::batchnorm: j = {{"kind", "batchnorm"}, {"width", s.width}}; break;
    case LayerKind::residual_block: j = {{"kind", "residual_block"}, {"inner", s.inner}}; break;
  }
}

void from_json(const json& j, LayerSpec& s) {
  const std::string where = "layer";
  const auto kind = get_field<std::string>(j, "kind", where);
  if (kind == "linear") {
    reject_unknown_keys(j, {"kind", "in", "out", "bias"}, where);
    s = LayerSpec::linear(get_field<std::size_t>(j, "in", where), get_field<std::size_t>(j, "out", where),
                          get_field_or<bool>(j, "bias", true, where));
  } else if (kind == "relu") {
    reject_unknown_keys(j, {"kind"}, where);
    s = LayerSpec::relu();
  } else if (kind == "batchnorm") {
    reject_unknown_keys(j, {"kind", "width"}, where);
    s = LayerSpec::batchnorm(get_field<std::size_t>(j, "width", where));
  } else if (kind == "residual_block") {
    reject_unknown_keys(j, {"kind", "inner"}, where);
    if (!j.contains("inner") || !j["inner"].is_array()) throw ConfigError("residual_block: 'inner' must be an array");
    std::vector<LayerSpec> inner;
    for (const auto& e : j["inner"]) inner.push_back(e.get<LayerSpec>());
    s = LayerSpec::residual(std::move(inner));
  } else {
    throw ConfigError("layer: unknown kind '" + kind + "'");
  }
}

void to_json(json& j, const SideNetSpec& s) {
  j = {{"attach_index", s.attach_index}, {"input_dim", s.input_dim}, {"hidden_units", s.hidden_units},
       {"num_classes", s.num_classes}, {"head", head_name(s.head)}};
}

void from_json(const json& j, SideNetSpec& s) {
  const std::string where = "sidenet";
  reject_unknown_keys(j, {"attach_index", "input_dim", "hidden_units", "num_classes", "head"}, where);
  s.attach_index = get_field<std::size_t>(j, "attach_index", where);
  s.input_dim = get_field<std::size_t>(j, "input_dim", where);
  s.hidden_units = get_field_or<std::size_t>(j, "hidden_units", 32, where);
  s.num_classes = get_field<std::size_t>(j, "num_classes", where);
  s.head = parse_head(get_field_or<std::string>(j, "head", "softmax", where));
}

void to_json(json& j, const NetworkSpec& s) {
  j = {{"main_blocks", s.main_blocks}, {"sidenets", s.sidenets}, {"num_classes", s.num_classes},
       {"head", head_name(s.head)}};
}

void from_json(const json& j, NetworkSpec& s) {
  const std::string where = "network";
  reject_unknown_keys(j, {"main_blocks", "sidenets", "num_classes", "head"}, where);
  if (!j.contains("main_blocks") || !j["main_blocks"].is_array()) {
    throw ConfigError("network: 'main_blocks' must be an array");
  }
  s.main_blocks.clear();
  for (const auto& e : j["main_blocks"]) s.main_blocks.push_back(e.get<LayerSpec>());
  s.sidenets.clear();
  if (j.contains("sidenets")) {
    if (!j["sidenets"].is_array()) throw ConfigError("network: 'sidenets' must be an array");
    for (const auto& e : j["sidenets"]) s.sidenets.push_back(e.get<SideNetSpec>());
  }
  s.num_classes = get_field<std::size_t>(j, "num_classes", where);
  s.head = parse_head(get_field_or<std::string>(j, "head", "softmax", where));
}

}  // namespace gatewire
