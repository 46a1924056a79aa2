#include "gatewire/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <type_traits>

#include "gatewire/errors.hpp"
#include "gatewire/rng.hpp"

namespace gatewire {

namespace {

LinearLayer make_linear(std::size_t in, std::size_t out, bool bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  LinearLayer l;
  l.weight = Tensor({in, out}, std::move(w), true);
  if (bias) l.bias = Tensor::zeros({out}, true);
  return l;
}

Layer make_layer(const LayerSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case LayerKind::linear: return {make_linear(spec.in, spec.out, spec.bias, rng)};
    case LayerKind::relu: return {ReluLayer{}};
    case LayerKind::batchnorm: return {BatchNormLayer{BatchNormState::make(spec.width)}};
    case LayerKind::residual_block: {
      ResidualLayer r;
      for (const auto& k : spec.inner) r.inner.push_back(make_layer(k, rng));
      return {std::move(r)};
    }
  }
  throw SpecError("unknown layer kind");
}

LinearLayer clone_linear(const LinearLayer& l) {
  LinearLayer c;
  c.weight = l.weight.clone();
  if (l.bias.defined()) c.bias = l.bias.clone();
  return c;
}

Layer clone_layer(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> Layer {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, LinearLayer>) {
          return {clone_linear(l)};
        } else if constexpr (std::is_same_v<T, ReluLayer>) {
          return {ReluLayer{}};
        } else if constexpr (std::is_same_v<T, BatchNormLayer>) {
          return {BatchNormLayer{l.state.clone()}};
        } else {
          ResidualLayer r;
          for (const auto& k : l.inner) r.inner.push_back(clone_layer(k));
          return {std::move(r)};
        }
      },
      layer.impl);
}

Tensor apply_linear(const LinearLayer& l, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != l.weight.rows()) {
    throw DimensionError("linear layer expects width " + std::to_string(l.weight.rows()) +
                         ", got input " + shape_str(x.shape()));
  }
  Tensor y = matmul(x, l.weight);
  return l.bias.defined() ? add_bias(y, l.bias) : y;
}

// L is Layer or const Layer; the const form always evaluates batchnorm with
// running statistics.
template <class L>
Tensor apply_layer(L& layer, const Tensor& x, bool training) {
  return std::visit(
      [&](auto& l) -> Tensor {
        using T = std::remove_cvref_t<decltype(l)>;
        if constexpr (std::is_same_v<T, LinearLayer>) {
          return apply_linear(l, x);
        } else if constexpr (std::is_same_v<T, ReluLayer>) {
          return relu(x);
        } else if constexpr (std::is_same_v<T, BatchNormLayer>) {
          if constexpr (!std::is_const_v<L>) {
            l.state.mode = training ? Mode::train : Mode::eval;
            return batchnorm(x, l.state);
          } else {
            return batchnorm(x, l.state);
          }
        } else {
          Tensor h = x;
          for (auto& k : l.inner) h = apply_layer(k, h, training);
          return add(h, x);
        }
      },
      layer.impl);
}

template <class S>
Tensor apply_sidenet(S& side, const Tensor& x, bool training) {
  Tensor h = apply_linear(side.fc1, x);
  if constexpr (!std::is_const_v<S>) {
    side.bn.state.mode = training ? Mode::train : Mode::eval;
  }
  h = batchnorm(h, side.bn.state);
  h = relu(h);
  h = apply_linear(side.fc2, h);
  return side.spec.head == Head::softmax ? softmax(h) : sigmoid(h);
}

void collect_layer(const Layer& layer, const std::string& prefix, std::vector<NamedTensor>& out,
                   bool with_buffers) {
  std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, LinearLayer>) {
          out.push_back({prefix + ".weight", l.weight});
          if (l.bias.defined()) out.push_back({prefix + ".bias", l.bias});
        } else if constexpr (std::is_same_v<T, BatchNormLayer>) {
          out.push_back({prefix + ".gamma", l.state.gamma});
          out.push_back({prefix + ".beta", l.state.beta});
          if (with_buffers) {
            out.push_back({prefix + ".running_mean", Tensor({l.state.width()}, l.state.running_mean)});
            out.push_back({prefix + ".running_var", Tensor({l.state.width()}, l.state.running_var)});
          }
        } else if constexpr (std::is_same_v<T, ResidualLayer>) {
          for (std::size_t k = 0; k < l.inner.size(); ++k)
            collect_layer(l.inner[k], prefix + "." + std::to_string(k), out, with_buffers);
        }
      },
      layer.impl);
}

void collect_sidenet(const SideNet& s, const std::string& prefix, std::vector<NamedTensor>& out,
                     bool with_buffers) {
  out.push_back({prefix + ".fc1.weight", s.fc1.weight});
  out.push_back({prefix + ".fc1.bias", s.fc1.bias});
  out.push_back({prefix + ".bn.gamma", s.bn.state.gamma});
  out.push_back({prefix + ".bn.beta", s.bn.state.beta});
  if (with_buffers) {
    out.push_back({prefix + ".bn.running_mean", Tensor({s.bn.state.width()}, s.bn.state.running_mean)});
    out.push_back({prefix + ".bn.running_var", Tensor({s.bn.state.width()}, s.bn.state.running_var)});
  }
  out.push_back({prefix + ".fc2.weight", s.fc2.weight});
  out.push_back({prefix + ".fc2.bias", s.fc2.bias});
}

std::size_t count_layer(const Layer& layer, CountMode mode) {
  return std::visit(
      [&](const auto& l) -> std::size_t {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, LinearLayer>) {
          std::size_t n = l.weight.numel();
          if (mode == CountMode::exact && l.bias.defined()) n += l.bias.numel();
          return n;
        } else if constexpr (std::is_same_v<T, BatchNormLayer>) {
          return mode == CountMode::exact ? 2 * l.state.width() : 0;
        } else if constexpr (std::is_same_v<T, ResidualLayer>) {
          std::size_t n = 0;
          for (const auto& k : l.inner) n += count_layer(k, mode);
          return n;
        } else {
          return 0;
        }
      },
      layer.impl);
}

// Writable views of every state tensor and buffer, keyed by name.
struct StateSlot {
  Tensor tensor;                    // defined for learnable tensors
  std::vector<double>* buffer = nullptr;  // running statistics
};

void slots_for_layer(Layer& layer, const std::string& prefix, std::map<std::string, StateSlot>& out) {
  std::visit(
      [&](auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, LinearLayer>) {
          out[prefix + ".weight"].tensor = l.weight;
          if (l.bias.defined()) out[prefix + ".bias"].tensor = l.bias;
        } else if constexpr (std::is_same_v<T, BatchNormLayer>) {
          out[prefix + ".gamma"].tensor = l.state.gamma;
          out[prefix + ".beta"].tensor = l.state.beta;
          out[prefix + ".running_mean"].buffer = &l.state.running_mean;
          out[prefix + ".running_var"].buffer = &l.state.running_var;
        } else if constexpr (std::is_same_v<T, ResidualLayer>) {
          for (std::size_t k = 0; k < l.inner.size(); ++k)
            slots_for_layer(l.inner[k], prefix + "." + std::to_string(k), out);
        }
      },
      layer.impl);
}

}  // namespace

Model Model::build(const NetworkSpec& spec, std::uint64_t seed) {
  validate(spec);
  Model m;
  m.spec_ = spec;
  // Main and side initialization use separate streams so that adding a
  // SideNet never changes the MainNet's initial weights.
  Rng main_rng(derive_seed(seed, "init.main"));
  for (const auto& b : spec.main_blocks) m.main_.push_back(make_layer(b, main_rng));
  for (std::size_t j = 0; j < spec.sidenets.size(); ++j) {
    const auto& s = spec.sidenets[j];
    Rng rng(derive_seed(seed, "init.side", j));
    SideNet side;
    side.spec = s;
    side.fc1 = make_linear(s.input_dim, s.hidden_units, true, rng);
    side.bn.state = BatchNormState::make(s.hidden_units);
    side.fc2 = make_linear(s.hidden_units, s.output_units(), true, rng);
    m.sides_.push_back(std::move(side));
  }
  return m;
}

Model Model::clone() const {
  Model m;
  m.spec_ = spec_;
  for (const auto& l : main_) m.main_.push_back(clone_layer(l));
  for (const auto& s : sides_) {
    SideNet c;
    c.spec = s.spec;
    c.fc1 = clone_linear(s.fc1);
    c.bn.state = s.bn.state.clone();
    c.fc2 = clone_linear(s.fc2);
    m.sides_.push_back(std::move(c));
  }
  m.standardizer_ = standardizer_;
  return m;
}

Tensor apply_head(Head head, const Tensor& logits) {
  return head == Head::softmax ? softmax(logits) : sigmoid(logits);
}

int predict_class(std::span<const double> probs, Head head) {
  if (head == Head::sigmoid) return probs[0] > 0.5 ? 1 : 0;
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

Tensor Model::forward_block(std::size_t i, const Tensor& x, bool training) {
  return apply_layer(main_.at(i), x, training);
}

Tensor Model::forward_block(std::size_t i, const Tensor& x) const {
  return apply_layer(main_.at(i), x, false);
}

Tensor Model::forward_sidenet(std::size_t j, const Tensor& x, bool training) {
  return apply_sidenet(sides_.at(j), x, training);
}

Tensor Model::forward_sidenet(std::size_t j, const Tensor& x) const {
  return apply_sidenet(sides_.at(j), x, false);
}

ForwardResult Model::forward(const Tensor& x, bool main_training, bool side_training) {
  const std::size_t in = input_width(spec_);
  if (x.rank() != 2 || x.cols() != in) {
    throw DimensionError("model expects input [batch x " + std::to_string(in) + "], got " + shape_str(x.shape()));
  }
  ForwardResult r;
  r.side_probs.resize(sides_.size());
  Tensor h = x;
  for (std::size_t i = 0; i < main_.size(); ++i) {
    h = forward_block(i, h, main_training);
    r.intermediates.push_back(h);
    for (std::size_t j = 0; j < sides_.size(); ++j)
      if (sides_[j].spec.attach_index == i) r.side_probs[j] = forward_sidenet(j, h, side_training);
  }
  r.main_probs = apply_head(spec_.head, h);
  return r;
}

ForwardResult Model::forward(const Tensor& x) const {
  const std::size_t in = input_width(spec_);
  if (x.rank() != 2 || x.cols() != in) {
    throw DimensionError("model expects input [batch x " + std::to_string(in) + "], got " + shape_str(x.shape()));
  }
  ForwardResult r;
  r.side_probs.resize(sides_.size());
  Tensor h = x;
  for (std::size_t i = 0; i < main_.size(); ++i) {
    h = forward_block(i, h);
    r.intermediates.push_back(h);
    for (std::size_t j = 0; j < sides_.size(); ++j)
      if (sides_[j].spec.attach_index == i) r.side_probs[j] = forward_sidenet(j, h);
  }
  r.main_probs = apply_head(spec_.head, h);
  return r;
}

std::vector<NamedTensor> Model::main_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < main_.size(); ++i) collect_layer(main_[i], "main." + std::to_string(i), out, false);
  return out;
}

std::vector<NamedTensor> Model::sidenet_parameters(std::size_t j) const {
  std::vector<NamedTensor> out;
  collect_sidenet(sides_.at(j), "side." + std::to_string(j), out, false);
  return out;
}

std::vector<NamedTensor> Model::parameters() const {
  auto out = main_parameters();
  for (std::size_t j = 0; j < sides_.size(); ++j) {
    auto s = sidenet_parameters(j);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

std::vector<NamedTensor> Model::state_tensors() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < main_.size(); ++i) collect_layer(main_[i], "main." + std::to_string(i), out, true);
  for (std::size_t j = 0; j < sides_.size(); ++j) collect_sidenet(sides_[j], "side." + std::to_string(j), out, true);
  if (standardizer_) {
    out.push_back({"input.mean", Tensor({standardizer_->mean.size()}, standardizer_->mean)});
    out.push_back({"input.scale", Tensor({standardizer_->scale.size()}, standardizer_->scale)});
  }
  return out;
}

void Model::load_state(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, StateSlot> slots;
  for (std::size_t i = 0; i < main_.size(); ++i) slots_for_layer(main_[i], "main." + std::to_string(i), slots);
  for (std::size_t j = 0; j < sides_.size(); ++j) {
    auto& s = sides_[j];
    const std::string p = "side." + std::to_string(j);
    slots[p + ".fc1.weight"].tensor = s.fc1.weight;
    slots[p + ".fc1.bias"].tensor = s.fc1.bias;
    slots[p + ".bn.gamma"].tensor = s.bn.state.gamma;
    slots[p + ".bn.beta"].tensor = s.bn.state.beta;
    slots[p + ".bn.running_mean"].buffer = &s.bn.state.running_mean;
    slots[p + ".bn.running_var"].buffer = &s.bn.state.running_var;
    slots[p + ".fc2.weight"].tensor = s.fc2.weight;
    slots[p + ".fc2.bias"].tensor = s.fc2.bias;
  }
  std::optional<Standardizer> standardizer;
  std::size_t matched = 0;
  for (const auto& [name, t] : tensors) {
    if (name == "input.mean" || name == "input.scale") {
      if (!standardizer) standardizer.emplace();
      auto& dst = name == "input.mean" ? standardizer->mean : standardizer->scale;
      dst.assign(t.data().begin(), t.data().end());
      continue;
    }
    auto it = slots.find(name);
    if (it == slots.end()) throw ArgumentError("unexpected state tensor '" + name + "'");
    auto& slot = it->second;
    if (slot.buffer) {
      if (t.numel() != slot.buffer->size() || t.rank() != 1) {
        throw DimensionError("state tensor '" + name + "' has shape " + shape_str(t.shape()));
      }
      slot.buffer->assign(t.data().begin(), t.data().end());
    } else {
      if (t.shape() != slot.tensor.shape()) {
        throw DimensionError("state tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                             shape_str(slot.tensor.shape()));
      }
      auto dst = slot.tensor.mutable_data();
      std::copy(t.data().begin(), t.data().end(), dst.begin());
    }
    ++matched;
  }
  if (matched != slots.size()) {
    for (const auto& [name, _] : slots) {
      bool found = false;
      for (const auto& nt : tensors) found = found || nt.name == name;
      if (!found) throw ArgumentError("missing state tensor '" + name + "'");
    }
    throw ArgumentError("duplicate state tensors");
  }
  if (standardizer) {
    const std::size_t in = input_width(spec_);
    if (standardizer->mean.size() != in || standardizer->scale.size() != in) {
      throw DimensionError("input standardization width does not match the model input");
    }
  }
  standardizer_ = std::move(standardizer);
}

std::size_t Model::block_param_count(std::size_t i, CountMode mode) const { return count_layer(main_.at(i), mode); }

std::size_t Model::sidenet_param_count(std::size_t j, CountMode mode) const {
  const auto& s = sides_.at(j);
  std::size_t n = s.fc1.weight.numel() + s.fc2.weight.numel();
  if (mode == CountMode::exact) n += s.fc1.bias.numel() + s.fc2.bias.numel() + 2 * s.bn.state.width();
  return n;
}

std::size_t Model::param_count(ExitPoint exit, CountMode mode) const {
  std::size_t last_block = main_.size() - 1;
  if (!exit.is_main()) {
    if (exit.index >= sides_.size()) {
      throw ArgumentError("unknown exit point side" + std::to_string(exit.index) + "; model has " +
                          std::to_string(sides_.size()) + " sidenets");
    }
    last_block = sides_[exit.index].spec.attach_index;
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i <= last_block; ++i) n += block_param_count(i, mode);
  for (std::size_t j = 0; j < sides_.size(); ++j) {
    const bool ran = exit.is_main() || sides_[j].spec.attach_index <= last_block;
    if (ran) n += sidenet_param_count(j, mode);
  }
  return n;
}

}  // namespace gatewire
