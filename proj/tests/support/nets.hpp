#pragma once

#include "gatewire/spec.hpp"

namespace gatewire::testing {

// Linear(8,16) + ReLU + Linear(16,4) with SideNet(16, 32, 4) after block 0.
inline NetworkSpec counting_example() {
  NetworkSpec s;
  s.num_classes = 4;
  s.main_blocks = {LayerSpec::linear(8, 16), LayerSpec::relu(), LayerSpec::linear(16, 4)};
  s.sidenets = {SideNetSpec{0, 16, 32, 4, Head::softmax}};
  return s;
}

// Small residual MainNet with batchnorm and two SideNets.
inline NetworkSpec small_residual(std::size_t in = 5, std::size_t classes = 3) {
  NetworkSpec s;
  s.num_classes = classes;
  s.main_blocks = {
      LayerSpec::linear(in, 8),
      LayerSpec::batchnorm(8),
      LayerSpec::relu(),
      LayerSpec::residual({LayerSpec::linear(8, 8), LayerSpec::batchnorm(8), LayerSpec::relu()}),
      LayerSpec::linear(8, classes),
  };
  s.sidenets = {SideNetSpec{2, 8, 6, classes, Head::softmax}, SideNetSpec{3, 8, 6, classes, Head::softmax}};
  return s;
}

}  // namespace gatewire::testing
