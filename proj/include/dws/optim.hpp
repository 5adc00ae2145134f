#pragma once

#include <cstdint>

#include "dws/graph.hpp"

namespace dws {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW); 0 gives plain Adam
};

template <typename T>
struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  Bindings<T> first_moment;
  Bindings<T> second_moment;
};

/// One AdamW update of every parameter that has a gradient. Non-finite
/// gradients are rejected before any parameter is touched.
template <typename T>
void adam_step(Bindings<T>& params, const Bindings<T>& grads, OptimizerState<T>& state);

}  // namespace dws
