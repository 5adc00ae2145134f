#include "dws/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dws {

template <typename T>
void adam_step(Bindings<T>& params, const Bindings<T>& grads, OptimizerState<T>& state) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != g.shape())
      throw ShapeError("gradient shape mismatch for parameter '" + name + "'");
    for (auto v : g.data())
      if (!std::isfinite(v)) throw std::domain_error("non-finite gradient for parameter '" + name + "'");
  }

  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T bias1 = static_cast<T>(1.0 - std::pow(c.beta1, t));
  const T bias2 = static_cast<T>(1.0 - std::pow(c.beta2, t));
  const T lr = static_cast<T>(c.learning_rate);
  const T b1 = static_cast<T>(c.beta1);
  const T b2 = static_cast<T>(c.beta2);
  const T eps = static_cast<T>(c.epsilon);
  const T decay = static_cast<T>(1.0 - c.learning_rate * c.weight_decay);

  for (const auto& [name, g] : grads) {
    auto& p = params.at(name);
    auto [m_it, m_new] = state.first_moment.try_emplace(name, Tensor<T>(p.shape()));
    auto [v_it, v_new] = state.second_moment.try_emplace(name, Tensor<T>(p.shape()));
    auto P = p.data();
    auto G = g.data();
    auto Mo = m_it->second.data();
    auto Vo = v_it->second.data();
    for (std::size_t i = 0; i < P.size(); ++i) {
      Mo[i] = b1 * Mo[i] + (T{1} - b1) * G[i];
      Vo[i] = b2 * Vo[i] + (T{1} - b2) * G[i] * G[i];
      const T mhat = Mo[i] / bias1;
      const T vhat = Vo[i] / bias2;
      P[i] = decay * P[i] - lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template void adam_step(Bindings<float>&, const Bindings<float>&, OptimizerState<float>&);
template void adam_step(Bindings<double>&, const Bindings<double>&, OptimizerState<double>&);

}  // namespace dws
