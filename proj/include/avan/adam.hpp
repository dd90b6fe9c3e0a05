#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "avan/tape.hpp"

namespace avan {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient in parameter " + param), param_(param) {}
  const std::string& param() const { return param_; }

 private:
  std::string param_;
};

/// First and second moments for one parameter.
template <typename T>
struct AdamMoments {
  Tensor<T> m;
  Tensor<T> v;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t t = 0;
  std::vector<AdamMoments<T>> moments;
};

/// One Adam update with bias correction over params (in order). All
/// gradients are validated before any parameter is touched.
template <typename T>
void adam_step(const std::vector<Param<T>*>& params, AdamState<T>& state) {
  if (state.moments.empty()) {
    for (auto* p : params)
      state.moments.push_back({Tensor<T>(p->value.shape()), Tensor<T>(p->value.shape())});
  }
  if (state.moments.size() != params.size())
    throw std::invalid_argument("adam_step: optimizer state tracks " +
                                std::to_string(state.moments.size()) + " parameters, got " +
                                std::to_string(params.size()));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto* p = params[k];
    if (state.moments[k].m.shape() != p->value.shape() || p->grad.shape() != p->value.shape())
      throw ShapeError("adam_step:" + p->name, p->value.shape(), p->grad.shape());
    for (T g : p->grad.vec())
      if (!std::isfinite(double(g))) throw NonFiniteGradient(p->name);
  }
  state.t += 1;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, double(state.t));
  const T b1 = T(c.beta1), b2 = T(c.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    auto& mo = state.moments[k];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const T g = p->grad[i];
      mo.m[i] = b1 * mo.m[i] + (T{1} - b1) * g;
      mo.v[i] = b2 * mo.v[i] + (T{1} - b2) * g * g;
      const double mhat = double(mo.m[i]) / bc1;
      const double vhat = double(mo.v[i]) / bc2;
      p->value[i] -= T(c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

}  // namespace avan
