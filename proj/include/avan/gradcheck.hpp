#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "avan/tape.hpp"

namespace avan {

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
};

struct GradCheckOptions {
  double h = 1e-5;
  /// Denominator floor so near-zero gradients are compared absolutely.
  double floor = 1e-6;
  bool training = true;
};

/// Compares reverse-mode gradients of a scalar graph against central
/// differences for every element of every listed parameter.
template <typename T>
GradCheckResult grad_check(const std::function<Var<T>(Tape<T>&)>& build,
                           const std::vector<Param<T>*>& params, GradCheckOptions opt = {}) {
  ForwardMode mode{opt.training, false};
  for (auto* p : params) p->zero_grad();
  {
    Tape<T> tape(mode);
    tape.backward(build(tape));
  }
  auto eval = [&]() {
    Tape<T> tape(mode);
    return double(build(tape).value().item());
  };
  GradCheckResult res;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const T orig = p->value[i];
      p->value[i] = orig + T(opt.h);
      const double fp = eval();
      p->value[i] = orig - T(opt.h);
      const double fm = eval();
      p->value[i] = orig;
      const double num = (fp - fm) / (2 * opt.h);
      const double ana = double(p->grad[i]);
      const double den = std::max({std::abs(num), std::abs(ana), opt.floor});
      const double rel = std::abs(num - ana) / den;
      if (rel > res.max_rel_error || res.worst_param.empty()) {
        res = {rel, p->name, i, ana, num};
      }
    }
  }
  return res;
}

}  // namespace avan
