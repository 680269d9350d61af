#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fsvos/errors.hpp"
#include "fsvos/tensor.hpp"

namespace fsvos::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(shape, std::move(v));
}

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// over all inputs, with central differences of step h.
inline double gradient_rel_error(const ScalarFn& fn, std::vector<Tensor> inputs, double h = 1e-6) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = fn(inputs);
  out.backward();
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t.data()[i];
      double plus, minus;
      {
        NoGradGuard ng;
        t.mutable_data()[i] = orig + h;
        plus = fn(inputs).item();
        t.mutable_data()[i] = orig - h;
        minus = fn(inputs).item();
        t.mutable_data()[i] = orig;
      }
      const double numeric = (plus - minus) / (2.0 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
  }
  const double denom = std::max(std::sqrt(std::max(a2, n2)), 1e-12);
  return std::sqrt(diff2) / denom;
}

/// Collects warnings for the lifetime of the object.
class WarningCapture {
 public:
  WarningCapture() {
    previous_ = set_warning_handler([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { set_warning_handler(previous_); }
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  std::vector<std::string> messages;

 private:
  WarningHandler previous_;
};

}  // namespace fsvos::testing
