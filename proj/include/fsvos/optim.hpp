#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "fsvos/model_state.hpp"

namespace fsvos {

// Both optimizers skip frozen parameters and parameters without a gradient.
class Sgd {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(ModelState& model) const;
  double lr() const { return lr_; }

 private:
  double lr_;
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ModelState& model);
  double lr() const { return lr_; }

 private:
  struct Moments {
    std::vector<double> m, v;
    long long t = 0;
  };
  double lr_, beta1_, beta2_, eps_;
  std::unordered_map<std::string, Moments> state_;
};

}  // namespace fsvos
