#include "fsvos/optim.hpp"

#include <cmath>

namespace fsvos {

void Sgd::step(ModelState& model) const {
  for (auto& p : model.parameters()) {
    if (p.frozen || !p.value.has_grad()) continue;
    const auto g = p.value.grad();
    auto w = p.value.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
  }
}

void Adam::step(ModelState& model) {
  for (auto& p : model.parameters()) {
    if (p.frozen || !p.value.has_grad()) continue;
    auto& st = state_[p.name];
    const auto g = p.value.grad();
    auto w = p.value.mutable_data();
    if (st.m.size() != w.size()) {
      st.m.assign(w.size(), 0.0);
      st.v.assign(w.size(), 0.0);
      st.t = 0;
    }
    ++st.t;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(st.t));
    for (std::size_t i = 0; i < w.size(); ++i) {
      st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g[i];
      st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps_);
    }
  }
}

}  // namespace fsvos
