#include "rpm/numkit/adam.hpp"

#include <cmath>

namespace rpm::nk {

AdamState make_adam(const std::vector<Parameter*>& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto* p : params) {
    s.m.emplace_back(p->data.size(), 0.0f);
    s.v.emplace_back(p->data.size(), 0.0f);
  }
  return s;
}

void adam_step(AdamState& state, const std::vector<Parameter*>& params) {
  if (params.size() != state.m.size()) {
    throw Error(ErrorCode::kShapeMismatch, "adam_step: parameter count changed");
  }
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<float>(c.beta1);
  const auto b2 = static_cast<float>(c.beta2);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& param = *params[p];
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != param.data.size()) throw Error(ErrorCode::kShapeMismatch, "adam_step: moment shape mismatch for " + param.name);
    for (std::size_t i = 0; i < param.data.size(); ++i) {
      const float g = param.grad[i];
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      param.data[i] -= static_cast<float>(c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

}  // namespace rpm::nk
