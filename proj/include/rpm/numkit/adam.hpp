#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rpm/numkit/tensor.hpp"

namespace rpm::nk {

// Trainable tensor owned outside any tape. Bind it to a tape with
// Tape::external(shape, data.data(), true).
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;

  Parameter() = default;
  Parameter(std::string n, Shape s) : name(std::move(n)), shape(std::move(s)), data(numel(shape)), grad(numel(shape)) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

AdamState make_adam(const std::vector<Parameter*>& params, AdamConfig config = {});

// Bias-corrected Adam update from each parameter's grad field.
void adam_step(AdamState& state, const std::vector<Parameter*>& params);

}  // namespace rpm::nk
