#include "rpm/numkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rpm/numkit/ops.hpp"
#include "rpm/rng.hpp"

namespace rpm::nk {

namespace {

double evaluate(const ScalarFn& fn, const std::vector<GradCheckInput>& point) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& in : point) vars.push_back(tape.constant(in.shape, in.values));
  return fn(tape, vars).item();
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& fn, const std::vector<GradCheckInput>& point,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& in : point) vars.push_back(tape.variable(in.shape, in.values));
  auto out = fn(tape, vars);
  tape.backward(out);

  auto probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    auto analytic = tape.grad_view(vars[i].id());
    for (std::size_t j = 0; j < point[i].values.size(); ++j) {
      const double orig = point[i].values[j];
      probe[i].values[j] = orig + options.step;
      const double up = evaluate(fn, probe);
      probe[i].values[j] = orig - options.step;
      const double down = evaluate(fn, probe);
      probe[i].values[j] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic.empty() ? 0.0 : analytic[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      CoordinateError c{static_cast<int>(i), j, a, numeric, std::abs(a - numeric) / denom};
      report.max_rel_error = std::max(report.max_rel_error, c.rel_error);
      if (!(c.rel_error < options.tolerance)) report.passed = false;
      report.coordinates.push_back(c);
    }
  }
  return report;
}

namespace {

using V = Var<double>;

std::vector<double> random_values(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

// Reduces a tensor output to a scalar with fixed random weights so every
// output element contributes a distinct gradient.
V project(V y, std::uint64_t seed) {
  Rng rng(seed);
  auto w = y.tape().constant(y.shape(), random_values(rng, y.size()));
  return sum(mul(y, w));
}

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  std::function<V(Tape<double>&, const std::vector<V>&)> fn;
  double input_scale = 1.0;
};

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto proj = [](V y) { return project(y, 77); };
  cases.push_back({"matmul", {{3, 4}, {4, 5}}, [=](auto&, const auto& x) { return proj(matmul(x[0], x[1])); }});
  cases.push_back({"matmul_nt", {{3, 4}, {5, 4}}, [=](auto&, const auto& x) { return proj(matmul_nt(x[0], x[1])); }});
  cases.push_back({"add", {{3, 4}, {3, 4}}, [=](auto&, const auto& x) { return proj(add(x[0], x[1])); }});
  cases.push_back({"add_bias", {{3, 4}, {4}}, [=](auto&, const auto& x) { return proj(add_bias(x[0], x[1])); }});
  cases.push_back({"mul", {{3, 4}, {3, 4}}, [=](auto&, const auto& x) { return proj(mul(x[0], x[1])); }});
  cases.push_back({"scale", {{2, 5}}, [=](auto&, const auto& x) { return proj(scale(x[0], 0.37)); }});
  cases.push_back({"reshape", {{2, 6}}, [=](auto&, const auto& x) { return proj(reshape(x[0], {3, 4})); }});
  cases.push_back({"transpose", {{3, 5}}, [=](auto&, const auto& x) { return proj(transpose(x[0])); }});
  cases.push_back({"concat", {{2, 3, 2}, {2, 1, 2}}, [=](auto&, const auto& x) {
                     return proj(concat(std::vector<V>{x[0], x[1], x[0]}, 1));
                   }});
  cases.push_back({"slice", {{4, 5}}, [=](auto&, const auto& x) { return proj(slice(x[0], 1, 1, 4)); }});
  cases.push_back({"sum", {{3, 3}}, [=](auto&, const auto& x) { return sum(mul(x[0], x[0])); }});
  cases.push_back({"mean", {{3, 3}}, [=](auto&, const auto& x) { return mean(mul(x[0], x[0])); }});
  cases.push_back({"linear", {{3, 4}, {4, 2}, {2}}, [=](auto&, const auto& x) { return proj(linear(x[0], x[1], x[2])); }});
  cases.push_back({"conv2d_stride1", {{2, 5, 5}, {3, 2, 3, 3}, {3}}, [=](auto&, const auto& x) {
                     return proj(conv2d(x[0], x[1], x[2], 1));
                   }});
  cases.push_back({"conv2d_stride2", {{2, 7, 6}, {3, 2, 3, 3}, {3}}, [=](auto&, const auto& x) {
                     return proj(conv2d(x[0], x[1], x[2], 2));
                   }});
  cases.push_back({"feature_map_to_tokens", {{3, 2, 2}}, [=](auto&, const auto& x) { return proj(feature_map_to_tokens(x[0])); }});
  cases.push_back({"embedding_add", {{4, 3}, {4, 3}}, [=](auto&, const auto& x) { return proj(embedding_add(x[0], x[1])); }});
  cases.push_back({"softmax", {{3, 7}}, [=](auto&, const auto& x) { return proj(softmax(x[0])); }});
  cases.push_back({"sigmoid", {{3, 4}}, [=](auto&, const auto& x) { return proj(sigmoid(x[0])); }});
  cases.push_back({"gelu", {{3, 4}}, [=](auto&, const auto& x) { return proj(gelu(x[0])); }});
  cases.push_back({"layer_norm", {{3, 6}, {6}, {6}}, [=](auto&, const auto& x) {
                     return proj(layer_norm(x[0], x[1], x[2], 0.001));
                   }});
  cases.push_back({"dropout", {{4, 5}}, [=](auto&, const auto& x) { return proj(dropout(x[0], 0.3, true, 12345)); }});
  cases.push_back({"cross_entropy", {{4, 6}}, [=](auto&, const auto& x) {
                     static const std::vector<int> labels = {0, 5, 2, 2};
                     return cross_entropy(x[0], std::span<const int>(labels));
                   }});
  cases.push_back({"grouped_activation", {{2, 9}}, [=](auto&, const auto& x) {
                     static const std::vector<ActivationGroup> groups = {{0, 3, false}, {3, 1, true}, {4, 1, true}, {5, 4, false}};
                     return proj(grouped_activation(x[0], std::span<const ActivationGroup>(groups)));
                   }});
  cases.push_back({"weighted_log_loss", {{2, 9}}, [=](auto&, const auto& x) {
                     static const std::vector<ActivationGroup> groups = {{0, 3, false}, {3, 1, true}, {4, 1, true}, {5, 4, false}};
                     static const std::vector<double> target = {0, 1, 0, 1, 0, 0.1, 0.2, 0.3, 0.4,
                                                                0.2, 0.3, 0.5, 0.7, 0.3, 0, 0, 1, 0};
                     static const std::vector<double> weight = {1, 1, 1, 2.8, 2.8, 0.85, 0.85, 0.85, 0.85,
                                                                1, 1, 1, 0, 2.8, 1.2, 1.2, 1.2, 1.2};
                     static const std::vector<std::uint8_t> binary = {0, 0, 0, 1, 1, 0, 0, 0, 0,
                                                                      0, 0, 0, 1, 1, 0, 0, 0, 0};
                     auto probs = grouped_activation(x[0], std::span<const ActivationGroup>(groups));
                     return weighted_log_loss(probs, std::span<const double>(target), std::span<const double>(weight),
                                              std::span<const std::uint8_t>(binary), 1e-7);
                   }});
  // Scaled dot-product attention as the model composes it.
  cases.push_back({"attention", {{4, 6}, {6, 6}, {6, 6}, {6, 6}}, [=](auto&, const auto& x) {
                     auto q = matmul(x[0], x[1]);
                     auto k = matmul(x[0], x[2]);
                     auto v = matmul(x[0], x[3]);
                     auto a = softmax(scale(matmul_nt(q, k), 1.0 / std::sqrt(6.0)));
                     return proj(matmul(a, v));
                   }, 0.7});
  return cases;
}

}  // namespace

std::vector<OpCheckResult> run_gradcheck_suite(std::uint64_t seed, int points, const GradCheckOptions& options) {
  std::vector<OpCheckResult> results;
  Rng rng(seed);
  for (const auto& c : op_cases()) {
    OpCheckResult r;
    r.op = c.name;
    for (int p = 0; p < points; ++p) {
      std::vector<GradCheckInput> inputs;
      for (const auto& s : c.shapes) inputs.push_back({s, random_values(rng, numel(s), c.input_scale)});
      auto rep = grad_check(c.fn, inputs, options);
      r.max_rel_error = std::max(r.max_rel_error, rep.max_rel_error);
      r.passed = r.passed && rep.passed;
      ++r.points;
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace rpm::nk
