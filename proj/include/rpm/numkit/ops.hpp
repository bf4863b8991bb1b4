#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rpm/numkit/tensor.hpp"

namespace rpm::nk {

// Dense kernels, row-major. C (+)= op(A) * op(B).
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);  // a is [k, m]
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);  // b is [n, k]

// All ops fail fast with kShapeMismatch, naming both shapes.

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);      // [m,k] x [k,n]
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);   // [m,k] x [n,k]^T
template <typename T> Var<T> add(Var<T> a, Var<T> b);         // same shape
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias); // [m,n] + [n]
template <typename T> Var<T> mul(Var<T> a, Var<T> b);         // elementwise
template <typename T> Var<T> scale(Var<T> x, T factor);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
template <typename T> Var<T> transpose(Var<T> x);             // [m,n] -> [n,m]
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, int axis);
template <typename T> Var<T> slice(Var<T> x, int axis, int begin, int end);
template <typename T> Var<T> sum(Var<T> x);                   // -> [1]
template <typename T> Var<T> mean(Var<T> x);                  // -> [1]

// x [m,k] * weight [k,n] + bias [n].
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

// x [C,H,W], weight [O,C,K,K], bias [O]; "same" padding, output spatial size
// ceil(s / stride).
template <typename T> Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int stride);
// [C,H,W] -> [H*W, C], positions flattened row-wise.
template <typename T> Var<T> feature_map_to_tokens(Var<T> x);
// z [T,D] + table [T,D]; the learnable positional table.
template <typename T> Var<T> embedding_add(Var<T> z, Var<T> table);

template <typename T> Var<T> softmax(Var<T> x);  // over the last axis
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> gelu(Var<T> x);     // tanh approximation
// Normalizes over the last axis, then gamma * xhat + beta.
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps);
// Inverted dropout; identity when !training.
template <typename T> Var<T> dropout(Var<T> x, T rate, bool training, std::uint64_t seed);

// Mean over rows of -log softmax(logits)[label].
template <typename T> Var<T> cross_entropy(Var<T> logits, std::span<const int> labels);

// A run of dims along the last axis activated together: softmax when
// binary is false, element-wise sigmoid otherwise.
struct ActivationGroup {
  int offset;
  int length;
  bool binary;
};
template <typename T>
Var<T> grouped_activation(Var<T> logits, std::span<const ActivationGroup> groups);

// -sum_j w_j [t_j log p_j + b_j (1 - t_j) log(1 - p_j)], with p clamped to
// [clamp, 1 - clamp] (zero gradient outside). All spans have probs.size().
template <typename T>
Var<T> weighted_log_loss(Var<T> probs, std::span<const T> target, std::span<const T> weight,
                         std::span<const std::uint8_t> binary, T clamp);

}  // namespace rpm::nk
