#pragma once

#include "iidm/numerics/autodiff.hpp"

#include <optional>
#include <type_traits>
#include <vector>

// Differentiable primitives. Every function records one node on the tape of
// its first argument; output shapes are pure functions of input shapes.
namespace iidm {

/// floor((size + 2 * padding - kernel) / stride) + 1
int conv_output_size(int size, int kernel, int stride, int padding);

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);
/// Elementwise product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor);

/// x: [C, ...], bias: [C] broadcast over the trailing axes.
template <typename Scalar>
Var<Scalar> add_channel_bias(const Var<Scalar>& x, const Var<Scalar>& bias);

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x);

/// Cross-correlation. input [C_in, H, W], kernel [C_out, C_in, k, k], bias [C_out].
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& kernel, const std::optional<std::type_identity_t<Var<Scalar>>>& bias,
                   int stride, int padding);

/// Matrix product of rank-2 operands, optionally transposed.
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_a = false, bool transpose_b = false);

/// Row-wise softmax of a rank-2 operand.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a);

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a);
template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a);
/// mean(|a|); subgradient 0 at 0.
template <typename Scalar>
Var<Scalar> abs_mean(const Var<Scalar>& a);
/// sum(a^2), the squared Frobenius norm.
template <typename Scalar>
Var<Scalar> sum_squares(const Var<Scalar>& a);

/// Concatenation along axis 0; trailing axes must agree.
template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts);
/// Rows [begin, begin + count) of axis 0.
template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& x, int begin, int count);

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape);

/// 2x2 stride-2 pooling over [C, H, W] with even H, W.
template <typename Scalar>
Var<Scalar> avg_pool2(const Var<Scalar>& x);
template <typename Scalar>
Var<Scalar> max_pool2(const Var<Scalar>& x);

/// Nearest-neighbour 2x upsampling over [C, H, W].
template <typename Scalar>
Var<Scalar> upsample_nearest2(const Var<Scalar>& x);

/// Subtracts each row's mean over the trailing axes ([C, ...]).
template <typename Scalar>
Var<Scalar> center_rows(const Var<Scalar>& x);

}  // namespace iidm
