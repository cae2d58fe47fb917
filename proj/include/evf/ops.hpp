// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ops.hpp
 * @brief  Differentiable primitives over evf::Tensor.
 *
 * Binary elementwise ops broadcast the second operand into the first by the
 * trailing-dimension rule: shapes are right-aligned and each extent of @p b
 * must equal the matching extent of @p a or be 1. The result always has the
 * shape of @p a.
 */
#pragma once

#include "evf/tensor.hpp"

#include <cstddef>
#include <vector>

namespace evf {

Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor div(const Tensor &a, const Tensor &b);

Tensor add_scalar(const Tensor &x, double c);
Tensor mul_scalar(const Tensor &x, double c);
Tensor neg(const Tensor &x);
/// c - x
Tensor rsub_scalar(double c, const Tensor &x);

inline Tensor operator+(const Tensor &a, const Tensor &b) { return add(a, b); }
inline Tensor operator-(const Tensor &a, const Tensor &b) { return sub(a, b); }
inline Tensor operator*(const Tensor &a, const Tensor &b) { return mul(a, b); }
inline Tensor operator/(const Tensor &a, const Tensor &b) { return div(a, b); }
inline Tensor operator+(const Tensor &x, double c) { return add_scalar(x, c); }
inline Tensor operator-(const Tensor &x, double c) { return add_scalar(x, -c); }
inline Tensor operator*(const Tensor &x, double c) { return mul_scalar(x, c); }
inline Tensor operator*(double c, const Tensor &x) { return mul_scalar(x, c); }
inline Tensor operator-(double c, const Tensor &x) { return rsub_scalar(c, x); }
inline Tensor operator-(const Tensor &x) { return neg(x); }

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor &a, const Tensor &b);
/// 2-D transpose.
Tensor transpose(const Tensor &x);
Tensor reshape(const Tensor &x, Shape shape);
/// Elements [begin, end) along @p axis.
Tensor slice(const Tensor &x, std::size_t axis, std::size_t begin,
             std::size_t end);
/// Concatenation along @p axis; all other extents must agree.
Tensor concat(const std::vector<Tensor> &parts, std::size_t axis);
/// out[i] = table[indices[i]] for a 1-D table, reshaped to @p shape.
Tensor gather(const Tensor &table, const std::vector<std::size_t> &indices,
              Shape shape);

/**
 * Cross-correlation of x [C_in, T] with w [C_out, C_in, K].
 * Output length is floor((T + 2*padding - K) / stride) + 1.
 */
Tensor conv1d(const Tensor &x, const Tensor &w, std::size_t stride,
              std::size_t padding);

Tensor softmax(const Tensor &x, std::size_t axis);
Tensor log_softmax(const Tensor &x, std::size_t axis);

Tensor sum(const Tensor &x);
Tensor mean(const Tensor &x);
Tensor sum(const Tensor &x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor &x, std::size_t axis, bool keepdim = false);
/// Population variance (divides by the axis extent).
Tensor var(const Tensor &x, std::size_t axis, bool keepdim = false);

Tensor exp(const Tensor &x);
Tensor log(const Tensor &x);
Tensor sqrt(const Tensor &x);
Tensor relu(const Tensor &x);
/// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor &x);
Tensor sigmoid(const Tensor &x);
Tensor abs(const Tensor &x);
Tensor square(const Tensor &x);

/// Unit l2 norm along @p axis; a zero vector is an error.
Tensor l2_normalize(const Tensor &x, std::size_t axis);

} // namespace evf
