#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "relpose/autodiff.hpp"

// Differentiable operations over Tape variables. Every op records itself on
// the tape of its first argument; all arguments must share that tape.
namespace relpose::ops {

enum class Elementwise { kAdd, kMul, kSub, kSigmoid, kExp, kPrelu };
enum class Reduce { kSum, kMean, kWeightedSum };

struct ChannelRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Dispatcher over the elementwise kinds. Binary kinds require `b` with the
// same shape as `a`; for kPrelu `b` holds one slope per last-axis channel.
Var elementwise(Elementwise kind, const Var& a, const std::optional<Var>& b = {});

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var sigmoid(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var prelu(const Var& x, const Var& slopes);

// y = scale * x + shift with constant coefficients.
Var affine(const Var& x, double scale, double shift = 0.0);
// y = s * x for a one-element variable s.
Var scale_by(const Var& x, const Var& s);
// Adds the one-element variable s to channel `channel` of the last axis.
Var add_channel_bias(const Var& x, std::size_t channel, const Var& s);

// Softmax along `axis` with max subtraction. With a range, only those
// channels are normalized and the result keeps only that slice of the axis.
Var softmax_axis(const Var& x, std::size_t axis,
                 const std::optional<ChannelRange>& range = {});

// Reduces over `axes` (dropped from the result). For kWeightedSum the
// weights have the shape of the reduced axes, in order, and broadcast over
// the kept ones.
Var reduce(Reduce kind, const Var& x, const std::vector<std::size_t>& axes,
           const std::optional<Var>& weights = {});
Var sum(const Var& x);

// 3D convolution on x[d,h,w,c_in] with kernels[k,k,k,c_in,c_out], k odd,
// "same" padding of (k-1)/2. Output spatial dims are ceil(input / stride).
Var conv3d(const Var& x, const Var& kernels, std::size_t stride);

// Adjoint of conv3d with the same padding convention: scatters each input
// voxel through the kernel at stride-aligned positions. `out_dims` must
// satisfy ceil(out_dims / stride) == input dims.
Var transposed_conv3d(const Var& x, const Var& kernels,
                      const std::array<std::size_t, 3>& out_dims,
                      std::size_t stride = 2);
Var transposed_conv3d(const Var& x, const Var& kernels, std::size_t stride = 2);

Var reshape(const Var& x, Shape shape);
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
// Zero-pads at the end of every axis up to `shape`.
Var pad_to(const Var& x, const Shape& shape);
// Keeps the leading `shape` block of every axis.
Var crop(const Var& x, const Shape& shape);
// Stacks equally shaped variables along a new trailing axis.
Var stack_last(const std::vector<Var>& parts);
// Gathers rows of x[n, ...] along axis 0: out[k] = x[index[k]].
Var gather_rows(const Var& x, const std::vector<std::size_t>& index);

}  // namespace relpose::ops
