#include "relpose/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "relpose/errors.hpp"

namespace relpose::ops {
namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " +
                     shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

void require_scalar(const Var& s, const char* op) {
  if (s.value().size() != 1) {
    throw ShapeError(std::string(op) + ": expected a one-element variable");
  }
}

// Splits a shape around `axis` into (outer, axis length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename Fwd, typename Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return x.tape().record(std::move(out), {x}, [deriv](BackwardContext& c) {
    Tensor* gx = c.in_grads[0];
    if (!gx) return;
    const Tensor& xv = *c.in_values[0];
    for (std::size_t i = 0; i < xv.size(); ++i) {
      (*gx)[i] += c.out_grad[i] * deriv(xv[i], c.out_value[i]);
    }
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Var elementwise(Elementwise kind, const Var& a, const std::optional<Var>& b) {
  const bool binary = kind == Elementwise::kAdd || kind == Elementwise::kMul ||
                      kind == Elementwise::kSub || kind == Elementwise::kPrelu;
  if (binary && !b) throw ShapeError("binary elementwise op without operand");
  switch (kind) {
    case Elementwise::kAdd: return add(a, *b);
    case Elementwise::kMul: return mul(a, *b);
    case Elementwise::kSub: return sub(a, *b);
    case Elementwise::kSigmoid: return sigmoid(a);
    case Elementwise::kExp: return exp(a);
    case Elementwise::kPrelu: return prelu(a, *b);
  }
  throw ContractError("unknown elementwise kind");
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& c) {
    for (Tensor* g : c.in_grads) {
      if (!g) continue;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& c) {
    if (Tensor* g = c.in_grads[0]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[i];
    }
    if (Tensor* g = c.in_grads[1]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= c.out_grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& c) {
    const Tensor& av = *c.in_values[0];
    const Tensor& bv = *c.in_values[1];
    if (Tensor* g = c.in_grads[0]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[i] * bv[i];
    }
    if (Tensor* g = c.in_grads[1]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[i] * av[i];
    }
  });
}

Var sigmoid(const Var& x) {
  return unary(x, stable_sigmoid,
               [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); },
               [](double, double y) { return y; });
}

Var log(const Var& x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw RangeError("log of a non-positive value");
  }
  return unary(x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Var prelu(const Var& x, const Var& slopes) {
  const Tensor& xv = x.value();
  if (xv.rank() == 0 || slopes.value().rank() != 1 ||
      slopes.value().size() != xv.shape().back()) {
    throw ShapeError("prelu: need one slope per last-axis channel");
  }
  const std::size_t channels = slopes.value().size();
  Tensor out(xv.shape());
  const Tensor& a = slopes.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    out[i] = v > 0.0 ? v : a[i % channels] * v;
  }
  return x.tape().record(std::move(out), {x, slopes}, [channels](BackwardContext& c) {
    const Tensor& xv = *c.in_values[0];
    const Tensor& a = *c.in_values[1];
    Tensor* gx = c.in_grads[0];
    Tensor* ga = c.in_grads[1];
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double g = c.out_grad[i];
      const double v = xv[i];
      if (v > 0.0) {
        if (gx) (*gx)[i] += g;
      } else {
        if (gx) (*gx)[i] += g * a[i % channels];
        if (ga) (*ga)[i % channels] += g * v;
      }
    }
  });
}

Var affine(const Var& x, double scale, double shift) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = scale * xv[i] + shift;
  return x.tape().record(std::move(out), {x}, [scale](BackwardContext& c) {
    if (Tensor* g = c.in_grads[0]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += scale * c.out_grad[i];
    }
  });
}

Var scale_by(const Var& x, const Var& s) {
  require_scalar(s, "scale_by");
  const Tensor& xv = x.value();
  const double sv = s.value()[0];
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = sv * xv[i];
  return x.tape().record(std::move(out), {x, s}, [](BackwardContext& c) {
    const Tensor& xv = *c.in_values[0];
    const double sv = (*c.in_values[1])[0];
    if (Tensor* g = c.in_grads[0]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += sv * c.out_grad[i];
    }
    if (Tensor* g = c.in_grads[1]) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i] * c.out_grad[i];
      (*g)[0] += acc;
    }
  });
}

Var add_channel_bias(const Var& x, std::size_t channel, const Var& s) {
  require_scalar(s, "add_channel_bias");
  const Tensor& xv = x.value();
  if (xv.rank() == 0 || channel >= xv.shape().back()) {
    throw ShapeError("add_channel_bias: channel out of range");
  }
  const std::size_t channels = xv.shape().back();
  Tensor out = xv;
  const double sv = s.value()[0];
  for (std::size_t i = channel; i < out.size(); i += channels) out[i] += sv;
  return x.tape().record(std::move(out), {x, s}, [channel, channels](BackwardContext& c) {
    if (Tensor* g = c.in_grads[0]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[i];
    }
    if (Tensor* g = c.in_grads[1]) {
      double acc = 0.0;
      for (std::size_t i = channel; i < c.out_grad.size(); i += channels) {
        acc += c.out_grad[i];
      }
      (*g)[0] += acc;
    }
  });
}

Var softmax_axis(const Var& x, std::size_t axis,
                 const std::optional<ChannelRange>& range) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank()) throw ShapeError("softmax_axis: axis out of range");
  const AxisSplit s = split_axis(xv.shape(), axis);
  const std::size_t begin = range ? range->begin : 0;
  const std::size_t end = range ? range->end : s.len;
  if (begin >= end || end > s.len) {
    throw RangeError("softmax_axis: empty or invalid channel range");
  }
  const std::size_t n = end - begin;
  Shape out_shape = xv.shape();
  out_shape[axis] = n;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      auto src = [&](std::size_t k) {
        return xv[(o * s.len + begin + k) * s.inner + in];
      };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, src(k));
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) total += std::exp(src(k) - mx);
      for (std::size_t k = 0; k < n; ++k) {
        out[(o * n + k) * s.inner + in] = std::exp(src(k) - mx) / total;
      }
    }
  }
  return x.tape().record(std::move(out), {x}, [s, begin, n](BackwardContext& c) {
    Tensor* gx = c.in_grads[0];
    if (!gx) return;
    const Tensor& y = c.out_value;
    const Tensor& gy = c.out_grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t idx = (o * n + k) * s.inner + in;
          dot += gy[idx] * y[idx];
        }
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t idx = (o * n + k) * s.inner + in;
          (*gx)[(o * s.len + begin + k) * s.inner + in] += y[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

Var reduce(Reduce kind, const Var& x, const std::vector<std::size_t>& axes,
           const std::optional<Var>& weights) {
  const Tensor& xv = x.value();
  const std::size_t rank = xv.rank();
  std::vector<bool> reduced(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || reduced[a]) throw ShapeError("reduce: invalid axis");
    reduced[a] = true;
  }
  Shape out_shape, red_shape;
  for (std::size_t a = 0; a < rank; ++a) {
    (reduced[a] ? red_shape : out_shape).push_back(xv.shape()[a]);
  }
  const std::size_t red_count = shape_numel(red_shape);
  if (kind == Reduce::kWeightedSum) {
    if (!weights) throw ShapeError("reduce: weighted-sum needs weights");
    if (weights->value().size() != red_count) {
      throw ShapeError("reduce: weights " +
                       shape_to_string(weights->value().shape()) +
                       " do not match reduced axes " + shape_to_string(red_shape));
    }
  }
  // Flat index maps from every input element to its output and weight slot.
  std::vector<std::size_t> out_index(xv.size()), red_index(xv.size());
  {
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < xv.size(); ++flat) {
      std::size_t o = 0, r = 0;
      for (std::size_t a = 0; a < rank; ++a) {
        if (reduced[a]) {
          r = r * xv.shape()[a] + idx[a];
        } else {
          o = o * xv.shape()[a] + idx[a];
        }
      }
      out_index[flat] = o;
      red_index[flat] = r;
      for (std::size_t a = rank; a-- > 0;) {
        if (++idx[a] < xv.shape()[a]) break;
        idx[a] = 0;
      }
    }
  }
  Tensor out(out_shape, 0.0);
  const double mean_scale =
      kind == Reduce::kMean ? 1.0 / static_cast<double>(red_count) : 1.0;
  for (std::size_t flat = 0; flat < xv.size(); ++flat) {
    double v = xv[flat];
    if (kind == Reduce::kWeightedSum) v *= weights->value()[red_index[flat]];
    out[out_index[flat]] += v * mean_scale;
  }
  std::vector<Var> parents{x};
  if (kind == Reduce::kWeightedSum) parents.push_back(*weights);
  return x.tape().record(
      std::move(out), parents,
      [kind, mean_scale, out_index = std::move(out_index),
       red_index = std::move(red_index)](BackwardContext& c) {
        const Tensor& xv = *c.in_values[0];
        Tensor* gx = c.in_grads[0];
        if (kind != Reduce::kWeightedSum) {
          if (!gx) return;
          for (std::size_t f = 0; f < xv.size(); ++f) {
            (*gx)[f] += c.out_grad[out_index[f]] * mean_scale;
          }
          return;
        }
        const Tensor& w = *c.in_values[1];
        Tensor* gw = c.in_grads[1];
        for (std::size_t f = 0; f < xv.size(); ++f) {
          const double g = c.out_grad[out_index[f]];
          if (gx) (*gx)[f] += g * w[red_index[f]];
          if (gw) (*gw)[red_index[f]] += g * xv[f];
        }
      });
}

Var sum(const Var& x) {
  std::vector<std::size_t> axes(x.value().rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce(Reduce::kSum, x, axes);
}

namespace {

struct ConvGeometry {
  std::array<std::size_t, 3> in{};   // input spatial dims (fine grid)
  std::array<std::size_t, 3> out{};  // output spatial dims (coarse grid)
  std::size_t k = 0;
  std::size_t ci = 0;
  std::size_t co = 0;
  std::size_t stride = 1;
  std::ptrdiff_t pad = 0;
};

// Visits every (fine voxel, coarse voxel, tap) triple of a strided "same"
// convolution: fine = coarse * stride - pad + tap.
template <typename Visit>
void for_each_tap(const ConvGeometry& g, Visit visit) {
  const std::size_t k = g.k;
  for (std::size_t od = 0; od < g.out[0]; ++od)
    for (std::size_t td = 0; td < k; ++td) {
      const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * g.stride) - g.pad +
                                static_cast<std::ptrdiff_t>(td);
      if (id < 0 || id >= static_cast<std::ptrdiff_t>(g.in[0])) continue;
      for (std::size_t oh = 0; oh < g.out[1]; ++oh)
        for (std::size_t th = 0; th < k; ++th) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride) -
                                    g.pad + static_cast<std::ptrdiff_t>(th);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in[1])) continue;
          for (std::size_t ow = 0; ow < g.out[2]; ++ow)
            for (std::size_t tw = 0; tw < k; ++tw) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride) -
                                        g.pad + static_cast<std::ptrdiff_t>(tw);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in[2])) continue;
              const std::size_t fine =
                  (static_cast<std::size_t>(id) * g.in[1] + static_cast<std::size_t>(ih)) *
                      g.in[2] +
                  static_cast<std::size_t>(iw);
              const std::size_t coarse = (od * g.out[1] + oh) * g.out[2] + ow;
              const std::size_t tap = (td * k + th) * k + tw;
              visit(fine, coarse, tap);
            }
        }
    }
}

void check_kernel(const Tensor& kv, std::size_t channels_in, const char* op) {
  if (kv.rank() != 5 || kv.dim(0) != kv.dim(1) || kv.dim(1) != kv.dim(2)) {
    throw ShapeError(std::string(op) + ": kernels must be [k,k,k,c_in,c_out]");
  }
  if (kv.dim(0) % 2 == 0) {
    throw ShapeError(std::string(op) + ": kernel size must be odd");
  }
  if (kv.dim(3) != channels_in) {
    throw ShapeError(std::string(op) + ": channel mismatch, input has " +
                     std::to_string(channels_in) + " channels, kernels expect " +
                     std::to_string(kv.dim(3)));
  }
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

Var conv3d(const Var& x, const Var& kernels, std::size_t stride) {
  const Tensor& xv = x.value();
  const Tensor& kv = kernels.value();
  if (xv.rank() != 4) throw ShapeError("conv3d: input must be [d,h,w,c]");
  if (stride != 1 && stride != 2) throw ShapeError("conv3d: stride must be 1 or 2");
  check_kernel(kv, xv.dim(3), "conv3d");
  ConvGeometry g;
  g.in = {xv.dim(0), xv.dim(1), xv.dim(2)};
  g.out = {ceil_div(g.in[0], stride), ceil_div(g.in[1], stride),
           ceil_div(g.in[2], stride)};
  g.k = kv.dim(0);
  g.ci = kv.dim(3);
  g.co = kv.dim(4);
  g.stride = stride;
  g.pad = static_cast<std::ptrdiff_t>((g.k - 1) / 2);

  Tensor out(Shape{g.out[0], g.out[1], g.out[2], g.co}, 0.0);
  const double* xp = xv.data().data();
  const double* kp = kv.data().data();
  double* op = out.data().data();
  const std::size_t ci = g.ci, co = g.co;
  for_each_tap(g, [&](std::size_t fine, std::size_t coarse, std::size_t tap) {
    const double* xin = xp + fine * ci;
    const double* ktap = kp + tap * ci * co;
    double* o = op + coarse * co;
    for (std::size_t c = 0; c < ci; ++c) {
      const double xval = xin[c];
      if (xval == 0.0) continue;
      const double* krow = ktap + c * co;
      for (std::size_t d = 0; d < co; ++d) o[d] += xval * krow[d];
    }
  });
  return x.tape().record(std::move(out), {x, kernels}, [g](BackwardContext& c) {
    const double* xp = c.in_values[0]->data().data();
    const double* kp = c.in_values[1]->data().data();
    const double* gp = c.out_grad.data().data();
    double* gx = c.in_grads[0] ? c.in_grads[0]->data().data() : nullptr;
    double* gk = c.in_grads[1] ? c.in_grads[1]->data().data() : nullptr;
    const std::size_t ci = g.ci, co = g.co;
    for_each_tap(g, [&](std::size_t fine, std::size_t coarse, std::size_t tap) {
      const double* gout = gp + coarse * co;
      const double* ktap = kp + tap * ci * co;
      for (std::size_t a = 0; a < ci; ++a) {
        const double* krow = ktap + a * co;
        if (gx) {
          double acc = 0.0;
          for (std::size_t d = 0; d < co; ++d) acc += gout[d] * krow[d];
          gx[fine * ci + a] += acc;
        }
        if (gk) {
          const double xval = xp[fine * ci + a];
          if (xval == 0.0) continue;
          double* gkrow = gk + (tap * ci + a) * co;
          for (std::size_t d = 0; d < co; ++d) gkrow[d] += xval * gout[d];
        }
      }
    });
  });
}

Var transposed_conv3d(const Var& x, const Var& kernels,
                      const std::array<std::size_t, 3>& out_dims,
                      std::size_t stride) {
  const Tensor& xv = x.value();
  const Tensor& kv = kernels.value();
  if (xv.rank() != 4) throw ShapeError("transposed_conv3d: input must be [d,h,w,c]");
  if (stride != 1 && stride != 2) {
    throw ShapeError("transposed_conv3d: stride must be 1 or 2");
  }
  check_kernel(kv, xv.dim(3), "transposed_conv3d");
  for (std::size_t a = 0; a < 3; ++a) {
    if (ceil_div(out_dims[a], stride) != xv.dim(a)) {
      throw ShapeError("transposed_conv3d: target dim " +
                       std::to_string(out_dims[a]) + " incompatible with input dim " +
                       std::to_string(xv.dim(a)));
    }
  }
  // Same geometry as the forward conv it is the adjoint of: the "fine"
  // grid is the output here.
  ConvGeometry g;
  g.in = out_dims;
  g.out = {xv.dim(0), xv.dim(1), xv.dim(2)};
  g.k = kv.dim(0);
  g.ci = kv.dim(3);
  g.co = kv.dim(4);
  g.stride = stride;
  g.pad = static_cast<std::ptrdiff_t>((g.k - 1) / 2);

  Tensor out(Shape{out_dims[0], out_dims[1], out_dims[2], g.co}, 0.0);
  const double* xp = xv.data().data();
  const double* kp = kv.data().data();
  double* op = out.data().data();
  const std::size_t ci = g.ci, co = g.co;
  for_each_tap(g, [&](std::size_t fine, std::size_t coarse, std::size_t tap) {
    const double* xin = xp + coarse * ci;
    const double* ktap = kp + tap * ci * co;
    double* o = op + fine * co;
    for (std::size_t a = 0; a < ci; ++a) {
      const double xval = xin[a];
      if (xval == 0.0) continue;
      const double* krow = ktap + a * co;
      for (std::size_t d = 0; d < co; ++d) o[d] += xval * krow[d];
    }
  });
  return x.tape().record(std::move(out), {x, kernels}, [g](BackwardContext& c) {
    const double* xp = c.in_values[0]->data().data();
    const double* kp = c.in_values[1]->data().data();
    const double* gp = c.out_grad.data().data();
    double* gx = c.in_grads[0] ? c.in_grads[0]->data().data() : nullptr;
    double* gk = c.in_grads[1] ? c.in_grads[1]->data().data() : nullptr;
    const std::size_t ci = g.ci, co = g.co;
    for_each_tap(g, [&](std::size_t fine, std::size_t coarse, std::size_t tap) {
      const double* gout = gp + fine * co;
      const double* ktap = kp + tap * ci * co;
      for (std::size_t a = 0; a < ci; ++a) {
        const double* krow = ktap + a * co;
        if (gx) {
          double acc = 0.0;
          for (std::size_t d = 0; d < co; ++d) acc += gout[d] * krow[d];
          gx[coarse * ci + a] += acc;
        }
        if (gk) {
          const double xval = xp[coarse * ci + a];
          if (xval == 0.0) continue;
          double* gkrow = gk + (tap * ci + a) * co;
          for (std::size_t d = 0; d < co; ++d) gkrow[d] += xval * gout[d];
        }
      }
    });
  });
}

Var transposed_conv3d(const Var& x, const Var& kernels, std::size_t stride) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("transposed_conv3d: input must be [d,h,w,c]");
  return transposed_conv3d(
      x, kernels, {xv.dim(0) * stride, xv.dim(1) * stride, xv.dim(2) * stride},
      stride);
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [](BackwardContext& c) {
    if (Tensor* g = c.in_grads[0]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c.out_grad[i];
    }
  });
}

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank()) throw ShapeError("slice: axis out of range");
  const AxisSplit s = split_axis(xv.shape(), axis);
  if (begin >= end || end > s.len) throw RangeError("slice: invalid range");
  const std::size_t n = end - begin;
  Shape out_shape = xv.shape();
  out_shape[axis] = n;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[(o * n + k) * s.inner + in] = xv[(o * s.len + begin + k) * s.inner + in];
  return x.tape().record(std::move(out), {x}, [s, begin, n](BackwardContext& c) {
    Tensor* g = c.in_grads[0];
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t in = 0; in < s.inner; ++in)
          (*g)[(o * s.len + begin + k) * s.inner + in] +=
              c.out_grad[(o * n + k) * s.inner + in];
  });
}

namespace {

// Maps every element of the smaller of two shapes (same rank, each dim no
// larger) to its flat offset in the larger one, aligned at the origin.
std::vector<std::size_t> block_offsets(const Shape& small, const Shape& large) {
  std::vector<std::size_t> offsets(shape_numel(small));
  std::vector<std::size_t> idx(small.size(), 0);
  for (std::size_t flat = 0; flat < offsets.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t a = 0; a < small.size(); ++a) o = o * large[a] + idx[a];
    offsets[flat] = o;
    for (std::size_t a = small.size(); a-- > 0;) {
      if (++idx[a] < small[a]) break;
      idx[a] = 0;
    }
  }
  return offsets;
}

}  // namespace

Var pad_to(const Var& x, const Shape& shape) {
  const Tensor& xv = x.value();
  if (shape.size() != xv.rank()) throw ShapeError("pad_to: rank mismatch");
  for (std::size_t a = 0; a < shape.size(); ++a) {
    if (shape[a] < xv.dim(a)) throw ShapeError("pad_to: target smaller than input");
  }
  auto offsets = block_offsets(xv.shape(), shape);
  Tensor out(shape, 0.0);
  for (std::size_t i = 0; i < offsets.size(); ++i) out[offsets[i]] = xv[i];
  return x.tape().record(std::move(out), {x}, [offsets = std::move(offsets)](BackwardContext& c) {
    Tensor* g = c.in_grads[0];
    if (!g) return;
    for (std::size_t i = 0; i < offsets.size(); ++i) (*g)[i] += c.out_grad[offsets[i]];
  });
}

Var crop(const Var& x, const Shape& shape) {
  const Tensor& xv = x.value();
  if (shape.size() != xv.rank()) throw ShapeError("crop: rank mismatch");
  for (std::size_t a = 0; a < shape.size(); ++a) {
    if (shape[a] > xv.dim(a)) throw ShapeError("crop: target larger than input");
  }
  auto offsets = block_offsets(shape, xv.shape());
  Tensor out(shape);
  for (std::size_t i = 0; i < offsets.size(); ++i) out[i] = xv[offsets[i]];
  return x.tape().record(std::move(out), {x}, [offsets = std::move(offsets)](BackwardContext& c) {
    Tensor* g = c.in_grads[0];
    if (!g) return;
    for (std::size_t i = 0; i < offsets.size(); ++i) (*g)[offsets[i]] += c.out_grad[i];
  });
}

Var stack_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("stack_last: nothing to stack");
  const Shape& base = parts.front().shape();
  for (const Var& p : parts) require_same_shape(parts.front(), p, "stack_last");
  const std::size_t n = parts.size();
  const std::size_t count = shape_numel(base);
  Shape out_shape = base;
  out_shape.push_back(n);
  Tensor out(out_shape);
  for (std::size_t k = 0; k < n; ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < count; ++i) out[i * n + k] = v[i];
  }
  return parts.front().tape().record(std::move(out), parts, [n, count](BackwardContext& c) {
    for (std::size_t k = 0; k < n; ++k) {
      Tensor* g = c.in_grads[k];
      if (!g) continue;
      for (std::size_t i = 0; i < count; ++i) (*g)[i] += c.out_grad[i * n + k];
    }
  });
}

Var gather_rows(const Var& x, const std::vector<std::size_t>& index) {
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("gather_rows: need rank >= 1");
  const std::size_t rows = xv.dim(0);
  const std::size_t row_size = rows ? xv.size() / rows : 0;
  Shape out_shape = xv.shape();
  out_shape[0] = index.size();
  Tensor out(out_shape);
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= rows) throw ShapeError("gather_rows: index out of range");
    std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(index[k] * row_size),
                row_size, out.data().begin() + static_cast<std::ptrdiff_t>(k * row_size));
  }
  return x.tape().record(std::move(out), {x}, [index, row_size](BackwardContext& c) {
    Tensor* g = c.in_grads[0];
    if (!g) return;
    for (std::size_t k = 0; k < index.size(); ++k)
      for (std::size_t e = 0; e < row_size; ++e)
        (*g)[index[k] * row_size + e] += c.out_grad[k * row_size + e];
  });
}

}  // namespace relpose::ops
