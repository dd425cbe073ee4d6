#include "relpose/feature_grid.hpp"

#include <cmath>
#include <fstream>

#include "relpose/errors.hpp"
#include "relpose/ops.hpp"
#include "relpose/tensor_io.hpp"

namespace relpose {
namespace {

void check_grid_shapes(const Shape& logits, const Shape& desc) {
  if (logits.size() != 3 || logits[2] != kKeypointChannels) {
    throw ShapeError("keypoint logits must be [h,w,65], got " + shape_to_string(logits));
  }
  if (desc.size() != 3 || desc[0] != logits[0] || desc[1] != logits[1] || desc[2] == 0) {
    throw ShapeError("descriptors " + shape_to_string(desc) +
                     " do not match keypoint grid " + shape_to_string(logits));
  }
}

}  // namespace

Var l2_normalize_last(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("l2_normalize_last: need rank >= 1");
  const std::size_t dim = xv.shape().back();
  const std::size_t fibers = xv.size() / dim;
  Tensor out(xv.shape());
  std::vector<double> norms(fibers);
  for (std::size_t f = 0; f < fibers; ++f) {
    double sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) sq += xv[f * dim + d] * xv[f * dim + d];
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0)) {
      throw DegenerateDescriptorError("zero-norm descriptor at cell " + std::to_string(f));
    }
    norms[f] = norm;
    for (std::size_t d = 0; d < dim; ++d) out[f * dim + d] = xv[f * dim + d] / norm;
  }
  return x.tape().record(std::move(out), {x}, [dim, norms = std::move(norms)](BackwardContext& c) {
    Tensor* g = c.in_grads[0];
    if (!g) return;
    const Tensor& y = c.out_value;
    for (std::size_t f = 0; f < norms.size(); ++f) {
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += y[f * dim + d] * c.out_grad[f * dim + d];
      for (std::size_t d = 0; d < dim; ++d) {
        const std::size_t i = f * dim + d;
        (*g)[i] += (c.out_grad[i] - y[i] * dot) / norms[f];
      }
    }
  });
}

GridVars normalize_grid(const Var& raw_keypoint_logits, const Var& raw_descriptors) {
  check_grid_shapes(raw_keypoint_logits.shape(), raw_descriptors.shape());
  GridVars g;
  g.logits = raw_keypoint_logits;
  g.keypoints = ops::softmax_axis(raw_keypoint_logits, 2);
  g.descriptors = l2_normalize_last(raw_descriptors);
  return g;
}

FeatureGrid normalize_grid(const Tensor& raw_keypoint_logits,
                           const Tensor& raw_descriptors) {
  check_grid_shapes(raw_keypoint_logits.shape(), raw_descriptors.shape());
  Tape tape;
  const GridVars v = normalize_grid(tape.constant(raw_keypoint_logits),
                                    tape.constant(raw_descriptors));
  FeatureGrid grid;
  grid.image_h = raw_keypoint_logits.dim(0) * kCellSize;
  grid.image_w = raw_keypoint_logits.dim(1) * kCellSize;
  grid.keypoint_logits = raw_keypoint_logits;
  grid.keypoints = v.keypoints.value();
  grid.descriptors_raw = raw_descriptors;
  grid.descriptors = v.descriptors.value();
  return grid;
}

Var keypoint_confidence(const Var& keypoints) {
  const Shape& s = keypoints.shape();
  if (s.size() != 3 || s[2] != kKeypointChannels) {
    throw ShapeError("keypoint map must be [h,w,65]");
  }
  Var dustbin = ops::slice(keypoints, 2, kNoKeypoint, kKeypointChannels);
  return ops::affine(ops::reshape(dustbin, Shape{s[0], s[1]}), -1.0, 1.0);
}

Tensor keypoint_confidence(const FeatureGrid& grid) {
  Tape tape;
  return keypoint_confidence(tape.constant(grid.keypoints)).value();
}

Var softargmax_cell_coords(const Var& keypoint_logits) {
  const Shape& s = keypoint_logits.shape();
  if (s.size() != 3 || s[2] != kKeypointChannels) {
    throw ShapeError("keypoint logits must be [h,w,65]");
  }
  Tape& tape = keypoint_logits.tape();
  Var sk = ops::softmax_axis(keypoint_logits, 2, ops::ChannelRange{0, kSubCellPositions});
  Tensor m_weights(Shape{kSubCellPositions}), n_weights(Shape{kSubCellPositions});
  for (std::size_t c = 0; c < kSubCellPositions; ++c) {
    m_weights[c] = static_cast<double>(c / kCellSize);
    n_weights[c] = static_cast<double>(c % kCellSize);
  }
  Var dx = ops::reduce(ops::Reduce::kWeightedSum, sk, {2}, tape.constant(m_weights));
  Var dy = ops::reduce(ops::Reduce::kWeightedSum, sk, {2}, tape.constant(n_weights));
  Tensor corner(Shape{s[0], s[1], 2});
  for (std::size_t i = 0; i < s[0]; ++i) {
    for (std::size_t j = 0; j < s[1]; ++j) {
      corner.at({i, j, 0}) = static_cast<double>(kCellSize * i);
      corner.at({i, j, 1}) = static_cast<double>(kCellSize * j);
    }
  }
  return ops::add(ops::stack_last({dx, dy}), tape.constant(std::move(corner)));
}

Tensor softargmax_cell_coords(const FeatureGrid& grid) {
  Tape tape;
  return softargmax_cell_coords(tape.constant(grid.keypoint_logits)).value();
}

Var apply_keypoint_head(const Var& raw_logits, const Var& scale, const Var& bias) {
  const Tensor& x = raw_logits.value();
  if (x.rank() != 3 || x.dim(2) != kKeypointChannels ||
      scale.value().size() != kKeypointChannels ||
      bias.value().size() != kKeypointChannels) {
    throw ShapeError("keypoint head expects [h,w,65] logits and 65-channel parameters");
  }
  constexpr std::size_t C = kKeypointChannels;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = scale.value()[i % C] * x[i] + bias.value()[i % C];
  }
  return raw_logits.tape().record(std::move(out), {raw_logits, scale, bias}, [](BackwardContext& c) {
    const Tensor& x = *c.in_values[0];
    const Tensor& a = *c.in_values[1];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = c.out_grad[i];
      if (c.in_grads[0]) (*c.in_grads[0])[i] += g * a[i % C];
      if (c.in_grads[1]) (*c.in_grads[1])[i % C] += g * x[i];
      if (c.in_grads[2]) (*c.in_grads[2])[i % C] += g;
    }
  });
}

FeatureGrid apply_keypoint_head(const FeatureGrid& grid, const KeypointHead& head) {
  Tape tape;
  Var logits = apply_keypoint_head(tape.constant(grid.keypoint_logits),
                                   tape.constant(head.scale), tape.constant(head.bias));
  FeatureGrid out = normalize_grid(logits.value(), grid.descriptors_raw);
  out.image_h = grid.image_h;
  out.image_w = grid.image_w;
  return out;
}

void write_feature_grid(std::ostream& out, const FeatureGrid& grid) {
  io::write_magic(out, "FGRD");
  io::write_u32(out, 1);
  io::write_u32(out, static_cast<std::uint32_t>(grid.image_h));
  io::write_u32(out, static_cast<std::uint32_t>(grid.image_w));
  io::write_u32(out, static_cast<std::uint32_t>(grid.cells_h()));
  io::write_u32(out, static_cast<std::uint32_t>(grid.cells_w()));
  write_tensor(out, grid.keypoint_logits);
  write_tensor(out, grid.descriptors_raw);
}

FeatureGrid read_feature_grid(std::istream& in) {
  io::expect_magic(in, "FGRD");
  const std::uint32_t version = io::read_u32(in);
  if (version != 1) throw FormatError("unsupported FGRD version " + std::to_string(version));
  const std::size_t image_h = io::read_u32(in);
  const std::size_t image_w = io::read_u32(in);
  const std::size_t h = io::read_u32(in);
  const std::size_t w = io::read_u32(in);
  if (h == 0 || w == 0 || image_h != h * kCellSize || image_w != w * kCellSize) {
    throw FormatError("FGRD image size " + std::to_string(image_h) + "x" +
                      std::to_string(image_w) + " is not 8x the cell grid " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor logits = read_tensor(in);
  Tensor desc = read_tensor(in);
  if (logits.shape() != Shape{h, w, kKeypointChannels} || desc.rank() != 3 ||
      desc.dim(0) != h || desc.dim(1) != w) {
    throw FormatError("FGRD tensor blocks do not match the declared grid");
  }
  try {
    FeatureGrid grid = normalize_grid(logits, desc);
    grid.image_h = image_h;
    grid.image_w = image_w;
    return grid;
  } catch (const ShapeError& e) {
    throw FormatError(e.what());
  }
}

void save_feature_grid(const std::filesystem::path& path, const FeatureGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_feature_grid(out, grid);
}

FeatureGrid load_feature_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_feature_grid(in);
}

}  // namespace relpose
