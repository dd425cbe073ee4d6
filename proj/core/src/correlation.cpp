#include "relpose/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "relpose/errors.hpp"

namespace relpose {

Var correlation_4d(const Var& query_confidence, const Var& query_descriptors,
                   const Var& reference_confidence, const Var& reference_descriptors) {
  const Tensor& kq = query_confidence.value();
  const Tensor& dq = query_descriptors.value();
  const Tensor& kr = reference_confidence.value();
  const Tensor& dr = reference_descriptors.value();
  if (kq.rank() != 2 || dq.rank() != 3 || kq.dim(0) != dq.dim(0) || kq.dim(1) != dq.dim(1)) {
    throw ShapeError("query confidence/descriptor shapes disagree");
  }
  if (kr.shape() != kq.shape() || dr.shape() != dq.shape()) {
    throw ShapeError("query grid " + shape_to_string(dq.shape()) +
                     " and reference grid " + shape_to_string(dr.shape()) + " differ");
  }
  const std::size_t h = kq.dim(0), w = kq.dim(1), n = h * w, dim = dq.dim(2);
  // Descriptor dot products are kept for the backward pass.
  std::vector<double> dots(n * n);
  Tensor out(Shape{h, w, h, w});
  for (std::size_t q = 0; q < n; ++q) {
    const double* a = dq.data().data() + q * dim;
    for (std::size_t r = 0; r < n; ++r) {
      const double* b = dr.data().data() + r * dim;
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += a[d] * b[d];
      dots[q * n + r] = dot;
      out[q * n + r] = kq[q] * kr[r] * dot;
    }
  }
  return query_confidence.tape().record(
      std::move(out),
      {query_confidence, query_descriptors, reference_confidence, reference_descriptors},
      [n, dim, dots = std::move(dots)](BackwardContext& c) {
        const Tensor& kq = *c.in_values[0];
        const Tensor& dq = *c.in_values[1];
        const Tensor& kr = *c.in_values[2];
        const Tensor& dr = *c.in_values[3];
        Tensor* gkq = c.in_grads[0];
        Tensor* gdq = c.in_grads[1];
        Tensor* gkr = c.in_grads[2];
        Tensor* gdr = c.in_grads[3];
        for (std::size_t q = 0; q < n; ++q) {
          for (std::size_t r = 0; r < n; ++r) {
            const double g = c.out_grad[q * n + r];
            if (g == 0.0) continue;
            const double dot = dots[q * n + r];
            if (gkq) (*gkq)[q] += g * kr[r] * dot;
            if (gkr) (*gkr)[r] += g * kq[q] * dot;
            const double s = g * kq[q] * kr[r];
            if (gdq) {
              double* out = gdq->data().data() + q * dim;
              const double* b = dr.data().data() + r * dim;
              for (std::size_t d = 0; d < dim; ++d) out[d] += s * b[d];
            }
            if (gdr) {
              double* out = gdr->data().data() + r * dim;
              const double* a = dq.data().data() + q * dim;
              for (std::size_t d = 0; d < dim; ++d) out[d] += s * a[d];
            }
          }
        }
      });
}

Var correlation_volume(const GridVars& query, const GridVars& reference,
                       const HilbertMap& map) {
  Var c4 = correlation_4d(keypoint_confidence(query.keypoints), query.descriptors,
                          keypoint_confidence(reference.keypoints), reference.descriptors);
  return ravel_volume(c4, map);
}

CorrelationVolume correlation_volume(const FeatureGrid& query, const FeatureGrid& reference,
                                     const HilbertMap& map, std::string query_id,
                                     std::string reference_id) {
  Tape tape;
  GridVars q{tape.constant(query.keypoint_logits), tape.constant(query.keypoints),
             tape.constant(query.descriptors)};
  GridVars r{tape.constant(reference.keypoint_logits), tape.constant(reference.keypoints),
             tape.constant(reference.descriptors)};
  return {correlation_volume(q, r, map).value(), std::move(query_id),
          std::move(reference_id)};
}

std::vector<Match> baseline_argmax_matching(const FeatureGrid& query,
                                            const FeatureGrid& reference, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw RangeError("ratio must lie in (0, 1]");
  if (query.descriptors.shape() != reference.descriptors.shape()) {
    throw ShapeError("baseline matching needs grids of identical shape");
  }
  const Tensor qkp = softargmax_cell_coords(query);
  const Tensor rkp = softargmax_cell_coords(reference);
  const std::size_t h = query.cells_h(), w = query.cells_w(), n = h * w;
  const std::size_t dim = query.descriptor_dim();
  auto distance = [](double dot) { return std::sqrt(std::max(0.0, 2.0 - 2.0 * dot)); };

  std::vector<Match> matches;
  for (std::size_t q = 0; q < n; ++q) {
    const double* a = query.descriptors.data().data() + q * dim;
    double best = -std::numeric_limits<double>::infinity();
    double second = -std::numeric_limits<double>::infinity();
    std::size_t best_r = 0;
    for (std::size_t r = 0; r < n; ++r) {
      const double* b = reference.descriptors.data().data() + r * dim;
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += a[d] * b[d];
      if (dot > best) {
        second = best;
        best = dot;
        best_r = r;
      } else if (dot > second) {
        second = dot;
      }
    }
    const double d1 = distance(best);
    // A lone reference cell has no runner-up; treat it as unambiguous.
    const double d2 = n > 1 ? distance(second) : std::numeric_limits<double>::infinity();
    const double lowe = d2 > 0.0 ? d1 / d2 : 1.0;
    if (lowe > ratio) continue;
    Match m;
    m.query_cell = {q / w, q % w};
    m.query_px = {qkp[q * 2], qkp[q * 2 + 1]};
    m.reference_px = {rkp[best_r * 2], rkp[best_r * 2 + 1]};
    m.weight = 1.0;
    matches.push_back(m);
  }
  return matches;
}

}  // namespace relpose
