#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "relpose/autodiff.hpp"
#include "relpose/tensor.hpp"

namespace relpose {

// |analytic - numeric| / max(1, |numeric|)
double gradient_relative_error(double analytic, double numeric);

// Central difference (f(x + h) - f(x - h)) / 2h of a scalar function of one
// tensor entry; the entry is restored afterwards.
double central_difference(const std::function<double()>& f, double& entry, double step = 1e-5);

struct GradCheckOptions {
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
  std::vector<std::size_t> widths{4, 8, 16};
  std::size_t probes = 200;
  double step = 1e-5;
  std::uint64_t seed = 7;
};

struct GradProbe {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradProbe> probes;
  double max_relative_error = 0.0;
  double loss = 0.0;
  double seconds = 0.0;
};

// Builds a synthetic pair on the requested grid, a randomly initialized
// matching layer and keypoint head, and compares the tape gradient of the
// total training loss with central differences at randomly probed
// parameter entries.
GradCheckReport run_grad_check(const GradCheckOptions& options = {});

}  // namespace relpose
