#pragma once

#include <filesystem>

#include "relpose/hilbert.hpp"
#include "relpose/pipeline.hpp"

namespace relpose {

struct Checkpoint {
  Model model;
  HilbertMap map;
};

// Directory of TNSR files, one per parameter, plus manifest.json holding
// the stage count, widths, kernel size, normalization, curve dims and the
// embedded curve dump. Loading throws DataError on missing files and
// FormatError on inconsistent content.
void save_checkpoint(const std::filesystem::path& dir, const Model& model, const HilbertMap& map);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace relpose
