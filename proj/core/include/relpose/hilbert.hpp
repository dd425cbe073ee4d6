#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "relpose/autodiff.hpp"
#include "relpose/tensor.hpp"

namespace relpose {

struct Cell {
  std::size_t i = 0;
  std::size_t j = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Space-filling traversal of a rows x cols cell grid.
///
/// `index(i, j)` ravels a cell into k in [0, rows*cols) and `cell(k)` is its
/// inverse. Consecutive indices always land on 4-adjacent cells.
class HilbertMap {
 public:
  // Rebuilds a map from an explicit traversal order, e.g. a checkpointed
  // curve dump. Throws DimensionError unless the order is a unit-step
  // bijection of the grid.
  static HilbertMap from_order(std::size_t rows, std::size_t cols,
                               std::vector<Cell> order);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return inverse_.size(); }

  std::size_t index(std::size_t i, std::size_t j) const {
    return forward_[i * cols_ + j];
  }
  const Cell& cell(std::size_t k) const { return inverse_[k]; }

  // forward()[i * cols + j] == index(i, j)
  std::span<const std::size_t> forward() const { return forward_; }
  std::span<const Cell> inverse() const { return inverse_; }

  friend bool operator==(const HilbertMap&, const HilbertMap&) = default;

 private:
  HilbertMap() = default;

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> forward_;
  std::vector<Cell> inverse_;
};

// Generalized (pseudo-)Hilbert curve for an arbitrary rectangle: recursive
// halving of the longer side with parity-corrected split points so every
// step is a unit step. Throws DimensionError on a zero dimension.
HilbertMap build_pseudo_hilbert(std::size_t rows, std::size_t cols);

// Mean |k(a) - k(b)| over all 4-neighbour cell pairs (a, b). Zero for a
// single cell.
double locality_score(const HilbertMap& map);
// Same score for line-by-line raveling k = i * cols + j.
double row_major_locality_score(std::size_t rows, std::size_t cols);

// c4[h,w,h,w] -> out[h,w,h*w+1] with out[i,j,index(i',j')] = c4[i,j,i',j']
// and a zero-filled trailing slot at channel h*w.
Tensor ravel_volume(const Tensor& c4, const HilbertMap& map);
Var ravel_volume(const Var& c4, const HilbertMap& map);
// Inverse of ravel_volume; the trailing slot is dropped.
Tensor unravel_volume(const Tensor& c3, const HilbertMap& map);

// CSV dump with header "k,i,j", one row per curve index.
void write_curve_csv(std::ostream& out, const HilbertMap& map);
HilbertMap read_curve_csv(std::istream& in);

}  // namespace relpose
