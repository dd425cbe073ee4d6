#include "relpose/hilbert.hpp"

#include <algorithm>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "relpose/errors.hpp"

namespace relpose {
namespace {

int sign(long v) { return (v > 0) - (v < 0); }

// Floor division by two (rounds toward negative infinity).
long half_floor(long v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

// Fills the block spanned from (x, y) by the major vector (ax, ay) and the
// minor vector (bx, by). x runs along columns, y along rows.
void generate(long x, long y, long ax, long ay, long bx, long by,
              std::vector<Cell>& out) {
  const long w = std::labs(ax + ay);
  const long h = std::labs(bx + by);
  const long dax = sign(ax), day = sign(ay);
  const long dbx = sign(bx), dby = sign(by);

  if (h == 1) {
    for (long n = 0; n < w; ++n, x += dax, y += day) {
      out.push_back({static_cast<std::size_t>(y), static_cast<std::size_t>(x)});
    }
    return;
  }
  if (w == 1) {
    for (long n = 0; n < h; ++n, x += dbx, y += dby) {
      out.push_back({static_cast<std::size_t>(y), static_cast<std::size_t>(x)});
    }
    return;
  }

  long ax2 = half_floor(ax), ay2 = half_floor(ay);
  long bx2 = half_floor(bx), by2 = half_floor(by);
  const long w2 = std::labs(ax2 + ay2);
  const long h2 = std::labs(bx2 + by2);

  if (2 * w > 3 * h) {
    // Long block: split along the major axis only, keeping halves even.
    if ((w2 % 2) && w > 2) {
      ax2 += dax;
      ay2 += day;
    }
    generate(x, y, ax2, ay2, bx, by, out);
    generate(x + ax2, y + ay2, ax - ax2, ay - ay2, bx, by, out);
    return;
  }
  if ((h2 % 2) && h > 2) {
    bx2 += dbx;
    by2 += dby;
  }
  // Up the minor half, across the full major extent, back down.
  generate(x, y, bx2, by2, ax2, ay2, out);
  generate(x + bx2, y + by2, ax, ay, bx - bx2, by - by2, out);
  generate(x + (ax - dax) + (bx2 - dbx), y + (ay - day) + (by2 - dby), -bx2, -by2,
           -(ax - ax2), -(ay - ay2), out);
}

bool adjacent(const Cell& a, const Cell& b) {
  const std::size_t di = a.i > b.i ? a.i - b.i : b.i - a.i;
  const std::size_t dj = a.j > b.j ? a.j - b.j : b.j - a.j;
  return di + dj == 1;
}

}  // namespace

HilbertMap HilbertMap::from_order(std::size_t rows, std::size_t cols,
                                  std::vector<Cell> order) {
  if (rows == 0 || cols == 0) throw DimensionError("grid dimensions must be positive");
  if (order.size() != rows * cols) {
    throw DimensionError("curve has " + std::to_string(order.size()) +
                         " cells, grid has " + std::to_string(rows * cols));
  }
  HilbertMap map;
  map.rows_ = rows;
  map.cols_ = cols;
  map.forward_.assign(rows * cols, rows * cols);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Cell& c = order[k];
    if (c.i >= rows || c.j >= cols) throw DimensionError("curve leaves the grid");
    std::size_t& slot = map.forward_[c.i * cols + c.j];
    if (slot != rows * cols) throw DimensionError("curve visits a cell twice");
    slot = k;
    if (k > 0 && !adjacent(order[k - 1], c)) {
      throw DimensionError("curve step " + std::to_string(k) + " is not a unit step");
    }
  }
  map.inverse_ = std::move(order);
  return map;
}

HilbertMap build_pseudo_hilbert(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw DimensionError("grid dimensions must be positive");
  const long r = static_cast<long>(rows);
  const long c = static_cast<long>(cols);
  // The path starts and ends on the same side of the major axis; that is
  // only possible without a diagonal step when the major extent is even or
  // the cell count is odd.
  const bool major_along_rows = (c % 2 == 1) && (r % 2 == 0 || r > c);
  std::vector<Cell> order;
  order.reserve(rows * cols);
  if (major_along_rows) {
    generate(0, 0, 0, r, c, 0, order);
  } else {
    generate(0, 0, c, 0, 0, r, order);
  }
  return HilbertMap::from_order(rows, cols, std::move(order));
}

double locality_score(const HilbertMap& map) {
  const std::size_t rows = map.rows(), cols = map.cols();
  double total = 0.0;
  std::size_t pairs = 0;
  auto diff = [](std::size_t a, std::size_t b) {
    return static_cast<double>(a > b ? a - b : b - a);
  };
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j + 1 < cols) {
        total += diff(map.index(i, j), map.index(i, j + 1));
        ++pairs;
      }
      if (i + 1 < rows) {
        total += diff(map.index(i, j), map.index(i + 1, j));
        ++pairs;
      }
    }
  }
  return pairs ? total / static_cast<double>(pairs) : 0.0;
}

double row_major_locality_score(std::size_t rows, std::size_t cols) {
  const double horizontal = static_cast<double>(rows * (cols - 1));
  const double vertical = static_cast<double>((rows - 1) * cols);
  const double pairs = horizontal + vertical;
  if (pairs == 0.0) return 0.0;
  return (horizontal * 1.0 + vertical * static_cast<double>(cols)) / pairs;
}

namespace {

void check_c4(const Shape& s, const HilbertMap& map) {
  if (s.size() != 4 || s[0] != map.rows() || s[1] != map.cols() ||
      s[2] != map.rows() || s[3] != map.cols()) {
    throw ShapeError("4D score tensor " + shape_to_string(s) +
                     " does not match curve grid " + std::to_string(map.rows()) +
                     "x" + std::to_string(map.cols()));
  }
}

}  // namespace

Tensor ravel_volume(const Tensor& c4, const HilbertMap& map) {
  check_c4(c4.shape(), map);
  const std::size_t n = map.size();
  Tensor out(Shape{map.rows(), map.cols(), n + 1}, 0.0);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t r = 0; r < n; ++r) {
      out[q * (n + 1) + map.forward()[r]] = c4[q * n + r];
    }
  }
  return out;
}

Var ravel_volume(const Var& c4, const HilbertMap& map) {
  Tensor out = ravel_volume(c4.value(), map);
  const std::vector<std::size_t> forward(map.forward().begin(), map.forward().end());
  return c4.tape().record(std::move(out), {c4}, [forward](BackwardContext& c) {
    Tensor* g = c.in_grads[0];
    if (!g) return;
    const std::size_t n = forward.size();
    for (std::size_t q = 0; q < n; ++q)
      for (std::size_t r = 0; r < n; ++r)
        (*g)[q * n + r] += c.out_grad[q * (n + 1) + forward[r]];
  });
}

Tensor unravel_volume(const Tensor& c3, const HilbertMap& map) {
  const std::size_t n = map.size();
  const Shape& s = c3.shape();
  if (s.size() != 3 || s[0] != map.rows() || s[1] != map.cols() || s[2] != n + 1) {
    throw ShapeError("raveled volume " + shape_to_string(s) + " does not match curve");
  }
  Tensor out(Shape{map.rows(), map.cols(), map.rows(), map.cols()});
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t r = 0; r < n; ++r)
      out[q * n + r] = c3[q * (n + 1) + map.forward()[r]];
  return out;
}

void write_curve_csv(std::ostream& out, const HilbertMap& map) {
  out << "k,i,j\n";
  for (std::size_t k = 0; k < map.size(); ++k) {
    out << k << ',' << map.cell(k).i << ',' << map.cell(k).j << '\n';
  }
}

HilbertMap read_curve_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("k,i,j", 0) != 0) {
    throw FormatError("curve CSV must start with header k,i,j");
  }
  std::vector<Cell> order;
  std::size_t rows = 0, cols = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t k = 0, i = 0, j = 0;
    char c1 = 0, c2 = 0;
    if (!(ls >> k >> c1 >> i >> c2 >> j) || c1 != ',' || c2 != ',' ||
        k != order.size()) {
      throw FormatError("malformed curve CSV row: " + line);
    }
    order.push_back({i, j});
    rows = std::max(rows, i + 1);
    cols = std::max(cols, j + 1);
  }
  try {
    return HilbertMap::from_order(rows, cols, std::move(order));
  } catch (const DimensionError& e) {
    throw FormatError(std::string("invalid curve dump: ") + e.what());
  }
}

}  // namespace relpose
