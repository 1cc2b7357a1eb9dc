#pragma once

#include <cstddef>
#include <vector>

namespace s2t {

// Frame-level encoding: `frames` x `cells` x `dim`, row-major. Flattening the
// first two axes gives the shot token sequence (frames * cells tokens).
struct TokenGrid {
  std::size_t frames = 0;
  std::size_t cells = 0;
  std::size_t dim = 0;
  std::vector<float> data;

  TokenGrid() = default;
  TokenGrid(std::size_t t, std::size_t n, std::size_t d) : frames(t), cells(n), dim(d), data(t * n * d, 0.0f) {}

  std::size_t token_count() const { return frames * cells; }
  float& at(std::size_t t, std::size_t n, std::size_t d) { return data[(t * cells + n) * dim + d]; }
  float at(std::size_t t, std::size_t n, std::size_t d) const { return data[(t * cells + n) * dim + d]; }
  bool operator==(const TokenGrid&) const = default;
};

// Throws ShapeError unless all dims are >= 1, the buffer matches and every
// value is finite.
void check_token_grid(const TokenGrid& grid);

}  // namespace s2t
