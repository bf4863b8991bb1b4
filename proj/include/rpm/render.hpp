#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "rpm/core.hpp"

namespace rpm {

inline constexpr int kPanelSize = 84;
inline constexpr int kBoardSize = 3 * kPanelSize;  // 252
inline constexpr std::uint8_t kBackground = 255;
inline constexpr std::uint8_t kOutline = 0;
inline constexpr std::uint8_t kMaskGray = 128;
// Bumped whenever pixel output changes; dataset files record it.
inline constexpr int kRendererVersion = 1;

// Row-major 8-bit grayscale image.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Raster() = default;
  Raster(int w, int h, std::uint8_t fill) : width(w), height(h), pixels(std::size_t(w) * h, fill) {}

  std::uint8_t at(int x, int y) const { return pixels[std::size_t(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[std::size_t(y) * width + x]; }
  bool operator==(const Raster&) const = default;
};

// Square cell a slot's object is drawn into, in pixel coordinates.
struct Cell {
  double cx;
  double cy;
  double half;
};

Cell slot_cell(ArrangementKind kind, int slot);

Raster render_panel(const PropertyVector& p);

struct MaskedFill {};
using BoardFill = std::variant<int, PropertyVector, MaskedFill>;

// 3x3 board of panels; the query cell holds the answer with the given index,
// an arbitrary property vector, or the uniform mask gray.
Raster render_task(const RpmTask& t, const BoardFill& fill);

}  // namespace rpm
