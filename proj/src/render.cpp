#include "rpm/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rpm {

Cell slot_cell(ArrangementKind kind, int slot) {
  constexpr double s = kPanelSize;
  const int local = slot - arrangement(kind).slots.begin;
  switch (kind) {
    case ArrangementKind::kCenterSingle:
      return {s / 2, s / 2, s / 2};
    case ArrangementKind::kDistributeFour: {
      const double h = s / 4;
      return {h + 2 * h * (local % 2), h + 2 * h * (local / 2), h};
    }
    case ArrangementKind::kDistributeNine: {
      const double h = s / 6;
      return {h + 2 * h * (local % 3), h + 2 * h * (local / 3), h};
    }
    case ArrangementKind::kInCenterOutCenter:
      return local == 0 ? Cell{s / 2, s / 2, s / 6} : Cell{s / 2, s / 2, s / 2};
    case ArrangementKind::kInFourOutCenter: {
      if (local == 4) return {s / 2, s / 2, s / 2};
      const double h = s / 8;
      return {s / 2 - h + 2 * h * (local % 2), s / 2 - h + 2 * h * (local / 2), h};
    }
    case ArrangementKind::kLeftRight:
      return {s / 4 + s / 2 * local, s / 2, s / 4};
    case ArrangementKind::kUpDown:
      return {s / 2, s / 4 + s / 2 * local, s / 4};
  }
  return {s / 2, s / 2, s / 2};
}

namespace {

// Positive inside the shape, measured in pixels from the boundary.
double signed_distance(ShapeType type, double dx, double dy, double radius) {
  if (type == ShapeType::kCircle) return radius - std::hypot(dx, dy);
  const int n = static_cast<int>(type) + 3;
  const double pi = std::numbers::pi;
  const double start = type == ShapeType::kSquare ? -pi / 4 : -pi / 2;
  const double apothem = radius * std::cos(pi / n);
  double d = INFINITY;
  for (int k = 0; k < n; ++k) {
    const double normal = start + 2 * pi * k / n + pi / n;
    d = std::min(d, apothem - (dx * std::cos(normal) + dy * std::sin(normal)));
  }
  return d;
}

void draw_object(Raster& img, int ox, int oy, const Cell& cell, const ObjectSpec& obj) {
  const double radius = kSizeValues[obj.size] * cell.half;
  const auto type = static_cast<ShapeType>(obj.type);
  const auto fill = static_cast<std::uint8_t>(kColorValues[obj.color]);
  const int x0 = std::max(0, static_cast<int>(std::floor(cell.cx - radius)) - 1);
  const int x1 = std::min(kPanelSize, static_cast<int>(std::ceil(cell.cx + radius)) + 1);
  const int y0 = std::max(0, static_cast<int>(std::floor(cell.cy - radius)) - 1);
  const int y1 = std::min(kPanelSize, static_cast<int>(std::ceil(cell.cy + radius)) + 1);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double d = signed_distance(type, x + 0.5 - cell.cx, y + 0.5 - cell.cy, radius);
      if (d < 0.0) continue;
      img.at(ox + x, oy + y) = d < 1.0 ? kOutline : fill;
    }
  }
}

void blit(Raster& dst, const Raster& src, int ox, int oy) {
  for (int y = 0; y < src.height; ++y) {
    std::copy_n(src.pixels.begin() + std::size_t(y) * src.width, src.width,
                dst.pixels.begin() + std::size_t(oy + y) * dst.width + ox);
  }
}

}  // namespace

Raster render_panel(const PropertyVector& p) {
  Raster img(kPanelSize, kPanelSize, kBackground);
  const auto range = arrangement(p.arrangement).slots;
  std::vector<int> order;
  for (int s = range.begin; s < range.end; ++s) {
    if (p.present[s] && p.objects[s]) order.push_back(s);
  }
  // Larger cells first so nested inner objects stay visible.
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return slot_cell(p.arrangement, a).half > slot_cell(p.arrangement, b).half;
  });
  for (int s : order) draw_object(img, 0, 0, slot_cell(p.arrangement, s), *p.objects[s]);
  return img;
}

Raster render_task(const RpmTask& t, const BoardFill& fill) {
  Raster board(kBoardSize, kBoardSize, kBackground);
  for (int i = 0; i < kContextPanels; ++i) {
    blit(board, render_panel(t.context[i]), (i % 3) * kPanelSize, (i / 3) * kPanelSize);
  }
  Raster query;
  if (const int* idx = std::get_if<int>(&fill)) {
    query = render_panel(t.answers[*idx]);
  } else if (const auto* pv = std::get_if<PropertyVector>(&fill)) {
    query = render_panel(*pv);
  } else {
    query = Raster(kPanelSize, kPanelSize, kMaskGray);
  }
  blit(board, query, 2 * kPanelSize, 2 * kPanelSize);
  return board;
}

}  // namespace rpm
