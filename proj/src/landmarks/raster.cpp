#include "maya/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

namespace maya {

int snap(double v) { return static_cast<int>(std::floor(v + 0.5)); }

namespace {

void plot_line(RasterImage& img, int x0, int y0, int x1, int y1) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    img.at(static_cast<std::size_t>(y0), static_cast<std::size_t>(x0)) = 1.0f;
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

RasterImage draw_strokes(const LandmarkSet& ls) {
  constexpr int size = static_cast<int>(kImageSize);
  std::array<std::pair<int, int>, kLandmarkCount> px{};
  for (std::size_t i = kFirstFeaturePoint; i < kLandmarkCount; ++i) {
    const Point& p = ls.points[i];
    const int x = snap(p.x);
    const int y = snap(p.y);
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || x < 0 || x >= size || y < 0 || y >= size) {
      throw LandmarkError("point " + std::to_string(i) + " lies outside the 96x96 canvas after normalization",
                          std::nullopt, i);
    }
    px[i] = {x, y};
  }

  RasterImage img;
  for (const Stroke& s : kFaceStrokes) {
    for (std::size_t i = s.first; i < s.last; ++i) {
      plot_line(img, px[i].first, px[i].second, px[i + 1].first, px[i + 1].second);
    }
    if (s.closed) {
      plot_line(img, px[s.last].first, px[s.last].second, px[s.first].first, px[s.first].second);
    }
  }
  return img;
}

RasterImage smooth(const RasterImage& img) {
  constexpr std::size_t n = kImageSize;
  // Horizontal then vertical pass, accumulated in double so the result is
  // independent of evaluation order.
  std::vector<double> tmp(kImagePixels, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      double acc = 2.0 * img.at(r, c);
      if (c > 0) acc += img.at(r, c - 1);
      if (c + 1 < n) acc += img.at(r, c + 1);
      tmp[r * n + c] = acc * 0.25;
    }
  }
  RasterImage out;
  out.seam_row = img.seam_row;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      double acc = 2.0 * tmp[r * n + c];
      if (r > 0) acc += tmp[(r - 1) * n + c];
      if (r + 1 < n) acc += tmp[(r + 1) * n + c];
      out.at(r, c) = static_cast<float>(std::clamp(acc * 0.25, 0.0, 1.0));
    }
  }
  return out;
}

RasterImage rasterize(const LandmarkSet& normalized) { return smooth(draw_strokes(normalized)); }

std::pair<HalfImage, HalfImage> split_halves(const RasterImage& img) {
  if (img.seam_row != static_cast<int>(kHalfRows) || img.pixels.size() != kImagePixels) {
    throw std::invalid_argument("split_halves: image is not a 96x96 raster with its seam on row 48");
  }
  HalfImage upper;
  HalfImage lower;
  std::copy_n(img.pixels.begin(), kHalfPixels, upper.pixels.begin());
  std::copy_n(img.pixels.begin() + kHalfPixels, kHalfPixels, lower.pixels.begin());
  return {std::move(upper), std::move(lower)};
}

RasterImage join_halves(const HalfImage& upper, const HalfImage& lower) {
  RasterImage img;
  std::copy(upper.pixels.begin(), upper.pixels.end(), img.pixels.begin());
  std::copy(lower.pixels.begin(), lower.pixels.end(), img.pixels.begin() + kHalfPixels);
  return img;
}

}  // namespace maya
