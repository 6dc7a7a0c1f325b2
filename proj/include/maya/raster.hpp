#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "maya/landmarks.hpp"

namespace maya {

inline constexpr std::size_t kImageSize = 96;
inline constexpr std::size_t kHalfRows = 48;
inline constexpr std::size_t kImagePixels = kImageSize * kImageSize;
inline constexpr std::size_t kHalfPixels = kHalfRows * kImageSize;

/// 96x96 single-channel image, row-major, values in [0, 1].
struct RasterImage {
  std::vector<float> pixels = std::vector<float>(kImagePixels, 0.0f);
  int seam_row = static_cast<int>(kHalfRows);

  float at(std::size_t row, std::size_t col) const { return pixels[row * kImageSize + col]; }
  float& at(std::size_t row, std::size_t col) { return pixels[row * kImageSize + col]; }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

/// 48x96 half of a RasterImage.
struct HalfImage {
  std::vector<float> pixels = std::vector<float>(kHalfPixels, 0.0f);

  friend bool operator==(const HalfImage&, const HalfImage&) = default;
};

/// A run of landmark indices drawn as one polyline.
struct Stroke {
  std::size_t first;
  std::size_t last;
  bool closed;
};

/// Brows, nose, eyes, outer and inner lips. The jaw is never drawn.
inline constexpr std::array<Stroke, 7> kFaceStrokes = {{
    {17, 21, false},
    {22, 26, false},
    {27, 35, false},
    {36, 41, true},
    {42, 47, true},
    {48, 59, true},
    {60, 67, true},
}};

/// Pixel coordinate a landmark snaps to (round half up).
int snap(double v);

/// Binary stroke image: 1-px Bresenham polylines with value 1.0 before any
/// smoothing. Throws LandmarkError naming the landmark if a vertex falls
/// outside the canvas.
RasterImage draw_strokes(const LandmarkSet& normalized);

/// One pass of the separable [1 2 1]/4 x [1 2 1]/4 kernel with zero
/// padding, clamped to [0, 1].
RasterImage smooth(const RasterImage& img);

/// draw_strokes followed by smooth.
RasterImage rasterize(const LandmarkSet& normalized);

std::pair<HalfImage, HalfImage> split_halves(const RasterImage& img);
RasterImage join_halves(const HalfImage& upper, const HalfImage& lower);

}  // namespace maya
