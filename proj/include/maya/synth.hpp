#pragma once

#include <cstdint>
#include <vector>

#include "maya/emotion.hpp"
#include "maya/landmarks.hpp"

namespace maya::augment {

// Synthetic stand-in for curated expression stills. Seven hand-authored
// templates share one neutral skeleton and differ by brow, eye and mouth
// offsets.

struct ExpressionShape {
  double brow_raise = 0.0;        // whole brow up (+) or down (-)
  double brow_inner_raise = 0.0;  // inner brow ends up (+) or down (-)
  double brow_squeeze = 0.0;      // inner brow ends pulled toward the midline
  double eye_open = 1.0;          // lid aperture multiplier
  double mouth_corner_lift = 0.0;
  double mouth_width = 0.0;       // extra half-width at the corners
  double mouth_open = 0.0;        // lower lip drop
  double upper_lip_raise = 0.0;
  double nose_wrinkle = 0.0;      // nostrils pulled up
};

ExpressionShape expression_shape(Emotion e);

/// Noise-free landmarks for one class, in source pixel units.
LandmarkSet expression_template(Emotion e);

inline constexpr double kDefaultJitter = 2.0;

/// `per_class` samples for each of the seven classes, grouped by class in
/// canonical order. Each coordinate gets independent uniform jitter in
/// [-jitter, jitter]. Subject ids are unique within the corpus.
std::vector<LandmarkSet> synth_corpus(std::size_t per_class, std::uint64_t seed,
                                      double jitter = kDefaultJitter);

}  // namespace maya::augment
