#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "maya/emotion.hpp"

namespace maya {

inline constexpr std::size_t kLandmarkCount = 68;

/// First landmark that belongs to the drawn face; 0..16 is the jaw contour.
inline constexpr std::size_t kFirstFeaturePoint = 17;

/// Nose tip, the landmark that defines the upper/lower face seam.
inline constexpr std::size_t kSeamPoint = 30;

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

struct LandmarkSet {
  std::array<Point, kLandmarkCount> points{};
  std::string subject_id;
  std::optional<Emotion> label;
  std::optional<std::string> source_frame;
  /// Set by normalize(): jaw points 0..16 are carried along but excluded
  /// from anything drawn.
  bool jaw_excluded = false;

  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;
};

/// Thrown for any landmark that breaks the LandmarkSet invariants. `line`
/// is the 1-based input line when parsing, `point` the offending landmark
/// index when one can be named.
class LandmarkError : public std::runtime_error {
 public:
  LandmarkError(const std::string& what, std::optional<std::size_t> line = std::nullopt,
                std::optional<std::size_t> point = std::nullopt);

  std::optional<std::size_t> line() const { return line_; }
  std::optional<std::size_t> point() const { return point_; }

 private:
  std::optional<std::size_t> line_;
  std::optional<std::size_t> point_;
};

struct BoundingBox {
  double min_x, min_y, max_x, max_y;
  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
};

/// Bounding box of the feature points 17..67.
BoundingBox feature_bounds(const LandmarkSet& ls);

/// Throws LandmarkError if a coordinate is non-finite or the feature box
/// has zero width or height.
void validate(const LandmarkSet& ls);

/// Parses one JSON Lines record. `line_number` only feeds error messages.
LandmarkSet parse_landmark_line(std::string_view line, std::size_t line_number = 1);

/// Parses a `.lmk.jsonl` stream. Blank lines are skipped but still counted.
std::vector<LandmarkSet> parse_landmark_file(std::istream& in);
std::vector<LandmarkSet> parse_landmark_file(const std::filesystem::path& path);

std::string to_json_line(const LandmarkSet& ls);
void write_landmark_file(std::ostream& out, const std::vector<LandmarkSet>& sets);
void write_landmark_file(const std::filesystem::path& path, const std::vector<LandmarkSet>& sets);

// Canonical frame: the feature box's larger side spans 80 px, the box is
// centred horizontally in the 96 px canvas and the nose tip sits on row 48.
inline constexpr double kCanvasSize = 96.0;
inline constexpr double kFeatureExtent = 80.0;
inline constexpr double kSeamRow = 48.0;

/// Uniform scale + translation into the canonical frame. Jaw points move
/// with the rest and come back flagged as excluded.
LandmarkSet normalize(const LandmarkSet& ls);

}  // namespace maya
