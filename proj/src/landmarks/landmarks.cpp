#include "maya/landmarks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace maya {

namespace {

std::string with_line(const std::string& msg, std::optional<std::size_t> line) {
  if (!line) return msg;
  return "line " + std::to_string(*line) + ": " + msg;
}

}  // namespace

LandmarkError::LandmarkError(const std::string& what, std::optional<std::size_t> line,
                             std::optional<std::size_t> point)
    : std::runtime_error(with_line(what, line)), line_(line), point_(point) {}

BoundingBox feature_bounds(const LandmarkSet& ls) {
  BoundingBox box{ls.points[kFirstFeaturePoint].x, ls.points[kFirstFeaturePoint].y,
                  ls.points[kFirstFeaturePoint].x, ls.points[kFirstFeaturePoint].y};
  for (std::size_t i = kFirstFeaturePoint; i < kLandmarkCount; ++i) {
    const Point& p = ls.points[i];
    box.min_x = std::min(box.min_x, p.x);
    box.max_x = std::max(box.max_x, p.x);
    box.min_y = std::min(box.min_y, p.y);
    box.max_y = std::max(box.max_y, p.y);
  }
  return box;
}

void validate(const LandmarkSet& ls) {
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    if (!std::isfinite(ls.points[i].x) || !std::isfinite(ls.points[i].y)) {
      throw LandmarkError("non-finite coordinate at point " + std::to_string(i), std::nullopt, i);
    }
  }
  const BoundingBox box = feature_bounds(ls);
  if (!(box.width() > 0.0) || !(box.height() > 0.0)) {
    throw LandmarkError("degenerate landmarks: feature bounding box has zero extent");
  }
}

LandmarkSet parse_landmark_line(std::string_view line, std::size_t line_number) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(line);
  } catch (const nlohmann::json::out_of_range&) {
    throw LandmarkError("non-finite coordinate (number overflow)", line_number);
  } catch (const nlohmann::json::exception& e) {
    throw LandmarkError(std::string("malformed JSON: ") + e.what(), line_number);
  }
  if (!doc.is_object()) throw LandmarkError("record is not a JSON object", line_number);

  LandmarkSet ls;
  if (auto it = doc.find("subject"); it != doc.end()) {
    if (!it->is_string()) throw LandmarkError("'subject' must be a string", line_number);
    ls.subject_id = it->get<std::string>();
  } else {
    throw LandmarkError("missing 'subject'", line_number);
  }

  if (auto it = doc.find("label"); it != doc.end() && !it->is_null()) {
    if (!it->is_string()) throw LandmarkError("'label' must be a string or null", line_number);
    const auto name = it->get<std::string>();
    const auto label = emotion_from_string(name);
    if (!label) throw LandmarkError("unknown label '" + name + "'", line_number);
    ls.label = *label;
  }

  if (auto it = doc.find("frame"); it != doc.end() && !it->is_null()) {
    if (!it->is_string()) throw LandmarkError("'frame' must be a string or null", line_number);
    ls.source_frame = it->get<std::string>();
  }

  const auto pts = doc.find("points");
  if (pts == doc.end() || !pts->is_array()) {
    throw LandmarkError("missing 'points' array", line_number);
  }
  if (pts->size() != kLandmarkCount) {
    throw LandmarkError("expected 68 points, got " + std::to_string(pts->size()), line_number);
  }
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    const auto& p = (*pts)[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw LandmarkError("point " + std::to_string(i) + " is not an [x, y] pair of numbers",
                          line_number, i);
    }
    ls.points[i] = {p[0].get<double>(), p[1].get<double>()};
  }

  try {
    validate(ls);
  } catch (const LandmarkError& e) {
    throw LandmarkError(e.what(), line_number, e.point());
  }
  return ls;
}

std::vector<LandmarkSet> parse_landmark_file(std::istream& in) {
  std::vector<LandmarkSet> out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(parse_landmark_line(line, line_number));
  }
  return out;
}

std::vector<LandmarkSet> parse_landmark_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open landmark file " + path.string());
  return parse_landmark_file(in);
}

std::string to_json_line(const LandmarkSet& ls) {
  nlohmann::json doc;
  doc["subject"] = ls.subject_id;
  doc["label"] = ls.label ? nlohmann::json(std::string(to_string(*ls.label))) : nlohmann::json();
  if (ls.source_frame) doc["frame"] = *ls.source_frame;
  auto& pts = doc["points"] = nlohmann::json::array();
  for (const Point& p : ls.points) pts.push_back({p.x, p.y});
  return doc.dump();
}

void write_landmark_file(std::ostream& out, const std::vector<LandmarkSet>& sets) {
  for (const auto& ls : sets) out << to_json_line(ls) << '\n';
}

void write_landmark_file(const std::filesystem::path& path, const std::vector<LandmarkSet>& sets) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write landmark file " + path.string());
  write_landmark_file(out, sets);
}

LandmarkSet normalize(const LandmarkSet& ls) {
  validate(ls);
  const BoundingBox box = feature_bounds(ls);
  const double scale = kFeatureExtent / std::max(box.width(), box.height());
  const double centre_x = 0.5 * (box.min_x + box.max_x);
  const double shift_x = 0.5 * kCanvasSize - scale * centre_x;
  const double shift_y = kSeamRow - scale * ls.points[kSeamPoint].y;

  LandmarkSet out = ls;
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    out.points[i].x = scale * ls.points[i].x + shift_x;
    out.points[i].y = scale * ls.points[i].y + shift_y;
  }
  // Exact by construction; avoids a last-ulp wobble from the affine map.
  out.points[kSeamPoint].y = kSeamRow;
  out.jaw_excluded = true;
  return out;
}

}  // namespace maya
