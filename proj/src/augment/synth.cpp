#include "maya/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "maya/rng.hpp"

namespace maya::augment {

ExpressionShape expression_shape(Emotion e) {
  ExpressionShape s;
  switch (e) {
    case Emotion::neutral:
      break;
    case Emotion::happiness:
      s.eye_open = 0.75;
      s.mouth_corner_lift = 7.0;
      s.mouth_width = 6.0;
      s.mouth_open = 3.0;
      break;
    case Emotion::sadness:
      s.brow_inner_raise = 7.0;
      s.eye_open = 0.8;
      s.mouth_corner_lift = -6.0;
      s.mouth_width = -2.0;
      break;
    case Emotion::anger:
      s.brow_raise = -5.0;
      s.brow_inner_raise = -5.0;
      s.brow_squeeze = 5.0;
      s.eye_open = 0.6;
      s.mouth_width = -5.0;
      s.mouth_open = -2.0;
      break;
    case Emotion::stress:
      s.brow_raise = 5.0;
      s.brow_inner_raise = 4.0;
      s.brow_squeeze = 4.0;
      s.eye_open = 1.4;
      s.mouth_corner_lift = -2.0;
      s.mouth_width = 9.0;
      s.mouth_open = 5.0;
      break;
    case Emotion::surprise:
      s.brow_raise = 9.0;
      s.eye_open = 1.6;
      s.mouth_width = -6.0;
      s.mouth_open = 16.0;
      break;
    case Emotion::disgust:
      s.brow_raise = -3.0;
      s.brow_squeeze = 2.0;
      s.eye_open = 0.7;
      s.mouth_corner_lift = -3.0;
      s.upper_lip_raise = 6.0;
      s.nose_wrinkle = 3.0;
      break;
  }
  return s;
}

namespace {

// Neutral skeleton in a 200x200 source frame, facing the camera.
LandmarkSet neutral_skeleton() {
  LandmarkSet ls;
  auto& p = ls.points;
  for (std::size_t i = 0; i <= 16; ++i) {
    const double t = static_cast<double>(i) / 16.0;
    p[i] = {100.0 - 62.0 * std::cos(std::numbers::pi * t), 85.0 + 90.0 * std::sin(std::numbers::pi * t)};
  }
  const double brow_x[5] = {55, 64, 73, 82, 90};
  const double brow_y[5] = {74, 69, 67, 68, 71};
  for (std::size_t i = 0; i < 5; ++i) {
    p[17 + i] = {brow_x[i], brow_y[i]};
    p[26 - i] = {200.0 - brow_x[i], brow_y[i]};
  }
  for (std::size_t i = 0; i < 4; ++i) p[27 + i] = {100.0, 80.0 + 10.0 * static_cast<double>(i)};
  p[31] = {88, 118};
  p[32] = {94, 120};
  p[33] = {100, 122};
  p[34] = {106, 120};
  p[35] = {112, 118};

  p[36] = {60, 88};
  p[37] = {67, 84};
  p[38] = {75, 84};
  p[39] = {82, 88};
  p[40] = {75, 92};
  p[41] = {67, 92};
  p[42] = {118, 88};
  p[43] = {125, 84};
  p[44] = {133, 84};
  p[45] = {140, 88};
  p[46] = {133, 92};
  p[47] = {125, 92};

  const Point outer[12] = {{78, 145},  {85, 140},  {93, 137},  {100, 138}, {107, 137}, {115, 140},
                           {122, 145}, {115, 151}, {107, 154}, {100, 155}, {93, 154},  {85, 151}};
  for (std::size_t i = 0; i < 12; ++i) p[48 + i] = outer[i];
  const Point inner[8] = {{82, 145}, {92, 142}, {100, 142}, {108, 142},
                          {118, 145}, {108, 147}, {100, 148}, {92, 147}};
  for (std::size_t i = 0; i < 8; ++i) p[60 + i] = inner[i];
  return ls;
}

}  // namespace

LandmarkSet expression_template(Emotion e) {
  const ExpressionShape s = expression_shape(e);
  LandmarkSet ls = neutral_skeleton();
  auto& p = ls.points;

  // Brows: weight runs 0 at the outer end to 1 at the inner end.
  for (std::size_t i = 0; i < 5; ++i) {
    const double w = static_cast<double>(i) / 4.0;
    const double lift = s.brow_raise + w * s.brow_inner_raise;
    p[17 + i].y -= lift;
    p[17 + i].x += w * s.brow_squeeze;
    p[26 - i].y -= lift;
    p[26 - i].x -= w * s.brow_squeeze;
  }

  // Eyes: lids move symmetrically about the eye's horizontal axis.
  for (std::size_t base : {std::size_t{36}, std::size_t{42}}) {
    const double axis = p[base].y;
    for (std::size_t k : {base + 1, base + 2, base + 4, base + 5}) {
      p[k].y = axis + (p[k].y - axis) * s.eye_open;
    }
  }

  p[31].y -= s.nose_wrinkle;
  p[35].y -= s.nose_wrinkle;
  p[32].y -= 0.5 * s.nose_wrinkle;
  p[34].y -= 0.5 * s.nose_wrinkle;

  // Mouth. Corners carry the full lift/width, their neighbours half.
  auto corner = [&](std::size_t idx, double side, double weight) {
    p[idx].y -= weight * s.mouth_corner_lift;
    p[idx].x += side * weight * s.mouth_width;
  };
  corner(48, -1, 1.0);
  corner(54, +1, 1.0);
  corner(60, -1, 1.0);
  corner(64, +1, 1.0);
  corner(49, -1, 0.5);
  corner(59, -1, 0.5);
  corner(53, +1, 0.5);
  corner(55, +1, 0.5);
  corner(61, -1, 0.3);
  corner(67, -1, 0.3);
  corner(63, +1, 0.3);
  corner(65, +1, 0.3);
  for (std::size_t k : {49, 50, 51, 52, 53, 61, 62, 63}) p[k].y -= s.upper_lip_raise;
  for (std::size_t k : {55, 56, 57, 58, 59, 65, 66, 67}) p[k].y += s.mouth_open;
  for (std::size_t k = 6; k <= 10; ++k) p[k].y += std::max(0.0, s.mouth_open);

  ls.label = e;
  ls.subject_id = "template-" + std::string(to_string(e));
  return ls;
}

std::vector<LandmarkSet> synth_corpus(std::size_t per_class, std::uint64_t seed, double jitter) {
  std::vector<LandmarkSet> out;
  out.reserve(per_class * kEmotionCount);
  Rng rng(seed);
  for (Emotion e : kAllEmotions) {
    const LandmarkSet tmpl = expression_template(e);
    for (std::size_t i = 0; i < per_class; ++i) {
      LandmarkSet ls = tmpl;
      for (Point& p : ls.points) {
        p.x += uniform_real(rng, -jitter, jitter);
        p.y += uniform_real(rng, -jitter, jitter);
      }
      ls.subject_id = "synth-" + std::string(to_string(e)) + "-" + std::to_string(i);
      out.push_back(std::move(ls));
    }
  }
  return out;
}

}  // namespace maya::augment
