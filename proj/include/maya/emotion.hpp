#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace maya {

/// The seven expression classes. Integer codes are stable and used in
/// every file format, so the order must never change.
enum class Emotion : std::uint8_t {
  sadness = 0,
  happiness = 1,
  anger = 2,
  stress = 3,
  surprise = 4,
  disgust = 5,
  neutral = 6,
};

inline constexpr std::size_t kEmotionCount = 7;

inline constexpr std::array<Emotion, kEmotionCount> kAllEmotions = {
    Emotion::sadness,  Emotion::happiness, Emotion::anger,  Emotion::stress,
    Emotion::surprise, Emotion::disgust,   Emotion::neutral};

/// Labels used on game board cells (everything except neutral).
inline constexpr std::array<Emotion, 6> kNonNeutralEmotions = {
    Emotion::sadness,  Emotion::happiness, Emotion::anger,
    Emotion::stress,   Emotion::surprise,  Emotion::disgust};

constexpr int code(Emotion e) { return static_cast<int>(e); }

constexpr std::string_view to_string(Emotion e) {
  switch (e) {
    case Emotion::sadness: return "sadness";
    case Emotion::happiness: return "happiness";
    case Emotion::anger: return "anger";
    case Emotion::stress: return "stress";
    case Emotion::surprise: return "surprise";
    case Emotion::disgust: return "disgust";
    case Emotion::neutral: return "neutral";
  }
  return "unknown";
}

constexpr std::optional<Emotion> emotion_from_string(std::string_view name) {
  for (Emotion e : kAllEmotions) {
    if (to_string(e) == name) return e;
  }
  return std::nullopt;
}

constexpr std::optional<Emotion> emotion_from_code(int value) {
  if (value < 0 || value >= static_cast<int>(kEmotionCount)) return std::nullopt;
  return static_cast<Emotion>(value);
}

}  // namespace maya
