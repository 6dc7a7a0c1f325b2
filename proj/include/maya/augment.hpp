#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "maya/emotion.hpp"
#include "maya/landmarks.hpp"
#include "maya/raster.hpp"

namespace maya::augment {

class AugmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SourcedHalf {
  std::string source_id;
  HalfImage image;
};

/// Upper and lower face halves for one expression class. Entry i of both
/// lists normally comes from the same curated still.
struct HalfBank {
  Emotion label = Emotion::neutral;
  std::vector<SourcedHalf> uppers;
  std::vector<SourcedHalf> lowers;

  std::size_t size() const { return uppers.size(); }
};

/// Throws AugmentError unless the lists have equal length and unique ids.
void validate(const HalfBank& bank);

/// Builds a bank from labelled landmark sets: normalize, rasterize, split.
/// Every set must carry `label`.
HalfBank make_half_bank(Emotion label, const std::vector<LandmarkSet>& sets);

/// Groups a labelled corpus by class and builds one bank per class, in
/// canonical label order. Classes absent from the corpus are skipped.
std::vector<std::shared_ptr<const HalfBank>> banks_from_corpus(const std::vector<LandmarkSet>& corpus);

/// One upper/lower pairing. The image is composed on demand from the
/// shared bank so large datasets never need to be materialized at once.
class CompositeSample {
 public:
  CompositeSample(std::shared_ptr<const HalfBank> bank, std::size_t upper, std::size_t lower);

  Emotion label() const { return bank_->label; }
  std::size_t upper_index() const { return upper_; }
  std::size_t lower_index() const { return lower_; }
  const std::string& upper_src() const { return bank_->uppers[upper_].source_id; }
  const std::string& lower_src() const { return bank_->lowers[lower_].source_id; }
  RasterImage image() const;
  /// Writes the composite into a caller-provided 9216-float buffer.
  void compose_into(std::span<float> out) const;

 private:
  std::shared_ptr<const HalfBank> bank_;
  std::size_t upper_;
  std::size_t lower_;
};

/// All n^2 pairings, ordered by (upper index, lower index).
std::vector<CompositeSample> generate_composites(const std::shared_ptr<const HalfBank>& bank);

enum class LeakageMode { paper, source_disjoint };

std::string_view to_string(LeakageMode mode);
LeakageMode leakage_mode_from_string(std::string_view name);

enum class Split : std::uint8_t { train, val, test };

struct SplitFractions {
  double train = 0.70;
  double val = 0.10;
  double test = 0.20;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;

  std::size_t total() const { return train + val + test; }
  friend bool operator==(const SplitSizes&, const SplitSizes&) = default;
};

/// Largest-remainder apportionment of `total`: the test share is rounded
/// first (half up), then train/val divide the remainder by largest
/// fractional part.
SplitSizes apportion(std::size_t total, const SplitFractions& fractions);

struct DatasetManifest {
  std::uint64_t seed = 0;
  LeakageMode leakage_mode = LeakageMode::paper;
  std::array<std::size_t, kEmotionCount> per_class_counts{};
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  /// Source-disjoint mode only: composites whose halves come from sources
  /// assigned to different splits. Always empty in paper mode.
  std::vector<std::size_t> discarded;

  std::size_t total() const;
  const std::vector<std::size_t>& indices(Split s) const;
};

struct Dataset {
  std::vector<CompositeSample> samples;
  std::array<std::size_t, kEmotionCount> per_class_counts{};
};

/// Concatenates the composites of all seven classes in canonical label
/// order. Throws if a class is missing or duplicated.
Dataset build_dataset(const std::vector<std::shared_ptr<const HalfBank>>& banks);

/// Stratified train/val/test assignment. Returns sorted index arrays.
DatasetManifest stratified_split(const Dataset& dataset, const SplitFractions& fractions,
                                 std::uint64_t seed, LeakageMode mode);

// Manifest file: JSON with seed, leakage_mode, per-class counts and the
// three sorted split arrays.
std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(std::string_view text);

// Packed composite file: "MAYD", u32 version, u32 count, then per sample a
// label byte and 9216 little-endian float32 pixels.
inline constexpr std::uint32_t kPackVersion = 1;

struct PackedSample {
  Emotion label;
  std::vector<float> pixels;
};

void write_pack(std::ostream& out, const Dataset& dataset, const std::vector<std::size_t>& indices);
std::vector<PackedSample> read_pack(std::istream& in);

}  // namespace maya::augment
