#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "maya/augment.hpp"
#include "maya/emotion.hpp"
#include "maya/landmarks.hpp"
#include "maya/nn/network.hpp"
#include "maya/nn/train.hpp"
#include "maya/raster.hpp"

namespace maya::fer {

inline constexpr std::size_t kEmbeddingSize = 48;
/// Name of the L2-normalization layer whose output is the embedding.
inline constexpr const char* kEmbeddingLayer = "l2norm";
inline constexpr const char* kHeadLayer = "head";

/// The expression trunk followed by a 48 -> 7 linear head.
std::vector<nn::LayerSpec> maya_architecture();

struct FerModel {
  nn::Network network;
  std::array<Emotion, kEmotionCount> labels = kAllEmotions;
  nlohmann::json meta = nlohmann::json::object();  // seed, manifest hash, epochs, ...
};

/// Fresh He-initialized model; equal seeds give bit-identical weights.
FerModel build_maya_net(std::uint64_t seed);

struct LedgerRow {
  std::string layer;
  std::size_t params = 0;
  /// "3.2K" style rounding to 0.1K, trailing ".0" dropped.
  std::string rounded;
};

struct ParamLedger {
  std::vector<LedgerRow> rows;  // trainable trunk layers only
  std::size_t trunk_total = 0;
  std::size_t head = 0;
};

ParamLedger param_ledger(const FerModel& model);
std::string format_thousands(std::size_t params);

/// 96x96 raster as a 96x96x1 network input.
nn::Tensor to_input(const RasterImage& img);

struct Prediction {
  std::array<double, kEmotionCount> probs{};
  Emotion top = Emotion::neutral;
  std::vector<double> embedding;
  double latency_ms = 0.0;
};

/// The pipeline stage a failure happened in.
enum class Stage { ingest, align, rasterize, classify };
std::string_view to_string(Stage s);

class PipelineError : public std::runtime_error {
 public:
  PipelineError(Stage stage, const std::string& what);
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

/// validate -> normalize -> rasterize -> forward. Safe to call from many
/// threads on one model.
Prediction predict(const FerModel& model, const LandmarkSet& landmarks);
Prediction predict_image(const FerModel& model, const RasterImage& img);

class ConfusionMatrix {
 public:
  void add(Emotion truth, Emotion predicted, std::size_t n = 1);
  std::size_t at(Emotion truth, Emotion predicted) const;
  std::size_t row_sum(Emotion truth) const;
  std::size_t total() const;
  std::size_t trace() const;
  /// trace / total; throws on an empty matrix.
  double accuracy() const;

  std::string to_text() const;
  std::string to_csv() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::array<std::array<std::size_t, kEmotionCount>, kEmotionCount> counts_{};
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ConfusionMatrix tabulate(const std::vector<Emotion>& truth, const std::vector<Emotion>& predicted);

/// Adapts dataset composites to the training interface.
class CompositeSource final : public nn::SampleSource {
 public:
  CompositeSource(const augment::Dataset& dataset, std::vector<std::size_t> indices);
  std::size_t size() const override { return indices_.size(); }
  nn::Tensor input(std::size_t i) const override;
  std::size_t label(std::size_t i) const override;

 private:
  const augment::Dataset* dataset_;
  std::vector<std::size_t> indices_;
};

struct Evaluation {
  ConfusionMatrix matrix;
  double accuracy = 0.0;
};

Evaluation evaluate(const FerModel& model, const nn::SampleSource& samples, unsigned threads = 1);

/// Trains the model on the manifest's train/val splits and records
/// provenance in model.meta.
nn::TrainResult train_model(FerModel& model, const augment::Dataset& dataset, const augment::DatasetManifest& manifest,
                            const nn::TrainConfig& config, const nn::EpochCallback& on_epoch = {});

std::string manifest_hash(const augment::DatasetManifest& manifest);

void save_model(const std::filesystem::path& path, const FerModel& model);
FerModel load_model(const std::filesystem::path& path);

// ------------------------------------------------------------- identity

class GalleryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Match {
  std::string person_id;
  std::string display_name;
  double similarity = 0.0;
};

struct IdentifyResult {
  std::optional<Match> match;
  /// Best candidate even when it falls below the threshold.
  std::optional<Match> best;
};

/// Embedding gallery matched by cosine similarity. Mutations take an
/// exclusive lock, lookups a shared one.
class IdentityGallery {
 public:
  explicit IdentityGallery(double threshold = 0.80);
  IdentityGallery(const IdentityGallery& other);
  IdentityGallery& operator=(const IdentityGallery& other);

  double threshold() const;
  void set_threshold(double t);

  /// New person with a fresh id ("p0001", "p0002", ...).
  std::string enroll(const std::string& display_name, const std::vector<double>& embedding);
  /// Adds another embedding to an existing person.
  void add_embedding(const std::string& person_id, const std::vector<double>& embedding);

  /// Best cosine similarity over every stored embedding; ties go to the
  /// lowest person id.
  IdentifyResult identify(const std::vector<double>& embedding) const;

  std::size_t size() const;

  nlohmann::json to_json() const;
  static IdentityGallery from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static IdentityGallery load(const std::filesystem::path& path);

 private:
  struct Person {
    std::string id;
    std::string name;
    std::vector<std::vector<double>> embeddings;
  };
  static void check_unit(const std::vector<double>& e);

  mutable std::shared_mutex mutex_;
  double threshold_;
  std::size_t next_id_ = 1;
  std::vector<Person> people_;
};

}  // namespace maya::fer
