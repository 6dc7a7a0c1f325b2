#include "maya/fer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>

#include "maya/detail/le_io.hpp"
#include "maya/nn/checkpoint.hpp"
#include "maya/nn/ops.hpp"

namespace maya::fer {

using nn::LayerSpec;
using nn::Padding;

std::vector<LayerSpec> maya_architecture() {
  return {
      LayerSpec::conv("conv-1", 7, 2, 1, 64),
      LayerSpec::maxpool("maxpool-1", 3, 2),
      LayerSpec::conv("conv-2", 3, 2, 64, 192),
      LayerSpec::maxpool("maxpool-2", 3, 2),
      LayerSpec::make_inception("inception-3", 192, {8, 12, 16, 2, 4, 4}),
      LayerSpec::maxpool("maxpool-4", 3, 2),
      LayerSpec::make_inception("inception-5", 32, {24, 12, 12, 2, 6, 8}),
      LayerSpec::avgpool("avgpool-6", 3, 1, Padding::valid),
      LayerSpec::conv("conv-7", 1, 1, 50, 1024),
      LayerSpec::fully_connected("fc-8", 1024, kEmbeddingSize, true),
      LayerSpec::l2norm(kEmbeddingLayer),
      LayerSpec::fully_connected(kHeadLayer, kEmbeddingSize, kEmotionCount, false),
  };
}

FerModel build_maya_net(std::uint64_t seed) {
  FerModel m;
  m.network = nn::Network(maya_architecture());
  m.network.initialize(seed);
  m.meta = {{"init_seed", seed}};
  return m;
}

std::string format_thousands(std::size_t params) {
  const double k = std::round(static_cast<double>(params) / 100.0) / 10.0;
  char buf[32];
  if (k == std::floor(k)) {
    std::snprintf(buf, sizeof buf, "%.0fK", k);
  } else {
    std::snprintf(buf, sizeof buf, "%.1fK", k);
  }
  return buf;
}

ParamLedger param_ledger(const FerModel& model) {
  ParamLedger ledger;
  for (std::size_t i = 0; i < model.network.size(); ++i) {
    const auto& layer = model.network.layer(i);
    const std::size_t n = layer.param_count();
    if (layer.spec().name == kHeadLayer) {
      ledger.head = n;
      continue;
    }
    if (n == 0) continue;
    ledger.rows.push_back({layer.spec().name, n, format_thousands(n)});
    ledger.trunk_total += n;
  }
  return ledger;
}

nn::Tensor to_input(const RasterImage& img) {
  if (img.pixels.size() != kImagePixels) throw nn::ShapeError("raster must hold 96x96 pixels");
  return nn::Tensor({kImageSize, kImageSize, 1}, std::vector<double>(img.pixels.begin(), img.pixels.end()));
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::align: return "align";
    case Stage::rasterize: return "rasterize";
    case Stage::classify: return "classify";
  }
  return "unknown";
}

PipelineError::PipelineError(Stage stage, const std::string& what)
    : std::runtime_error(std::string(to_string(stage)) + ": " + what), stage_(stage) {}

namespace {

Prediction classify(const FerModel& model, const nn::Tensor& input) {
  const auto& net = model.network;
  const std::size_t embed_at = net.find(kEmbeddingLayer);
  if (embed_at == net.size()) throw PipelineError(Stage::classify, "model has no embedding layer");
  Prediction p;
  nn::Tensor x = input;
  for (std::size_t i = 0; i < net.size(); ++i) {
    x = net.layer(i).forward(x, nullptr);
    if (i == embed_at) p.embedding.assign(x.data().begin(), x.data().end());
  }
  if (x.size() != kEmotionCount) throw PipelineError(Stage::classify, "model output is not 7-way");
  const auto probs = nn::softmax(x.data());
  std::copy(probs.begin(), probs.end(), p.probs.begin());
  const auto top = static_cast<std::size_t>(std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin());
  p.top = model.labels[top];
  return p;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

Prediction predict(const FerModel& model, const LandmarkSet& landmarks) {
  const auto start = std::chrono::steady_clock::now();
  try {
    validate(landmarks);
  } catch (const LandmarkError& e) {
    throw PipelineError(Stage::ingest, e.what());
  }
  LandmarkSet aligned;
  try {
    aligned = normalize(landmarks);
  } catch (const LandmarkError& e) {
    throw PipelineError(Stage::align, e.what());
  }
  RasterImage img;
  try {
    img = rasterize(aligned);
  } catch (const LandmarkError& e) {
    throw PipelineError(Stage::rasterize, e.what());
  }
  Prediction p = classify(model, to_input(img));
  p.latency_ms = elapsed_ms(start);
  return p;
}

Prediction predict_image(const FerModel& model, const RasterImage& img) {
  const auto start = std::chrono::steady_clock::now();
  Prediction p = classify(model, to_input(img));
  p.latency_ms = elapsed_ms(start);
  return p;
}

// ------------------------------------------------------------- confusion

namespace {
std::size_t idx(Emotion e) { return static_cast<std::size_t>(code(e)); }
}  // namespace

void ConfusionMatrix::add(Emotion truth, Emotion predicted, std::size_t n) { counts_[idx(truth)][idx(predicted)] += n; }

std::size_t ConfusionMatrix::at(Emotion truth, Emotion predicted) const { return counts_[idx(truth)][idx(predicted)]; }

std::size_t ConfusionMatrix::row_sum(Emotion truth) const {
  std::size_t s = 0;
  for (std::size_t v : counts_[idx(truth)]) s += v;
  return s;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t s = 0;
  for (Emotion e : kAllEmotions) s += row_sum(e);
  return s;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t s = 0;
  for (std::size_t i = 0; i < kEmotionCount; ++i) s += counts_[i][i];
  return s;
}

double ConfusionMatrix::accuracy() const {
  const std::size_t n = total();
  if (n == 0) throw EvaluationError("accuracy of an empty confusion matrix");
  return static_cast<double>(trace()) / static_cast<double>(n);
}

std::string ConfusionMatrix::to_text() const {
  std::ostringstream out;
  out << std::setw(11) << "true\\pred";
  for (Emotion e : kAllEmotions) out << std::setw(10) << to_string(e);
  out << '\n';
  for (Emotion t : kAllEmotions) {
    out << std::setw(11) << to_string(t);
    for (Emotion p : kAllEmotions) out << std::setw(10) << at(t, p);
    out << '\n';
  }
  return out.str();
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream out;
  out << "label";
  for (Emotion e : kAllEmotions) out << ',' << to_string(e);
  out << '\n';
  for (Emotion t : kAllEmotions) {
    out << to_string(t);
    for (Emotion p : kAllEmotions) out << ',' << at(t, p);
    out << '\n';
  }
  return out.str();
}

ConfusionMatrix tabulate(const std::vector<Emotion>& truth, const std::vector<Emotion>& predicted) {
  if (truth.size() != predicted.size()) throw EvaluationError("truth and prediction lists differ in length");
  if (truth.empty()) throw EvaluationError("cannot evaluate an empty sample set");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < truth.size(); ++i) m.add(truth[i], predicted[i]);
  return m;
}

CompositeSource::CompositeSource(const augment::Dataset& dataset, std::vector<std::size_t> indices)
    : dataset_(&dataset), indices_(std::move(indices)) {
  for (std::size_t i : indices_) {
    if (i >= dataset.samples.size()) throw EvaluationError("sample index out of range");
  }
}

nn::Tensor CompositeSource::input(std::size_t i) const {
  std::vector<float> px(kImagePixels);
  dataset_->samples[indices_.at(i)].compose_into(px);
  return nn::Tensor({kImageSize, kImageSize, 1}, std::vector<double>(px.begin(), px.end()));
}

std::size_t CompositeSource::label(std::size_t i) const {
  return static_cast<std::size_t>(code(dataset_->samples[indices_.at(i)].label()));
}

Evaluation evaluate(const FerModel& model, const nn::SampleSource& samples, unsigned threads) {
  if (samples.size() == 0) throw EvaluationError("cannot evaluate an empty sample set");
  const auto r = nn::evaluate_source(model.network, samples, threads);
  Evaluation ev;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ev.matrix.add(kAllEmotions[samples.label(i)], model.labels[r.predictions[i]]);
  }
  ev.accuracy = ev.matrix.accuracy();
  return ev;
}

std::string manifest_hash(const augment::DatasetManifest& manifest) {
  const std::string text = augment::manifest_to_json(manifest);
  return detail::hex64(detail::fnv1a(text.data(), text.size()));
}

nn::TrainResult train_model(FerModel& model, const augment::Dataset& dataset, const augment::DatasetManifest& manifest,
                            const nn::TrainConfig& config, const nn::EpochCallback& on_epoch) {
  const CompositeSource train_set(dataset, manifest.train), val_set(dataset, manifest.val);
  auto result = nn::train(model.network, train_set, val_set, config, on_epoch);
  model.network.round_to_float();
  model.meta["train_seed"] = config.seed;
  model.meta["learning_rate"] = config.learning_rate;
  model.meta["manifest_hash"] = manifest_hash(manifest);
  model.meta["leakage_mode"] = std::string(augment::to_string(manifest.leakage_mode));
  model.meta["epochs"] = result.epochs.size();
  model.meta["best_epoch"] = result.best_epoch;
  return result;
}

void save_model(const std::filesystem::path& path, const FerModel& model) {
  nlohmann::json meta = model.meta;
  meta["labels"] = nlohmann::json::array();
  for (Emotion e : model.labels) meta["labels"].push_back(std::string(to_string(e)));
  nn::save_checkpoint(path, model.network, meta);
}

FerModel load_model(const std::filesystem::path& path) {
  auto ck = nn::load_checkpoint(path);
  FerModel m;
  m.network = std::move(ck.network);
  m.meta = std::move(ck.meta);
  if (m.meta.contains("labels")) {
    const auto& labels = m.meta["labels"];
    if (!labels.is_array() || labels.size() != kEmotionCount) throw nn::CheckpointError("checkpoint labels must list 7 classes");
    for (std::size_t i = 0; i < kEmotionCount; ++i) {
      const auto e = emotion_from_string(labels[i].get<std::string>());
      if (!e) throw nn::CheckpointError("unknown label in checkpoint");
      m.labels[i] = *e;
    }
  }
  if (m.network.find(kEmbeddingLayer) == m.network.size()) throw nn::CheckpointError("checkpoint has no embedding layer");
  return m;
}

// ------------------------------------------------------------- identity

IdentityGallery::IdentityGallery(double threshold) : threshold_(threshold) {
  if (!(threshold >= -1.0 && threshold <= 1.0)) throw GalleryError("threshold must lie in [-1, 1]");
}

IdentityGallery::IdentityGallery(const IdentityGallery& other) {
  std::shared_lock lock(other.mutex_);
  threshold_ = other.threshold_;
  next_id_ = other.next_id_;
  people_ = other.people_;
}

IdentityGallery& IdentityGallery::operator=(const IdentityGallery& other) {
  if (this != &other) {
    IdentityGallery copy(other);
    std::unique_lock lock(mutex_);
    threshold_ = copy.threshold_;
    next_id_ = copy.next_id_;
    people_ = std::move(copy.people_);
  }
  return *this;
}

double IdentityGallery::threshold() const {
  std::shared_lock lock(mutex_);
  return threshold_;
}

void IdentityGallery::set_threshold(double t) {
  if (!(t >= -1.0 && t <= 1.0)) throw GalleryError("threshold must lie in [-1, 1]");
  std::unique_lock lock(mutex_);
  threshold_ = t;
}

void IdentityGallery::check_unit(const std::vector<double>& e) {
  if (e.empty()) throw GalleryError("empty embedding");
  double sq = 0.0;
  for (double v : e) {
    if (!std::isfinite(v)) throw GalleryError("embedding has a non-finite value");
    sq += v * v;
  }
  if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) throw GalleryError("embedding is not unit-norm");
}

std::string IdentityGallery::enroll(const std::string& display_name, const std::vector<double>& embedding) {
  check_unit(embedding);
  std::unique_lock lock(mutex_);
  if (!people_.empty() && people_.front().embeddings.front().size() != embedding.size()) {
    throw GalleryError("embedding dimension differs from the gallery's");
  }
  char id[16];
  std::snprintf(id, sizeof id, "p%04zu", next_id_++);
  people_.push_back({id, display_name, {embedding}});
  return id;
}

void IdentityGallery::add_embedding(const std::string& person_id, const std::vector<double>& embedding) {
  check_unit(embedding);
  std::unique_lock lock(mutex_);
  for (auto& p : people_) {
    if (p.id == person_id) {
      if (p.embeddings.front().size() != embedding.size()) throw GalleryError("embedding dimension mismatch");
      p.embeddings.push_back(embedding);
      return;
    }
  }
  throw GalleryError("unknown person '" + person_id + "'");
}

IdentifyResult IdentityGallery::identify(const std::vector<double>& embedding) const {
  check_unit(embedding);
  std::shared_lock lock(mutex_);
  IdentifyResult r;
  // people_ is kept in id order, so a strict comparison leaves ties with
  // the lowest id.
  for (const auto& p : people_) {
    for (const auto& e : p.embeddings) {
      if (e.size() != embedding.size()) throw GalleryError("embedding dimension differs from the gallery's");
      double dot = 0.0;
      for (std::size_t i = 0; i < e.size(); ++i) dot += e[i] * embedding[i];
      if (!r.best || dot > r.best->similarity) r.best = Match{p.id, p.name, dot};
    }
  }
  if (r.best && r.best->similarity >= threshold_) r.match = r.best;
  return r;
}

std::size_t IdentityGallery::size() const {
  std::shared_lock lock(mutex_);
  return people_.size();
}

nlohmann::json IdentityGallery::to_json() const {
  std::shared_lock lock(mutex_);
  nlohmann::json people = nlohmann::json::array();
  for (const auto& p : people_) {
    people.push_back({{"person_id", p.id}, {"name", p.name}, {"embeddings", p.embeddings}});
  }
  return {{"v", 1}, {"threshold", threshold_}, {"next_id", next_id_}, {"people", people}};
}

IdentityGallery IdentityGallery::from_json(const nlohmann::json& j) {
  try {
    IdentityGallery g(j.at("threshold").get<double>());
    g.next_id_ = j.at("next_id").get<std::size_t>();
    for (const auto& p : j.at("people")) {
      Person person{p.at("person_id").get<std::string>(), p.at("name").get<std::string>(),
                    p.at("embeddings").get<std::vector<std::vector<double>>>()};
      if (person.embeddings.empty()) throw GalleryError("person without embeddings");
      for (const auto& e : person.embeddings) check_unit(e);
      for (const auto& q : g.people_) {
        if (q.id == person.id) throw GalleryError("duplicate person id '" + person.id + "'");
      }
      g.people_.push_back(std::move(person));
    }
    std::sort(g.people_.begin(), g.people_.end(), [](const Person& a, const Person& b) { return a.id < b.id; });
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw GalleryError(std::string("invalid gallery file: ") + e.what());
  }
}

void IdentityGallery::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw GalleryError("cannot write gallery " + path.string());
  out << to_json().dump(2) << '\n';
}

IdentityGallery IdentityGallery::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GalleryError("cannot read gallery " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw GalleryError(std::string("invalid gallery file: ") + e.what());
  }
}

}  // namespace maya::fer
