#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <thread>

#include "maya/fer.hpp"
#include "maya/rng.hpp"
#include "maya/synth.hpp"

using namespace maya;
using namespace maya::fer;

namespace {

const FerModel& shared_model() {
  static const FerModel m = build_maya_net(11);
  return m;
}

LandmarkSet sample_face(Emotion e, std::uint64_t seed) {
  auto corpus = augment::synth_corpus(1, seed);
  return corpus[static_cast<std::size_t>(code(e))];
}

std::vector<double> random_unit(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double sq = 0.0;
  for (double& x : v) {
    x = uniform_real(rng, -1.0, 1.0);
    sq += x * x;
  }
  for (double& x : v) x /= std::sqrt(sq);
  return v;
}

std::vector<double> negated(std::vector<double> v) {
  for (double& x : v) x = -x;
  return v;
}

// Inputs of shape {n}; label i % 7.
class VectorSource final : public nn::SampleSource {
 public:
  explicit VectorSource(std::vector<std::size_t> labels) : labels_(std::move(labels)) {}
  std::size_t size() const override { return labels_.size(); }
  nn::Tensor input(std::size_t i) const override { return nn::Tensor({4}, static_cast<double>(i % 5)); }
  std::size_t label(std::size_t i) const override { return labels_[i]; }

 private:
  std::vector<std::size_t> labels_;
};

// Constant predictor: zero weights, bias peaked at class c.
FerModel constant_model(std::size_t c) {
  FerModel m;
  m.network = nn::Network({nn::LayerSpec::fully_connected("head", 4, kEmotionCount, false)});
  auto params = m.network.parameters();
  for (double& w : params[0]->data()) w = 0.0;
  for (double& b : params[1]->data()) b = 0.0;
  (*params[1])[c] = 5.0;
  return m;
}

}  // namespace

TEST_CASE("parameter ledger matches the table exactly") {
  const auto ledger = param_ledger(shared_model());
  const std::vector<std::pair<std::string, std::size_t>> expect = {
      {"conv-1", 3200}, {"conv-2", 110784}, {"inception-3", 6966},
      {"inception-5", 3132}, {"conv-7", 52224}, {"fc-8", 49200}};
  const std::vector<std::string> rounded = {"3.2K", "110.8K", "7K", "3.1K", "52.2K", "49.2K"};
  REQUIRE(ledger.rows.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(ledger.rows[i].layer == expect[i].first);
    CHECK(ledger.rows[i].params == expect[i].second);
    CHECK(ledger.rows[i].rounded == rounded[i]);
  }
  CHECK(ledger.trunk_total == 225506);
  CHECK(ledger.head == 343);
  CHECK(shared_model().network.param_count() == 225506 + 343);
  CHECK(format_thousands(225506) == "225.5K");
  CHECK(format_thousands(999) == "1K");
}

TEST_CASE("shape trace on a 96x96x1 probe") {
  const auto rows = shared_model().network.shape_trace({96, 96, 1});
  const std::vector<nn::Shape> expect = {{48, 48, 64}, {24, 24, 64}, {12, 12, 192}, {6, 6, 192}, {6, 6, 32},
                                         {3, 3, 32},   {3, 3, 50},   {1, 1, 50},    {1, 1, 1024}, {1, 1, 48}};
  REQUIRE(rows.size() == 12);
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(rows[i].output == expect[i]);
  CHECK(rows[10].name == "l2norm");
  CHECK(rows[11].output == nn::Shape{1, 1, 7});
}

TEST_CASE("equal seeds build identical weights") {
  CHECK(build_maya_net(5).network == build_maya_net(5).network);
  CHECK_FALSE(build_maya_net(5).network == build_maya_net(6).network);
}

TEST_CASE("prediction invariants") {
  const auto& model = shared_model();
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    for (Emotion e : {Emotion::happiness, Emotion::surprise}) {
      const auto p = predict(model, sample_face(e, seed));
      double sum = 0.0;
      for (double v : p.probs) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
      const auto arg = std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin();
      CHECK(p.top == kAllEmotions[static_cast<std::size_t>(arg)]);
      REQUIRE(p.embedding.size() == kEmbeddingSize);
      double sq = 0.0;
      for (double v : p.embedding) sq += v * v;
      CHECK(std::abs(std::sqrt(sq) - 1.0) <= 1e-6);
      CHECK(p.latency_ms >= 0.0);
    }
  }
}

TEST_CASE("predict is pure and thread-safe") {
  const auto& model = shared_model();
  const auto face = sample_face(Emotion::anger, 3);
  const auto ref = predict(model, face);
  std::vector<Prediction> out(3);
  std::vector<std::thread> pool;
  for (auto& slot : out) pool.emplace_back([&] { slot = predict(model, face); });
  for (auto& t : pool) t.join();
  for (const auto& p : out) {
    CHECK(p.probs == ref.probs);
    CHECK(p.embedding == ref.embedding);
    CHECK(p.top == ref.top);
  }
  // The image path agrees with the landmark path.
  const auto via_image = predict_image(model, rasterize(normalize(face)));
  CHECK(via_image.probs == ref.probs);
}

TEST_CASE("pipeline errors name their stage") {
  const auto& model = shared_model();
  auto face = sample_face(Emotion::sadness, 1);

  SUBCASE("non-finite coordinate fails at ingest") {
    face.points[40].x = std::nan("");
    try {
      predict(model, face);
      FAIL("expected an error");
    } catch (const PipelineError& e) {
      CHECK(e.stage() == Stage::ingest);
      CHECK(std::string(e.what()).rfind("ingest: ", 0) == 0);
    }
  }
  SUBCASE("collapsed feature box fails at ingest") {
    for (auto& p : face.points) p = {10.0, 10.0};
    try {
      predict(model, face);
      FAIL("expected an error");
    } catch (const PipelineError& e) {
      CHECK(e.stage() == Stage::ingest);
    }
  }
  SUBCASE("a nose tip at the top of the face pushes strokes off the canvas") {
    // Every feature point below the nose tip: pinning the tip to row 48
    // leaves 80 px of face for 48 px of canvas.
    for (std::size_t i = kFirstFeaturePoint; i < kLandmarkCount; ++i) {
      face.points[i] = {static_cast<double>(i), 100.0 + static_cast<double>(i)};
    }
    face.points[kSeamPoint].y = 100.0;
    try {
      predict(model, face);
      FAIL("expected an error");
    } catch (const PipelineError& e) {
      CHECK(e.stage() == Stage::rasterize);
    }
  }
}

TEST_CASE("confusion matrix of a constant predictor") {
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 30; ++i) labels.push_back((i * 3) % kEmotionCount);
  const VectorSource src(labels);
  for (std::size_t c : {0u, 4u}) {
    const auto ev = evaluate(constant_model(c), src);
    std::size_t share = 0;
    for (std::size_t l : labels) share += l == c;
    for (Emotion t : kAllEmotions) {
      for (Emotion p : kAllEmotions) {
        if (static_cast<std::size_t>(code(p)) != c) CHECK(ev.matrix.at(t, p) == 0);
      }
      CHECK(ev.matrix.row_sum(t) == static_cast<std::size_t>(std::count(labels.begin(), labels.end(), code(t))));
    }
    CHECK(ev.accuracy == static_cast<double>(share) / 30.0);
  }
}

TEST_CASE("perfect predictor gives a diagonal matrix") {
  std::vector<Emotion> truth;
  for (std::size_t i = 0; i < 50; ++i) truth.push_back(kAllEmotions[(i * i) % kEmotionCount]);
  const auto m = tabulate(truth, truth);
  CHECK(m.accuracy() == 1.0);
  CHECK(m.trace() == 50);
  for (Emotion t : kAllEmotions) {
    for (Emotion p : kAllEmotions) {
      if (t != p) CHECK(m.at(t, p) == 0);
    }
  }
}

TEST_CASE("confusion matrix rendering and errors") {
  ConfusionMatrix m;
  m.add(Emotion::happiness, Emotion::happiness, 3);
  m.add(Emotion::happiness, Emotion::neutral);
  const std::string csv = m.to_csv();
  CHECK(csv.rfind("label,sadness,happiness,anger,stress,surprise,disgust,neutral\n", 0) == 0);
  CHECK(csv.find("happiness,0,3,0,0,0,0,1\n") != std::string::npos);
  CHECK(m.to_text().find("happiness") != std::string::npos);
  CHECK(m.accuracy() == 0.75);
  CHECK_THROWS_AS(ConfusionMatrix{}.accuracy(), EvaluationError);
  CHECK_THROWS_AS(tabulate({}, {}), EvaluationError);
  CHECK_THROWS_AS(tabulate({Emotion::anger}, {}), EvaluationError);
  CHECK_THROWS_AS(evaluate(constant_model(0), VectorSource({})), EvaluationError);
}

TEST_CASE("gallery enroll and identify") {
  Rng rng(3);
  IdentityGallery g;
  CHECK(g.threshold() == 0.80);
  const auto e1 = random_unit(rng, 48), e2 = random_unit(rng, 48);

  CHECK_FALSE(g.identify(e1).match);
  CHECK_FALSE(g.identify(e1).best);

  const auto id1 = g.enroll("Sara", e1);
  const auto id2 = g.enroll("Ali", e2);
  CHECK(id1 == "p0001");
  CHECK(id2 == "p0002");

  const auto r = g.identify(e2);
  REQUIRE(r.match);
  CHECK(r.match->person_id == id2);
  CHECK(r.match->display_name == "Ali");
  CHECK(std::abs(r.match->similarity - 1.0) <= 1e-6);

  const auto neg = g.identify(negated(e1));
  CHECK_FALSE(neg.match);

  CHECK_THROWS_AS(g.enroll("x", std::vector<double>(48, 1.0)), GalleryError);
  CHECK_THROWS_AS(g.enroll("x", {1.0, 0.0}), GalleryError);
  CHECK_THROWS_AS(g.add_embedding("p0099", e1), GalleryError);
  CHECK_THROWS_AS(g.set_threshold(1.5), GalleryError);
}

TEST_CASE("gallery ties go to the lowest id") {
  IdentityGallery g;
  std::vector<double> e(4, 0.0);
  e[0] = 1.0;
  g.enroll("first", e);
  g.enroll("second", e);
  CHECK(g.identify(e).match->person_id == "p0001");
}

TEST_CASE("gallery identify equals a brute-force scan") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    IdentityGallery g(uniform_real(rng, -0.2, 0.9));
    std::vector<std::pair<std::string, std::vector<double>>> flat;
    const std::size_t people = 1 + uniform_below(rng, 8);
    for (std::size_t p = 0; p < people; ++p) {
      auto e = random_unit(rng, 8);
      const auto id = g.enroll("n" + std::to_string(p), e);
      flat.emplace_back(id, e);
      for (std::size_t k = uniform_below(rng, 3); k > 0; --k) {
        auto extra = random_unit(rng, 8);
        g.add_embedding(id, extra);
        flat.emplace_back(id, extra);
      }
    }
    for (int q = 0; q < 10; ++q) {
      const auto query = random_unit(rng, 8);
      double best = -2.0;
      std::string best_id;
      for (const auto& [id, e] : flat) {
        double dot = 0.0;
        for (std::size_t i = 0; i < 8; ++i) dot += e[i] * query[i];
        if (dot > best || (dot == best && id < best_id)) {
          best = dot;
          best_id = id;
        }
      }
      const auto r = g.identify(query);
      REQUIRE(r.best);
      CHECK(r.best->person_id == best_id);
      CHECK(std::abs(r.best->similarity - best) <= 1e-12);
      CHECK(r.match.has_value() == (best >= g.threshold()));
    }
  }
}

TEST_CASE("matches never increase with the threshold") {
  Rng rng(23);
  IdentityGallery g;
  std::vector<std::vector<double>> centres;
  for (int c = 0; c < 5; ++c) {
    centres.push_back(random_unit(rng, 16));
    g.enroll("c" + std::to_string(c), centres.back());
  }
  // Queries: noisy copies of the centres.
  std::vector<std::vector<double>> queries;
  for (int q = 0; q < 60; ++q) {
    auto v = centres[static_cast<std::size_t>(q % 5)];
    double sq = 0.0;
    for (double& x : v) {
      x += uniform_real(rng, -0.3, 0.3);
      sq += x * x;
    }
    for (double& x : v) x /= std::sqrt(sq);
    queries.push_back(v);
  }
  std::size_t previous = queries.size() + 1;
  for (double t = -1.0; t <= 1.0 + 1e-12; t += 0.05) {
    g.set_threshold(std::min(t, 1.0));
    std::size_t matched = 0;
    for (const auto& q : queries) matched += g.identify(q).match.has_value();
    CHECK(matched <= previous);
    previous = matched;
  }
  CHECK(previous < queries.size());
}

TEST_CASE("gallery persists through JSON") {
  Rng rng(5);
  IdentityGallery g(0.7);
  const auto id = g.enroll("Sara", random_unit(rng, 48));
  g.add_embedding(id, random_unit(rng, 48));
  g.enroll("Ali", random_unit(rng, 48));
  const auto path = std::filesystem::temp_directory_path() / "maya_gallery_test.json";
  g.save(path);
  const auto back = IdentityGallery::load(path);
  std::filesystem::remove(path);
  CHECK(back.to_json() == g.to_json());
  CHECK(back.threshold() == 0.7);
  IdentityGallery copy = back;
  CHECK(copy.enroll("Neda", random_unit(rng, 48)) == "p0003");

  auto bad = g.to_json();
  bad["people"][0]["embeddings"][0][0] = 5.0;
  CHECK_THROWS_AS(IdentityGallery::from_json(bad), GalleryError);
  bad = g.to_json();
  bad["people"][1]["person_id"] = id;
  CHECK_THROWS_AS(IdentityGallery::from_json(bad), GalleryError);
  CHECK_THROWS_AS(IdentityGallery::from_json(nlohmann::json::object()), GalleryError);
}

TEST_CASE("model checkpoint round trip keeps predictions bit-identical") {
  FerModel m = build_maya_net(21);
  m.network.round_to_float();
  m.meta["note"] = "fixture";
  const auto path = std::filesystem::temp_directory_path() / "maya_fer_model_test.bin";
  save_model(path, m);
  const FerModel back = load_model(path);
  std::filesystem::remove(path);
  CHECK(back.network == m.network);
  CHECK(back.labels == m.labels);
  CHECK(back.meta["note"] == "fixture");
  const auto face = sample_face(Emotion::disgust, 9);
  CHECK(predict(back, face).probs == predict(m, face).probs);
}

TEST_CASE("manifest hash is stable and content-sensitive") {
  augment::DatasetManifest a;
  a.train = {0, 1, 2};
  a.test = {3};
  auto b = a;
  CHECK(manifest_hash(a) == manifest_hash(b));
  CHECK(manifest_hash(a).size() == 16);
  b.test = {4};
  CHECK(manifest_hash(a) != manifest_hash(b));
}
