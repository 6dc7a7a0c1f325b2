#include "maya/augment.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "maya/detail/le_io.hpp"
#include "maya/rng.hpp"

namespace maya::augment {

void validate(const HalfBank& bank) {
  if (bank.uppers.size() != bank.lowers.size()) {
    throw AugmentError("half bank for " + std::string(maya::to_string(bank.label)) +
                       " has unequal upper/lower counts");
  }
  for (const auto* list : {&bank.uppers, &bank.lowers}) {
    std::set<std::string> seen;
    for (const auto& h : *list) {
      if (!seen.insert(h.source_id).second) {
        throw AugmentError("duplicate source id '" + h.source_id + "' in half bank");
      }
      if (h.image.pixels.size() != kHalfPixels) throw AugmentError("half image has wrong size");
    }
  }
}

HalfBank make_half_bank(Emotion label, const std::vector<LandmarkSet>& sets) {
  HalfBank bank;
  bank.label = label;
  bank.uppers.reserve(sets.size());
  bank.lowers.reserve(sets.size());
  for (const auto& ls : sets) {
    if (ls.label != label) {
      throw AugmentError("landmark set '" + ls.subject_id + "' is not labelled " +
                         std::string(maya::to_string(label)));
    }
    auto [upper, lower] = split_halves(rasterize(normalize(ls)));
    bank.uppers.push_back({ls.subject_id, std::move(upper)});
    bank.lowers.push_back({ls.subject_id, std::move(lower)});
  }
  validate(bank);
  return bank;
}

std::vector<std::shared_ptr<const HalfBank>> banks_from_corpus(const std::vector<LandmarkSet>& corpus) {
  std::array<std::vector<LandmarkSet>, kEmotionCount> grouped;
  for (const auto& ls : corpus) {
    if (!ls.label) throw AugmentError("unlabelled landmark set '" + ls.subject_id + "' in corpus");
    grouped[static_cast<std::size_t>(code(*ls.label))].push_back(ls);
  }
  std::vector<std::shared_ptr<const HalfBank>> banks;
  for (Emotion e : kAllEmotions) {
    const auto& sets = grouped[static_cast<std::size_t>(code(e))];
    if (sets.empty()) continue;
    banks.push_back(std::make_shared<const HalfBank>(make_half_bank(e, sets)));
  }
  return banks;
}

CompositeSample::CompositeSample(std::shared_ptr<const HalfBank> bank, std::size_t upper, std::size_t lower)
    : bank_(std::move(bank)), upper_(upper), lower_(lower) {
  if (!bank_ || upper_ >= bank_->uppers.size() || lower_ >= bank_->lowers.size()) {
    throw AugmentError("composite refers outside its half bank");
  }
}

void CompositeSample::compose_into(std::span<float> out) const {
  if (out.size() != kImagePixels) throw AugmentError("compose_into: buffer must hold 9216 pixels");
  const auto& up = bank_->uppers[upper_].image.pixels;
  const auto& lo = bank_->lowers[lower_].image.pixels;
  std::copy(up.begin(), up.end(), out.begin());
  std::copy(lo.begin(), lo.end(), out.begin() + static_cast<std::ptrdiff_t>(kHalfPixels));
}

RasterImage CompositeSample::image() const {
  RasterImage img;
  compose_into(img.pixels);
  return img;
}

std::vector<CompositeSample> generate_composites(const std::shared_ptr<const HalfBank>& bank) {
  if (!bank || bank->size() == 0) throw AugmentError("cannot generate composites from an empty half bank");
  validate(*bank);
  const std::size_t n = bank->size();
  std::vector<CompositeSample> out;
  out.reserve(n * n);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t l = 0; l < n; ++l) out.emplace_back(bank, u, l);
  }
  return out;
}

std::string_view to_string(LeakageMode mode) {
  return mode == LeakageMode::paper ? "paper" : "source-disjoint";
}

LeakageMode leakage_mode_from_string(std::string_view name) {
  if (name == "paper") return LeakageMode::paper;
  if (name == "source-disjoint") return LeakageMode::source_disjoint;
  throw AugmentError("unknown leakage mode '" + std::string(name) + "'");
}

SplitSizes apportion(std::size_t total, const SplitFractions& f) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw AugmentError("split fractions must be nonnegative and sum to 1");
  }
  const double n = static_cast<double>(total);
  // Quotas like 0.7 * 45 land a hair below their exact value; the slack
  // keeps exact ties and exact integers from flipping.
  const double slack = 1e-9 * std::max(1.0, n);
  auto whole = [&](double q) { return std::floor(q + slack); };
  SplitSizes sizes;
  sizes.test = static_cast<std::size_t>(whole(f.test * n + 0.5));
  const std::size_t rest = total - sizes.test;

  const double q_train = f.train * n;
  const double q_val = f.val * n;
  sizes.train = static_cast<std::size_t>(whole(q_train));
  sizes.val = static_cast<std::size_t>(whole(q_val));
  const double r_train = q_train - static_cast<double>(sizes.train);
  const double r_val = q_val - static_cast<double>(sizes.val);
  const bool train_first = r_train >= r_val - slack;
  std::size_t* order[2] = {train_first ? &sizes.train : &sizes.val, train_first ? &sizes.val : &sizes.train};
  const std::size_t leftover = rest - sizes.train - sizes.val;
  for (std::size_t i = 0; i < leftover; ++i) ++*order[i % 2];
  return sizes;
}

std::size_t DatasetManifest::total() const { return train.size() + val.size() + test.size() + discarded.size(); }

const std::vector<std::size_t>& DatasetManifest::indices(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return test;
}

Dataset build_dataset(const std::vector<std::shared_ptr<const HalfBank>>& banks) {
  std::array<std::shared_ptr<const HalfBank>, kEmotionCount> by_label{};
  for (const auto& bank : banks) {
    if (!bank) throw AugmentError("null half bank");
    auto& slot = by_label[static_cast<std::size_t>(code(bank->label))];
    if (slot) throw AugmentError("duplicate half bank for " + std::string(maya::to_string(bank->label)));
    slot = bank;
  }
  Dataset ds;
  for (Emotion e : kAllEmotions) {
    const auto& bank = by_label[static_cast<std::size_t>(code(e))];
    if (!bank) throw AugmentError("missing half bank for class " + std::string(maya::to_string(e)));
    auto composites = generate_composites(bank);
    ds.per_class_counts[static_cast<std::size_t>(code(e))] = composites.size();
    ds.samples.insert(ds.samples.end(), std::make_move_iterator(composites.begin()),
                      std::make_move_iterator(composites.end()));
  }
  return ds;
}

namespace {

using Allocation = std::array<std::array<std::size_t, 3>, kEmotionCount>;

// Splits each class count across train/val/test so that row sums equal the
// class counts, column sums equal the overall split sizes, and every cell is
// its proportional quota rounded down or up. The extra units are placed by
// augmenting paths over (class, split) cells, trying the largest fractional
// parts first, which always succeeds for a table whose margins add up.
Allocation allocate_by_class(const std::array<std::size_t, kEmotionCount>& counts, const SplitSizes& totals) {
  const std::array<std::size_t, 3> column_target = {totals.train, totals.val, totals.test};
  const double n = static_cast<double>(totals.total());
  Allocation alloc{};
  std::array<std::array<double, 3>, kEmotionCount> frac{};
  std::array<std::size_t, kEmotionCount> row_need{};
  std::array<std::size_t, 3> col_spare = column_target;

  for (std::size_t c = 0; c < kEmotionCount; ++c) {
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double quota = static_cast<double>(counts[c]) * static_cast<double>(column_target[s]) / n;
      const auto whole = static_cast<std::size_t>(std::floor(quota + 1e-9));
      alloc[c][s] = whole;
      frac[c][s] = quota - static_cast<double>(whole);
      assigned += whole;
      col_spare[s] -= whole;
    }
    row_need[c] = counts[c] - assigned;
  }

  std::array<std::array<bool, 3>, kEmotionCount> bumped{};
  auto by_fraction = [&](std::size_t c) {
    std::array<std::size_t, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[c][a] > frac[c][b]; });
    return order;
  };
  // Finds a split for one more unit of class c, possibly moving another
  // class's unit to a different split to make room.
  std::function<bool(std::size_t, std::array<bool, 3>&, bool)> augment = [&](std::size_t c, std::array<bool, 3>& seen,
                                                                             bool allow_whole) {
    for (std::size_t s : by_fraction(c)) {
      if (bumped[c][s] || seen[s] || (!allow_whole && frac[c][s] <= 1e-9)) continue;
      seen[s] = true;
      if (col_spare[s] > 0) {
        --col_spare[s];
        bumped[c][s] = true;
        return true;
      }
      for (std::size_t other = 0; other < kEmotionCount; ++other) {
        if (other == c || !bumped[other][s]) continue;
        bumped[other][s] = false;
        if (augment(other, seen, allow_whole)) {
          bumped[c][s] = true;
          return true;
        }
        bumped[other][s] = true;
      }
    }
    return false;
  };
  for (std::size_t c = 0; c < kEmotionCount; ++c) {
    while (row_need[c] > 0) {
      std::array<bool, 3> seen{};
      if (!augment(c, seen, false)) {
        seen = {};
        if (!augment(c, seen, true)) throw AugmentError("cannot balance the stratified split");
      }
      --row_need[c];
    }
  }
  for (std::size_t c = 0; c < kEmotionCount; ++c) {
    for (std::size_t s = 0; s < 3; ++s) alloc[c][s] += bumped[c][s] ? 1 : 0;
  }
  return alloc;
}

std::vector<std::size_t>& bucket(DatasetManifest& m, std::size_t split) {
  return split == 0 ? m.train : split == 1 ? m.val : m.test;
}

}  // namespace

DatasetManifest stratified_split(const Dataset& dataset, const SplitFractions& fractions, std::uint64_t seed,
                                 LeakageMode mode) {
  DatasetManifest m;
  m.seed = seed;
  m.leakage_mode = mode;
  m.per_class_counts = dataset.per_class_counts;

  std::array<std::vector<std::size_t>, kEmotionCount> by_class;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    by_class[static_cast<std::size_t>(code(dataset.samples[i].label()))].push_back(i);
  }
  for (Emotion e : kAllEmotions) {
    if (by_class[static_cast<std::size_t>(code(e))].empty()) {
      throw AugmentError("class " + std::string(maya::to_string(e)) + " has no samples");
    }
  }

  Rng rng(seed);
  if (mode == LeakageMode::paper) {
    std::array<std::size_t, kEmotionCount> counts{};
    for (std::size_t c = 0; c < kEmotionCount; ++c) counts[c] = by_class[c].size();
    const SplitSizes totals = apportion(dataset.samples.size(), fractions);
    const Allocation alloc = allocate_by_class(counts, totals);
    for (std::size_t c = 0; c < kEmotionCount; ++c) {
      auto& idx = by_class[c];
      shuffle(std::span<std::size_t>(idx), rng);
      std::size_t pos = 0;
      for (std::size_t s = 0; s < 3; ++s) {
        auto& dst = bucket(m, s);
        dst.insert(dst.end(), idx.begin() + static_cast<std::ptrdiff_t>(pos),
                   idx.begin() + static_cast<std::ptrdiff_t>(pos + alloc[c][s]));
        pos += alloc[c][s];
      }
    }
  } else {
    for (std::size_t c = 0; c < kEmotionCount; ++c) {
      // Distinct source stills of this class, in first-seen order.
      std::vector<std::string> sources;
      std::unordered_map<std::string, std::size_t> split_of;
      for (std::size_t i : by_class[c]) {
        for (const std::string* id : {&dataset.samples[i].upper_src(), &dataset.samples[i].lower_src()}) {
          if (split_of.emplace(*id, 0).second) sources.push_back(*id);
        }
      }
      shuffle(std::span<std::string>(sources), rng);
      const SplitSizes sizes = apportion(sources.size(), fractions);
      for (std::size_t k = 0; k < sources.size(); ++k) {
        split_of[sources[k]] = k < sizes.train ? 0 : k < sizes.train + sizes.val ? 1 : 2;
      }
      for (std::size_t i : by_class[c]) {
        const std::size_t su = split_of.at(dataset.samples[i].upper_src());
        const std::size_t sl = split_of.at(dataset.samples[i].lower_src());
        if (su == sl) {
          bucket(m, su).push_back(i);
        } else {
          m.discarded.push_back(i);
        }
      }
    }
  }
  for (auto* v : {&m.train, &m.val, &m.test, &m.discarded}) std::sort(v->begin(), v->end());
  return m;
}

std::string manifest_to_json(const DatasetManifest& m) {
  nlohmann::json doc;
  doc["v"] = 1;
  doc["seed"] = m.seed;
  doc["leakage_mode"] = std::string(to_string(m.leakage_mode));
  nlohmann::json counts = nlohmann::json::object();
  for (Emotion e : kAllEmotions) counts[std::string(maya::to_string(e))] = m.per_class_counts[static_cast<std::size_t>(code(e))];
  doc["per_class_counts"] = counts;
  doc["train"] = m.train;
  doc["val"] = m.val;
  doc["test"] = m.test;
  doc["discarded"] = m.discarded;
  return doc.dump();
}

DatasetManifest manifest_from_json(std::string_view text) {
  DatasetManifest m;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.at("v").get<int>() != 1) throw AugmentError("unsupported manifest version");
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.leakage_mode = leakage_mode_from_string(doc.at("leakage_mode").get<std::string>());
    for (Emotion e : kAllEmotions) {
      m.per_class_counts[static_cast<std::size_t>(code(e))] =
          doc.at("per_class_counts").at(std::string(maya::to_string(e))).get<std::size_t>();
    }
    m.train = doc.at("train").get<std::vector<std::size_t>>();
    m.val = doc.at("val").get<std::vector<std::size_t>>();
    m.test = doc.at("test").get<std::vector<std::size_t>>();
    if (doc.contains("discarded")) m.discarded = doc.at("discarded").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw AugmentError(std::string("invalid manifest: ") + e.what());
  }
  return m;
}

void write_pack(std::ostream& out, const Dataset& dataset, const std::vector<std::size_t>& indices) {
  out.write("MAYD", 4);
  detail::write_u32(out, kPackVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(indices.size()));
  std::vector<float> buf(kImagePixels);
  for (std::size_t i : indices) {
    const auto& sample = dataset.samples.at(i);
    const char label = static_cast<char>(code(sample.label()));
    out.write(&label, 1);
    sample.compose_into(buf);
    for (float v : buf) detail::write_f32(out, v);
  }
}

std::vector<PackedSample> read_pack(std::istream& in) {
  detail::expect_magic(in, "MAYD");
  if (detail::read_u32(in) != kPackVersion) throw AugmentError("unsupported pack version");
  const std::uint32_t count = detail::read_u32(in);
  std::vector<PackedSample> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    char raw = 0;
    if (!in.read(&raw, 1)) throw AugmentError("truncated pack file");
    const auto label = emotion_from_code(static_cast<unsigned char>(raw));
    if (!label) throw AugmentError("pack sample " + std::to_string(i) + " has an invalid label byte");
    PackedSample s{*label, std::vector<float>(kImagePixels)};
    for (float& v : s.pixels) v = detail::read_f32(in);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace maya::augment
