#include "maya/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace maya::stats {

// ------------------------------------------------------------- distributions

namespace {

constexpr double kTiny = 1e-300;
constexpr double kCfEps = 1e-16;
constexpr int kCfMaxIter = 20000;

// Continued fraction for I_x(a, b), modified Lentz.
double beta_cf(double a, double b, double x) {
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kCfMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kCfEps) return h;
  }
  return h;  // converged to double precision long before this in practice
}

// I_x(a, b) with y = 1 - x passed in exactly, so callers with a small
// complement keep it.
double ibeta(double a, double b, double x, double y) {
  if (x <= 0.0) return 0.0;
  if (y <= 0.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log(y);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, y) / b;
}

void check_df(double df) {
  if (!(df > 0.0) || !std::isfinite(df)) throw StatsError("invalid-df", "degrees of freedom must be positive");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw StatsError("invalid-argument", "incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw StatsError("invalid-argument", "incomplete beta needs x in [0, 1]");
  return ibeta(a, b, x, 1.0 - x);
}

double two_tailed_p(double t, double df) {
  check_df(df);
  if (std::isnan(t)) throw StatsError("invalid-argument", "t is NaN");
  if (std::isinf(t)) return 0.0;
  const double t2 = t * t;
  // P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)
  return std::clamp(ibeta(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2)), 0.0, 1.0);
}

double t_cdf(double x, double df) {
  check_df(df);
  if (std::isnan(x)) throw StatsError("invalid-argument", "x is NaN");
  if (x == 0.0) return 0.5;
  const double tail = two_tailed_p(x, df) / 2.0;
  return x < 0.0 ? tail : 1.0 - tail;
}

// ------------------------------------------------------------- t-tests

Descriptive describe(std::span<const double> xs) {
  Descriptive d;
  d.n = xs.size();
  if (xs.empty()) return d;
  double sum = 0.0;
  for (double v : xs) sum += v;
  d.mean = sum / static_cast<double>(d.n);
  if (d.n > 1) {
    double ss = 0.0;
    for (double v : xs) ss += (v - d.mean) * (v - d.mean);
    d.sd = std::sqrt(ss / static_cast<double>(d.n - 1));
  }
  return d;
}

std::string_view to_string(TestKind k) { return k == TestKind::paired ? "paired" : "welch"; }

nlohmann::json to_json(const TTestResult& r) {
  return {{"kind", std::string(to_string(r.kind))},
          {"t", r.t},
          {"df", r.df},
          {"p_two_tailed", r.p_two_tailed},
          {"mean_a", r.mean_a},
          {"mean_b", r.mean_b},
          {"sd_a", r.sd_a},
          {"sd_b", r.sd_b},
          {"n_a", r.n_a},
          {"n_b", r.n_b}};
}

namespace {

void require_finite(std::span<const double> xs) {
  for (double v : xs) {
    if (!std::isfinite(v)) throw StatsError("invalid-input", "sample contains a non-finite value");
  }
}

}  // namespace

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw StatsError("length-mismatch", "paired samples differ in length");
  if (a.size() < 2) throw StatsError("too-few-samples", "paired t-test needs at least 2 pairs");
  require_finite(a);
  require_finite(b);
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const auto dd = describe(d);
  if (dd.sd == 0.0) throw StatsError("degenerate-variance", "differences have zero variance");

  const auto da = describe(a), db = describe(b);
  TTestResult r;
  r.kind = TestKind::paired;
  r.n_a = r.n_b = a.size();
  r.mean_a = da.mean;
  r.mean_b = db.mean;
  r.sd_a = da.sd;
  r.sd_b = db.sd;
  r.t = dd.mean / (dd.sd / std::sqrt(static_cast<double>(dd.n)));
  r.df = static_cast<double>(dd.n - 1);
  r.p_two_tailed = two_tailed_p(r.t, r.df);
  return r;
}

TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw StatsError("too-few-samples", "each group needs at least 2 values");
  require_finite(a);
  require_finite(b);
  const auto da = describe(a), db = describe(b);
  const double va = da.sd * da.sd / static_cast<double>(da.n);
  const double vb = db.sd * db.sd / static_cast<double>(db.n);
  if (va + vb == 0.0) throw StatsError("degenerate-variance", "both groups have zero variance");

  TTestResult r;
  r.kind = TestKind::welch;
  r.n_a = da.n;
  r.n_b = db.n;
  r.mean_a = da.mean;
  r.mean_b = db.mean;
  r.sd_a = da.sd;
  r.sd_b = db.sd;
  r.t = (da.mean - db.mean) / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) /
         (va * va / static_cast<double>(da.n - 1) + vb * vb / static_cast<double>(db.n - 1));
  r.p_two_tailed = two_tailed_p(r.t, r.df);
  return r;
}

// ------------------------------------------------------------- UTAUT

void CategoryMap::validate() const {
  std::array<int, kUtautQuestions> seen{};
  for (const auto& c : categories) {
    if (c.name.empty()) throw StatsError("invalid-map", "category without a name");
    if (c.questions.empty()) throw StatsError("invalid-map", "category " + c.name + " has no questions");
    for (int q : c.questions) {
      if (q < 1 || q > static_cast<int>(kUtautQuestions)) {
        throw StatsError("invalid-map", "category " + c.name + " uses question " + std::to_string(q));
      }
      ++seen[static_cast<std::size_t>(q - 1)];
    }
  }
  for (std::size_t i = 0; i < kUtautQuestions; ++i) {
    if (seen[i] != 1) {
      throw StatsError("invalid-map", "question " + std::to_string(i + 1) + " is used " + std::to_string(seen[i]) +
                                          " times");
    }
  }
}

CategoryMap CategoryMap::standard() {
  const std::pair<const char*, std::pair<int, int>> ranges[] = {
      {"ANX", {1, 4}},     {"ATT", {5, 7}},   {"FC", {8, 9}},    {"ITU", {10, 12}}, {"PAD", {13, 15}},
      {"PENJ", {16, 20}},  {"PEOU", {21, 25}}, {"PS", {26, 29}}, {"PU", {30, 32}},  {"SI", {33, 34}},
      {"SP", {35, 37}},    {"Trust", {38, 39}}, {"ATEG", {40, 43}}};
  CategoryMap m;
  for (const auto& [name, span] : ranges) {
    Category c{name, {}};
    for (int q = span.first; q <= span.second; ++q) c.questions.push_back(q);
    m.categories.push_back(std::move(c));
  }
  return m;
}

std::string_view to_string(Group g) { return g == Group::child ? "child" : "parent"; }

std::optional<Group> group_from_string(std::string_view s) {
  if (s == "child") return Group::child;
  if (s == "parent") return Group::parent;
  return std::nullopt;
}

void UtautResponse::validate() const {
  const std::string who = "respondent '" + respondent_id + "'";
  if (respondent_id.empty()) throw StatsError("invalid-response", "response without respondent_id");
  if (answers.size() != kUtautQuestions) {
    throw StatsError("invalid-response", who + " has " + std::to_string(answers.size()) + " answers, expected 43");
  }
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (answers[i] < 1 || answers[i] > 5) {
      throw StatsError("invalid-response", who + " answered q" + std::to_string(i + 1) + " with " +
                                               std::to_string(answers[i]) + ", expected 1..5");
    }
  }
}

nlohmann::json to_json(const UtautResponse& r) {
  nlohmann::json j = {{"respondent_id", r.respondent_id}, {"group", std::string(to_string(r.group))}, {"answers", r.answers}};
  j["dyad_id"] = r.dyad_id ? nlohmann::json(*r.dyad_id) : nlohmann::json(nullptr);
  return j;
}

UtautResponse utaut_response_from_json(const nlohmann::json& j) {
  UtautResponse r;
  try {
    r.respondent_id = j.at("respondent_id").get<std::string>();
    const auto g = group_from_string(j.at("group").get<std::string>());
    if (!g) throw StatsError("invalid-response", "respondent '" + r.respondent_id + "' has an unknown group");
    r.group = *g;
    if (j.contains("dyad_id") && !j["dyad_id"].is_null()) r.dyad_id = j["dyad_id"].get<std::string>();
    r.answers = j.at("answers").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    const std::string who = r.respondent_id.empty() ? "response" : "respondent '" + r.respondent_id + "'";
    throw StatsError("invalid-response", who + ": " + e.what());
  }
  r.validate();
  return r;
}

namespace {

double item(const UtautResponse& r, int q, const CategoryMap& map) {
  const int v = r.answers[static_cast<std::size_t>(q - 1)];
  return map.reversed[static_cast<std::size_t>(q - 1)] ? 6.0 - v : static_cast<double>(v);
}

double category_score(const UtautResponse& r, const Category& c, const CategoryMap& map) {
  double sum = 0.0;
  for (int q : c.questions) sum += item(r, q, map);
  return sum / static_cast<double>(c.questions.size());
}

}  // namespace

std::vector<CategoryScores> score_utaut(std::span<const UtautResponse> responses, const CategoryMap& map) {
  map.validate();
  std::vector<CategoryScores> out;
  out.reserve(responses.size());
  for (const auto& r : responses) {
    r.validate();
    CategoryScores s{r.respondent_id, r.group, {}};
    for (const auto& c : map.categories) s.scores.push_back(category_score(r, c, map));
    out.push_back(std::move(s));
  }
  return out;
}

std::string_view to_string(Pairing p) { return p == Pairing::independent ? "independent" : "by_dyad"; }

std::optional<Pairing> pairing_from_string(std::string_view s) {
  if (s == "independent") return Pairing::independent;
  if (s == "by_dyad") return Pairing::by_dyad;
  return std::nullopt;
}

nlohmann::json to_json(const ComparisonRow& row) {
  nlohmann::json j = {{"label", row.label},
                      {"children", {{"n", row.children.n}, {"mean", row.children.mean}, {"sd", row.children.sd}}},
                      {"parents", {{"n", row.parents.n}, {"mean", row.parents.mean}, {"sd", row.parents.sd}}}};
  j["test"] = row.test ? to_json(*row.test) : nlohmann::json(nullptr);
  j["error_code"] = row.error_code ? nlohmann::json(*row.error_code) : nlohmann::json(nullptr);
  return j;
}

namespace {

// Rows of (children, parents) in the order the test consumes them.
struct Arranged {
  std::vector<const UtautResponse*> children;
  std::vector<const UtautResponse*> parents;
};

Arranged arrange(std::span<const UtautResponse> children, std::span<const UtautResponse> parents, Pairing pairing) {
  if (children.empty() || parents.empty()) throw StatsError("empty-group", "both groups need at least one response");
  for (const auto& r : children) r.validate();
  for (const auto& r : parents) r.validate();
  Arranged a;
  if (pairing == Pairing::independent) {
    for (const auto& r : children) a.children.push_back(&r);
    for (const auto& r : parents) a.parents.push_back(&r);
    return a;
  }
  std::map<std::string, std::pair<const UtautResponse*, const UtautResponse*>> dyads;
  auto place = [&](const UtautResponse& r, bool child) {
    if (!r.dyad_id) throw StatsError("incomplete-dyads", "respondent '" + r.respondent_id + "' has no dyad_id");
    auto& slot = child ? dyads[*r.dyad_id].first : dyads[*r.dyad_id].second;
    if (slot) throw StatsError("incomplete-dyads", "dyad '" + *r.dyad_id + "' has two respondents in one group");
    slot = &r;
  };
  for (const auto& r : children) place(r, true);
  for (const auto& r : parents) place(r, false);
  for (const auto& [id, pair] : dyads) {
    if (!pair.first || !pair.second) throw StatsError("incomplete-dyads", "dyad '" + id + "' is missing a member");
    a.children.push_back(pair.first);
    a.parents.push_back(pair.second);
  }
  return a;
}

template <typename Score>
ComparisonRow compare_on(const std::string& label, const Arranged& a, Pairing pairing, Score&& score) {
  std::vector<double> xs, ys;
  for (const auto* r : a.children) xs.push_back(score(*r));
  for (const auto* r : a.parents) ys.push_back(score(*r));
  ComparisonRow row{label, describe(xs), describe(ys), std::nullopt, std::nullopt};
  try {
    row.test = pairing == Pairing::independent ? welch_t_test(xs, ys) : paired_t_test(xs, ys);
  } catch (const StatsError& e) {
    row.error_code = e.code();
  }
  return row;
}

}  // namespace

std::vector<ComparisonRow> compare_groups(std::span<const UtautResponse> children,
                                          std::span<const UtautResponse> parents, const CategoryMap& map,
                                          Pairing pairing) {
  map.validate();
  const Arranged a = arrange(children, parents, pairing);
  std::vector<ComparisonRow> rows;
  for (const auto& c : map.categories) {
    rows.push_back(compare_on(c.name, a, pairing, [&](const UtautResponse& r) { return category_score(r, c, map); }));
  }
  return rows;
}

std::vector<ComparisonRow> compare_questions(std::span<const UtautResponse> children,
                                             std::span<const UtautResponse> parents, const std::vector<int>& questions,
                                             const CategoryMap& map, Pairing pairing) {
  const Arranged a = arrange(children, parents, pairing);
  std::vector<ComparisonRow> rows;
  for (int q : questions) {
    if (q < 1 || q > static_cast<int>(kUtautQuestions)) {
      throw StatsError("invalid-question", "question " + std::to_string(q) + " is outside 1..43");
    }
    rows.push_back(compare_on("Q" + std::to_string(q), a, pairing, [&](const UtautResponse& r) { return item(r, q, map); }));
  }
  return rows;
}

namespace {

std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

int parse_int(const std::string& s, const std::string& what) {
  int v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw StatsError("invalid-csv", what + ": '" + s + "' is not an integer");
  return v;
}

}  // namespace

std::vector<UtautResponse> read_responses_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw StatsError("invalid-csv", "empty responses file");
  const auto header = split_csv_line(line);
  if (header.size() != 3 + kUtautQuestions || header[0] != "respondent_id" || header[1] != "group" ||
      header[2] != "dyad_id") {
    throw StatsError("invalid-csv", "header must be respondent_id,group,dyad_id,q1..q43");
  }
  for (std::size_t q = 1; q <= kUtautQuestions; ++q) {
    if (header[2 + q] != "q" + std::to_string(q)) throw StatsError("invalid-csv", "header column " + header[2 + q]);
  }
  std::vector<UtautResponse> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    const std::string where = "line " + std::to_string(line_no);
    if (cells.size() < 3) throw StatsError("invalid-csv", where + ": too few columns");
    UtautResponse r;
    r.respondent_id = cells[0];
    const auto g = group_from_string(cells[1]);
    if (!g) throw StatsError("invalid-csv", where + ": unknown group '" + cells[1] + "'");
    r.group = *g;
    if (!cells[2].empty()) r.dyad_id = cells[2];
    for (std::size_t i = 3; i < cells.size(); ++i) {
      if (cells[i].empty()) continue;  // a missing answer; validate() names it by count
      r.answers.push_back(parse_int(cells[i], where));
    }
    r.validate();
    out.push_back(std::move(r));
  }
  return out;
}

void write_responses_csv(std::ostream& out, std::span<const UtautResponse> responses) {
  out << "respondent_id,group,dyad_id";
  for (std::size_t q = 1; q <= kUtautQuestions; ++q) out << ",q" << q;
  out << '\n';
  for (const auto& r : responses) {
    out << r.respondent_id << ',' << to_string(r.group) << ',' << r.dyad_id.value_or("");
    for (int a : r.answers) out << ',' << a;
    out << '\n';
  }
}

// ------------------------------------------------------------- formatting

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string format_p(double p) {
  if (p < 0.001) return "<0.001";
  if (p < 0.01) return format_fixed(p, 3);
  return format_fixed(p, 2);
}

std::string p_phrase(double p) { return p < 0.001 ? "p < 0.001" : "p = " + format_p(p); }

std::string format_mean_sd(double mean, double sd) { return format_fixed(mean) + " (" + format_fixed(sd) + ")"; }

bool significant(double p) { return p <= kSignificance; }

std::string format_comparison_row(std::size_t number, const std::string& label, double mean_c, double sd_c,
                                  double mean_p, double sd_p, std::optional<double> p) {
  std::string cell = "n/a";
  if (p) cell = significant(*p) ? "**" + format_p(*p) + "**" : format_p(*p);
  return std::to_string(number) + '\t' + label + '\t' + format_mean_sd(mean_c, sd_c) + '\t' +
         format_mean_sd(mean_p, sd_p) + '\t' + cell;
}

std::string render_comparison(const std::vector<ComparisonRow>& rows) {
  std::string out = "No.\tItem\tChildren\tParents\tP-value\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    std::optional<double> p;
    if (r.test) p = r.test->p_two_tailed;
    out += format_comparison_row(i + 1, r.label, r.children.mean, r.children.sd, r.parents.mean, r.parents.sd, p);
    if (r.error_code) out += " (" + *r.error_code + ")";
    out += '\n';
  }
  return out;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "item,children_mean,children_sd,parents_mean,parents_sd,t,df,p,error\n";
  for (const auto& r : rows) {
    out += r.label + ',' + format_fixed(r.children.mean, 6) + ',' + format_fixed(r.children.sd, 6) + ',' +
           format_fixed(r.parents.mean, 6) + ',' + format_fixed(r.parents.sd, 6) + ',';
    if (r.test) {
      out += format_fixed(r.test->t, 6) + ',' + format_fixed(r.test->df, 6) + ',' + format_fixed(r.test->p_two_tailed, 6) + ',';
    } else {
      out += ",,,";
    }
    out += r.error_code.value_or("") + '\n';
  }
  return out;
}

// ------------------------------------------------------------- pain

std::string_view to_string(PainMode m) { return m == PainMode::A_no_robot ? "A_no_robot" : "B_with_robot"; }

std::optional<PainMode> pain_mode_from_string(std::string_view s) {
  if (s == "A" || s == "A_no_robot") return PainMode::A_no_robot;
  if (s == "B" || s == "B_with_robot") return PainMode::B_with_robot;
  return std::nullopt;
}

PainReport pain_report(std::span<const PainRecord> records) {
  if (records.empty()) throw StatsError("incomplete-pairs", "no pain records");
  PainReport report;
  std::map<std::string, std::size_t> row_of;
  std::vector<std::array<int, 2>> seen;  // records per mode, per row
  for (const auto& r : records) {
    if (r.score < kPainMin || r.score > kPainMax) {
      throw StatsError("out-of-range", "participant '" + r.participant_id + "' has score " + std::to_string(r.score));
    }
    auto [it, fresh] = row_of.try_emplace(r.participant_id, report.chart.size());
    if (fresh) {
      report.chart.push_back({r.participant_id, 0, 0});
      seen.push_back({0, 0});
    }
    auto& row = report.chart[it->second];
    const bool a = r.mode == PainMode::A_no_robot;
    (a ? row.mode_a : row.mode_b) = r.score;
    ++seen[it->second][a ? 0 : 1];
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (seen[i][0] != 1 || seen[i][1] != 1) {
      throw StatsError("incomplete-pairs", "participant '" + report.chart[i].participant_id +
                                               "' needs exactly one score per mode");
    }
  }
  std::vector<double> a, b;
  for (const auto& row : report.chart) {
    a.push_back(row.mode_a);
    b.push_back(row.mode_b);
  }
  report.mode_a = describe(a);
  report.mode_b = describe(b);
  report.mean_difference = report.mode_a.mean - report.mode_b.mean;
  try {
    report.test = paired_t_test(a, b);
  } catch (const StatsError& e) {
    report.error_code = e.code();
    report.error_message = e.what();
  }
  return report;
}

std::string PainReport::to_text() const {
  std::ostringstream out;
  out << "participants: " << chart.size() << '\n';
  out << "mode A (no robot):   mean " << format_fixed(mode_a.mean) << "  sd " << format_fixed(mode_a.sd) << '\n';
  out << "mode B (with robot): mean " << format_fixed(mode_b.mean) << "  sd " << format_fixed(mode_b.sd) << '\n';
  out << "mean difference (A - B): " << format_fixed(mean_difference) << '\n';
  if (test) {
    out << "paired t-test: t = " << format_fixed(test->t, 3) << ", df = " << format_fixed(test->df, 0) << ", "
        << p_phrase(test->p_two_tailed) << (significant(test->p_two_tailed) ? " (significant)" : "") << '\n';
  } else {
    out << "paired t-test: not defined (" << error_code.value_or("error") << ")\n";
  }
  return out.str();
}

nlohmann::json PainReport::to_json() const {
  nlohmann::json chart_rows = nlohmann::json::array();
  for (const auto& r : chart) chart_rows.push_back({{"participant_id", r.participant_id}, {"A", r.mode_a}, {"B", r.mode_b}});
  nlohmann::json j = {
      {"mode_a", {{"n", mode_a.n}, {"mean", mode_a.mean}, {"sd", mode_a.sd}}},
      {"mode_b", {{"n", mode_b.n}, {"mean", mode_b.mean}, {"sd", mode_b.sd}}},
      {"mean_difference", mean_difference},
      {"chart", {{"labels", {"A_no_robot", "B_with_robot"}}, {"series", chart_rows}}},
  };
  if (test) {
    j["test"] = stats::to_json(*test);
    j["p_text"] = p_phrase(test->p_two_tailed);
  } else {
    j["test"] = nullptr;
    j["error"] = {{"code", error_code.value_or("")}, {"message", error_message.value_or("")}};
  }
  return j;
}

std::vector<PainRecord> read_pain_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw StatsError("invalid-csv", "empty pain file");
  const auto header = split_csv_line(line);
  if (header != std::vector<std::string>{"participant_id", "mode", "score"}) {
    throw StatsError("invalid-csv", "header must be participant_id,mode,score");
  }
  std::vector<PainRecord> out;
  std::map<std::string, int> sessions;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    const std::string where = "line " + std::to_string(line_no);
    if (cells.size() != 3) throw StatsError("invalid-csv", where + ": expected 3 columns");
    const auto mode = pain_mode_from_string(cells[1]);
    if (!mode) throw StatsError("invalid-csv", where + ": unknown mode '" + cells[1] + "'");
    PainRecord r{cells[0], *mode, parse_int(cells[2], where), ++sessions[cells[0]]};
    if (r.score < kPainMin || r.score > kPainMax) {
      throw StatsError("out-of-range", where + ": score " + cells[2] + " is outside 0..10");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace maya::stats
