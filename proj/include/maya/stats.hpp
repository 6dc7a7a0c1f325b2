#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace maya::stats {

/// Domain error with a machine-readable code such as "degenerate-variance".
class StatsError : public std::invalid_argument {
 public:
  StatsError(std::string code, const std::string& what) : std::invalid_argument(what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// ------------------------------------------------------------- distributions

/// I_x(a, b) by Lentz's continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

/// Student t CDF. Throws StatsError("invalid-df") for df <= 0.
double t_cdf(double x, double df);

/// P(|T| >= |t|), computed directly from the incomplete beta so tiny
/// p-values keep their relative precision.
double two_tailed_p(double t, double df);

// ------------------------------------------------------------- t-tests

struct Descriptive {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;  // n - 1 denominator
};

Descriptive describe(std::span<const double> xs);

enum class TestKind { paired, welch };
std::string_view to_string(TestKind k);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_two_tailed = 1.0;
  double mean_a = 0.0, mean_b = 0.0;
  double sd_a = 0.0, sd_b = 0.0;
  std::size_t n_a = 0, n_b = 0;
  TestKind kind = TestKind::welch;
};

nlohmann::json to_json(const TTestResult& r);

/// t = mean(d) / (sd(d)/sqrt(n)) with d = a - b, df = n - 1.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// Unequal-variance test with Welch-Satterthwaite df.
TTestResult welch_t_test(std::span<const double> a, std::span<const double> b);

// ------------------------------------------------------------- UTAUT

inline constexpr std::size_t kUtautQuestions = 43;

struct Category {
  std::string name;
  std::vector<int> questions;  // 1-based
};

struct CategoryMap {
  std::vector<Category> categories;
  /// reversed[q - 1]: score q as 6 - r.
  std::array<bool, kUtautQuestions> reversed{};

  /// Every index 1..43 used exactly once. Throws StatsError("invalid-map").
  void validate() const;

  /// The 13-category grouping of the modified questionnaire, nothing
  /// reversed.
  static CategoryMap standard();
};

enum class Group { child, parent };
std::string_view to_string(Group g);
std::optional<Group> group_from_string(std::string_view s);

struct UtautResponse {
  std::string respondent_id;
  Group group = Group::child;
  std::optional<std::string> dyad_id;
  std::vector<int> answers;  // answers[q - 1]

  /// 43 answers, each 1..5. Throws StatsError("invalid-response") naming
  /// the respondent.
  void validate() const;

  friend bool operator==(const UtautResponse&, const UtautResponse&) = default;
};

nlohmann::json to_json(const UtautResponse& r);
UtautResponse utaut_response_from_json(const nlohmann::json& j);

struct CategoryScores {
  std::string respondent_id;
  Group group = Group::child;
  std::vector<double> scores;  // one per category, map order
};

std::vector<CategoryScores> score_utaut(std::span<const UtautResponse> responses, const CategoryMap& map);

enum class Pairing { independent, by_dyad };
std::string_view to_string(Pairing p);
std::optional<Pairing> pairing_from_string(std::string_view s);

struct ComparisonRow {
  std::string label;  // category name or "Q<n>"
  Descriptive children;
  Descriptive parents;
  std::optional<TTestResult> test;
  /// Set instead of `test` when the t-test is undefined for this row.
  std::optional<std::string> error_code;
};

nlohmann::json to_json(const ComparisonRow& row);

/// One row per category: children as group a, parents as group b.
/// by_dyad pairs respondents on dyad_id and throws
/// StatsError("incomplete-dyads") unless every dyad has one of each.
std::vector<ComparisonRow> compare_groups(std::span<const UtautResponse> children,
                                          std::span<const UtautResponse> parents, const CategoryMap& map,
                                          Pairing pairing);

/// Single-item comparison (after reverse flags) for the listed questions.
std::vector<ComparisonRow> compare_questions(std::span<const UtautResponse> children,
                                             std::span<const UtautResponse> parents, const std::vector<int>& questions,
                                             const CategoryMap& map, Pairing pairing);

/// Responses CSV: header respondent_id,group,dyad_id,q1..q43.
std::vector<UtautResponse> read_responses_csv(std::istream& in);
void write_responses_csv(std::ostream& out, std::span<const UtautResponse> responses);

// ------------------------------------------------------------- formatting

/// "<0.001" below 0.001, three decimals below 0.01, two otherwise.
std::string format_p(double p);
/// "p < 0.001" or "p = 0.02".
std::string p_phrase(double p);
std::string format_fixed(double v, int decimals = 2);
/// "4.73 (0.45)".
std::string format_mean_sd(double mean, double sd);
inline constexpr double kSignificance = 0.05;
bool significant(double p);

/// "12  Trust  4.73 (0.45)  4.33 (0.61)  **0.02**": tab separated, p
/// wrapped in ** when significant.
std::string format_comparison_row(std::size_t number, const std::string& label, double mean_c, double sd_c,
                                  double mean_p, double sd_p, std::optional<double> p);
std::string render_comparison(const std::vector<ComparisonRow>& rows);
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

// ------------------------------------------------------------- pain

enum class PainMode { A_no_robot, B_with_robot };
std::string_view to_string(PainMode m);
/// Accepts "A", "B" and the long names.
std::optional<PainMode> pain_mode_from_string(std::string_view s);

inline constexpr int kPainMin = 0;
inline constexpr int kPainMax = 10;

struct PainRecord {
  std::string participant_id;
  PainMode mode = PainMode::A_no_robot;
  int score = 0;
  int order_index = 1;  // 1 = first session for this participant

  friend bool operator==(const PainRecord&, const PainRecord&) = default;
};

struct PainChartRow {
  std::string participant_id;
  int mode_a = 0;
  int mode_b = 0;
};

struct PainReport {
  Descriptive mode_a;
  Descriptive mode_b;
  double mean_difference = 0.0;  // A - B
  std::optional<TTestResult> test;
  /// Set instead of `test` when the paired test is undefined.
  std::optional<std::string> error_code;
  std::optional<std::string> error_message;
  std::vector<PainChartRow> chart;  // participant order of first appearance

  std::string to_text() const;
  nlohmann::json to_json() const;
};

/// Throws StatsError("incomplete-pairs") unless every participant has
/// exactly one score per mode.
PainReport pain_report(std::span<const PainRecord> records);

/// CSV: participant_id,mode,score.
std::vector<PainRecord> read_pain_csv(std::istream& in);

}  // namespace maya::stats
