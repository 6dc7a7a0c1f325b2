#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "maya/emotion.hpp"
#include "maya/rng.hpp"
#include "maya/stats.hpp"

namespace maya::sessions {

// ------------------------------------------------------------- errors

/// Every engine error carries a stable code; the service maps codes to
/// HTTP statuses.
class SessionError : public std::runtime_error {
 public:
  SessionError(std::string code, const std::string& what) : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

/// "invalid-config", naming the offending field.
class ConfigError : public SessionError {
 public:
  ConfigError(std::string field, const std::string& what)
      : SessionError("invalid-config", field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// "phase-violation": the command is not legal in the current phase.
class PhaseError : public SessionError {
 public:
  PhaseError(std::string phase, const std::string& what)
      : SessionError("phase-violation", what + " (phase " + phase + ")"), phase_(std::move(phase)) {}
  const std::string& phase() const { return phase_; }

 private:
  std::string phase_;
};

/// "invalid-payload", "out-of-range", "duplicate-record", "unknown-command".
class PayloadError : public SessionError {
 public:
  using SessionError::SessionError;
};

/// "integrity": an event log that cannot be replayed.
class IntegrityError : public SessionError {
 public:
  explicit IntegrityError(const std::string& what, std::optional<std::uint64_t> missing = std::nullopt)
      : SessionError("integrity", what), missing_(missing) {}
  std::optional<std::uint64_t> missing_seq() const { return missing_; }

 private:
  std::optional<std::uint64_t> missing_;
};

// ------------------------------------------------------------- board

enum class Overshoot { clamp, exact };

struct Jump {
  int from = 0;
  int to = 0;
  friend bool operator==(const Jump&, const Jump&) = default;
};

struct BoardConfig {
  int cell_count = 30;
  /// cell_emotions[i - 1] belongs to cell i. Never neutral.
  std::vector<Emotion> cell_emotions;
  std::vector<Jump> ladders;
  std::vector<Jump> slides;
  Overshoot overshoot = Overshoot::clamp;
  int dice_sides = 6;
  double calibration_seconds = 3.0;
  double pass_threshold = 0.5;
  int max_retries = 3;

  /// Throws ConfigError naming the field, e.g. "ladders[0].to".
  void validate() const;

  Emotion emotion_at(int cell) const;

  /// 30 cells cycling through the six non-neutral labels, ladders
  /// 3->12, 9->18, 16->25 and slides 14->5, 22->11, 28->19.
  static BoardConfig standard();

  friend bool operator==(const BoardConfig&, const BoardConfig&) = default;
};

nlohmann::json to_json(const BoardConfig& c);
/// Missing fields take their defaults; cell_emotions defaults to the
/// cycle. Throws ConfigError.
BoardConfig board_from_json(const nlohmann::json& j);

enum class Player { child, robot };
std::string_view to_string(Player p);

enum class Phase { awaiting_neutral_calibration, awaiting_roll, awaiting_expression, robot_turn, finished };
std::string_view to_string(Phase p);

struct MoveOutcome {
  int from = 0;
  int landed = 0;  // before any ladder or slide
  int to = 0;
  std::optional<std::string> via;  // "ladder" or "slide"
  bool blocked = false;            // exact rule: overshoot leaves the piece put
  bool won = false;

  friend bool operator==(const MoveOutcome&, const MoveOutcome&) = default;
};

MoveOutcome resolve_move(const BoardConfig& config, int from, int roll);

/// Uniform in 1..sides from the session generator.
int roll_die(Rng& rng, int sides);

struct GameState {
  BoardConfig config;
  std::string child_name;
  std::uint64_t seed = 0;
  std::array<int, 2> positions{0, 0};  // indexed by Player
  Player turn = Player::child;
  Phase phase = Phase::awaiting_neutral_calibration;
  std::optional<Emotion> pending_emotion;
  int retry_count = 0;
  Rng rng;
  std::optional<Player> winner;
  std::optional<int> last_roll;
  std::size_t child_rolls = 0;
  std::size_t robot_rolls = 0;

  int position(Player p) const { return positions[static_cast<std::size_t>(p)]; }

  friend bool operator==(const GameState&, const GameState&) = default;
};

// ------------------------------------------------------------- pain

struct Counterbalance {
  /// First mode per participant, in participant order.
  std::vector<stats::PainMode> first_modes;
  /// The mode given ceil(n/2) participants: A for even seeds, B for odd.
  stats::PainMode extra = stats::PainMode::A_no_robot;

  friend bool operator==(const Counterbalance&, const Counterbalance&) = default;
};

Counterbalance counterbalance_assign(std::size_t n, std::uint64_t seed);

struct PainState {
  std::optional<Counterbalance> assignment;
  std::vector<stats::PainRecord> records;

  friend bool operator==(const PainState&, const PainState&) = default;
};

struct UtautState {
  std::vector<stats::UtautResponse> responses;

  friend bool operator==(const UtautState&, const UtautState&) = default;
};

// ------------------------------------------------------------- events

struct Event {
  std::uint64_t seq = 0;
  std::string ts;
  std::string session_id;
  std::string kind;
  nlohmann::json payload = nlohmann::json::object();

  friend bool operator==(const Event&, const Event&) = default;
};

inline constexpr int kEventVersion = 1;

nlohmann::json to_json(const Event& e);
Event event_from_json(const nlohmann::json& j);
/// One JSON Lines record, keys sorted, no trailing newline.
std::string to_line(const Event& e);
Event parse_event_line(std::string_view line);
std::vector<Event> read_event_log(std::istream& in);

/// Every event kind apply() understands.
bool known_event_kind(std::string_view kind);

using Clock = std::function<std::chrono::system_clock::time_point()>;
Clock wall_clock();
/// Starts at `start` and advances `step` per reading. Gives byte-stable
/// logs for scripted runs.
Clock stepping_clock(std::chrono::system_clock::time_point start, std::chrono::milliseconds step);
/// "2026-10-16T09:30:00.000Z".
std::string iso8601(std::chrono::system_clock::time_point t);

// ------------------------------------------------------------- robot

enum class RobotActionKind { greet, ask_name, speak_word, encourage, play_music, dance, move_trunk, move_ears, farewell };
std::string_view to_string(RobotActionKind k);
std::optional<RobotActionKind> robot_action_from_string(std::string_view s);

struct RobotAction {
  RobotActionKind kind = RobotActionKind::greet;
  nlohmann::json params = nlohmann::json::object();
};

/// Receives every robot_action event after its command commits. Replay
/// never drives the robot.
class RobotDriver {
 public:
  virtual ~RobotDriver() = default;
  virtual void perform(const RobotAction& action, const Event& source) = 0;
};

/// Writes "<ts> <session> <action> <params>" lines.
class LoggingDriver final : public RobotDriver {
 public:
  explicit LoggingDriver(std::ostream& out) : out_(&out) {}
  void perform(const RobotAction& action, const Event& source) override;

 private:
  std::ostream* out_;
};

// ------------------------------------------------------------- session

enum class SessionKind { game, pain, utaut };
std::string_view to_string(SessionKind k);
std::optional<SessionKind> session_kind_from_string(std::string_view s);

enum class Status { active, finished, aborted };
std::string_view to_string(Status s);

struct CommandResult {
  std::vector<Event> events;
  nlohmann::json result = nlohmann::json::object();
};

/// Expression check outcome fed to resolve_expression.
struct Observation {
  Emotion top = Emotion::neutral;
  std::array<double, kEmotionCount> probs{};
};

/// One event-sourced session. Commands validate against a working copy of
/// the state and commit all of their events or none. Not thread-safe; the
/// service serializes commands per session.
class Session {
 public:
  /// Game config: a board document plus optional "child_name". Pain config:
  /// optional "participants" for a counterbalanced order. UTAUT: none.
  static Session create(std::string id, SessionKind kind, const nlohmann::json& config, std::uint64_t seed,
                        Clock clock = wall_clock());

  /// Rebuilds a session from its log. Throws IntegrityError on a seq gap,
  /// an unknown kind or an event that contradicts the state.
  static Session replay(std::span<const Event> events, Clock clock = wall_clock());

  const std::string& id() const { return id_; }
  SessionKind kind() const { return kind_; }
  Status status() const { return core_.status; }
  std::uint64_t last_seq() const { return core_.last_seq; }
  const std::vector<Event>& events() const { return events_; }

  const GameState& game() const;
  const PainState& pain() const;
  const UtautState& utaut() const;

  void set_driver(std::shared_ptr<RobotDriver> driver) { driver_ = std::move(driver); }
  void set_clock(Clock clock) { clock_ = std::move(clock); }

  /// JSON command dispatch used by the service and the CLI: calibrate,
  /// roll, resolve_expression, robot_roll, override, record_pain,
  /// utaut_answer, robot_action, finish.
  CommandResult execute(const std::string& command, const nlohmann::json& payload);

  CommandResult calibrate();
  CommandResult roll();
  CommandResult resolve_expression(const Observation& obs);
  CommandResult robot_roll();
  /// Operator forces progression after max_retries failed attempts.
  CommandResult override_expression();
  CommandResult record_pain(const std::string& participant_id, stats::PainMode mode, int score);
  CommandResult utaut_answer(const stats::UtautResponse& response);
  CommandResult robot_action(const RobotAction& action);
  CommandResult finish(const std::string& reason = "operator");

  /// Current state for API clients.
  nlohmann::json snapshot() const;

  /// Same id, kind, status, last seq and state.
  friend bool same_state(const Session& a, const Session& b);

 private:
  using State = std::variant<std::monostate, GameState, PainState, UtautState>;
  struct Core {
    Status status = Status::active;
    std::uint64_t last_seq = 0;
    State state;
  };
  class Tx;

  Session() = default;
  static void apply(Core& core, SessionKind& kind, const Event& e);
  void require_active() const;
  void require_kind(SessionKind k, const char* command) const;
  CommandResult commit(Tx& tx, nlohmann::json result);

  std::string id_;
  SessionKind kind_ = SessionKind::game;
  Core core_;
  std::vector<Event> events_;
  Clock clock_;
  std::shared_ptr<RobotDriver> driver_;
};

// ------------------------------------------------------------- simulation

struct SimulationOptions {
  std::string child_name = "Sam";
  /// Chance that a scripted expression attempt matches the prompt.
  double pass_rate = 0.6;
  std::size_t max_commands = 100000;
};

/// Scripted full game: calibrate, alternate turns, retry and override as
/// needed until someone wins. Child behaviour comes from its own
/// generator, so the dice sequence is the session's alone.
Session simulate_game(const std::string& id, const BoardConfig& config, std::uint64_t seed,
                      const SimulationOptions& options = {}, Clock clock = {});

}  // namespace maya::sessions
