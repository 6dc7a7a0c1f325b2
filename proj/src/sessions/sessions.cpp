#include "maya/sessions.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <istream>
#include <ostream>
#include <set>

namespace maya::sessions {

using nlohmann::json;
using stats::PainMode;

// ------------------------------------------------------------- board

namespace {

std::vector<Emotion> cycle_emotions(int cells) {
  std::vector<Emotion> out;
  for (int i = 0; i < cells; ++i) out.push_back(kNonNeutralEmotions[static_cast<std::size_t>(i) % 6]);
  return out;
}

void check_jumps(const std::vector<Jump>& jumps, const char* name, bool up, int cells) {
  for (std::size_t i = 0; i < jumps.size(); ++i) {
    const std::string field = std::string(name) + "[" + std::to_string(i) + "]";
    const auto& j = jumps[i];
    if (j.from < 1 || j.from > cells) throw ConfigError(field + ".from", "must lie in 1.." + std::to_string(cells));
    if (j.to < 1 || j.to > cells) throw ConfigError(field + ".to", "must lie in 1.." + std::to_string(cells));
    if (up && j.from >= j.to) throw ConfigError(field, "a ladder must climb (from < to)");
    if (!up && j.from <= j.to) throw ConfigError(field, "a slide must descend (from > to)");
    if (j.from == cells) throw ConfigError(field + ".from", "the top cell cannot start a jump");
  }
}

}  // namespace

void BoardConfig::validate() const {
  if (cell_count < 2 || cell_count > 1000) throw ConfigError("cell_count", "must lie in 2..1000");
  if (dice_sides < 2 || dice_sides > 100) throw ConfigError("dice_sides", "must lie in 2..100");
  if (cell_emotions.size() != static_cast<std::size_t>(cell_count)) {
    throw ConfigError("cell_emotions", "needs one entry per cell (" + std::to_string(cell_count) + ")");
  }
  for (std::size_t i = 0; i < cell_emotions.size(); ++i) {
    if (cell_emotions[i] == Emotion::neutral) {
      throw ConfigError("cell_emotions[" + std::to_string(i) + "]", "cells carry non-neutral emotions");
    }
  }
  check_jumps(ladders, "ladders", true, cell_count);
  check_jumps(slides, "slides", false, cell_count);
  std::set<int> starts;
  auto claim = [&](const std::vector<Jump>& js, const char* name) {
    for (std::size_t i = 0; i < js.size(); ++i) {
      if (!starts.insert(js[i].from).second) {
        throw ConfigError(std::string(name) + "[" + std::to_string(i) + "].from",
                          "cell " + std::to_string(js[i].from) + " already starts another jump");
      }
    }
  };
  claim(ladders, "ladders");
  claim(slides, "slides");
  if (!(calibration_seconds >= 0.0) || !std::isfinite(calibration_seconds)) {
    throw ConfigError("calibration_seconds", "must be a non-negative number");
  }
  if (!(pass_threshold >= 0.0 && pass_threshold <= 1.0)) throw ConfigError("pass_threshold", "must lie in [0, 1]");
  if (max_retries < 0) throw ConfigError("max_retries", "must be non-negative");
}

Emotion BoardConfig::emotion_at(int cell) const {
  if (cell < 1 || cell > cell_count) throw std::out_of_range("cell " + std::to_string(cell) + " is off the board");
  return cell_emotions[static_cast<std::size_t>(cell - 1)];
}

BoardConfig BoardConfig::standard() {
  BoardConfig c;
  c.cell_emotions = cycle_emotions(c.cell_count);
  c.ladders = {{3, 12}, {9, 18}, {16, 25}};
  c.slides = {{14, 5}, {22, 11}, {28, 19}};
  return c;
}

json to_json(const BoardConfig& c) {
  auto jumps = [](const std::vector<Jump>& js) {
    json a = json::array();
    for (const auto& j : js) a.push_back(json::array({j.from, j.to}));
    return a;
  };
  json emotions = json::array();
  for (Emotion e : c.cell_emotions) emotions.push_back(std::string(to_string(e)));
  return {{"v", 1},
          {"cell_count", c.cell_count},
          {"cell_emotions", emotions},
          {"ladders", jumps(c.ladders)},
          {"slides", jumps(c.slides)},
          {"overshoot_rule", c.overshoot == Overshoot::clamp ? "clamp" : "exact"},
          {"dice_sides", c.dice_sides},
          {"calibration_seconds", c.calibration_seconds},
          {"pass_threshold", c.pass_threshold},
          {"max_retries", c.max_retries}};
}

BoardConfig board_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config", "must be a JSON object");
  if (j.contains("v") && j["v"] != 1) throw ConfigError("v", "unsupported board config version");
  BoardConfig c = BoardConfig::standard();
  auto number = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    const auto& v = j[key];
    using T = std::decay_t<decltype(out)>;
    if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(key, "must be an integer");
    } else {
      if (!v.is_number()) throw ConfigError(key, "must be a number");
    }
    out = v.get<T>();
  };
  number("cell_count", c.cell_count);
  number("dice_sides", c.dice_sides);
  number("calibration_seconds", c.calibration_seconds);
  number("pass_threshold", c.pass_threshold);
  number("max_retries", c.max_retries);
  const bool resized = j.contains("cell_count");
  if (j.contains("cell_emotions")) {
    const auto& a = j["cell_emotions"];
    if (!a.is_array()) throw ConfigError("cell_emotions", "must be an array of labels");
    c.cell_emotions.clear();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto e = a[i].is_string() ? emotion_from_string(a[i].get<std::string>()) : std::nullopt;
      if (!e) throw ConfigError("cell_emotions[" + std::to_string(i) + "]", "unknown label");
      c.cell_emotions.push_back(*e);
    }
  } else if (resized) {
    c.cell_emotions = cycle_emotions(std::clamp(c.cell_count, 0, 1000));
  }
  auto jumps = [&](const char* key, std::vector<Jump>& out) {
    if (!j.contains(key)) {
      // The default layout only fits the default board.
      if (resized && c.cell_count != 30) out.clear();
      return;
    }
    const auto& a = j[key];
    if (!a.is_array()) throw ConfigError(key, "must be an array of [from, to] pairs");
    out.clear();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::string field = std::string(key) + "[" + std::to_string(i) + "]";
      const auto& p = a[i];
      if (p.is_array() && p.size() == 2 && p[0].is_number_integer() && p[1].is_number_integer()) {
        out.push_back({p[0].get<int>(), p[1].get<int>()});
      } else if (p.is_object() && p.contains("from") && p.contains("to") && p["from"].is_number_integer() &&
                 p["to"].is_number_integer()) {
        out.push_back({p["from"].get<int>(), p["to"].get<int>()});
      } else {
        throw ConfigError(field, "must be [from, to]");
      }
    }
  };
  jumps("ladders", c.ladders);
  jumps("slides", c.slides);
  if (j.contains("overshoot_rule")) {
    const auto& r = j["overshoot_rule"];
    if (r == "clamp") {
      c.overshoot = Overshoot::clamp;
    } else if (r == "exact") {
      c.overshoot = Overshoot::exact;
    } else {
      throw ConfigError("overshoot_rule", "must be \"clamp\" or \"exact\"");
    }
  }
  c.validate();
  return c;
}

std::string_view to_string(Player p) { return p == Player::child ? "child" : "robot"; }

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::awaiting_neutral_calibration: return "awaiting_neutral_calibration";
    case Phase::awaiting_roll: return "awaiting_roll";
    case Phase::awaiting_expression: return "awaiting_expression";
    case Phase::robot_turn: return "robot_turn";
    case Phase::finished: return "finished";
  }
  return "unknown";
}

MoveOutcome resolve_move(const BoardConfig& config, int from, int roll) {
  MoveOutcome m;
  m.from = from;
  int target = from + roll;
  if (target > config.cell_count) {
    if (config.overshoot == Overshoot::exact) {
      m.landed = m.to = from;
      m.blocked = true;
      return m;
    }
    target = config.cell_count;
  }
  m.landed = m.to = target;
  for (const auto& l : config.ladders) {
    if (l.from == target) {
      m.to = l.to;
      m.via = "ladder";
    }
  }
  for (const auto& s : config.slides) {
    if (s.from == target) {
      m.to = s.to;
      m.via = "slide";
    }
  }
  m.won = m.to == config.cell_count;
  return m;
}

int roll_die(Rng& rng, int sides) { return 1 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(sides))); }

// ------------------------------------------------------------- pain

Counterbalance counterbalance_assign(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw PayloadError("invalid-payload", "counterbalancing needs at least one participant");
  Counterbalance c;
  c.extra = seed % 2 == 0 ? PainMode::A_no_robot : PainMode::B_with_robot;
  const PainMode other = c.extra == PainMode::A_no_robot ? PainMode::B_with_robot : PainMode::A_no_robot;
  const std::size_t big = (n + 1) / 2;
  for (std::size_t i = 0; i < n; ++i) c.first_modes.push_back(i < big ? c.extra : other);
  Rng rng(seed);
  shuffle(std::span(c.first_modes), rng);
  return c;
}

// ------------------------------------------------------------- events

json to_json(const Event& e) {
  return {{"v", kEventVersion}, {"seq", e.seq}, {"ts", e.ts}, {"session_id", e.session_id}, {"kind", e.kind},
          {"payload", e.payload}};
}

Event event_from_json(const json& j) {
  try {
    if (j.at("v") != kEventVersion) throw IntegrityError("unsupported event version");
    Event e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.ts = j.at("ts").get<std::string>();
    e.session_id = j.at("session_id").get<std::string>();
    e.kind = j.at("kind").get<std::string>();
    e.payload = j.at("payload");
    return e;
  } catch (const json::exception& ex) {
    throw IntegrityError(std::string("malformed event: ") + ex.what());
  }
}

std::string to_line(const Event& e) { return to_json(e).dump(); }

Event parse_event_line(std::string_view line) {
  try {
    return event_from_json(json::parse(line));
  } catch (const json::exception& ex) {
    throw IntegrityError(std::string("malformed event line: ") + ex.what());
  }
}

std::vector<Event> read_event_log(std::istream& in) {
  std::vector<Event> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_event_line(line));
  }
  return out;
}

namespace {
const std::set<std::string, std::less<>> kEventKinds = {
    "session_created", "greeted",        "name_asked",         "neutral_calibrated", "dice_rolled",
    "moved",           "word_prompted",  "word_taught",        "expression_attempt", "expression_passed",
    "retry_requested", "robot_action",   "pain_recorded",      "utaut_answer",       "farewell",
    "session_finished", "session_aborted"};
}  // namespace

bool known_event_kind(std::string_view kind) { return kEventKinds.find(kind) != kEventKinds.end(); }

Clock wall_clock() {
  return [] { return std::chrono::system_clock::now(); };
}

Clock stepping_clock(std::chrono::system_clock::time_point start, std::chrono::milliseconds step) {
  auto next = std::make_shared<std::chrono::system_clock::time_point>(start);
  return [next, step] {
    const auto now = *next;
    *next += step;
    return now;
  };
}

std::string iso8601(std::chrono::system_clock::time_point t) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000 - (ms % 1000 < 0 ? 1 : 0));
  const int frac = static_cast<int>(((ms % 1000) + 1000) % 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, frac);
  return buf;
}

// ------------------------------------------------------------- robot

namespace {
constexpr std::array<std::pair<RobotActionKind, std::string_view>, 9> kActionNames = {{
    {RobotActionKind::greet, "greet"},
    {RobotActionKind::ask_name, "ask_name"},
    {RobotActionKind::speak_word, "speak_word"},
    {RobotActionKind::encourage, "encourage"},
    {RobotActionKind::play_music, "play_music"},
    {RobotActionKind::dance, "dance"},
    {RobotActionKind::move_trunk, "move_trunk"},
    {RobotActionKind::move_ears, "move_ears"},
    {RobotActionKind::farewell, "farewell"},
}};
}  // namespace

std::string_view to_string(RobotActionKind k) {
  for (const auto& [kind, name] : kActionNames) {
    if (kind == k) return name;
  }
  return "unknown";
}

std::optional<RobotActionKind> robot_action_from_string(std::string_view s) {
  for (const auto& [kind, name] : kActionNames) {
    if (name == s) return kind;
  }
  return std::nullopt;
}

void LoggingDriver::perform(const RobotAction& action, const Event& source) {
  *out_ << source.ts << ' ' << source.session_id << ' ' << to_string(action.kind) << ' ' << action.params.dump()
        << '\n';
}

// ------------------------------------------------------------- session

std::string_view to_string(SessionKind k) {
  switch (k) {
    case SessionKind::game: return "game";
    case SessionKind::pain: return "pain";
    case SessionKind::utaut: return "utaut";
  }
  return "unknown";
}

std::optional<SessionKind> session_kind_from_string(std::string_view s) {
  if (s == "game") return SessionKind::game;
  if (s == "pain") return SessionKind::pain;
  if (s == "utaut") return SessionKind::utaut;
  return std::nullopt;
}

std::string_view to_string(Status s) {
  switch (s) {
    case Status::active: return "active";
    case Status::finished: return "finished";
    case Status::aborted: return "aborted";
  }
  return "unknown";
}

// Staged events of one command. Each emit applies to the working copy at
// once so later events see the effect of earlier ones.
class Session::Tx {
 public:
  explicit Tx(const Session& s) : session_(s), core(s.core_), kind(s.kind_) {}

  void emit(std::string event_kind, json payload = json::object()) {
    Event e;
    e.seq = core.last_seq + 1;
    e.ts = iso8601(session_.clock_());
    e.session_id = session_.id_;
    e.kind = std::move(event_kind);
    e.payload = std::move(payload);
    Session::apply(core, kind, e);
    events.push_back(std::move(e));
  }

  void robot(RobotActionKind action, json params = json::object()) {
    emit("robot_action", {{"action", std::string(to_string(action))}, {"params", std::move(params)}});
  }

  GameState& game() { return std::get<GameState>(core.state); }

  void close_game(Player winner) {
    const std::string w(to_string(winner));
    robot(RobotActionKind::farewell, {{"winner", w}});
    emit("farewell", {{"winner", w}});
    emit("session_finished", {{"winner", w}});
  }

  const Session& session_;
  Core core;
  SessionKind kind;
  std::vector<Event> events;
};

namespace {

Player player_from(const json& p) {
  const auto s = p.get<std::string>();
  if (s == "child") return Player::child;
  if (s == "robot") return Player::robot;
  throw IntegrityError("unknown player '" + s + "'");
}

json move_json(Player who, const MoveOutcome& m) {
  return {{"player", std::string(to_string(who))},
          {"from", m.from},
          {"landed", m.landed},
          {"to", m.to},
          {"via", m.via ? json(*m.via) : json(nullptr)},
          {"blocked", m.blocked},
          {"won", m.won}};
}

}  // namespace

void Session::apply(Core& core, SessionKind& kind, const Event& e) {
  if (e.seq != core.last_seq + 1) {
    throw IntegrityError("expected seq " + std::to_string(core.last_seq + 1) + ", found " + std::to_string(e.seq),
                         core.last_seq + 1);
  }
  if (!known_event_kind(e.kind)) throw IntegrityError("unknown event kind '" + e.kind + "'");
  const auto& p = e.payload;
  try {
    if (e.kind == "session_created") {
      if (core.last_seq != 0) throw IntegrityError("session_created after the first event");
      const auto k = session_kind_from_string(p.at("kind").get<std::string>());
      if (!k) throw IntegrityError("unknown session kind");
      kind = *k;
      const auto seed = p.at("seed").get<std::uint64_t>();
      if (kind == SessionKind::game) {
        GameState g;
        g.config = board_from_json(p.at("config"));
        g.child_name = p.at("child_name").get<std::string>();
        g.seed = seed;
        g.rng.seed(seed);
        core.state = std::move(g);
      } else if (kind == SessionKind::pain) {
        PainState ps;
        if (p.contains("participants")) ps.assignment = counterbalance_assign(p["participants"].get<std::size_t>(), seed);
        core.state = std::move(ps);
      } else {
        core.state = UtautState{};
      }
    } else if (core.last_seq == 0) {
      throw IntegrityError("log must start with session_created");
    } else if (core.status != Status::active) {
      throw IntegrityError("event after the session closed");
    } else if (e.kind == "session_finished") {
      core.status = Status::finished;
    } else if (e.kind == "session_aborted") {
      core.status = Status::aborted;
    } else if (e.kind == "pain_recorded") {
      auto& ps = std::get<PainState>(core.state);
      const auto mode = stats::pain_mode_from_string(p.at("mode").get<std::string>());
      if (!mode) throw IntegrityError("unknown pain mode");
      ps.records.push_back({p.at("participant_id").get<std::string>(), *mode, p.at("score").get<int>(),
                            p.at("order_index").get<int>()});
    } else if (e.kind == "utaut_answer") {
      std::get<UtautState>(core.state).responses.push_back(stats::utaut_response_from_json(p.at("response")));
    } else if (kind == SessionKind::game) {
      auto& g = std::get<GameState>(core.state);
      if (e.kind == "neutral_calibrated") {
        if (g.phase != Phase::awaiting_neutral_calibration) throw IntegrityError("calibration out of phase");
        g.phase = Phase::awaiting_roll;
        g.turn = Player::child;
      } else if (e.kind == "dice_rolled") {
        const Player who = player_from(p.at("player"));
        const Phase expect = who == Player::child ? Phase::awaiting_roll : Phase::robot_turn;
        if (g.phase != expect || g.turn != who) throw IntegrityError("dice rolled out of turn");
        const int v = roll_die(g.rng, g.config.dice_sides);
        if (v != p.at("value").get<int>()) {
          throw IntegrityError("dice value " + p["value"].dump() + " disagrees with the seeded roll " +
                               std::to_string(v));
        }
        g.last_roll = v;
        ++(who == Player::child ? g.child_rolls : g.robot_rolls);
      } else if (e.kind == "moved") {
        const Player who = player_from(p.at("player"));
        if (!g.last_roll || g.turn != who) throw IntegrityError("move without a roll");
        const auto m = resolve_move(g.config, g.position(who), *g.last_roll);
        if (m.to != p.at("to").get<int>()) throw IntegrityError("move target disagrees with the board");
        g.positions[static_cast<std::size_t>(who)] = m.to;
        g.last_roll.reset();
        if (m.won) {
          g.winner = who;
          g.phase = Phase::finished;
          g.pending_emotion.reset();
        } else if (who == Player::robot) {
          g.phase = Phase::awaiting_roll;
          g.turn = Player::child;
        } else if (m.blocked) {
          g.phase = Phase::robot_turn;
          g.turn = Player::robot;
        } else {
          g.phase = Phase::awaiting_expression;
          g.pending_emotion = g.config.emotion_at(m.to);
          g.retry_count = 0;
        }
      } else if (e.kind == "retry_requested") {
        if (g.phase != Phase::awaiting_expression) throw IntegrityError("retry out of phase");
        ++g.retry_count;
      } else if (e.kind == "expression_passed") {
        if (g.phase != Phase::awaiting_expression) throw IntegrityError("pass out of phase");
        g.pending_emotion.reset();
        g.retry_count = 0;
        g.phase = Phase::robot_turn;
        g.turn = Player::robot;
      }
      // greeted, name_asked, word_prompted, word_taught, expression_attempt,
      // robot_action and farewell carry no state.
    }
  } catch (const json::exception& ex) {
    throw IntegrityError("event " + std::to_string(e.seq) + " (" + e.kind + "): " + ex.what());
  } catch (const std::bad_variant_access&) {
    throw IntegrityError("event " + std::to_string(e.seq) + " (" + e.kind + ") does not fit this session kind");
  }
  core.last_seq = e.seq;
}

Session Session::create(std::string id, SessionKind kind, const json& config, std::uint64_t seed, Clock clock) {
  if (id.empty()) throw PayloadError("invalid-payload", "session id must not be empty");
  const json cfg = config.is_null() ? json::object() : config;
  if (!cfg.is_object()) throw ConfigError("config", "must be a JSON object");
  Session s;
  s.id_ = std::move(id);
  s.kind_ = kind;
  s.clock_ = clock ? std::move(clock) : wall_clock();

  json created = {{"kind", std::string(to_string(kind))}, {"seed", seed}};
  std::string child_name;
  if (kind == SessionKind::game) {
    json board = cfg;
    if (board.contains("child_name")) {
      if (!board["child_name"].is_string()) throw ConfigError("child_name", "must be a string");
      child_name = board["child_name"].get<std::string>();
      board.erase("child_name");
    }
    created["config"] = to_json(board_from_json(board));
    created["child_name"] = child_name;
  } else if (kind == SessionKind::pain && cfg.contains("participants")) {
    const auto& n = cfg["participants"];
    if (!n.is_number_integer() || n.get<long long>() <= 0) {
      throw ConfigError("participants", "must be a positive integer");
    }
    created["participants"] = n;
  }

  Tx tx(s);
  tx.emit("session_created", created);
  if (kind == SessionKind::game) {
    tx.emit("greeted", {{"child_name", child_name}});
    tx.robot(RobotActionKind::greet, {{"child_name", child_name}});
    tx.emit("name_asked");
    tx.robot(RobotActionKind::ask_name);
  }
  s.commit(tx, json::object());
  return s;
}

Session Session::replay(std::span<const Event> events, Clock clock) {
  if (events.empty()) throw IntegrityError("empty event log", 1);
  Session s;
  s.id_ = events.front().session_id;
  s.clock_ = clock ? std::move(clock) : wall_clock();
  for (const auto& e : events) {
    if (e.session_id != s.id_) throw IntegrityError("event " + std::to_string(e.seq) + " belongs to another session");
    apply(s.core_, s.kind_, e);
    s.events_.push_back(e);
  }
  return s;
}

const GameState& Session::game() const {
  if (const auto* g = std::get_if<GameState>(&core_.state)) return *g;
  throw PayloadError("wrong-kind", "session " + id_ + " is not a game");
}

const PainState& Session::pain() const {
  if (const auto* p = std::get_if<PainState>(&core_.state)) return *p;
  throw PayloadError("wrong-kind", "session " + id_ + " is not a pain session");
}

const UtautState& Session::utaut() const {
  if (const auto* u = std::get_if<UtautState>(&core_.state)) return *u;
  throw PayloadError("wrong-kind", "session " + id_ + " is not a UTAUT session");
}

void Session::require_active() const {
  if (core_.status != Status::active) {
    throw PhaseError(std::string(to_string(core_.status)), "session " + id_ + " is closed");
  }
}

void Session::require_kind(SessionKind k, const char* command) const {
  if (kind_ != k) {
    throw PayloadError("wrong-kind", std::string(command) + " needs a " + std::string(to_string(k)) + " session");
  }
}

CommandResult Session::commit(Tx& tx, json result) {
  core_ = std::move(tx.core);
  kind_ = tx.kind;
  const std::size_t first = events_.size();
  events_.insert(events_.end(), tx.events.begin(), tx.events.end());
  if (driver_) {
    for (std::size_t i = first; i < events_.size(); ++i) {
      const auto& e = events_[i];
      if (e.kind != "robot_action") continue;
      const auto kind = robot_action_from_string(e.payload["action"].get<std::string>());
      if (kind) driver_->perform({*kind, e.payload["params"]}, e);
    }
  }
  CommandResult r;
  r.events = std::move(tx.events);
  r.result = std::move(result);
  return r;
}

CommandResult Session::calibrate() {
  require_active();
  require_kind(SessionKind::game, "calibrate");
  if (game().phase != Phase::awaiting_neutral_calibration) {
    throw PhaseError(std::string(to_string(game().phase)), "calibration is already done");
  }
  Tx tx(*this);
  tx.emit("neutral_calibrated", {{"seconds", game().config.calibration_seconds}});
  return commit(tx, {{"phase", std::string(to_string(tx.game().phase))}});
}

namespace {

json move_result(const GameState& g, int value, const MoveOutcome& m) {
  json r = {{"value", value}, {"move", move_json(g.winner.value_or(g.turn), m)}, {"phase", std::string(to_string(g.phase))}};
  if (g.pending_emotion) r["pending_emotion"] = std::string(to_string(*g.pending_emotion));
  if (g.winner) r["winner"] = std::string(to_string(*g.winner));
  return r;
}

}  // namespace

CommandResult Session::roll() {
  require_active();
  require_kind(SessionKind::game, "roll");
  const GameState& g = game();
  if (g.phase != Phase::awaiting_roll) throw PhaseError(std::string(to_string(g.phase)), "the child cannot roll now");
  Tx tx(*this);
  Rng peek = g.rng;
  const int value = roll_die(peek, g.config.dice_sides);
  tx.emit("dice_rolled", {{"player", "child"}, {"value", value}});
  const auto m = resolve_move(g.config, g.position(Player::child), value);
  tx.emit("moved", move_json(Player::child, m));
  if (m.won) {
    tx.close_game(Player::child);
  } else if (!m.blocked) {
    const auto emotion = std::string(to_string(*tx.game().pending_emotion));
    tx.emit("word_prompted", {{"emotion", emotion}, {"cell", m.to}});
    tx.robot(RobotActionKind::speak_word, {{"word", emotion}});
  }
  json result = move_result(tx.game(), value, m);
  result["move"]["player"] = "child";
  return commit(tx, result);
}

CommandResult Session::resolve_expression(const Observation& obs) {
  require_active();
  require_kind(SessionKind::game, "resolve_expression");
  const GameState& g = game();
  if (g.phase != Phase::awaiting_expression) {
    throw PhaseError(std::string(to_string(g.phase)), "no expression is pending");
  }
  for (double p : obs.probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw PayloadError("invalid-payload", "probabilities must lie in [0, 1]");
  }
  const Emotion expected = *g.pending_emotion;
  const double prob = obs.probs[static_cast<std::size_t>(code(expected))];
  const bool passed = obs.top == expected && prob >= g.config.pass_threshold;
  Tx tx(*this);
  tx.emit("expression_attempt", {{"expected", std::string(to_string(expected))},
                                 {"top", std::string(to_string(obs.top))},
                                 {"prob", prob},
                                 {"passed", passed}});
  if (passed) {
    tx.emit("expression_passed", {{"emotion", std::string(to_string(expected))}, {"overridden", false}});
    tx.emit("word_taught", {{"emotion", std::string(to_string(expected))}});
  } else {
    tx.emit("retry_requested", {{"retry_count", g.retry_count + 1}});
    tx.robot(RobotActionKind::encourage, {{"emotion", std::string(to_string(expected))}});
  }
  const auto& after = tx.game();
  return commit(tx, {{"passed", passed},
                     {"retry_count", after.retry_count},
                     {"override_available", !passed && after.retry_count >= after.config.max_retries},
                     {"phase", std::string(to_string(after.phase))}});
}

CommandResult Session::override_expression() {
  require_active();
  require_kind(SessionKind::game, "override");
  const GameState& g = game();
  if (g.phase != Phase::awaiting_expression) {
    throw PhaseError(std::string(to_string(g.phase)), "no expression is pending");
  }
  if (g.retry_count < g.config.max_retries) {
    throw PhaseError(std::string(to_string(g.phase)), "override needs " + std::to_string(g.config.max_retries) +
                                                          " failed attempts, have " + std::to_string(g.retry_count));
  }
  const auto emotion = std::string(to_string(*g.pending_emotion));
  Tx tx(*this);
  tx.emit("expression_passed", {{"emotion", emotion}, {"overridden", true}});
  tx.emit("word_taught", {{"emotion", emotion}});
  return commit(tx, {{"passed", true}, {"overridden", true}, {"phase", std::string(to_string(tx.game().phase))}});
}

CommandResult Session::robot_roll() {
  require_active();
  require_kind(SessionKind::game, "robot_roll");
  const GameState& g = game();
  if (g.phase != Phase::robot_turn) throw PhaseError(std::string(to_string(g.phase)), "it is not the robot's turn");
  Tx tx(*this);
  Rng peek = g.rng;
  const int value = roll_die(peek, g.config.dice_sides);
  tx.emit("dice_rolled", {{"player", "robot"}, {"value", value}});
  const auto m = resolve_move(g.config, g.position(Player::robot), value);
  tx.emit("moved", move_json(Player::robot, m));
  if (m.won) tx.close_game(Player::robot);
  json result = move_result(tx.game(), value, m);
  result["move"]["player"] = "robot";
  return commit(tx, result);
}

CommandResult Session::record_pain(const std::string& participant_id, PainMode mode, int score) {
  require_active();
  require_kind(SessionKind::pain, "record_pain");
  if (participant_id.empty()) throw PayloadError("invalid-payload", "participant_id must not be empty");
  if (score < stats::kPainMin || score > stats::kPainMax) {
    throw PayloadError("out-of-range", "score " + std::to_string(score) + " is outside 0..10");
  }
  int order = 1;
  for (const auto& r : pain().records) {
    if (r.participant_id != participant_id) continue;
    if (r.mode == mode) {
      throw PayloadError("duplicate-record", "participant '" + participant_id + "' already has a mode " +
                                                 std::string(to_string(mode)) + " score");
    }
    ++order;
  }
  Tx tx(*this);
  tx.emit("pain_recorded", {{"participant_id", participant_id},
                            {"mode", std::string(to_string(mode))},
                            {"score", score},
                            {"order_index", order}});
  return commit(tx, {{"order_index", order}, {"records", pain().records.size() + 1}});
}

CommandResult Session::utaut_answer(const stats::UtautResponse& response) {
  require_active();
  require_kind(SessionKind::utaut, "utaut_answer");
  try {
    response.validate();
  } catch (const stats::StatsError& e) {
    throw PayloadError("invalid-payload", e.what());
  }
  for (const auto& r : utaut().responses) {
    if (r.respondent_id == response.respondent_id) {
      throw PayloadError("duplicate-record", "respondent '" + response.respondent_id + "' already answered");
    }
  }
  Tx tx(*this);
  tx.emit("utaut_answer", {{"response", stats::to_json(response)}});
  return commit(tx, {{"responses", utaut().responses.size() + 1}});
}

CommandResult Session::robot_action(const RobotAction& action) {
  require_active();
  if (!action.params.is_object()) throw PayloadError("invalid-payload", "robot action params must be an object");
  Tx tx(*this);
  tx.robot(action.kind, action.params);
  return commit(tx, {{"action", std::string(to_string(action.kind))}});
}

CommandResult Session::finish(const std::string& reason) {
  require_active();
  Tx tx(*this);
  // A game stopped before anyone wins is an abort; the other protocols
  // simply end.
  if (kind_ == SessionKind::game) {
    tx.robot(RobotActionKind::farewell, {{"reason", reason}});
    tx.emit("session_aborted", {{"reason", reason}});
  } else {
    tx.emit("session_finished", {{"reason", reason}});
  }
  return commit(tx, {{"status", std::string(to_string(tx.core.status))}});
}

namespace {

const json& require_field(const json& payload, const char* key) {
  if (!payload.is_object() || !payload.contains(key)) {
    throw PayloadError("invalid-payload", std::string("payload needs \"") + key + "\"");
  }
  return payload[key];
}

Observation observation_from(const json& payload) {
  Observation obs;
  const auto& top = require_field(payload, "top");
  const auto e = top.is_string() ? emotion_from_string(top.get<std::string>()) : std::nullopt;
  if (!e) throw PayloadError("invalid-payload", "\"top\" must be an emotion label");
  obs.top = *e;
  const auto& probs = require_field(payload, "probs");
  if (!probs.is_array() || probs.size() != kEmotionCount) {
    throw PayloadError("invalid-payload", "\"probs\" must hold 7 numbers");
  }
  for (std::size_t i = 0; i < kEmotionCount; ++i) {
    if (!probs[i].is_number()) throw PayloadError("invalid-payload", "\"probs\" must hold 7 numbers");
    obs.probs[i] = probs[i].get<double>();
  }
  return obs;
}

}  // namespace

CommandResult Session::execute(const std::string& command, const json& payload) {
  const json& p = payload.is_null() ? json::object() : payload;
  if (command == "calibrate") return calibrate();
  if (command == "roll") return roll();
  if (command == "robot_roll") return robot_roll();
  if (command == "override") return override_expression();
  if (command == "resolve_expression") return resolve_expression(observation_from(p));
  if (command == "record_pain") {
    const auto& id = require_field(p, "participant_id");
    const auto& mode = require_field(p, "mode");
    const auto& score = require_field(p, "score");
    const auto m = mode.is_string() ? stats::pain_mode_from_string(mode.get<std::string>()) : std::nullopt;
    if (!id.is_string()) throw PayloadError("invalid-payload", "\"participant_id\" must be a string");
    if (!m) throw PayloadError("invalid-payload", "\"mode\" must be A or B");
    if (!score.is_number_integer()) throw PayloadError("invalid-payload", "\"score\" must be an integer");
    const auto v = score.get<long long>();
    if (v < stats::kPainMin || v > stats::kPainMax) {
      throw PayloadError("out-of-range", "score " + std::to_string(v) + " is outside 0..10");
    }
    return record_pain(id.get<std::string>(), *m, static_cast<int>(v));
  }
  if (command == "utaut_answer") {
    try {
      return utaut_answer(stats::utaut_response_from_json(p.contains("response") ? p["response"] : p));
    } catch (const stats::StatsError& e) {
      throw PayloadError("invalid-payload", e.what());
    }
  }
  if (command == "robot_action") {
    const auto& kind = require_field(p, "kind");
    const auto k = kind.is_string() ? robot_action_from_string(kind.get<std::string>()) : std::nullopt;
    if (!k) throw PayloadError("invalid-payload", "unknown robot action " + kind.dump());
    return robot_action({*k, p.contains("params") ? p["params"] : json::object()});
  }
  if (command == "finish") {
    std::string reason = "operator";
    if (p.contains("reason") && p["reason"].is_string()) reason = p["reason"].get<std::string>();
    return finish(reason);
  }
  throw PayloadError("unknown-command", "unknown command '" + command + "'");
}

json Session::snapshot() const {
  json j = {{"session_id", id_},
            {"kind", std::string(to_string(kind_))},
            {"status", std::string(to_string(core_.status))},
            {"last_seq", core_.last_seq}};
  if (!events_.empty()) j["created_at"] = events_.front().ts;
  if (const auto* g = std::get_if<GameState>(&core_.state)) {
    json s = {{"child_name", g->child_name},
              {"positions", {{"child", g->positions[0]}, {"robot", g->positions[1]}}},
              {"turn", std::string(to_string(g->turn))},
              {"phase", std::string(to_string(g->phase))},
              {"retry_count", g->retry_count},
              {"board", to_json(g->config)}};
    s["pending_emotion"] = g->pending_emotion ? json(std::string(to_string(*g->pending_emotion))) : json(nullptr);
    s["winner"] = g->winner ? json(std::string(to_string(*g->winner))) : json(nullptr);
    j["state"] = s;
  } else if (const auto* p = std::get_if<PainState>(&core_.state)) {
    json records = json::array();
    for (const auto& r : p->records) {
      records.push_back({{"participant_id", r.participant_id},
                         {"mode", std::string(to_string(r.mode))},
                         {"score", r.score},
                         {"order_index", r.order_index}});
    }
    json s = {{"records", records}};
    if (p->assignment) {
      json modes = json::array();
      for (auto m : p->assignment->first_modes) modes.push_back(std::string(to_string(m)));
      s["assignment"] = {{"first_modes", modes}, {"extra", std::string(to_string(p->assignment->extra))}};
    }
    j["state"] = s;
  } else if (const auto* u = std::get_if<UtautState>(&core_.state)) {
    json ids = json::array();
    for (const auto& r : u->responses) ids.push_back(r.respondent_id);
    j["state"] = {{"respondents", ids}};
  }
  return j;
}

bool same_state(const Session& a, const Session& b) {
  return a.id_ == b.id_ && a.kind_ == b.kind_ && a.core_.status == b.core_.status &&
         a.core_.last_seq == b.core_.last_seq && a.core_.state == b.core_.state;
}

// ------------------------------------------------------------- simulation

Session simulate_game(const std::string& id, const BoardConfig& config, std::uint64_t seed,
                      const SimulationOptions& options, Clock clock) {
  if (!clock) {
    clock = stepping_clock(std::chrono::system_clock::time_point{std::chrono::seconds{1767225600}},
                           std::chrono::milliseconds{250});
  }
  json cfg = to_json(config);
  cfg["child_name"] = options.child_name;
  Session s = Session::create(id, SessionKind::game, cfg, seed, clock);
  Rng child(seed ^ 0x9e3779b97f4a7c15ULL);
  s.calibrate();
  for (std::size_t step = 0; s.status() == Status::active; ++step) {
    if (step >= options.max_commands) throw SessionError("simulation-limit", "simulated game did not finish");
    const GameState& g = s.game();
    switch (g.phase) {
      case Phase::awaiting_roll: s.roll(); break;
      case Phase::robot_turn: s.robot_roll(); break;
      case Phase::awaiting_expression: {
        if (g.retry_count >= config.max_retries) {
          s.override_expression();
          break;
        }
        Observation obs;
        const Emotion expected = *g.pending_emotion;
        const bool match = uniform01(child) < options.pass_rate;
        const Emotion shown = match ? expected : kAllEmotions[(static_cast<std::size_t>(code(expected)) + 1 +
                                                              uniform_below(child, kEmotionCount - 1)) %
                                                             kEmotionCount];
        // Most mass on the shown label, the rest spread evenly.
        const double peak = 0.55 + 0.4 * uniform01(child);
        for (std::size_t i = 0; i < kEmotionCount; ++i) obs.probs[i] = (1.0 - peak) / (kEmotionCount - 1);
        obs.probs[static_cast<std::size_t>(code(shown))] = peak;
        obs.top = shown;
        s.resolve_expression(obs);
        break;
      }
      case Phase::awaiting_neutral_calibration: s.calibrate(); break;
      case Phase::finished: break;
    }
  }
  return s;
}

}  // namespace maya::sessions
