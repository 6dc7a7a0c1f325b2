#include <doctest.h>

#include <set>
#include <sstream>

#include "maya/sessions.hpp"
#include "support/game_fuzz.hpp"

using namespace maya;
using namespace maya::sessions;
using nlohmann::json;
using stats::PainMode;

namespace {

Clock test_clock() {
  return stepping_clock(std::chrono::system_clock::time_point{std::chrono::seconds{1767225600}},
                        std::chrono::milliseconds{100});
}

Session new_game(std::uint64_t seed, json config = json::object()) {
  return Session::create("g1", SessionKind::game, config, seed, test_clock());
}

Observation confident(Emotion e, double p = 0.9) {
  Observation o;
  o.top = e;
  for (auto& x : o.probs) x = (1.0 - p) / 6.0;
  o.probs[static_cast<std::size_t>(code(e))] = p;
  return o;
}

template <typename F>
std::string error_code(F&& f) {
  try {
    f();
  } catch (const SessionError& e) {
    return e.code();
  }
  return "none";
}

// Plays until the child has a pending expression, or the game ends.
void advance_to_expression(Session& s) {
  for (int i = 0; i < 500 && s.status() == Status::active; ++i) {
    const auto phase = s.game().phase;
    if (phase == Phase::awaiting_expression) return;
    if (phase == Phase::awaiting_roll) s.roll();
    if (phase == Phase::robot_turn) s.robot_roll();
  }
}

std::string log_text(const Session& s) {
  std::string out;
  for (const auto& e : s.events()) out += to_line(e) + "\n";
  return out;
}

}  // namespace

TEST_CASE("standard board layout") {
  const auto b = BoardConfig::standard();
  CHECK(b.cell_count == 30);
  CHECK(b.ladders == std::vector<Jump>{{3, 12}, {9, 18}, {16, 25}});
  CHECK(b.slides == std::vector<Jump>{{14, 5}, {22, 11}, {28, 19}});
  CHECK(b.emotion_at(1) == Emotion::sadness);
  CHECK(b.emotion_at(6) == Emotion::disgust);
  CHECK(b.emotion_at(7) == Emotion::sadness);
  for (int c = 1; c <= 30; ++c) CHECK(b.emotion_at(c) != Emotion::neutral);
  CHECK_NOTHROW(b.validate());
  CHECK(board_from_json(to_json(b)) == b);
  CHECK(board_from_json(json::object()) == b);
}

TEST_CASE("config validation names the field") {
  auto field_of = [](const json& j) {
    try {
      board_from_json(j);
    } catch (const ConfigError& e) {
      CHECK(e.code() == "invalid-config");
      return e.field();
    }
    return std::string("none");
  };
  CHECK(field_of({{"ladders", {{31, 5}}}}) == "ladders[0].from");
  CHECK(field_of({{"ladders", {{5, 2}}}}) == "ladders[0]");
  CHECK(field_of({{"slides", {{4, 9}}}}) == "slides[0]");
  CHECK(field_of({{"slides", {{14, 5}, {3, 1}}}}) == "slides[1].from");  // 3 starts a ladder
  CHECK(field_of({{"pass_threshold", 1.5}}) == "pass_threshold");
  CHECK(field_of({{"max_retries", -1}}) == "max_retries");
  CHECK(field_of({{"dice_sides", "six"}}) == "dice_sides");
  CHECK(field_of({{"overshoot_rule", "bounce"}}) == "overshoot_rule");
  CHECK(field_of({{"cell_emotions", {"sadness", "neutral"}}, {"cell_count", 2}}) == "cell_emotions[1]");
  CHECK(field_of({{"cell_count", 10}, {"cell_emotions", {"anger"}}}) == "cell_emotions");
  CHECK(field_of({{"cell_count", 12}}) == "none");

  try {
    board_from_json({{"ladders", {{31, 5}}}});
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("ladders[0].from") != std::string::npos);
  }
}

TEST_CASE("move resolution") {
  const auto b = BoardConfig::standard();
  CHECK(resolve_move(b, 0, 5).to == 5);
  CHECK_FALSE(resolve_move(b, 0, 5).via);

  const auto up = resolve_move(b, 0, 3);
  CHECK(up.landed == 3);
  CHECK(up.to == 12);
  CHECK(up.via == "ladder");

  const auto down = resolve_move(b, 10, 4);
  CHECK(down.landed == 14);
  CHECK(down.to == 5);
  CHECK(down.via == "slide");

  const auto clamp = resolve_move(b, 28, 5);
  CHECK(clamp.to == 30);
  CHECK(clamp.won);

  auto exact = b;
  exact.overshoot = Overshoot::exact;
  const auto stay = resolve_move(exact, 28, 5);
  CHECK(stay.blocked);
  CHECK(stay.to == 28);
  CHECK_FALSE(stay.won);
  CHECK(resolve_move(exact, 27, 3).won);
}

TEST_CASE("move outcomes stay on the board") {
  for (auto rule : {Overshoot::clamp, Overshoot::exact}) {
    auto b = BoardConfig::standard();
    b.overshoot = rule;
    for (int from = 0; from < 30; ++from) {
      for (int roll = 1; roll <= 6; ++roll) {
        const auto m = resolve_move(b, from, roll);
        CHECK(m.to >= 1);
        CHECK(m.to <= 30);
        CHECK(m.won == (m.to == 30));
        if (!m.via) CHECK(m.to == m.landed);
      }
    }
  }
}

TEST_CASE("dice are uniform") {
  Rng rng(2024);
  std::array<int, 6> counts{};
  constexpr int kRolls = 60000;
  for (int i = 0; i < kRolls; ++i) {
    const int v = roll_die(rng, 6);
    REQUIRE(v >= 1);
    REQUIRE(v <= 6);
    ++counts[static_cast<std::size_t>(v - 1)];
  }
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - kRolls / 6.0) * (c - kRolls / 6.0) / (kRolls / 6.0);
  // Upper 1% point of chi-square with 5 degrees of freedom.
  CHECK(chi2 < 15.0863);
}

TEST_CASE("game opening") {
  auto s = Session::create("g1", SessionKind::game, {{"child_name", "Ana"}}, 3, test_clock());
  std::vector<std::string> kinds;
  for (const auto& e : s.events()) kinds.push_back(e.kind);
  CHECK(kinds == std::vector<std::string>{"session_created", "greeted", "robot_action", "name_asked", "robot_action"});
  CHECK(s.game().child_name == "Ana");
  CHECK(s.game().phase == Phase::awaiting_neutral_calibration);
  CHECK(s.events()[0].ts == "2026-01-01T00:00:00.000Z");
  CHECK(s.events()[1].ts == "2026-01-01T00:00:00.100Z");
  for (std::size_t i = 0; i < s.events().size(); ++i) CHECK(s.events()[i].seq == i + 1);

  CHECK(error_code([&] { s.roll(); }) == "phase-violation");
  try {
    s.roll();
  } catch (const PhaseError& e) {
    CHECK(e.phase() == "awaiting_neutral_calibration");
  }
  s.calibrate();
  CHECK(s.game().phase == Phase::awaiting_roll);
  CHECK(error_code([&] { s.calibrate(); }) == "phase-violation");
  CHECK(error_code([&] { s.robot_roll(); }) == "phase-violation");
  CHECK(error_code([&] { s.resolve_expression(confident(Emotion::anger)); }) == "phase-violation");
}

TEST_CASE("child turn teaches the cell's word") {
  auto s = new_game(5);
  s.calibrate();
  advance_to_expression(s);
  REQUIRE(s.status() == Status::active);
  const auto& g = s.game();
  const Emotion want = *g.pending_emotion;
  CHECK(want == g.config.emotion_at(g.position(Player::child)));

  const auto& tail = s.events();
  CHECK(tail[tail.size() - 2].kind == "word_prompted");
  CHECK(tail.back().payload["action"] == "speak_word");
  CHECK(tail.back().payload["params"]["word"] == std::string(to_string(want)));

  // Right label below threshold fails, then a wrong label fails.
  auto r1 = s.resolve_expression(confident(want, 0.45));
  CHECK(r1.result["passed"] == false);
  CHECK(s.game().retry_count == 1);
  CHECK(r1.events.back().payload["action"] == "encourage");
  const Emotion other = want == Emotion::anger ? Emotion::sadness : Emotion::anger;
  CHECK(s.resolve_expression(confident(other)).result["passed"] == false);

  auto r3 = s.resolve_expression(confident(want, 0.5));
  CHECK(r3.result["passed"] == true);
  CHECK(s.game().phase == Phase::robot_turn);
  CHECK(s.game().retry_count == 0);
  CHECK_FALSE(s.game().pending_emotion);
  CHECK(r3.events.back().kind == "word_taught");
}

TEST_CASE("override needs max_retries failures") {
  auto s = new_game(8, {{"max_retries", 2}});
  s.calibrate();
  advance_to_expression(s);
  REQUIRE(s.game().phase == Phase::awaiting_expression);
  const Emotion want = *s.game().pending_emotion;
  const Emotion other = want == Emotion::anger ? Emotion::sadness : Emotion::anger;

  CHECK(error_code([&] { s.override_expression(); }) == "phase-violation");
  CHECK(s.resolve_expression(confident(other)).result["override_available"] == false);
  CHECK(error_code([&] { s.override_expression(); }) == "phase-violation");
  CHECK(s.resolve_expression(confident(other)).result["override_available"] == true);
  auto r = s.override_expression();
  CHECK(r.events[0].kind == "expression_passed");
  CHECK(r.events[0].payload["overridden"] == true);
  CHECK(s.game().phase == Phase::robot_turn);
}

TEST_CASE("robot wins from 27 with a 3") {
  // Search seeds for a game where the robot sits on 27 and rolls a 3.
  bool seen = false;
  for (std::uint64_t seed = 0; seed < 400 && !seen; ++seed) {
    auto s = simulate_game("r", BoardConfig::standard(), seed, {.pass_rate = 1.0});
    const auto& ev = s.events();
    for (std::size_t i = 0; i + 1 < ev.size(); ++i) {
      if (ev[i].kind == "moved" && ev[i].payload["player"] == "robot" && ev[i].payload["from"] == 27 &&
          ev[i - 1].payload["value"] == 3) {
        CHECK(ev[i].payload["to"] == 30);
        CHECK(ev[i].payload["won"] == true);
        CHECK(s.game().winner == Player::robot);
        CHECK(ev[i + 1].payload["action"] == "farewell");
        CHECK(ev.back().kind == "session_finished");
        seen = true;
        break;
      }
    }
  }
  CHECK(seen);
}

TEST_CASE("exact overshoot blocks the child without a word") {
  bool blocked = false;
  for (std::uint64_t seed = 0; seed < 200 && !blocked; ++seed) {
    auto g = simulate_game("x", board_from_json({{"overshoot_rule", "exact"}}), seed);
    const auto& ev = g.events();
    for (std::size_t i = 0; i + 1 < ev.size(); ++i) {
      if (ev[i].kind == "moved" && ev[i].payload["player"] == "child" && ev[i].payload["blocked"] == true) {
        CHECK(ev[i + 1].kind == "dice_rolled");
        CHECK(ev[i + 1].payload["player"] == "robot");
        blocked = true;
        break;
      }
    }
  }
  CHECK(blocked);
}

TEST_CASE("counterbalanced pain order") {
  const auto even = counterbalance_assign(25, 42);
  CHECK(even.extra == PainMode::A_no_robot);
  CHECK(std::count(even.first_modes.begin(), even.first_modes.end(), PainMode::A_no_robot) == 13);
  const auto odd = counterbalance_assign(25, 7);
  CHECK(odd.extra == PainMode::B_with_robot);
  CHECK(std::count(odd.first_modes.begin(), odd.first_modes.end(), PainMode::B_with_robot) == 13);
  CHECK(counterbalance_assign(25, 42) == even);

  for (std::size_t n = 1; n <= 60; ++n) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      const auto c = counterbalance_assign(n, seed);
      REQUIRE(c.first_modes.size() == n);
      const auto a = std::count(c.first_modes.begin(), c.first_modes.end(), PainMode::A_no_robot);
      const auto b = static_cast<std::ptrdiff_t>(n) - a;
      CHECK(std::abs(a - b) <= 1);
      CHECK((c.extra == PainMode::A_no_robot ? a >= b : b >= a));
    }
  }
  CHECK(counterbalance_assign(1, 4).first_modes == std::vector{PainMode::A_no_robot});
  CHECK(counterbalance_assign(1, 5).first_modes == std::vector{PainMode::B_with_robot});
  CHECK(error_code([] { counterbalance_assign(0, 1); }) == "invalid-payload");
}

TEST_CASE("pain session records and rejects") {
  auto s = Session::create("p1", SessionKind::pain, {{"participants", 25}}, 42, test_clock());
  REQUIRE(s.pain().assignment);
  CHECK(s.pain().assignment->first_modes.size() == 25);

  s.execute("record_pain", {{"participant_id", "k1"}, {"mode", "A"}, {"score", 9}});
  auto r = s.execute("record_pain", {{"participant_id", "k1"}, {"mode", "B"}, {"score", 4}});
  CHECK(r.result["order_index"] == 2);
  CHECK(s.pain().records[1] == stats::PainRecord{"k1", PainMode::B_with_robot, 4, 2});

  const auto before = s.last_seq();
  CHECK(error_code([&] { s.execute("record_pain", {{"participant_id", "k1"}, {"mode", "A"}, {"score", 3}}); }) ==
        "duplicate-record");
  CHECK(error_code([&] { s.execute("record_pain", {{"participant_id", "k2"}, {"mode", "A"}, {"score", 11}}); }) ==
        "out-of-range");
  CHECK(error_code([&] { s.execute("record_pain", {{"participant_id", "k2"}, {"mode", "A"}, {"score", -1}}); }) ==
        "out-of-range");
  CHECK(error_code([&] { s.execute("record_pain", {{"participant_id", "k2"}, {"mode", "C"}, {"score", 1}}); }) ==
        "invalid-payload");
  CHECK(error_code([&] { s.execute("record_pain", {{"participant_id", "k2"}, {"score", 1}}); }) ==
        "invalid-payload");
  CHECK(error_code([&] { s.execute("roll", json::object()); }) == "wrong-kind");
  CHECK(error_code([&] { s.execute("jump", json::object()); }) == "unknown-command");
  CHECK(s.last_seq() == before);

  s.finish();
  CHECK(s.status() == Status::finished);
  CHECK(error_code([&] { s.execute("record_pain", {{"participant_id", "k3"}, {"mode", "A"}, {"score", 1}}); }) ==
        "phase-violation");
}

TEST_CASE("utaut session") {
  auto s = Session::create("u1", SessionKind::utaut, json::object(), 1, test_clock());
  stats::UtautResponse r;
  r.respondent_id = "kid-1";
  r.answers.assign(stats::kUtautQuestions, 4);
  s.utaut_answer(r);
  CHECK(s.utaut().responses.size() == 1);
  CHECK(error_code([&] { s.utaut_answer(r); }) == "duplicate-record");
  r.respondent_id = "kid-2";
  r.answers.pop_back();
  try {
    s.utaut_answer(r);
    FAIL("expected rejection");
  } catch (const PayloadError& e) {
    CHECK(e.code() == "invalid-payload");
    CHECK(std::string(e.what()).find("kid-2") != std::string::npos);
  }
}

TEST_CASE("finish aborts an unfinished game") {
  auto s = new_game(2);
  s.calibrate();
  s.finish("child tired");
  CHECK(s.status() == Status::aborted);
  CHECK(s.events().back().kind == "session_aborted");
  CHECK(error_code([&] { s.roll(); }) == "phase-violation");
}

TEST_CASE("robot driver sees committed actions only") {
  std::ostringstream out;
  auto s = new_game(4);
  s.set_driver(std::make_shared<LoggingDriver>(out));
  s.calibrate();
  advance_to_expression(s);
  const std::string text = out.str();
  CHECK(text.find("speak_word") != std::string::npos);
  CHECK(text.find("greet") == std::string::npos);  // before the driver was attached

  std::ostringstream none;
  auto copy = Session::replay(s.events(), test_clock());
  copy.set_driver(std::make_shared<LoggingDriver>(none));
  CHECK(none.str().empty());

  s.robot_action({RobotActionKind::dance, {{"seconds", 4}}});
  CHECK(out.str().find("dance {\"seconds\":4}") != std::string::npos);
}

TEST_CASE("event lines round trip") {
  auto s = simulate_game("rt", BoardConfig::standard(), 11);
  std::istringstream in(log_text(s));
  const auto events = read_event_log(in);
  CHECK(events == s.events());
  for (const auto& e : events) {
    const auto j = json::parse(to_line(e));
    CHECK(j["v"] == kEventVersion);
    CHECK(j.size() == 6);
    CHECK(known_event_kind(e.kind));
  }
  CHECK(error_code([] { parse_event_line("{\"seq\":1}"); }) == "integrity");
  CHECK(error_code([] { parse_event_line("not json"); }) == "integrity");
}

TEST_CASE("replay reproduces state") {
  auto live = simulate_game("s", BoardConfig::standard(), 21);
  const auto& events = live.events();
  const auto again = Session::replay(events);
  CHECK(same_state(live, again));
  CHECK(again.snapshot() == live.snapshot());

  // Every prefix is a valid intermediate state.
  for (std::size_t n = 1; n <= events.size(); ++n) {
    const auto part = Session::replay(std::span(events).first(n));
    CHECK(part.last_seq() == n);
  }
  const auto half = Session::replay(std::span(events).first(events.size() / 2));
  CHECK(half.status() == Status::active);
}

TEST_CASE("replay rejects a broken log") {
  auto live = simulate_game("s", BoardConfig::standard(), 21);
  auto events = live.events();

  auto gap = events;
  gap.erase(gap.begin() + 6);
  try {
    Session::replay(gap);
    FAIL("expected integrity error");
  } catch (const IntegrityError& e) {
    CHECK(e.missing_seq() == 7u);
    CHECK(std::string(e.what()).find("expected seq 7") != std::string::npos);
  }

  auto tampered = events;
  for (auto& e : tampered) {
    if (e.kind == "dice_rolled") {
      e.payload["value"] = e.payload["value"].get<int>() % 6 + 1;
      break;
    }
  }
  CHECK(error_code([&] { Session::replay(tampered); }) == "integrity");

  auto unknown = events;
  unknown[3].kind = "teleported";
  CHECK(error_code([&] { Session::replay(unknown); }) == "integrity");

  auto headless = std::vector(events.begin() + 1, events.end());
  CHECK(error_code([&] { Session::replay(headless); }) == "integrity");
  CHECK(error_code([] { Session::replay(std::vector<Event>{}); }) == "integrity");
}

TEST_CASE("simulation is deterministic") {
  const auto a = log_text(simulate_game("sim", BoardConfig::standard(), 7));
  const auto b = log_text(simulate_game("sim", BoardConfig::standard(), 7));
  const auto c = log_text(simulate_game("sim", BoardConfig::standard(), 8));
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("fuzzed command streams keep the invariants") {
  const auto r = testing::fuzz_games(10000, 99);
  INFO(r.violation);
  REQUIRE(r.ok());
  CHECK(r.games == 10000);
  CHECK(r.rejected > 0);
  CHECK(r.finished > 8000);
}
