#include <algorithm>
#include <cinttypes>
#include <condition_variable>
#include <fstream>
#include <sstream>

#include "maya/detail/le_io.hpp"
#include "maya/service.hpp"

namespace maya::service {

using nlohmann::json;
using sessions::Event;
using sessions::Session;

json ApiError::body() const {
  json e = {{"code", code_}, {"message", what()}};
  for (const auto& [k, v] : detail_.items()) e[k] = v;
  return {{"error", e}};
}

ApiError from_session_error(const sessions::SessionError& e) {
  const auto& code = e.code();
  if (const auto* c = dynamic_cast<const sessions::ConfigError*>(&e)) {
    return ApiError(400, code, e.what(), {{"field", c->field()}});
  }
  if (const auto* p = dynamic_cast<const sessions::PhaseError*>(&e)) {
    return ApiError(409, code, e.what(), {{"phase", p->phase()}});
  }
  if (code == "integrity") return ApiError(500, code, e.what());
  return ApiError(422, code, e.what());
}

std::string build_hash() {
#ifdef MAYA_BUILD_ID
  return MAYA_BUILD_ID;
#else
  return "unknown";
#endif
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h = detail::fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return detail::hex64(h);
}

// ------------------------------------------------------------- store

struct SessionStore::Slot {
  mutable std::mutex mutex;
  mutable std::condition_variable changed;
  Session session;
  std::filesystem::path file;

  explicit Slot(Session s, std::filesystem::path f) : session(std::move(s)), file(std::move(f)) {}

  bool closed() const { return session.status() != sessions::Status::active; }
};

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string session_id(std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06" PRIu64, n);
  return buf;
}

// One write call per command, flushed before the command is acknowledged.
void append_events(const std::filesystem::path& file, const std::vector<Event>& events) {
  std::string text;
  for (const auto& e : events) text += sessions::to_line(e) + "\n";
  std::ofstream out(file, std::ios::binary | std::ios::app);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw ApiError(500, "storage", "cannot append to " + file.string());
}

// Reads a log, dropping a torn final line left by a crash mid-write.
std::vector<Event> read_log(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw sessions::IntegrityError("missing log " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::vector<Event> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      in.close();
      std::filesystem::resize_file(file, pos);
      break;
    }
    if (nl > pos) out.push_back(sessions::parse_event_line(std::string_view(text).substr(pos, nl - pos)));
    pos = nl + 1;
  }
  return out;
}

}  // namespace

SessionStore::SessionStore(std::filesystem::path data_dir, std::size_t max_sessions, std::uint64_t seed,
                           sessions::Clock clock)
    : dir_(std::move(data_dir)), max_sessions_(max_sessions), seed_(seed), clock_(std::move(clock)) {
  std::filesystem::create_directories(dir_ / "sessions");
  load();
}

SessionStore::~SessionStore() { shutdown(); }

std::filesystem::path SessionStore::log_path(const std::string& id) const { return dir_ / "sessions" / (id + ".jsonl"); }

void SessionStore::load() {
  const auto index = dir_ / "index.json";
  if (!std::filesystem::exists(index)) return;
  std::ifstream in(index);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw sessions::IntegrityError("unreadable index " + index.string() + ": " + e.what());
  }
  for (const auto& entry : j.at("sessions")) {
    const auto id = entry.at("session_id").get<std::string>();
    const auto file = dir_ / entry.at("file").get<std::string>();
    std::vector<Event> events;
    try {
      events = read_log(file);
      auto session = Session::replay(events, clock_);
      slots_[id] = std::make_shared<Slot>(std::move(session), file);
    } catch (const sessions::IntegrityError& e) {
      throw sessions::IntegrityError("session " + id + ": " + e.what(), e.missing_seq());
    }
    order_.push_back(id);
    next_number_ = std::max(next_number_, entry.at("number").get<std::uint64_t>() + 1);
  }
}

void SessionStore::write_index() const {
  json list = json::array();
  for (const auto& id : order_) {
    const auto& slot = slots_.at(id);
    list.push_back({{"session_id", id},
                    {"number", std::stoull(id.substr(1))},
                    {"kind", std::string(sessions::to_string(slot->session.kind()))},
                    {"file", std::filesystem::relative(slot->file, dir_).generic_string()}});
  }
  const auto tmp = dir_ / "index.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << json{{"v", 1}, {"sessions", list}}.dump(2) << '\n';
    out.flush();
    if (!out) throw ApiError(500, "storage", "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, dir_ / "index.json");
}

std::shared_ptr<SessionStore::Slot> SessionStore::find(const std::string& id) const {
  std::shared_lock lock(map_mutex_);
  const auto it = slots_.find(id);
  if (it == slots_.end()) throw ApiError(404, "not-found", "no session '" + id + "'");
  return it->second;
}

bool SessionStore::contains(const std::string& id) const {
  std::shared_lock lock(map_mutex_);
  return slots_.count(id) != 0;
}

std::size_t SessionStore::active_count() const {
  std::shared_lock lock(map_mutex_);
  std::size_t n = 0;
  for (const auto& [id, slot] : slots_) {
    std::lock_guard g(slot->mutex);
    if (!slot->closed()) ++n;
  }
  return n;
}

json SessionStore::create(sessions::SessionKind kind, const json& config, std::optional<std::uint64_t> seed) {
  std::lock_guard create_lock(create_mutex_);
  if (active_count() >= max_sessions_) {
    throw ApiError(409, "capacity", "already " + std::to_string(max_sessions_) + " active sessions",
                   {{"max_sessions", max_sessions_}});
  }
  const std::uint64_t number = next_number_;
  const std::string id = session_id(number);
  const std::uint64_t s = seed ? *seed : splitmix(seed_ ^ splitmix(number));
  Session session = [&] {
    try {
      return Session::create(id, kind, config, s, clock_);
    } catch (const sessions::SessionError& e) {
      throw from_session_error(e);
    }
  }();
  const auto file = log_path(id);
  // A log without an index entry is left over from a crash before the
  // index write; the session was never acknowledged.
  std::filesystem::remove(file);
  append_events(file, session.events());
  json snap = session.snapshot();
  {
    std::unique_lock lock(map_mutex_);
    slots_[id] = std::make_shared<Slot>(std::move(session), file);
    order_.push_back(id);
    next_number_ = number + 1;
  }
  write_index();
  return snap;
}

sessions::CommandResult SessionStore::command(const std::string& id, const std::string& name, const json& payload) {
  auto slot = find(id);
  std::unique_lock lock(slot->mutex);
  // Work on a copy so a failed write leaves the live session untouched.
  Session working = slot->session;
  sessions::CommandResult result;
  try {
    result = working.execute(name, payload);
  } catch (const sessions::SessionError& e) {
    throw from_session_error(e);
  }
  append_events(slot->file, result.events);
  slot->session = std::move(working);
  lock.unlock();
  slot->changed.notify_all();

  if (driver_) {
    for (const auto& e : result.events) {
      if (e.kind != "robot_action") continue;
      if (auto k = sessions::robot_action_from_string(e.payload["action"].get<std::string>())) {
        driver_->perform({*k, e.payload["params"]}, e);
      }
    }
  }
  return result;
}

json SessionStore::snapshot(const std::string& id) const {
  auto slot = find(id);
  std::lock_guard lock(slot->mutex);
  return slot->session.snapshot();
}

json SessionStore::list() const {
  std::vector<std::shared_ptr<Slot>> slots;
  {
    std::shared_lock lock(map_mutex_);
    for (const auto& id : order_) slots.push_back(slots_.at(id));
  }
  json out = json::array();
  for (const auto& slot : slots) {
    std::lock_guard lock(slot->mutex);
    const auto snap = slot->session.snapshot();
    out.push_back({{"session_id", snap["session_id"]},
                   {"kind", snap["kind"]},
                   {"status", snap["status"]},
                   {"last_seq", snap["last_seq"]},
                   {"created_at", snap.value("created_at", "")}});
  }
  return out;
}

namespace {

SessionStore::Slice slice_of(const Session& s, std::uint64_t from) {
  SessionStore::Slice out;
  const auto& ev = s.events();
  const std::size_t start = from == 0 ? 0 : static_cast<std::size_t>(std::min<std::uint64_t>(from - 1, ev.size()));
  out.events.assign(ev.begin() + static_cast<std::ptrdiff_t>(start), ev.end());
  out.closed = s.status() != sessions::Status::active;
  return out;
}

}  // namespace

SessionStore::Slice SessionStore::events_from(const std::string& id, std::uint64_t from) const {
  auto slot = find(id);
  std::lock_guard lock(slot->mutex);
  return slice_of(slot->session, from);
}

SessionStore::Slice SessionStore::wait_from(const std::string& id, std::uint64_t from,
                                            std::chrono::milliseconds timeout) const {
  auto slot = find(id);
  std::unique_lock lock(slot->mutex);
  slot->changed.wait_for(lock, timeout, [&] {
    return stopping_.load() || slot->closed() || slot->session.last_seq() >= std::max<std::uint64_t>(from, 1);
  });
  return slice_of(slot->session, from);
}

void SessionStore::shutdown() {
  stopping_ = true;
  std::shared_lock lock(map_mutex_);
  for (const auto& [id, slot] : slots_) {
    // Taking the slot lock orders the flag before any waiter's predicate check.
    { std::lock_guard g(slot->mutex); }
    slot->changed.notify_all();
  }
}

void SessionStore::set_driver(std::shared_ptr<sessions::RobotDriver> driver) { driver_ = std::move(driver); }

}  // namespace maya::service
