#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "maya/fer.hpp"
#include "maya/sessions.hpp"

namespace httplib {
class Server;
}

namespace maya::service {

/// Error with an HTTP status and a stable code for the JSON body.
class ApiError : public std::runtime_error {
 public:
  ApiError(int status, std::string code, const std::string& what, nlohmann::json detail = nlohmann::json::object())
      : std::runtime_error(what), status_(status), code_(std::move(code)), detail_(std::move(detail)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }
  const nlohmann::json& detail() const { return detail_; }

  /// {"error": {"code", "message", ...detail}}
  nlohmann::json body() const;

 private:
  int status_;
  std::string code_;
  nlohmann::json detail_;
};

/// Maps engine error codes to statuses: invalid-config 400, phase-violation
/// 409, payload codes 422, integrity 500.
ApiError from_session_error(const sessions::SessionError& e);

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "maya-data";
  std::optional<std::filesystem::path> model_path;
  /// Defaults to <data_dir>/gallery.json.
  std::optional<std::filesystem::path> gallery_path;
  std::size_t max_sessions = 64;  // concurrently active
  /// Seeds sessions whose create request names no seed.
  std::uint64_t seed = 1;
  unsigned threads = 16;

  /// Throws ApiError(400) naming the field.
  void validate() const;
};

/// Hash of the compiled sources, fixed at configure time.
std::string build_hash();
/// FNV-1a of the checkpoint file bytes, hex.
std::string file_hash(const std::filesystem::path& path);

/// Event-sourced session storage: one append-only JSONL log per session
/// under <data_dir>/sessions plus <data_dir>/index.json. Thread-safe.
/// Commands on one session are serialized; different sessions run in
/// parallel.
class SessionStore {
 public:
  /// Replays every indexed log. Throws sessions::IntegrityError naming the
  /// session when a log cannot be replayed.
  SessionStore(std::filesystem::path data_dir, std::size_t max_sessions, std::uint64_t seed,
               sessions::Clock clock = sessions::wall_clock());
  ~SessionStore();
  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  /// Returns the new session's snapshot. 409 at capacity, 400 on config.
  nlohmann::json create(sessions::SessionKind kind, const nlohmann::json& config, std::optional<std::uint64_t> seed);

  /// Executes, persists, then publishes. Nothing is visible unless the log
  /// write succeeded.
  sessions::CommandResult command(const std::string& id, const std::string& name, const nlohmann::json& payload);

  nlohmann::json snapshot(const std::string& id) const;
  nlohmann::json list() const;
  bool contains(const std::string& id) const;

  /// Events with seq >= from, plus whether the session is closed.
  struct Slice {
    std::vector<sessions::Event> events;
    bool closed = false;
  };
  Slice events_from(const std::string& id, std::uint64_t from) const;
  /// Blocks until the session has an event with seq >= from, it closes,
  /// the timeout passes or shutdown() is called.
  Slice wait_from(const std::string& id, std::uint64_t from, std::chrono::milliseconds timeout) const;

  /// Wakes all waiters; later waits return at once.
  void shutdown();

  std::size_t active_count() const;
  const std::filesystem::path& data_dir() const { return dir_; }
  std::filesystem::path log_path(const std::string& id) const;

  void set_driver(std::shared_ptr<sessions::RobotDriver> driver);

 private:
  struct Slot;
  std::shared_ptr<Slot> find(const std::string& id) const;
  void write_index() const;
  void load();

  std::filesystem::path dir_;
  std::size_t max_sessions_;
  std::uint64_t seed_;
  sessions::Clock clock_;
  std::shared_ptr<sessions::RobotDriver> driver_;

  mutable std::shared_mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Slot>> slots_;
  std::vector<std::string> order_;  // creation order, for the index
  std::uint64_t next_number_ = 1;
  std::mutex create_mutex_;  // serializes create() and index writes
  std::atomic<bool> stopping_{false};
};

/// The HTTP API under /v1.
class Server {
 public:
  explicit Server(ServiceConfig config, sessions::Clock clock = sessions::wall_clock());
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds the configured port (0 picks a free one) and returns it.
  int bind();
  /// Blocks serving requests until stop().
  void run();
  void stop();

  SessionStore& store() { return *store_; }
  bool model_loaded() const;
  /// For tests and embedding: swap the served model.
  void set_model(std::shared_ptr<const fer::FerModel> model, std::string hash);

 private:
  void routes();
  std::pair<std::shared_ptr<const fer::FerModel>, std::string> model() const;

  ServiceConfig config_;
  std::unique_ptr<SessionStore> store_;
  mutable std::mutex model_mutex_;
  std::shared_ptr<const fer::FerModel> model_;
  std::string model_hash_;
  std::mutex gallery_mutex_;
  fer::IdentityGallery gallery_;
  std::filesystem::path gallery_path_;
  std::unique_ptr<httplib::Server> http_;
};

// Request parsing shared by the HTTP layer and tests.

/// {points: [[x, y] * 68]} -> LandmarkSet. Throws ApiError(422).
LandmarkSet landmarks_from_request(const nlohmann::json& body);
/// The /v1/fer/predict response without latency.
nlohmann::json prediction_json(const fer::Prediction& p, bool with_latency = true);
/// /v1/stats/pain: {records: [{participant_id, mode, score}]}.
nlohmann::json pain_analysis(const nlohmann::json& body);
/// /v1/stats/utaut: {responses: [...], pairing?, questions?}.
nlohmann::json utaut_analysis(const nlohmann::json& body);

}  // namespace maya::service
