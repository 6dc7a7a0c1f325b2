#include <httplib.h>

#include <algorithm>
#include <cmath>

#include "maya/service.hpp"

namespace maya::service {

using nlohmann::json;

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw ApiError(400, "invalid-config", "port: must lie in 0..65535", {{"field", "port"}});
  if (host.empty()) throw ApiError(400, "invalid-config", "host: must not be empty", {{"field", "host"}});
  if (data_dir.empty()) throw ApiError(400, "invalid-config", "data_dir: must not be empty", {{"field", "data_dir"}});
  if (max_sessions == 0) {
    throw ApiError(400, "invalid-config", "max_sessions: must be positive", {{"field", "max_sessions"}});
  }
  if (threads == 0) throw ApiError(400, "invalid-config", "threads: must be positive", {{"field", "threads"}});
  if (model_path && !std::filesystem::is_regular_file(*model_path)) {
    throw ApiError(400, "invalid-config", "model_path: no checkpoint at " + model_path->string(),
                   {{"field", "model_path"}});
  }
}

// ------------------------------------------------------------- request helpers

LandmarkSet landmarks_from_request(const json& body) {
  if (!body.is_object() || !body.contains("points")) throw ApiError(422, "invalid-landmarks", "body needs \"points\"");
  const auto& pts = body["points"];
  if (!pts.is_array() || pts.size() != kLandmarkCount) {
    throw ApiError(422, "invalid-landmarks",
                   "points: expected " + std::to_string(kLandmarkCount) + " [x, y] pairs, got " +
                       std::to_string(pts.is_array() ? pts.size() : 0));
  }
  LandmarkSet ls;
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    const auto& p = pts[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw ApiError(422, "invalid-landmarks", "points[" + std::to_string(i) + "]: expected [x, y]",
                     {{"point", i}});
    }
    ls.points[i] = {p[0].get<double>(), p[1].get<double>()};
  }
  if (body.contains("subject_id") && body["subject_id"].is_string()) ls.subject_id = body["subject_id"];
  return ls;
}

json prediction_json(const fer::Prediction& p, bool with_latency) {
  json probs = json::array();
  for (double v : p.probs) probs.push_back(v);
  json labels = json::array();
  for (Emotion e : kAllEmotions) labels.push_back(std::string(to_string(e)));
  json j = {{"probs", probs}, {"labels", labels}, {"top", std::string(to_string(p.top))}, {"embedding", p.embedding}};
  if (with_latency) j["latency_ms"] = p.latency_ms;
  return j;
}

namespace {

ApiError from_stats_error(const stats::StatsError& e) { return ApiError(422, e.code(), e.what()); }

std::vector<stats::PainRecord> pain_records(const json& list) {
  if (!list.is_array()) throw ApiError(422, "invalid-payload", "records: must be an array");
  std::vector<stats::PainRecord> out;
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& r = list[i];
    const std::string where = "records[" + std::to_string(i) + "]";
    if (!r.is_object() || !r.contains("participant_id") || !r["participant_id"].is_string() || !r.contains("mode") ||
        !r["mode"].is_string() || !r.contains("score") || !r["score"].is_number_integer()) {
      throw ApiError(422, "invalid-payload", where + ": needs participant_id, mode and an integer score");
    }
    const auto mode = stats::pain_mode_from_string(r["mode"].get<std::string>());
    if (!mode) throw ApiError(422, "invalid-payload", where + ": mode must be A or B");
    const auto score = r["score"].get<long long>();
    if (score < stats::kPainMin || score > stats::kPainMax) {
      throw ApiError(422, "out-of-range", where + ": score " + std::to_string(score) + " is outside 0..10");
    }
    const auto id = r["participant_id"].get<std::string>();
    out.push_back({id, *mode, static_cast<int>(score), ++seen[id]});
  }
  return out;
}

std::vector<stats::UtautResponse> utaut_responses(const json& list) {
  if (!list.is_array()) throw ApiError(422, "invalid-payload", "responses: must be an array");
  std::vector<stats::UtautResponse> out;
  for (const auto& r : list) {
    try {
      out.push_back(stats::utaut_response_from_json(r));
    } catch (const stats::StatsError& e) {
      json detail = json::object();
      if (r.is_object() && r.contains("respondent_id") && r["respondent_id"].is_string()) {
        detail["respondent_id"] = r["respondent_id"];
      }
      throw ApiError(422, e.code(), e.what(), detail);
    }
  }
  return out;
}

}  // namespace

json pain_analysis(const json& body) {
  if (!body.is_object() || !body.contains("records")) throw ApiError(422, "invalid-payload", "body needs \"records\"");
  const auto records = pain_records(body["records"]);
  try {
    return stats::pain_report(records).to_json();
  } catch (const stats::StatsError& e) {
    throw from_stats_error(e);
  }
}

json utaut_analysis(const json& body) {
  if (!body.is_object() || !body.contains("responses")) {
    throw ApiError(422, "invalid-payload", "body needs \"responses\"");
  }
  const auto responses = utaut_responses(body["responses"]);
  auto pairing = stats::Pairing::independent;
  if (body.contains("pairing")) {
    const auto p = body["pairing"].is_string() ? stats::pairing_from_string(body["pairing"].get<std::string>())
                                               : std::nullopt;
    if (!p) throw ApiError(422, "invalid-payload", "pairing: must be independent or by_dyad");
    pairing = *p;
  }
  std::vector<stats::UtautResponse> children, parents;
  for (const auto& r : responses) (r.group == stats::Group::child ? children : parents).push_back(r);
  const auto map = stats::CategoryMap::standard();
  try {
    const auto rows = stats::compare_groups(children, parents, map, pairing);
    json out = {{"pairing", std::string(stats::to_string(pairing))},
                {"children", children.size()},
                {"parents", parents.size()},
                {"categories", json::array()},
                {"table", stats::render_comparison(rows)}};
    for (const auto& row : rows) out["categories"].push_back(stats::to_json(row));
    if (body.contains("questions")) {
      const auto& q = body["questions"];
      if (!q.is_array()) throw ApiError(422, "invalid-payload", "questions: must be an array of numbers");
      std::vector<int> qs;
      for (const auto& v : q) {
        if (!v.is_number_integer()) throw ApiError(422, "invalid-payload", "questions: must be an array of numbers");
        qs.push_back(v.get<int>());
      }
      out["questions"] = json::array();
      for (const auto& row : stats::compare_questions(children, parents, qs, map, pairing)) {
        out["questions"].push_back(stats::to_json(row));
      }
    }
    return out;
  } catch (const stats::StatsError& e) {
    throw from_stats_error(e);
  }
}

// ------------------------------------------------------------- server

namespace {

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw ApiError(400, "invalid-json", std::string("request body is not JSON: ") + e.what());
  }
}

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump() + "\n", "application/json");
}

template <typename F>
httplib::Server::Handler guarded(F fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const ApiError& e) {
      send(res, e.status(), e.body());
    } catch (const sessions::SessionError& e) {
      const auto api = from_session_error(e);
      send(res, api.status(), api.body());
    } catch (const std::exception& e) {
      send(res, 500, ApiError(500, "internal", e.what()).body());
    }
  };
}

std::uint64_t parse_seq(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(what);
    return v;
  } catch (const std::exception&) {
    throw ApiError(400, "invalid-query", std::string(what) + ": expected a non-negative integer");
  }
}

std::string sse_message(const sessions::Event& e) {
  return "id: " + std::to_string(e.seq) + "\ndata: " + sessions::to_line(e) + "\n\n";
}

std::vector<double> embedding_of(const json& body) {
  const auto& e = body["embedding"];
  if (!e.is_array()) throw ApiError(422, "invalid-payload", "embedding: must be an array of numbers");
  std::vector<double> v;
  for (const auto& x : e) {
    if (!x.is_number()) throw ApiError(422, "invalid-payload", "embedding: must be an array of numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

json match_json(const std::optional<fer::Match>& m) {
  if (!m) return nullptr;
  return {{"person_id", m->person_id}, {"display_name", m->display_name}, {"similarity", m->similarity}};
}

}  // namespace

Server::Server(ServiceConfig config, sessions::Clock clock) : config_(std::move(config)) {
  config_.validate();
  store_ = std::make_unique<SessionStore>(config_.data_dir, config_.max_sessions, config_.seed, std::move(clock));
  if (config_.model_path) {
    model_ = std::make_shared<const fer::FerModel>(fer::load_model(*config_.model_path));
    model_hash_ = file_hash(*config_.model_path);
  }
  gallery_path_ = config_.gallery_path.value_or(config_.data_dir / "gallery.json");
  if (std::filesystem::exists(gallery_path_)) gallery_ = fer::IdentityGallery::load(gallery_path_);
  http_ = std::make_unique<httplib::Server>();
  const unsigned threads = config_.threads;
  http_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  routes();
}

Server::~Server() { stop(); }

bool Server::model_loaded() const {
  std::lock_guard lock(model_mutex_);
  return model_ != nullptr;
}

std::pair<std::shared_ptr<const fer::FerModel>, std::string> Server::model() const {
  std::lock_guard lock(model_mutex_);
  return {model_, model_hash_};
}

void Server::set_model(std::shared_ptr<const fer::FerModel> model, std::string hash) {
  std::lock_guard lock(model_mutex_);
  model_ = std::move(model);
  model_hash_ = std::move(hash);
}

int Server::bind() {
  int port = config_.port;
  if (port == 0) {
    port = http_->bind_to_any_port(config_.host);
  } else if (!http_->bind_to_port(config_.host, port)) {
    port = -1;
  }
  if (port < 0) {
    throw ApiError(500, "bind", "cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
  return port;
}

void Server::run() { http_->listen_after_bind(); }

void Server::stop() {
  if (store_) store_->shutdown();
  if (http_ && http_->is_running()) http_->stop();
}

void Server::routes() {
  auto& http = *http_;

  http.Get("/v1/healthz", guarded([this](const httplib::Request&, httplib::Response& res) {
             const auto [net, hash] = model();
             send(res, 200,
                  {{"status", "ok"},
                   {"build", build_hash()},
                   {"checkpoint", net ? json(hash) : json(nullptr)},
                   {"model_loaded", net != nullptr},
                   {"sessions", {{"active", store_->active_count()}, {"max", config_.max_sessions}}}});
           }));

  http.Get("/v1/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
             send(res, 200, {{"sessions", store_->list()}});
           }));

  http.Post("/v1/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
              const auto body = parse_body(req);
              if (!body.is_object()) throw ApiError(400, "invalid-config", "body: must be an object", {{"field", "body"}});
              const auto kind = body.contains("kind") && body["kind"].is_string()
                                    ? sessions::session_kind_from_string(body["kind"].get<std::string>())
                                    : std::nullopt;
              if (!kind) {
                throw ApiError(400, "invalid-config", "kind: must be game, pain or utaut", {{"field", "kind"}});
              }
              std::optional<std::uint64_t> seed;
              if (body.contains("seed")) {
                if (!body["seed"].is_number_unsigned()) {
                  throw ApiError(400, "invalid-config", "seed: must be a non-negative integer", {{"field", "seed"}});
                }
                seed = body["seed"].get<std::uint64_t>();
              }
              const json config = body.contains("config") ? body["config"] : json::object();
              const auto snap = store_->create(*kind, config, seed);
              res.set_header("Location", "/v1/sessions/" + snap["session_id"].get<std::string>());
              send(res, 201, snap);
            }));

  http.Get(R"(/v1/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
             send(res, 200, store_->snapshot(req.matches[1]));
           }));

  http.Get(R"(/v1/sessions/([^/]+)/events)", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const std::uint64_t from = req.has_param("from") ? parse_seq(req.get_param_value("from"), "from") : 1;
             const auto slice = store_->events_from(req.matches[1], from);
             json events = json::array();
             for (const auto& e : slice.events) events.push_back(sessions::to_json(e));
             send(res, 200, {{"events", events}, {"closed", slice.closed}});
           }));

  http.Post(R"(/v1/sessions/([^/]+)/commands)",
            guarded([this](const httplib::Request& req, httplib::Response& res) {
              const std::string id = req.matches[1];
              if (!store_->contains(id)) throw ApiError(404, "not-found", "no session '" + id + "'");
              const auto body = parse_body(req);
              if (!body.is_object() || !body.contains("command") || !body["command"].is_string()) {
                throw ApiError(422, "invalid-payload", "body needs a \"command\" string");
              }
              const json payload = body.contains("payload") ? body["payload"] : json::object();
              const auto r = store_->command(id, body["command"].get<std::string>(), payload);
              json events = json::array();
              for (const auto& e : r.events) events.push_back(sessions::to_json(e));
              send(res, 200, {{"seq", r.events.back().seq}, {"result", r.result}, {"events", events}});
            }));

  http.Get(R"(/v1/sessions/([^/]+)/stream)", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const std::string id = req.matches[1];
             if (!store_->contains(id)) throw ApiError(404, "not-found", "no session '" + id + "'");
             std::uint64_t from = 1;
             if (req.has_param("from")) {
               from = parse_seq(req.get_param_value("from"), "from");
             } else if (req.has_header("Last-Event-ID")) {
               from = parse_seq(req.get_header_value("Last-Event-ID"), "Last-Event-ID") + 1;
             }
             res.set_header("Cache-Control", "no-cache");
             auto cursor = std::make_shared<std::uint64_t>(std::max<std::uint64_t>(from, 1));
             SessionStore* store = store_.get();
             res.set_chunked_content_provider(
                 "text/event-stream", [store, id, cursor](std::size_t, httplib::DataSink& sink) {
                   const auto slice = store->wait_from(id, *cursor, std::chrono::milliseconds(1000));
                   std::string chunk;
                   for (const auto& e : slice.events) {
                     chunk += sse_message(e);
                     *cursor = e.seq + 1;
                   }
                   if (chunk.empty() && !slice.closed) chunk = ": keepalive\n\n";
                   if (!chunk.empty() && !sink.write(chunk.data(), chunk.size())) return false;
                   if (slice.events.empty() && slice.closed) sink.done();
                   return true;
                 });
           }));

  http.Post("/v1/fer/predict", guarded([this](const httplib::Request& req, httplib::Response& res) {
              const auto [net, hash] = model();
              if (!net) throw ApiError(503, "model-not-loaded", "no checkpoint is loaded");
              const auto ls = landmarks_from_request(parse_body(req));
              try {
                send(res, 200, prediction_json(fer::predict(*net, ls)));
              } catch (const fer::PipelineError& e) {
                const int status = e.stage() == fer::Stage::classify ? 500 : 422;
                throw ApiError(status, "pipeline", e.what(), {{"stage", std::string(fer::to_string(e.stage()))}});
              }
            }));

  // Identity gallery over embeddings; a body with "points" is embedded
  // with the loaded model first.
  auto embed = [this](const json& body) {
    if (body.contains("embedding")) return embedding_of(body);
    const auto [net, hash] = model();
    if (!net) throw ApiError(503, "model-not-loaded", "no checkpoint is loaded");
    try {
      return fer::predict(*net, landmarks_from_request(body)).embedding;
    } catch (const fer::PipelineError& e) {
      throw ApiError(422, "pipeline", e.what(), {{"stage", std::string(fer::to_string(e.stage()))}});
    }
  };

  http.Get("/v1/identity", guarded([this](const httplib::Request&, httplib::Response& res) {
             send(res, 200, {{"threshold", gallery_.threshold()}, {"people", gallery_.size()}});
           }));

  http.Post("/v1/identity/enroll", guarded([this, embed](const httplib::Request& req, httplib::Response& res) {
              const auto body = parse_body(req);
              if (!body.is_object()) throw ApiError(422, "invalid-payload", "body must be an object");
              const auto e = embed(body);
              std::lock_guard lock(gallery_mutex_);
              std::string id;
              try {
                if (body.contains("person_id")) {
                  id = body["person_id"].get<std::string>();
                  gallery_.add_embedding(id, e);
                } else {
                  if (!body.contains("name") || !body["name"].is_string()) {
                    throw ApiError(422, "invalid-payload", "name: required to enroll a new person");
                  }
                  id = gallery_.enroll(body["name"].get<std::string>(), e);
                }
              } catch (const fer::GalleryError& err) {
                throw ApiError(422, "invalid-embedding", err.what());
              } catch (const json::exception& err) {
                throw ApiError(422, "invalid-payload", err.what());
              }
              gallery_.save(gallery_path_);
              send(res, 201, {{"person_id", id}, {"people", gallery_.size()}});
            }));

  http.Post("/v1/identity/identify", guarded([this, embed](const httplib::Request& req, httplib::Response& res) {
              const auto body = parse_body(req);
              if (!body.is_object()) throw ApiError(422, "invalid-payload", "body must be an object");
              try {
                const auto r = gallery_.identify(embed(body));
                send(res, 200, {{"match", match_json(r.match)}, {"best", match_json(r.best)},
                                {"threshold", gallery_.threshold()}});
              } catch (const fer::GalleryError& err) {
                throw ApiError(422, "invalid-embedding", err.what());
              }
            }));

  // Stats: either inline records or the records of a stored session.
  http.Post("/v1/stats/pain", guarded([this](const httplib::Request& req, httplib::Response& res) {
              auto body = parse_body(req);
              if (body.is_object() && body.contains("session_id") && body["session_id"].is_string()) {
                const auto snap = store_->snapshot(body["session_id"].get<std::string>());
                if (snap["kind"] != "pain") throw ApiError(422, "wrong-kind", "session is not a pain session");
                body["records"] = snap["state"]["records"];
              }
              send(res, 200, pain_analysis(body));
            }));

  http.Post("/v1/stats/utaut", guarded([this](const httplib::Request& req, httplib::Response& res) {
              auto body = parse_body(req);
              if (body.is_object() && body.contains("session_id") && body["session_id"].is_string()) {
                const auto id = body["session_id"].get<std::string>();
                if (store_->snapshot(id)["kind"] != "utaut") {
                  throw ApiError(422, "wrong-kind", "session is not a UTAUT session");
                }
                json responses = json::array();
                for (const auto& e : store_->events_from(id, 1).events) {
                  if (e.kind == "utaut_answer") responses.push_back(e.payload["response"]);
                }
                body["responses"] = responses;
              }
              send(res, 200, utaut_analysis(body));
            }));

  http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(ApiError(res.status, res.status == 404 ? "not-found" : "http", httplib::status_message(res.status))
                              .body()
                              .dump() +
                          "\n",
                      "application/json");
    }
  });
}

}  // namespace maya::service
