// Copyright 2026 The ITIS Engine Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Session-based annotation service. A session holds one image, the clicks a
// human placed on it and every mask version produced so far. AnnotationService
// is the transport-free core; ServiceServer exposes it over HTTP+JSON.

#ifndef ITIS_SERVICE_HPP
#define ITIS_SERVICE_HPP

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "itis/errors.hpp"
#include "itis/evaluation.hpp"
#include "itis/guidance.hpp"
#include "itis/png_io.hpp"
#include "itis/predictor.hpp"
#include "itis/raster.hpp"

namespace itis {

/// Service-level failure with the HTTP status and error code it maps to.
class ServiceError : public Error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : Error(message), status_(status), code_(std::move(code)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }

 private:
  int status_;
  std::string code_;
};

inline std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Consistent copy of one session, taken under its lock.
struct SessionSnapshot {
  std::string id;
  int width = 0;
  int height = 0;
  std::string predictor;
  SimulationMode mode = SimulationMode::scratch;
  ClickSet clicks;
  Bitmask mask;
  std::size_t version = 0;
  std::string created;
  std::string updated;
};

inline nlohmann::json clicks_to_json(const ClickSet& clicks) {
  nlohmann::json a = nlohmann::json::array();
  for (const Click& c : clicks) {
    a.push_back({{"x", c.x}, {"y", c.y}, {"polarity", to_string(c.polarity)}, {"round", c.round}});
  }
  return a;
}

inline nlohmann::json to_json(const SessionSnapshot& s, bool include_mask = true) {
  nlohmann::json j{{"id", s.id},
                   {"width", s.width},
                   {"height", s.height},
                   {"predictor", s.predictor},
                   {"mode", to_string(s.mode)},
                   {"version", s.version},
                   {"clicks", clicks_to_json(s.clicks)},
                   {"created", s.created},
                   {"updated", s.updated}};
  if (include_mask) j["mask"] = {{"format", "rle"}, {"rle", to_rle(s.mask)}};
  return j;
}

/// Append-only log of session operations. Images are stored next to it so
/// that replaying the log rebuilds every live session.
class SessionLog {
 public:
  explicit SessionLog(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }
  std::filesystem::path log_path() const { return dir_ / "sessions.log"; }
  std::filesystem::path image_path(const std::string& id) const { return dir_ / (id + ".image.png"); }
  std::filesystem::path initial_path(const std::string& id) const { return dir_ / (id + ".initial.png"); }

  void record_create(const std::string& id, const RgbImage& image, const std::optional<Bitmask>& initial,
                     const std::string& predictor, SimulationMode mode) {
    save_rgb_image(image, image_path(id));
    if (initial) save_mask(*initial, initial_path(id));
    append({{"op", "create"}, {"id", id}, {"predictor", predictor}, {"mode", to_string(mode)},
            {"initial", initial.has_value()}});
  }
  void record_click(const std::string& id, const Click& c) {
    append({{"op", "click"}, {"id", id}, {"x", c.x}, {"y", c.y}, {"polarity", to_string(c.polarity)}});
  }
  void record_undo(const std::string& id) { append({{"op", "undo"}, {"id", id}}); }
  void record_delete(const std::string& id) { append({{"op", "delete"}, {"id", id}}); }

  std::vector<nlohmann::json> entries() const {
    std::vector<nlohmann::json> out;
    std::ifstream in(log_path());
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) out.push_back(nlohmann::json::parse(line));
    }
    return out;
  }

 private:
  void append(const nlohmann::json& entry) {
    std::lock_guard lock(mutex_);
    std::ofstream out(log_path(), std::ios::app);
    out << entry.dump() << '\n';
    out.flush();
    if (!out) throw Error("cannot append to session log " + log_path().string());
  }

  std::filesystem::path dir_;
  std::mutex mutex_;
};

class AnnotationService {
 public:
  struct Options {
    GuidanceOptions guidance{};
    std::optional<std::filesystem::path> log_dir;
  };

  AnnotationService() : AnnotationService(Options{}) {}
  explicit AnnotationService(Options options) : options_(std::move(options)) {
    if (options_.log_dir) log_ = std::make_unique<SessionLog>(*options_.log_dir);
  }

  /// Predictors that are not concurrency-safe are serialised behind a lock.
  void register_predictor(const std::string& name, std::shared_ptr<Predictor> predictor) {
    std::unique_lock lock(registry_mutex_);
    if (!predictor->descriptor().concurrency_safe) {
      auto serialized = std::make_shared<SerializedPredictor>(*predictor);
      predictors_[name] = {std::shared_ptr<Predictor>(serialized, serialized.get()), predictor};
    } else {
      predictors_[name] = {predictor, predictor};
    }
  }

  std::vector<std::string> predictor_names() const {
    std::shared_lock lock(registry_mutex_);
    std::vector<std::string> out;
    for (const auto& [name, _] : predictors_) out.push_back(name);
    return out;
  }

  std::string create_session(const RgbImage& image, const std::string& predictor_name,
                             SimulationMode mode = SimulationMode::scratch,
                             std::optional<Bitmask> initial_mask = std::nullopt) {
    const std::string id = allocate_id();
    auto session = make_session(id, image, predictor_name, mode, std::move(initial_mask));
    if (log_) log_->record_create(id, session->image, session->initial, predictor_name, mode);
    std::unique_lock lock(sessions_mutex_);
    sessions_[id] = std::move(session);
    return id;
  }

  /// Appends a click, re-predicts and stores the thresholded mask as a new
  /// version. On any failure the session is left unchanged.
  SessionSnapshot add_click(const std::string& id, int x, int y, Polarity polarity) {
    auto s = find(id);
    std::unique_lock lock(s->mutex);
    if (!s->image.contains(x, y)) {
      throw ServiceError(400, "out_of_bounds",
                         "click (" + std::to_string(x) + ", " + std::to_string(y) + ") outside the " +
                             std::to_string(s->image.width()) + "x" + std::to_string(s->image.height()) +
                             " image");
    }
    if (s->clicks.contains(x, y, polarity)) {
      throw ServiceError(409, "duplicate_click", "a click with this position and polarity already exists");
    }
    ClickSet next = s->clicks;
    const Click click = next.add(x, y, polarity);
    Bitmask mask;
    try {
      mask = predict(*s, next, s->versions.back());
    } catch (const std::exception& e) {
      throw ServiceError(502, "predictor_failed", e.what());
    }
    if (log_) log_->record_click(id, click);
    s->clicks = std::move(next);
    s->versions.push_back(std::move(mask));
    s->updated = std::chrono::system_clock::now();
    return snapshot_locked(*s);
  }

  SessionSnapshot undo(const std::string& id) {
    auto s = find(id);
    std::unique_lock lock(s->mutex);
    if (s->versions.size() <= 1) throw ServiceError(409, "nothing_to_undo", "session is at version 0");
    if (log_) log_->record_undo(id);
    s->clicks.pop_back();
    s->versions.pop_back();
    s->updated = std::chrono::system_clock::now();
    return snapshot_locked(*s);
  }

  SessionSnapshot get(const std::string& id) const {
    auto s = find(id);
    std::shared_lock lock(s->mutex);
    return snapshot_locked(*s);
  }

  void remove(const std::string& id) {
    std::unique_lock lock(sessions_mutex_);
    if (sessions_.erase(id) == 0) throw ServiceError(404, "not_found", "no session '" + id + "'");
    if (log_) log_->record_delete(id);
  }

  std::size_t session_count() const {
    std::shared_lock lock(sessions_mutex_);
    return sessions_.size();
  }

  /// Recomputes the current mask from the click history alone.
  Bitmask replay_mask(const std::string& id) const {
    auto s = find(id);
    std::shared_lock lock(s->mutex);
    Bitmask mask = s->versions.front();
    ClickSet partial;
    for (const Click& c : s->clicks) {
      partial.push(c);
      mask = predict(*s, partial, mask);
    }
    return mask;
  }

  /// Rebuilds sessions from the write-ahead log; returns how many are live.
  std::size_t restore() {
    if (!log_) return 0;
    std::map<std::string, std::shared_ptr<Session>> restored;
    for (const nlohmann::json& e : log_->entries()) {
      const std::string op = e.at("op");
      const std::string id = e.at("id");
      if (op == "create") {
        std::optional<Bitmask> initial;
        if (e.value("initial", false)) initial = load_mask(log_->initial_path(id));
        restored[id] = make_session(id, load_rgb_image(log_->image_path(id)), e.at("predictor"),
                                    parse_mode(e.at("mode").get<std::string>()), std::move(initial));
        bump_counter(id);
        continue;
      }
      auto it = restored.find(id);
      if (it == restored.end()) throw FormatError("session log refers to unknown session '" + id + "'");
      Session& s = *it->second;
      if (op == "click") {
        s.clicks.add(e.at("x"), e.at("y"), parse_polarity(e.at("polarity").get<std::string>()));
        s.versions.push_back(predict(s, s.clicks, s.versions.back()));
      } else if (op == "undo") {
        s.clicks.pop_back();
        s.versions.pop_back();
      } else if (op == "delete") {
        restored.erase(it);
      } else {
        throw FormatError("unknown session log op '" + op + "'");
      }
    }
    std::unique_lock lock(sessions_mutex_);
    for (auto& [id, s] : restored) sessions_[id] = std::move(s);
    return restored.size();
  }

 private:
  struct RegisteredPredictor {
    std::shared_ptr<Predictor> callable;
    std::shared_ptr<Predictor> owner;
  };

  struct Session {
    std::string id;
    RgbImage image;
    std::optional<Bitmask> initial;
    std::string predictor_name;
    std::shared_ptr<Predictor> predictor;
    SimulationMode mode = SimulationMode::scratch;
    ClickSet clicks;
    std::vector<Bitmask> versions;  // versions.size() == clicks.size() + 1
    std::chrono::system_clock::time_point created;
    std::chrono::system_clock::time_point updated;
    mutable std::shared_mutex mutex;
  };

  std::shared_ptr<Session> make_session(const std::string& id, RgbImage image,
                                        const std::string& predictor_name, SimulationMode mode,
                                        std::optional<Bitmask> initial) const {
    auto s = std::make_shared<Session>();
    s->id = id;
    s->predictor_name = predictor_name;
    {
      std::shared_lock lock(registry_mutex_);
      auto it = predictors_.find(predictor_name);
      if (it == predictors_.end()) {
        throw ServiceError(400, "unknown_predictor", "unknown predictor '" + predictor_name + "'");
      }
      s->predictor = it->second.callable;
    }
    if (image.is_unset()) throw ServiceError(400, "bad_image", "image is empty");
    if (mode == SimulationMode::refine && !initial) {
      throw ServiceError(400, "missing_initial_mask", "refine mode needs an initial mask");
    }
    if (initial && !initial->same_shape(image)) {
      throw ServiceError(400, "bad_initial_mask", "initial mask size does not match the image");
    }
    s->mode = mode;
    s->versions.push_back(initial ? *initial : Bitmask(image.width(), image.height()));
    s->initial = std::move(initial);
    s->image = std::move(image);
    s->created = s->updated = std::chrono::system_clock::now();
    return s;
  }

  Bitmask predict(const Session& s, const ClickSet& clicks, const Bitmask& current) const {
    const bool with_mask = s.predictor->descriptor().uses_mask_channel;
    const GuidanceStack stack = assemble_stack(s.image, clicks, with_mask ? &current : nullptr,
                                               options_.guidance);
    return threshold(s.predictor->predict(stack, clicks));
  }

  static SessionSnapshot snapshot_locked(const Session& s) {
    SessionSnapshot out;
    out.id = s.id;
    out.width = s.image.width();
    out.height = s.image.height();
    out.predictor = s.predictor_name;
    out.mode = s.mode;
    out.clicks = s.clicks;
    out.mask = s.versions.back();
    out.version = s.versions.size() - 1;
    out.created = utc_timestamp(s.created);
    out.updated = utc_timestamp(s.updated);
    return out;
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "not_found", "no session '" + id + "'");
    return it->second;
  }

  std::string allocate_id() {
    std::lock_guard lock(counter_mutex_);
    return "s" + std::to_string(++counter_);
  }

  void bump_counter(const std::string& id) {
    if (id.size() < 2 || id[0] != 's') return;
    try {
      const std::uint64_t n = std::stoull(id.substr(1));
      std::lock_guard lock(counter_mutex_);
      counter_ = std::max(counter_, n);
    } catch (const std::exception&) {
    }
  }

  Options options_;
  std::unique_ptr<SessionLog> log_;
  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, RegisteredPredictor> predictors_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex counter_mutex_;
  std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// HTTP front end

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::filesystem::path> static_dir;
  std::string static_mount = "/ui";
};

class ServiceServer {
 public:
  ServiceServer(AnnotationService& service, ServerOptions options)
      : service_(service), options_(std::move(options)) {
    routes();
  }

  ~ServiceServer() { stop(); }

  /// Binds the socket; returns the bound port.
  int bind() {
    if (options_.port == 0) {
      port_ = server_.bind_to_any_port(options_.host);
    } else {
      port_ = server_.bind_to_port(options_.host, options_.port) ? options_.port : -1;
    }
    if (port_ < 0) {
      throw Error("cannot bind " + options_.host + ":" + std::to_string(options_.port));
    }
    return port_;
  }

  /// Serves on the calling thread until stop().
  void run() {
    if (port_ < 0) bind();
    server_.listen_after_bind();
  }

  /// Serves on a background thread.
  int start() {
    const int port = bind();
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port;
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& code,
                         const std::string& message) {
    send_json(res, status, {{"code", code}, {"message", message}});
  }

  /// Runs a handler, mapping exceptions onto JSON error bodies.
  static httplib::Server::Handler guarded(std::function<void(const httplib::Request&, httplib::Response&)> fn) {
    return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const ServiceError& e) {
        send_error(res, e.status(), e.code(), e.what());
      } catch (const ImageIoError& e) {
        send_error(res, 400, "bad_image", e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, "bad_request", e.what());
      } catch (const std::invalid_argument& e) {
        send_error(res, 400, "bad_request", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  static std::string field(const httplib::Request& req, const std::string& key, const std::string& fallback) {
    if (req.has_file(key)) return req.get_file_value(key).content;
    if (req.has_param(key)) return req.get_param_value(key);
    return fallback;
  }

  void create(const httplib::Request& req, httplib::Response& res) {
    std::string image_bytes;
    std::optional<std::string> mask_bytes;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("image")) throw ServiceError(400, "bad_request", "multipart field 'image' is required");
      image_bytes = req.get_file_value("image").content;
      if (req.has_file("initial_mask")) mask_bytes = req.get_file_value("initial_mask").content;
    } else {
      image_bytes = req.body;
    }
    if (image_bytes.empty()) throw ServiceError(400, "bad_image", "no image uploaded");
    auto as_span = [](const std::string& s) {
      return std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
    };
    RgbImage image = decode_rgb_png(as_span(image_bytes));
    std::optional<Bitmask> initial;
    if (mask_bytes) {
      try {
        initial = decode_mask_png(as_span(*mask_bytes));
      } catch (const ImageIoError& e) {
        throw ServiceError(400, "bad_initial_mask", e.what());
      }
    }
    const std::string predictor = field(req, "predictor", "builtin");
    const SimulationMode mode = parse_mode(field(req, "mode", initial ? "refine" : "scratch"));
    const std::string id = service_.create_session(image, predictor, mode, std::move(initial));
    send_json(res, 201, to_json(service_.get(id)));
  }

  void routes() {
    server_.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    }));
    server_.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      create(req, res);
    }));
    server_.Post(R"(/sessions/([^/]+)/clicks)",
                 guarded([this](const httplib::Request& req, httplib::Response& res) {
                   const auto body = nlohmann::json::parse(req.body);
                   const auto snap = service_.add_click(req.matches[1], body.at("x").get<int>(),
                                                        body.at("y").get<int>(),
                                                        parse_polarity(body.at("polarity").get<std::string>()));
                   send_json(res, 200, to_json(snap));
                 }));
    server_.Post(R"(/sessions/([^/]+)/undo)",
                 guarded([this](const httplib::Request& req, httplib::Response& res) {
                   send_json(res, 200, to_json(service_.undo(req.matches[1])));
                 }));
    server_.Get(R"(/sessions/([^/]+)/mask\.png)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const Bytes png = encode_mask_png(service_.get(req.matches[1]).mask);
                  res.set_content(std::string(png.begin(), png.end()), "image/png");
                }));
    server_.Get(R"(/sessions/([^/]+)/mask\.rle)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  res.set_content(to_rle(service_.get(req.matches[1]).mask), "text/plain");
                }));
    server_.Get(R"(/sessions/([^/.]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, to_json(service_.get(req.matches[1])));
    }));
    server_.Delete(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      service_.remove(req.matches[1]);
      res.status = 204;
    }));
    if (options_.static_dir) {
      if (!server_.set_mount_point(options_.static_mount, options_.static_dir->string())) {
        throw Error("static directory " + options_.static_dir->string() + " does not exist");
      }
    }
  }

  AnnotationService& service_;
  ServerOptions options_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace itis

#endif  // ITIS_SERVICE_HPP
