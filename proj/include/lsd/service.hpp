// HTTP JSON service: sampling sessions with sub-tree resampling and an
// append-only variant history.
#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsd/decoder.hpp"
#include "lsd/json_io.hpp"
#include "lsd/sampling.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include <httplib.h>

namespace lsd {

/// One entry of a session history. A version is reproduced by decoding
/// `base_seed` and replaying `ops` in order.
struct SessionVersion {
  struct Op {
    int node_id = 0;
    std::uint64_t seed = 0;
  };
  std::uint64_t base_seed = 0;
  std::vector<Op> ops;
  std::string action;  // "sample", "resample" or "revert"
  std::optional<int> node_id;
  std::optional<std::uint64_t> seed;
  std::optional<int> reverted_to;
  DecodeResult result;
};

struct Session {
  std::string id;
  std::vector<SessionVersion> history;
  mutable std::mutex mutex;
};

/// Error carrying an HTTP status and the offending request field.
class RequestError : public std::runtime_error {
 public:
  RequestError(int status, std::string field, const std::string& what)
      : std::runtime_error(what), status_(status), field_(std::move(field)) {}
  int status() const { return status_; }
  const std::string& field() const { return field_; }

 private:
  int status_;
  std::string field_;
};

template <class T>
DecodeResult replay_version(const Model<T>& model, const SessionVersion& v, const std::string& category) {
  auto r = sample_unconditional(model, v.base_seed, category);
  for (const auto& op : v.ops) {
    const int d = r.shape.node(op.node_id).depth;
    r = resample_subtree(model, r.shape, r.trace, op.node_id,
                         resample_suffix(r.trace.z.size(), d, model.hp().latent_dim, op.seed));
  }
  return r;
}

inline nlohmann::json history_entry_json(const SessionVersion& v, std::size_t index) {
  nlohmann::json j = {{"version", index}, {"action", v.action}, {"base_seed", v.base_seed}};
  if (v.node_id) j["node_id"] = *v.node_id;
  if (v.seed) j["seed"] = *v.seed;
  if (v.reverted_to) j["reverted_to"] = *v.reverted_to;
  nlohmann::json ops = nlohmann::json::array();
  for (const auto& op : v.ops) ops.push_back({{"node_id", op.node_id}, {"seed", op.seed}});
  j["ops"] = std::move(ops);
  return j;
}

/// Sessions keyed by id. The map is guarded by a reader-writer lock; every
/// session has its own mutex so distinct sessions proceed in parallel.
template <class T>
class SessionStore {
 public:
  SessionStore(const Model<T>& model, std::string category, std::uint64_t seed = 0)
      : model_(model), category_(std::move(category)), seed_(seed) {}

  /// Starts a session from an unconditional sample. Without a seed the store
  /// draws one from its own deterministic counter.
  std::pair<std::string, SessionVersion> create(std::optional<std::uint64_t> seed) {
    const std::uint64_t n = counter_.fetch_add(1);
    SessionVersion v;
    v.base_seed = seed.value_or(derive_seed(seed_, n));
    v.action = "sample";
    v.seed = v.base_seed;
    v.result = sample_unconditional(model_, v.base_seed, category_);
    auto s = std::make_shared<Session>();
    s->id = "s" + std::to_string(n + 1);
    s->history.push_back(v);
    std::unique_lock lock(map_mutex_);
    sessions_[s->id] = s;
    return {s->id, std::move(v)};
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::shared_lock lock(map_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw RequestError(404, "id", "unknown session '" + id + "'");
    return it->second;
  }

  nlohmann::json describe(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    nlohmann::json hist = nlohmann::json::array();
    for (std::size_t i = 0; i < s->history.size(); ++i) hist.push_back(history_entry_json(s->history[i], i));
    return {{"session_id", id},
            {"version", s->history.size() - 1},
            {"shape", to_json_value(s->history.back().result.shape)},
            {"history", std::move(hist)}};
  }

  SessionVersion resample(const std::string& id, int node_id, std::optional<std::uint64_t> seed) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    const auto& cur = s->history.back();
    const auto& shape = cur.result.shape;
    if (!shape.contains(node_id)) throw RequestError(404, "node_id", "unknown node " + std::to_string(node_id));
    const int d = shape.node(node_id).depth;
    const std::size_t n = cur.result.trace.z.size();
    if (static_cast<std::size_t>(d) + 1 >= n)
      throw RequestError(400, "node_id", "node " + std::to_string(node_id) + " is at the deepest level and has no sub-tree");
    SessionVersion v;
    v.base_seed = cur.base_seed;
    v.ops = cur.ops;
    v.action = "resample";
    v.node_id = node_id;
    v.seed = seed.value_or(derive_seed(cur.base_seed ^ 0x5E55ULL, s->history.size()));
    v.ops.push_back({node_id, *v.seed});
    v.result = resample_subtree(model_, shape, cur.result.trace, node_id,
                                resample_suffix(n, d, model_.hp().latent_dim, *v.seed));
    s->history.push_back(v);
    return v;
  }

  /// Appends a copy of an earlier version; nothing is removed.
  SessionVersion revert(const std::string& id, long version) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    if (version < 0 || static_cast<std::size_t>(version) >= s->history.size())
      throw RequestError(404, "version", "unknown version " + std::to_string(version));
    SessionVersion v = s->history[static_cast<std::size_t>(version)];
    v.action = "revert";
    v.node_id.reset();
    v.seed.reset();
    v.reverted_to = static_cast<int>(version);
    s->history.push_back(v);
    return v;
  }

  /// Full JSON snapshot of one session (history recipes and shapes).
  nlohmann::json snapshot(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    nlohmann::json versions = nlohmann::json::array();
    for (std::size_t i = 0; i < s->history.size(); ++i) {
      auto j = history_entry_json(s->history[i], i);
      j["shape"] = to_json_value(s->history[i].result.shape);
      j["z"] = s->history[i].result.trace.z.z;
      versions.push_back(std::move(j));
    }
    return {{"session_id", id}, {"category", category_}, {"versions", std::move(versions)}};
  }

  void save_snapshot(const std::string& id, const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << snapshot(id).dump(2) << '\n';
  }

  std::vector<std::string> ids() const {
    std::shared_lock lock(map_mutex_);
    std::vector<std::string> out;
    for (const auto& [id, s] : sessions_) out.push_back(id);
    return out;
  }

  const Model<T>& model() const { return model_; }
  const std::string& category() const { return category_; }

 private:
  const Model<T>& model_;
  std::string category_;
  std::uint64_t seed_;
  std::atomic<std::uint64_t> counter_{0};
  mutable std::shared_mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

namespace detail {

inline nlohmann::json parse_body(const httplib::Request& req, bool allow_empty) {
  if (req.body.empty()) {
    if (allow_empty) return nlohmann::json::object();
    throw RequestError(400, "", "request body must be a JSON object");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw RequestError(400, "", std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw RequestError(400, "", "request body must be a JSON object");
  return j;
}

inline std::optional<std::uint64_t> optional_seed(const nlohmann::json& body) {
  if (!body.contains("seed") || body["seed"].is_null()) return std::nullopt;
  if (!body["seed"].is_number_unsigned()) throw RequestError(400, "seed", "seed must be a non-negative integer");
  return body["seed"].get<std::uint64_t>();
}

inline long required_int(const nlohmann::json& body, const std::string& field) {
  if (!body.contains(field)) throw RequestError(400, field, "missing field '" + field + "'");
  if (!body[field].is_number_integer()) throw RequestError(400, field, "'" + field + "' must be an integer");
  return body[field].get<long>();
}

inline void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const RequestError& e) {
    reply(res, e.status(), {{"error", e.what()}, {"field", e.field()}});
  } catch (const std::exception& e) {
    reply(res, 500, {{"error", e.what()}});
  }
}

}  // namespace detail

/// Registers the API routes on `server`. The store must outlive the server.
template <class T>
void register_routes(httplib::Server& server, SessionStore<T>& store, std::vector<std::string> labels) {
  using detail::guarded;
  using detail::reply;
  server.Get("/health", [](const httplib::Request&, httplib::Response& res) { reply(res, 200, {{"status", "ok"}}); });

  server.Get("/labels", [&store, labels](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"category", store.category()}, {"labels", labels}});
  });

  server.Post("/sample", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = detail::parse_body(req, true);
      auto [id, v] = store.create(detail::optional_seed(body));
      reply(res, 200, {{"session_id", id}, {"version", 0}, {"shape", to_json_value(v.result.shape)}});
    });
  });

  server.Get(R"(/session/([^/]+))", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, store.describe(req.matches[1])); });
  });

  server.Post(R"(/session/([^/]+)/resample)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      store.find(id);
      const auto body = detail::parse_body(req, false);
      const long node = detail::required_int(body, "node_id");
      const auto seed = detail::optional_seed(body);
      const auto v = store.resample(id, static_cast<int>(node), seed);
      reply(res, 200, {{"session_id", id}, {"shape", to_json_value(v.result.shape)}, {"seed", *v.seed}});
    });
  });

  server.Post(R"(/session/([^/]+)/revert)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      store.find(id);
      const auto body = detail::parse_body(req, false);
      const long version = detail::required_int(body, "version");
      const auto v = store.revert(id, version);
      reply(res, 200, {{"session_id", id}, {"shape", to_json_value(v.result.shape)}});
    });
  });
}

}  // namespace lsd
