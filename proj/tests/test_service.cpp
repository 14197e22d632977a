#include <gtest/gtest.h>

#include <filesystem>
#include <thread>
#include <unistd.h>

#include "lsd/service.hpp"
#include "support/fixtures.hpp"

using namespace lsd;
using nlohmann::json;

namespace {

Model<double> service_model() {
  auto hp = lsd::testing::tiny_hp();
  hp.feature_dim = 16;
  hp.latent_dim = 16;
  Model<double> m(hp, 31);
  m.child_decoder.exist.bias.mutable_data()[0] = 0.5;
  m.leaf_head.layers.back().bias.mutable_data()[0] = -0.5;
  return m;
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    register_routes(server_, store_, {"a", "b", "c", "d", "e", "f"});
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    return c;
  }

  json post(const std::string& path, const std::string& body, int expect = 200) const {
    auto res = client().Post(path, body, "application/json");
    EXPECT_TRUE(res) << path;
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << path << " " << res->body;
    EXPECT_EQ(res->get_header_value("Content-Type"), "application/json");
    return json::parse(res->body);
  }

  json get(const std::string& path, int expect = 200) const {
    auto res = client().Get(path);
    EXPECT_TRUE(res) << path;
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << path << " " << res->body;
    return json::parse(res->body);
  }

  /// First depth-1 node of a shape document (falls back to the root).
  static int first_child(const json& shape) {
    const auto s = from_json_value(shape);
    for (const auto& [id, n] : s.nodes)
      if (n.depth == 1) return id;
    return s.root_id;
  }

  Model<double> model_ = service_model();
  SessionStore<double> store_{model_, "chair", 9};
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

TEST_F(ServiceTest, HealthAndLabels) {
  EXPECT_EQ(get("/health").at("status"), "ok");
  const auto labels = get("/labels");
  EXPECT_EQ(labels.at("category"), "chair");
  EXPECT_EQ(labels.at("labels").size(), 6u);
}

TEST_F(ServiceTest, SampleIsValidAndSeeded) {
  const auto a = post("/sample", R"({"seed": 42})");
  const auto b = post("/sample", R"({"seed": 42})");
  const auto c = post("/sample", "");
  EXPECT_NE(a.at("session_id"), b.at("session_id"));
  EXPECT_EQ(a.at("shape"), b.at("shape"));
  EXPECT_TRUE(validate(from_json_value(a.at("shape")), model_.hp().d_max).ok());
  EXPECT_TRUE(validate(from_json_value(c.at("shape")), model_.hp().d_max).ok());
  EXPECT_EQ(a.at("shape"), to_json_value(sample_unconditional(model_, 42, "chair").shape));
}

TEST_F(ServiceTest, ResampleKeepsEverythingOutsideTheSubtree) {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const auto s = post("/sample", json{{"seed", seed}}.dump());
    const std::string id = s.at("session_id");
    const auto before = from_json_value(s.at("shape"));
    const int node = first_child(s.at("shape"));
    const auto r = post("/session/" + id + "/resample", json{{"node_id", node}, {"seed", 7}}.dump());
    const auto after = from_json_value(r.at("shape"));
    EXPECT_TRUE(validate(after, model_.hp().d_max).ok());
    const auto sub = subtree_ids(before, node);
    const std::set<int> inside(sub.begin() + 1, sub.end());
    for (const auto& [nid, n] : before.nodes) {
      if (inside.count(nid)) continue;
      ASSERT_TRUE(after.contains(nid));
      if (nid == node) {
        EXPECT_EQ(after.node(nid).box, n.box);
        EXPECT_EQ(after.node(nid).label, n.label);
      } else {
        EXPECT_EQ(after.node(nid), n);
      }
    }
    for (const auto& e : before.edges) {
      if (!inside.count(e.a) && !inside.count(e.b)) {
        EXPECT_NE(std::find(after.edges.begin(), after.edges.end(), e), after.edges.end());
      }
    }
  }
}

TEST_F(ServiceTest, RevertToZeroIsByteIdentical) {
  auto res0 = client().Post("/sample", R"({"seed": 5})", "application/json");
  ASSERT_TRUE(res0);
  const auto s = json::parse(res0->body);
  const std::string id = s.at("session_id");
  const std::string original = s.at("shape").dump();
  const int node = first_child(s.at("shape"));
  post("/session/" + id + "/resample", json{{"node_id", node}}.dump());
  post("/session/" + id + "/resample", json{{"node_id", node}, {"seed", 3}}.dump());
  const auto r = post("/session/" + id + "/revert", R"({"version": 0})");
  EXPECT_EQ(r.at("shape").dump(), original);
  const auto d = get("/session/" + id);
  EXPECT_EQ(d.at("shape").dump(), original);
  ASSERT_EQ(d.at("history").size(), 4u);
  EXPECT_EQ(d.at("version"), 3);
  EXPECT_EQ(d.at("history")[0].at("action"), "sample");
  EXPECT_EQ(d.at("history")[1].at("action"), "resample");
  EXPECT_EQ(d.at("history")[2].at("seed"), 3);
  EXPECT_EQ(d.at("history")[3].at("action"), "revert");
  EXPECT_EQ(d.at("history")[3].at("reverted_to"), 0);
}

TEST_F(ServiceTest, ErrorsCarryStatusAndField) {
  const auto s = post("/sample", R"({"seed": 1})");
  const std::string id = s.at("session_id");
  EXPECT_EQ(get("/session/nope", 404).at("field"), "id");
  EXPECT_EQ(post("/session/nope/resample", R"({"node_id": 0})", 404).at("field"), "id");
  EXPECT_EQ(post("/session/" + id + "/resample", R"({"node_id": 999})", 404).at("field"), "node_id");
  EXPECT_EQ(post("/session/" + id + "/resample", R"({})", 400).at("field"), "node_id");
  EXPECT_EQ(post("/session/" + id + "/resample", R"({"node_id": "x"})", 400).at("field"), "node_id");
  EXPECT_EQ(post("/session/" + id + "/resample", R"({"node_id": 0, "seed": -1})", 400).at("field"), "seed");
  EXPECT_EQ(post("/session/" + id + "/resample", "{not json", 400).at("field"), "");
  EXPECT_EQ(post("/session/" + id + "/resample", "[1]", 400).at("field"), "");
  EXPECT_EQ(post("/session/" + id + "/revert", R"({"version": 7})", 404).at("field"), "version");
  EXPECT_EQ(post("/session/" + id + "/revert", R"({})", 400).at("field"), "version");
  EXPECT_EQ(post("/sample", R"({"seed": "abc"})", 400).at("field"), "seed");
  // The failed requests left the history untouched.
  EXPECT_EQ(get("/session/" + id).at("history").size(), 1u);
}

TEST_F(ServiceTest, DeepestLevelNodeHasNoSubtree) {
  const int last = model_.hp().d_max;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto r = sample_unconditional(model_, seed, "chair");
    for (const auto& [id, n] : r.shape.nodes) {
      if (n.depth != last) continue;
      const auto s = post("/sample", json{{"seed", seed}}.dump());
      const auto e = post("/session/" + s.at("session_id").get<std::string>() + "/resample", json{{"node_id", id}}.dump(), 400);
      EXPECT_EQ(e.at("field"), "node_id");
      return;
    }
  }
  GTEST_SKIP() << "no sample reached the deepest level";
}

TEST_F(ServiceTest, ConcurrentSessionsDoNotInterleave) {
  const int sessions = 4, steps = 12;
  std::vector<std::string> ids;
  for (int i = 0; i < sessions; ++i) ids.push_back(post("/sample", json{{"seed", 100 + i}}.dump()).at("session_id"));
  std::vector<std::thread> workers;
  for (int i = 0; i < sessions; ++i)
    workers.emplace_back([&, i] {
      for (int k = 0; k < steps; ++k) {
        auto c = client();
        const auto cur = json::parse(c.Get("/session/" + ids[i])->body);
        const int node = first_child(cur.at("shape"));
        c.Post("/session/" + ids[i] + "/resample", json{{"node_id", node}, {"seed", i * 1000 + k}}.dump(),
               "application/json");
      }
    });
  for (auto& w : workers) w.join();

  // Each session must equal the same operations applied alone to a fresh store.
  for (int i = 0; i < sessions; ++i) {
    const auto d = get("/session/" + ids[i]);
    ASSERT_EQ(d.at("history").size(), static_cast<std::size_t>(steps + 1));
    SessionStore<double> solo(model_, "chair");
    auto [sid, v] = solo.create(100 + i);
    for (int k = 0; k < steps; ++k) {
      const auto cur = from_json_value(solo.describe(sid).at("shape"));
      int node = cur.root_id;
      for (const auto& [nid, n] : cur.nodes)
        if (n.depth == 1) {
          node = nid;
          break;
        }
      solo.resample(sid, node, static_cast<std::uint64_t>(i * 1000 + k));
    }
    EXPECT_EQ(d.at("shape"), solo.describe(sid).at("shape")) << ids[i];
  }
}

TEST_F(ServiceTest, EveryVersionReplaysFromItsRecipe) {
  const auto s = post("/sample", R"({"seed": 77})");
  const std::string id = s.at("session_id");
  for (int k = 0; k < 5; ++k) {
    const auto cur = get("/session/" + id);
    post("/session/" + id + "/resample", json{{"node_id", first_child(cur.at("shape"))}}.dump());
  }
  post("/session/" + id + "/revert", R"({"version": 2})");
  const auto snap = store_.snapshot(id);
  const auto session = store_.find(id);
  ASSERT_EQ(snap.at("versions").size(), 7u);
  for (std::size_t i = 0; i < session->history.size(); ++i) {
    const auto& v = session->history[i];
    EXPECT_EQ(replay_version(model_, v, "chair").shape, v.result.shape) << "version " << i;
    EXPECT_EQ(snap.at("versions")[i].at("shape"), to_json_value(v.result.shape));
  }
  const auto path = std::filesystem::temp_directory_path() / ("lsd_session_" + std::to_string(::getpid()) + ".json");
  store_.save_snapshot(id, path);
  std::ifstream in(path);
  EXPECT_EQ(json::parse(in), snap);
  std::filesystem::remove(path);
}
