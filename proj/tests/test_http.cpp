// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <thread>

#include "support.hpp"

using namespace cisprobe;
using namespace cisprobe::runner;
using cisprobe::testing::simple_pair;
using cisprobe::testing::spec_with_lock;
using cisprobe::testing::TempDir;
using cisprobe::testing::tiny_taxonomy;

namespace {

/// In-process adapter endpoints backed by the local synthetic stack.
class Adapters {
public:
    explicit Adapters(SyntheticBackendSpec spec) : backend_(std::move(spec)) {
        server_.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
            res.set_content(answer_wire_request(backend_, Json::parse(req.body)).dump(), "application/json");
        });
        server_.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
            res.set_content(answer_scorer_request(scorer_, Json::parse(req.body)).dump(), "application/json");
        });
        server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
            res.set_content(answer_embedding_request(embeddings_, Json::parse(req.body)).dump(), "application/json");
        });
        server_.Post("/overloaded", [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
        server_.Post("/chatty", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"text": "Maybe, hard to say"})", "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~Adapters() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    const SyntheticBackend& backend() const { return backend_; }

private:
    SyntheticBackend backend_;
    MockScorer scorer_;
    SyntheticEmbeddings embeddings_{16};
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

Json get_json(httplib::Client& client, const std::string& path, int expected_status) {
    auto res = client.Get(path);
    EXPECT_TRUE(res) << path;
    if (!res) return {};
    EXPECT_EQ(res->status, expected_status) << path << " " << res->body;
    return Json::parse(res->body);
}

}  // namespace

TEST(RemoteBackend, MatchesLocalTrajectories) {
    Adapters adapters(spec_with_lock(12, "dog", 0.5));
    const RemoteBackend remote(adapters.url(), "/generate", "synthetic", TimestepGrid(12), 7.5);
    EXPECT_EQ(remote.id(), "remote/synthetic");
    for (std::size_t k : {0u, 5u, 6u, 7u, 12u})
        for (Direction dir : {Direction::insertion, Direction::deletion}) {
            const auto plan = make_plan(simple_pair(), dir, remote.grid(), k, 42, 7.5, dir == Direction::insertion);
            EXPECT_EQ(generate(plan, remote), generate(plan, adapters.backend())) << k;
        }
}

TEST(RemoteBackend, WireRequestCarriesSegments) {
    const SyntheticBackend local(spec_with_lock(4, "dog", 0.5));
    auto session = local.open_session();
    auto s = session->init(9);
    s = session->denoise_range(s, Condition("a park", std::string("dog"), 7.5), 0, 1);
    s = session->denoise_range(s, Condition("a park with a dog", std::nullopt, 7.5), 1, 4);
    const auto wire = to_wire_request(s);
    EXPECT_EQ(wire["T"], 4);
    EXPECT_EQ(wire["seed"], 9);
    ASSERT_EQ(wire["segments"].size(), 2u);
    EXPECT_EQ(wire["segments"][0]["negative_prompt"], "dog");
    EXPECT_FALSE(wire["segments"][1].contains("negative_prompt"));
    const auto answer = answer_wire_request(local, wire);
    EXPECT_EQ(Image::decode(base64_decode(answer["image"].get<std::string>())), session->decode(s));
    auto bad = wire;
    bad["T"] = 5;
    EXPECT_TRUE(answer_wire_request(local, bad).contains("error"));
}

TEST(RemoteBackend, AdapterErrorsSurfaceAsBackendErrors) {
    Adapters adapters(spec_with_lock(12, "dog", 0.5));
    const RemoteBackend mismatched(adapters.url(), "/generate", "synthetic", TimestepGrid(10), 7.5);
    EXPECT_THROW(generate(make_plan(simple_pair(), Direction::insertion, mismatched.grid(), 3, 1, 7.5), mismatched), BackendError);
    const RemoteBackend down("http://127.0.0.1:1", "/generate", "synthetic", TimestepGrid(10), 7.5, 1);
    EXPECT_THROW(generate(make_plan(simple_pair(), Direction::insertion, down.grid(), 3, 1, 7.5), down), BackendError);
}

TEST(HttpScorer, ContractAndFailures) {
    Adapters adapters(spec_with_lock(6, "dog", 0.5));
    const auto plan = make_plan(simple_pair(), Direction::insertion, adapters.backend().grid(), 0, 3, 7.5);
    const auto img = generate(plan, adapters.backend());
    HttpScorer scorer(adapters.url(), "/score", "mock-remote");
    const auto v = assess(img, "Is there a dog in the image?", scorer);
    EXPECT_EQ(v.answer, Answer::yes);
    EXPECT_EQ(v.scorer_id, "http/mock-remote");
    EXPECT_EQ(assess(img, "Is there a cat in the image?", scorer).answer, Answer::no);

    HttpScorer overloaded(adapters.url(), "/overloaded", "x");
    int attempts = 0;
    const RetryPolicy quick{3, std::chrono::milliseconds(1), 2.0, std::chrono::milliseconds(2)};
    EXPECT_THROW(assess_with_retry(img, "Is there a dog?", overloaded, quick, &attempts), ScorerError);
    EXPECT_EQ(attempts, 3);
    HttpScorer chatty(adapters.url(), "/chatty", "x");
    EXPECT_THROW(assess(img, "Is there a dog?", chatty), ParseError);
    HttpScorer unreachable("http://127.0.0.1:1", "/score", "x", 1, 1);
    EXPECT_THROW(assess(img, "Is there a dog?", unreachable), ScorerError);
}

TEST(HttpEmbeddings, MatchLocalEncoder) {
    Adapters adapters(spec_with_lock(6, "dog", 0.5));
    HttpEmbeddingBackend remote(adapters.url(), "/embed", "synth", 16);
    SyntheticEmbeddings local(16);
    const auto img = generate(make_plan(simple_pair(), Direction::insertion, adapters.backend().grid(), 0, 3, 7.5), adapters.backend());
    const auto a = remote.embed_text("a park with a dog"), b = local.embed_text("a park with a dog");
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    EXPECT_NEAR(clip_img(remote.embed_image(img), local.embed_image(img)), 1.0, 1e-12);
    HttpEmbeddingBackend wrong_dim(adapters.url(), "/embed", "synth", 8);
    EXPECT_ANY_THROW(wrong_dim.embed_text("a park"));
}

TEST(Execute, RemoteComponentsThroughRegistry) {
    Adapters adapters(spec_with_lock(6, "dog", 0.5));
    Registry reg;
    reg.add_backend("remote", {{"type", "remote"}, {"base_url", adapters.url()}, {"adapter", "synthetic"}, {"T", 6}});
    reg.add_scorer("remote", {{"type", "http"}, {"base_url", adapters.url()}, {"path", "/score"}, {"model", "mock-remote"}});
    ManifestDraft d;
    d.backend = "remote";
    d.scorer = "remote";
    d.selectors = {{std::string("Animals"), std::nullopt, std::string("dog"), std::string("park")}};
    d.seeds.count = 2;
    d.created_at = "2026-01-01T00:00:00Z";
    const auto tax = tiny_taxonomy();
    const auto m = plan_experiment(d, tax, reg);
    EXPECT_EQ(m.backend_id, "remote/synthetic");
    TempDir dir;
    ResultsStore store(dir.path());
    store.save_manifest(m, tax);
    ASSERT_TRUE(execute(store, m.id, {2, std::nullopt, false}).complete());
    const auto pc = compute_curves(store, m).at(0);
    for (const auto& p : pc.curve.points) EXPECT_EQ(*p.estimate, p.tau >= 0.5 ? 1.0 : 0.0);
}

class ServiceTest : public ::testing::Test {
protected:
    void SetUp() override {
        Registry reg;
        reg.add_backend("synth", {{"type", "synthetic"}, {"T", 10}, {"lock_tau", {{"dog", 0.45}, {"cat", 0.7}}}});
        reg.add_scorer("mock", {{"type", "mock"}});
        ManifestDraft d;
        d.backend = "synth";
        d.scorer = "mock";
        d.selectors = {{std::string("Animals"), std::nullopt, std::nullopt, std::string("park")}};
        d.directions = {Direction::insertion, Direction::deletion};
        d.seeds.count = 3;
        d.created_at = "2026-01-01T00:00:00Z";
        manifest = plan_experiment(d, taxonomy, reg);
        store.save_manifest(manifest, taxonomy);
        execute(store, manifest.id);
        service = std::make_unique<Service>(store, ServiceOptions{taxonomy, {{"type", "synthetic"}, {"dimension", 32}}});
        port = service->bind("127.0.0.1", 0);
        service->start();
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
    }
    void TearDown() override { service->stop(); }

    Taxonomy taxonomy = tiny_taxonomy();
    TempDir dir;
    ResultsStore store{dir.path()};
    ExperimentManifest manifest;
    std::unique_ptr<Service> service;
    std::unique_ptr<httplib::Client> client;
    int port = 0;
    const std::string dog = "Animals|Pets|dog|park";
};

TEST_F(ServiceTest, ReadEndpoints) {
    const auto tax = get_json(*client, "/taxonomy", 200);
    EXPECT_EQ(tax["hash"], taxonomy_hash(taxonomy));
    EXPECT_EQ(tax["schema_version"], kSchemaVersion);
    const auto list = get_json(*client, "/manifests", 200);
    ASSERT_EQ(list["manifests"].size(), 1u);
    EXPECT_EQ(list["manifests"][0]["status"], "complete");
    EXPECT_EQ(get_json(*client, "/manifests/" + manifest.id, 200)["manifest"]["id"], manifest.id);
    get_json(*client, "/manifests/0123456789abcdef", 404);
    get_json(*client, "/manifests/NotHex", 404);
    get_json(*client, "/edits/0123456789abcdef", 404);
    auto img = client->Get("/images/0123456789abcdef");
    ASSERT_TRUE(img);
    EXPECT_EQ(img->status, 404);
}

TEST_F(ServiceTest, CurveEndpoint) {
    const std::string base = "/manifests/" + manifest.id + "/curves";
    auto res = client->Get(base, httplib::Params{{"pair", dog}, {"direction", "insertion"}}, httplib::Headers{});
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200);
    const auto body = Json::parse(res->body);
    EXPECT_EQ(body["rows"].size(), 11u);
    EXPECT_EQ(body["columns"][4], "estimate");
    EXPECT_NEAR(body["summary"]["tau50"].get<double>(), 0.5, 1e-12);
    EXPECT_EQ(body["schema_version"], kSchemaVersion);
    EXPECT_EQ(curve_from_csv(body["csv"].get<std::string>()).points.size(), 11u);

    res = client->Get(base, httplib::Params{{"pair", dog}, {"direction", "deletion"}}, httplib::Headers{});
    ASSERT_TRUE(res);
    EXPECT_EQ(Json::parse(res->body)["kind"], "persistence");
    EXPECT_TRUE(Json::parse(res->body)["summary"]["tau50"].is_null());
    res = client->Get(base, httplib::Params{{"pair", dog}, {"direction", "sideways"}}, httplib::Headers{});
    EXPECT_EQ(res->status, 400);
    res = client->Get(base, httplib::Params{{"pair", "Animals|Pets|dog|sofa"}}, httplib::Headers{});
    EXPECT_EQ(res->status, 404);
    get_json(*client, base, 400);
}

TEST_F(ServiceTest, SummaryAggregatesInsertionOnly) {
    const auto body = get_json(*client, "/manifests/" + manifest.id + "/summary", 200);
    EXPECT_EQ(body["pairs"].size(), 4u);
    EXPECT_TRUE(body["aggregates"].contains("insertion"));
    EXPECT_FALSE(body["aggregates"].contains("deletion"));
    const auto& stats = body["aggregates"]["insertion"]["stats"];
    ASSERT_FALSE(stats.empty());
    EXPECT_EQ(stats[0]["name"], "tau50");
    EXPECT_NEAR(stats[0]["mean"].get<double>(), 0.6, 1e-12);
}

TEST_F(ServiceTest, EditJobLifecycle) {
    const Json request{{"manifest", manifest.id}, {"pair", dog}, {"probability", 0.6}, {"seed", 11}};
    auto res = client->Post("/edits", request.dump(), "application/json");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 202) << res->body;
    const auto queued = Json::parse(res->body);
    const auto job_id = queued["job_id"].get<std::string>();
    EXPECT_EQ(queued["status"], "queued");
    // step curve: nearest |C - 0.6| is the C = 1 plateau, largest tau wins
    EXPECT_EQ(queued["step"], 0);
    service->wait_idle();

    const auto job = get_json(*client, "/edits/" + job_id, 200);
    ASSERT_EQ(job["status"], "done") << job.dump();
    EXPECT_EQ(job["tau"], 1.0);
    EXPECT_EQ(job["report"]["embedding_id"], "synthetic-embed/32");
    EXPECT_EQ(job["tags"], Json::array({"dog"}));
    for (const char* key : {"clip_img", "clip_txt", "clip_dir"}) {
        EXPECT_GE(job["report"][key].get<double>(), -1.0);
        EXPECT_LE(job["report"][key].get<double>(), 1.0);
    }
    auto img = client->Get("/images/" + job["image_ref"].get<std::string>());
    ASSERT_TRUE(img);
    ASSERT_EQ(img->status, 200);
    EXPECT_EQ(Image::decode(img->body).tags.count("dog"), 1u);

    res = client->Post("/edits", request.dump(), "application/json");
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(Json::parse(res->body)["status"], "done");
}

TEST_F(ServiceTest, DryRunAndBadRequests) {
    Json request{{"manifest", manifest.id}, {"pair", dog}, {"probability", 0.0}, {"dry_run", true}};
    auto res = client->Post("/edits", request.dump(), "application/json");
    ASSERT_EQ(res->status, 200);
    const auto body = Json::parse(res->body);
    EXPECT_EQ(body["dry_run"], true);
    EXPECT_NEAR(body["tau"].get<double>(), 0.4, 1e-12);
    EXPECT_FALSE(body.contains("job_id"));
    EXPECT_EQ(body["out_of_range"], false);

    EXPECT_EQ(client->Post("/edits", "{not json", "application/json")->status, 400);
    EXPECT_EQ(client->Post("/edits", R"({"manifest": "x"})", "application/json")->status, 400);
    request["probability"] = 1.5;
    EXPECT_EQ(client->Post("/edits", request.dump(), "application/json")->status, 400);
    request["probability"] = 0.5;
    request["pair"] = "Animals|Pets|dog|sofa";
    EXPECT_EQ(client->Post("/edits", request.dump(), "application/json")->status, 404);
    request["manifest"] = "0123456789abcdef";
    EXPECT_EQ(client->Post("/edits", request.dump(), "application/json")->status, 404);
}
