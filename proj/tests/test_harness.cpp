#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "rrb/ablation.hpp"
#include "rrb/ingest.hpp"
#include "rrb/pipeline.hpp"
#include "rrb/report.hpp"
#include "rrb/service.hpp"
#include "support/test_helpers.hpp"

using rrb::Errc;
using rrb::ExperimentConfig;

namespace {

ExperimentConfig small_config(const rrbtest::TempDir& tmp, std::size_t dim = 64) {
    ExperimentConfig cfg;
    cfg.ads_path = tmp.file("ads.jsonl");
    cfg.queries_path = tmp.file("queries.jsonl");
    cfg.rewrites_path = tmp.file("rewrites.jsonl");
    cfg.reports_dir = tmp.file("reports");
    cfg.embedder.dim = dim;
    cfg.k_grid = {1, 3, 5, 10};
    cfg.reward_k = 6;
    cfg.workers = 3;
    return cfg;
}

void write_synthetic(const ExperimentConfig& cfg, std::size_t pairs, std::size_t ads_per_pair,
                     std::size_t queries_per_pair) {
    auto corpus = rrbtest::make_synthetic_corpus(pairs, ads_per_pair, queries_per_pair);
    rrbtest::write_ads_jsonl(cfg.ads_path, corpus.ads);
    rrbtest::write_queries_jsonl(cfg.queries_path, corpus.queries);
}

}  // namespace

TEST_CASE("config file loads and serializes the same fields") {
    rrbtest::TempDir tmp("cfg");
    const std::string path = tmp.file("config.json");
    {
        std::ofstream out(path);
        out << R"({
          "ads": "data/ads.jsonl",
          "queries": "data/queries.jsonl",
          "strategy": "few-shot-cot",
          "k_grid": [1, 5, 9],
          "weights": {"alpha": 0.45, "beta": 0.35, "gamma": 0.20},
          "embedder": {"kind": "deterministic-test", "dim": 128},
          "answer_llm": {"kind": "mock-topk-citer"},
          "seed": 99
        })";
    }
    auto cfg = rrb::load_config(path);
    CHECK(cfg.ads_path == "data/ads.jsonl");
    CHECK(cfg.strategy == rrb::PromptKind::few_shot_cot);
    CHECK(cfg.k_grid == std::vector<std::size_t>{1, 5, 9});
    CHECK(cfg.weights.alpha == 0.45);
    CHECK(cfg.embedder.dim == 128);
    CHECK(cfg.seed == 99);

    auto snapshot = rrb::config_to_json(cfg);
    CHECK(snapshot["strategy"] == "few-shot-cot");
    CHECK(snapshot["weights"]["gamma"] == 0.20);

    ExperimentConfig bad;
    bad.k_grid = {5, 3};
    CHECK_THROWS_MATCHES(bad.validate(), rrb::Error,
                         Catch::Matchers::Predicate<rrb::Error>(
                             [](const rrb::Error& e) { return e.code() == Errc::bad_config; }));
}

TEST_CASE("cmd_index writes a reloadable snapshot") {
    rrbtest::TempDir tmp("cindex");
    auto cfg = small_config(tmp);
    cfg.index_path = tmp.file("ads.idx");
    write_synthetic(cfg, 5, 20, 2);

    rrb::cmd_index(cfg);
    REQUIRE(std::filesystem::exists(cfg.index_path));
    REQUIRE(std::filesystem::exists(cfg.index_path + ".manifest.json"));

    auto loaded = rrb::FlatIndex::load(cfg.index_path);
    CHECK(loaded.size() == 100);

    // reloaded snapshot equals a fresh in-process embedding pass, bit for bit
    auto ads = rrb::load_ads(cfg.ads_path);
    rrb::DeterministicEmbedder embedder(cfg.embedder.dim);
    for (const auto& ad : ads)
        CHECK(loaded.vector_of(ad.id).values == embedder.embed_one(rrb::ad_text(ad)).values);
}

TEST_CASE("evaluate reuses an index snapshot bit-for-bit") {
    rrbtest::TempDir tmp("csnap");
    auto cfg = small_config(tmp);
    write_synthetic(cfg, 3, 8, 3);
    rrb::cmd_rewrite(cfg);

    cfg.reports_dir = tmp.file("fresh");
    rrb::cmd_evaluate(cfg);

    cfg.index_path = tmp.file("ads.idx");
    rrb::cmd_index(cfg);
    cfg.reports_dir = tmp.file("from_snapshot");
    rrb::cmd_evaluate(cfg);

    CHECK(rrbtest::read_file(tmp.file("fresh") + "/metrics.csv") ==
          rrbtest::read_file(tmp.file("from_snapshot") + "/metrics.csv"));

    // a snapshot that disagrees with the corpus is rejected
    {
        std::ofstream out(cfg.ads_path, std::ios::app);
        out << nlohmann::json{{"id", "extra"},
                              {"title", "Extra ad"},
                              {"description", "Not in the snapshot"},
                              {"domain", "misc"},
                              {"subdomain", "extra"}}
                   .dump()
            << "\n";
    }
    CHECK_THROWS_MATCHES(rrb::prepare_context(cfg), rrb::Error,
                         Catch::Matchers::Predicate<rrb::Error>(
                             [](const rrb::Error& e) { return e.code() == Errc::bad_snapshot; }));
}

TEST_CASE("cmd_rewrite with the echo mock produces identity pairs and resumes cleanly") {
    rrbtest::TempDir tmp("crw");
    auto cfg = small_config(tmp);
    write_synthetic(cfg, 4, 10, 2);

    auto stats = rrb::cmd_rewrite(cfg);
    CHECK(stats.written == 40);
    CHECK(stats.failed == 0);
    auto file = rrb::load_rewrites(cfg.rewrites_path);
    REQUIRE(file.pairs.size() == 40);
    for (const auto& pair : file.pairs) {
        CHECK(pair.before.title == pair.after.title);
        CHECK(pair.before.description == pair.after.description);
    }

    const std::string full_run = rrbtest::read_file(cfg.rewrites_path);

    // simulate an interrupted run: keep only the first 7 lines, then resume
    {
        std::istringstream in(full_run);
        std::ofstream out(cfg.rewrites_path, std::ios::trunc);
        std::string line;
        for (int i = 0; i < 7 && std::getline(in, line); ++i) out << line << "\n";
    }
    cfg.resume = true;
    auto resumed = rrb::cmd_rewrite(cfg);
    CHECK(resumed.reused == 7);
    CHECK(rrbtest::read_file(cfg.rewrites_path) == full_run);
}

namespace {

struct StubRewriteServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> in_flight{0};
    std::atomic<int> max_in_flight{0};

    StubRewriteServer() {
        server.Post("/complete", [this](const httplib::Request& req, httplib::Response& res) {
            const int now = in_flight.fetch_add(1) + 1;
            int seen = max_in_flight.load();
            while (now > seen && !max_in_flight.compare_exchange_weak(seen, now)) {
            }
            auto body = nlohmann::json::parse(req.body);
            const std::string prompt = body["prompt"].get<std::string>();
            if (prompt.find("poison") != std::string::npos) {
                res.status = 500;
            } else {
                nlohmann::json reply{
                    {"text", "Title: Stub Rewrite\nDescription: Emitted by the stub service."}};
                res.set_content(reply.dump(), "application/json");
            }
            in_flight.fetch_sub(1);
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~StubRewriteServer() {
        server.stop();
        thread.join();
    }
};

}  // namespace

TEST_CASE("cmd_rewrite against a stub service handles 1000 ads with bounded concurrency") {
    rrbtest::TempDir tmp("cstub");
    auto cfg = small_config(tmp);
    cfg.workers = 8;
    cfg.rewrite_llm.kind = rrb::LlmKind::remote_chat;
    cfg.rewrite_llm.max_in_flight = 8;
    cfg.rewrite_llm.retry_limit = 1;

    std::vector<rrb::AdDocument> ads;
    for (int i = 0; i < 1000; ++i) {
        const bool poisoned = i % 250 == 100;  // 4 ads the stub always rejects
        ads.push_back(rrbtest::make_ad("ad" + std::to_string(i),
                                       poisoned ? "poison widget" : "widget " + std::to_string(i),
                                       "description " + std::to_string(i)));
    }
    rrbtest::write_ads_jsonl(cfg.ads_path, ads);

    StubRewriteServer stub;
    cfg.rewrite_llm.endpoint = "http://127.0.0.1:" + std::to_string(stub.port) + "/complete";

    auto stats = rrb::cmd_rewrite(cfg);
    CHECK(stats.written == 996);
    CHECK(stats.failed == 4);
    CHECK(stub.max_in_flight.load() <= 8);

    auto file = rrb::load_rewrites(cfg.rewrites_path);
    CHECK(file.pairs.size() == 996);
    REQUIRE(file.failures.size() == 4);
    for (const auto& failure : file.failures)
        CHECK(failure.error.find("unavailable") != std::string::npos);
}

TEST_CASE("zero-rewrite evaluation is an exact fixed point") {
    rrbtest::TempDir tmp("czero");
    auto cfg = small_config(tmp);
    write_synthetic(cfg, 3, 6, 3);
    rrb::cmd_rewrite(cfg);  // mock-echo: identity rewrites

    auto result = rrb::cmd_evaluate(cfg);
    CHECK(result.pairs_evaluated == 18);
    REQUIRE(!result.rows.empty());
    for (const auto& row : result.rows) {
        CHECK(row.delta_mrr == 0.0);
        if (row.delta_dir_pp.has_value()) CHECK(*row.delta_dir_pp == 0.0);
        if (row.eligible_query_count == 0) CHECK(!row.delta_dir_pp.has_value());
    }
    REQUIRE(std::filesystem::exists(cfg.reports_dir + "/metrics.csv"));
    REQUIRE(std::filesystem::exists(cfg.reports_dir + "/summary.json"));
    REQUIRE(std::filesystem::exists(cfg.reports_dir + "/manifest.json"));
}

TEST_CASE("a rewrite that climbs from rank 2 to rank 1 lifts DIR by 100 points") {
    rrbtest::TempDir tmp("cclimb");
    auto cfg = small_config(tmp, 384);
    cfg.k_grid = {1, 2, 5};

    std::vector<rrb::AdDocument> ads;
    ads.push_back(rrbtest::make_ad("ad_a", "alpha", "filler", "tech", "gadgets"));
    ads.push_back(rrbtest::make_ad("ad_c", "alpha beta", "filler", "tech", "other"));
    for (int i = 0; i < 6; ++i)
        ads.push_back(rrbtest::make_ad("pad" + std::to_string(i), "omega" + std::to_string(i),
                                       "unrelated padding " + std::to_string(i), "misc", "pad"));
    rrbtest::write_ads_jsonl(cfg.ads_path, ads);
    rrbtest::write_queries_jsonl(cfg.queries_path,
                                 {rrbtest::make_query("q1", "alpha beta", "tech", "gadgets")});

    rrb::RewritePair pair;
    pair.ad_id = "ad_a";
    pair.strategy = "scripted";
    pair.before = ads[0];
    pair.after = ads[0];
    pair.after.title = "alpha beta";  // same tokens as the competitor, tie broken by id
    rrbtest::write_rewrites_jsonl(cfg.rewrites_path, {pair});

    auto ctx = rrb::prepare_context(cfg);
    auto result = rrb::run_evaluate(cfg, ctx);

    REQUIRE(result.ledger.rank(pair.ad_id, "q1", rrb::Version::before) == 2);
    REQUIRE(result.ledger.rank(pair.ad_id, "q1", rrb::Version::after) == 1);

    for (const auto& row : result.rows) {
        INFO("k=" << row.k);
        if (row.k == 1) {
            CHECK(row.eligible_query_count == 0);  // before-rank 2 fails the k=1 cutoff
            CHECK(!row.delta_dir_pp.has_value());
            CHECK_THAT(row.delta_mrr, Catch::Matchers::WithinAbs(1.0, 1e-12));
        } else {
            REQUIRE(row.delta_dir_pp.has_value());
            CHECK_THAT(*row.delta_dir_pp, Catch::Matchers::WithinAbs(100.0, 1e-12));
            CHECK_THAT(row.delta_mrr, Catch::Matchers::WithinAbs(0.5, 1e-12));
        }
    }
}

TEST_CASE("evaluation is byte-deterministic for a fixed config and seed") {
    rrbtest::TempDir tmp("cdet");
    auto cfg = small_config(tmp);
    cfg.workers = 4;
    write_synthetic(cfg, 4, 8, 3);
    rrb::cmd_rewrite(cfg);
    const std::string rewrites_once = rrbtest::read_file(cfg.rewrites_path);

    cfg.reports_dir = tmp.file("run1");
    rrb::cmd_evaluate(cfg);
    cfg.reports_dir = tmp.file("run2");
    rrb::cmd_rewrite(cfg);
    rrb::cmd_evaluate(cfg);

    CHECK(rrbtest::read_file(cfg.rewrites_path) == rewrites_once);
    CHECK(rrbtest::read_file(tmp.file("run1") + "/metrics.csv") ==
          rrbtest::read_file(tmp.file("run2") + "/metrics.csv"));
    CHECK(rrbtest::read_file(tmp.file("run1") + "/summary.json") ==
          rrbtest::read_file(tmp.file("run2") + "/summary.json"));
}

TEST_CASE("reward service scores requests like the library") {
    rrbtest::TempDir tmp("csvc");
    auto cfg = small_config(tmp);
    write_synthetic(cfg, 3, 8, 3);
    // one ad with no matching queries for the 422 path
    {
        std::ofstream out(cfg.ads_path, std::ios::app);
        out << nlohmann::json{{"id", "lonely"},
                              {"title", "Nothing matches"},
                              {"description", "No queries share this domain"},
                              {"domain", "void"},
                              {"subdomain", "empty"}}
                   .dump()
            << "\n";
    }

    rrb::RewardService service(cfg);
    const int port = service.start_async();
    httplib::Client client("127.0.0.1", port);

    auto health = client.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(nlohmann::json::parse(health->body)["status"] == "ok");

    const auto& ctx = service.context();
    const rrb::AdDocument& ad = ctx.ads[5];

    SECTION("identity rewrite: only the triplet term remains") {
        nlohmann::json body{{"ad_id", ad.id},
                            {"before", {{"title", ad.title}, {"description", ad.description}}},
                            {"after", {{"title", ad.title}, {"description", ad.description}}}};
        auto res = client.Post("/reward", body.dump(), "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 200);
        auto reply = nlohmann::json::parse(res->body);

        double triplet_sum = 0.0;
        for (const auto& entry : reply["breakdown"]) {
            CHECK(entry["rel_gain"].get<double>() == 0.0);
            CHECK(entry["fidelity"].get<double>() == 0.0);
            triplet_sum += entry["triplet"].get<double>();
        }
        const double expected = -triplet_sum / static_cast<double>(reply["breakdown"].size());
        CHECK_THAT(reply["reward"].get<double>(), Catch::Matchers::WithinAbs(expected, 1e-9));

        // equals the in-process call
        rrb::RewritePair pair{ad.id, ad, ad, "service"};
        auto direct = rrb::reward(pair, ctx.relevance, ctx.queries_by_id, ctx.index,
                                  *ctx.embedder, cfg.weights, cfg.reward_k, cfg.seed);
        CHECK_THAT(reply["reward"].get<double>(),
                   Catch::Matchers::WithinAbs(direct.reward, 1e-9));
    }

    SECTION("error statuses") {
        nlohmann::json ok_body{{"ad_id", "no-such-ad"},
                               {"before", {{"title", "t"}, {"description", "d"}}},
                               {"after", {{"title", "t"}, {"description", "d"}}}};
        auto missing = client.Post("/reward", ok_body.dump(), "application/json");
        REQUIRE(missing);
        CHECK(missing->status == 404);

        auto malformed = client.Post("/reward", R"({"ad_id": 42})", "application/json");
        REQUIRE(malformed);
        CHECK(malformed->status == 422);

        auto not_json = client.Post("/reward", "not json at all", "application/json");
        REQUIRE(not_json);
        CHECK(not_json->status == 422);

        nlohmann::json lonely{{"ad_id", "lonely"},
                              {"before", {{"title", "t"}, {"description", "d"}}},
                              {"after", {{"title", "t"}, {"description", "d"}}}};
        auto no_queries = client.Post("/reward", lonely.dump(), "application/json");
        REQUIRE(no_queries);
        CHECK(no_queries->status == 422);
    }

    service.stop();
}

namespace {

struct FlakyEmbedServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    explicit FlakyEmbedServer(std::size_t dim) {
        server.Post("/embed", [dim](const httplib::Request& req, httplib::Response& res) {
            auto body = nlohmann::json::parse(req.body);
            nlohmann::json vectors = nlohmann::json::array();
            for (const auto& text : body["texts"]) {
                std::vector<float> v(dim, 0.0f);
                v[rrb::fnv1a64(text.get<std::string>()) % dim] = 1.0f;
                vectors.push_back(v);
            }
            res.set_content(nlohmann::json{{"vectors", vectors}}.dump(), "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    void kill() {
        if (thread.joinable()) {
            server.stop();
            thread.join();
        }
    }
    ~FlakyEmbedServer() { kill(); }
};

}  // namespace

TEST_CASE("reward service returns 503 when the embedder goes away") {
    rrbtest::TempDir tmp("c503");
    auto cfg = small_config(tmp, 32);
    write_synthetic(cfg, 2, 5, 3);

    FlakyEmbedServer embed_stub(32);
    cfg.embedder.kind = rrb::EmbedderKind::remote_service;
    cfg.embedder.dim = 32;
    cfg.embedder.endpoint = "http://127.0.0.1:" + std::to_string(embed_stub.port) + "/embed";

    rrb::RewardService service(cfg);  // startup embeds the corpus through the stub
    const int port = service.start_async();
    embed_stub.kill();  // per-request query embedding now has nowhere to go

    const auto& ad = service.context().ads[0];
    nlohmann::json body{{"ad_id", ad.id},
                        {"before", {{"title", ad.title}, {"description", ad.description}}},
                        {"after", {{"title", ad.title}, {"description", ad.description}}}};
    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(30);
    auto res = client.Post("/reward", body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 503);
    service.stop();
}

TEST_CASE("ablation grid covers the six stock weightings plus the custom one") {
    rrbtest::TempDir tmp("cabl");
    auto cfg = small_config(tmp);
    cfg.weights = {0.5, 0.5, 0.0};
    write_synthetic(cfg, 3, 8, 3);
    rrb::cmd_rewrite(cfg);

    auto rows = rrb::cmd_ablate(cfg);
    REQUIRE(rows.size() == 7 * cfg.k_grid.size());
    REQUIRE(std::filesystem::exists(cfg.reports_dir + "/ablation.csv"));

    auto ctx = rrb::prepare_context(cfg);
    auto eval = rrb::run_evaluate(cfg, ctx);

    for (const auto& row : rows) {
        if (row.label == "1:1:1") {
            // equal-weighting rows duplicate the plain evaluate aggregates
            for (std::size_t i = 0; i < cfg.k_grid.size(); ++i) {
                if (cfg.k_grid[i] != row.k) continue;
                CHECK(row.mean_delta_mrr == eval.per_k[i].mean_delta_mrr);
                CHECK(row.mean_delta_dir_pp == eval.per_k[i].mean_delta_dir_pp);
            }
            CHECK_THAT(row.mean_reward,
                       Catch::Matchers::WithinAbs(
                           -(row.mean_rel_gain + row.mean_triplet + row.mean_fidelity), 1e-9));
        }
        if (row.label == "0.5:0.5:0") {
            // zero gamma: the fidelity column contributes nothing to the reward
            CHECK_THAT(row.mean_reward,
                       Catch::Matchers::WithinAbs(
                           -(0.5 * row.mean_rel_gain + 0.5 * row.mean_triplet), 1e-9));
        }
    }
}

TEST_CASE("report command renders tables and series CSVs") {
    rrbtest::TempDir tmp("crep");
    auto cfg = small_config(tmp);
    write_synthetic(cfg, 3, 6, 3);
    rrb::cmd_rewrite(cfg);
    cfg.reports_dir = tmp.file("runA");
    rrb::cmd_evaluate(cfg);

    std::ostringstream table;
    rrb::cmd_report({tmp.file("runA") + "/metrics.csv", tmp.file("runA") + "/metrics.csv"},
                    {"alpha", "beta"}, tmp.file("series"), table);
    const std::string rendered = table.str();
    CHECK(rendered.find("alpha") != std::string::npos);
    CHECK(rendered.find("beta") != std::string::npos);
    CHECK(std::filesystem::exists(tmp.file("series") + "/alpha_series.csv"));
    CHECK(std::filesystem::exists(tmp.file("series") + "/beta_series.csv"));

    auto parsed = rrb::read_metrics_csv(tmp.file("runA") + "/metrics.csv");
    CHECK(parsed.size() == 18 * cfg.k_grid.size());

    std::ostringstream empty;
    rrb::cmd_report({}, {}, "", empty);
    CHECK(empty.str() == "no data\n");
}

TEST_CASE("ingest reports corpus statistics") {
    rrbtest::TempDir tmp("cing");
    auto cfg = small_config(tmp);
    write_synthetic(cfg, 4, 5, 2);
    {
        std::ofstream out(cfg.ads_path, std::ios::app);
        out << nlohmann::json{{"id", "orphan"},
                              {"title", "Orphan ad"},
                              {"description", "No query family"},
                              {"domain", "void"},
                              {"subdomain", "none"}}
                   .dump()
            << "\n";
    }
    auto stats = rrb::cmd_ingest(cfg);
    CHECK(stats.ad_count == 21);
    CHECK(stats.query_count == 8);
    CHECK(stats.pair_count == 5);
    CHECK(stats.ads_without_queries == 1);
}

namespace {

struct QueryGenServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    QueryGenServer() {
        server.Post("/complete", [](const httplib::Request& req, httplib::Response& res) {
            auto body = nlohmann::json::parse(req.body);
            const std::string prompt = body["prompt"].get<std::string>();
            const auto pos = prompt.find("Subdomain: ");
            const std::string sub = rrb::trim(prompt.substr(pos + 11));
            nlohmann::json reply{{"text", "1. cheap " + sub + "\n2. best " + sub +
                                              " deals\n3. " + sub + " for beginners"}};
            res.set_content(reply.dump(), "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~QueryGenServer() {
        server.stop();
        thread.join();
    }
};

}  // namespace

TEST_CASE("ingest can generate queries through a remote backend") {
    rrbtest::TempDir tmp("cgen");
    auto cfg = small_config(tmp);
    rrbtest::write_ads_jsonl(cfg.ads_path,
                             {rrbtest::make_ad("a1", "Road bike", "Fast bike", "sport", "bikes"),
                              rrbtest::make_ad("a2", "Gravel bike", "Tough bike", "sport", "bikes"),
                              rrbtest::make_ad("a3", "Ski poles", "Light poles", "sport", "ski")});

    CHECK_THROWS_MATCHES(rrb::cmd_ingest(cfg, 3), rrb::Error,
                         Catch::Matchers::Predicate<rrb::Error>(
                             [](const rrb::Error& e) { return e.code() == Errc::bad_config; }));

    QueryGenServer stub;
    cfg.rewrite_llm.kind = rrb::LlmKind::remote_chat;
    cfg.rewrite_llm.endpoint = "http://127.0.0.1:" + std::to_string(stub.port) + "/complete";
    auto stats = rrb::cmd_ingest(cfg, 3);
    CHECK(stats.query_count == 6);  // two (domain, subdomain) pairs x three queries
    CHECK(stats.ads_without_queries == 0);

    auto queries = rrb::load_queries(cfg.queries_path);
    REQUIRE(queries.size() == 6);
    CHECK(queries[0].text == "cheap bikes");
    CHECK(queries[0].domain == "sport");
}
