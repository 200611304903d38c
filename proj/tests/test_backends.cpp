#include <doctest.h>

#include <thread>

#include <httplib.h>

#include "codemine/backends.hpp"
#include "helpers.hpp"

using namespace codemine;

namespace {

const fs::path kData = CODEMINE_TEST_DATA;

std::string provider_cmd() { return "process:python3 " + (kData / "fake_provider.py").string(); }

struct Exchange {
    std::string endpoint;
    json request;
    json response;
};

std::vector<Exchange> transcript() {
    std::vector<Exchange> out;
    read_jsonl(kData / "provider_transcript.jsonl", [&](const json& j, std::size_t) {
        out.push_back({j["endpoint"].get<std::string>(), j["request"], j["response"]});
    });
    return out;
}

Window window3() {
    return {"q",
            "sum two integers",
            {{1, "a", "def parse(path): ..."},
             {2, "b", "def add(a, b): return sum of two integers"},
             {3, "c", "def mul(a, b): two"}},
            0,
            3};
}

// Serves the recorded transcript over HTTP, optionally under a path prefix.
class TranscriptServer {
public:
    explicit TranscriptServer(std::string prefix = "") : log_(transcript()) {
        for (const char* ep : {"embed", "rerank", "judge"}) {
            server_.Post(prefix + "/" + ep, [this, ep](const httplib::Request& req, httplib::Response& res) {
                const json body = json::parse(req.body);
                for (const auto& x : log_)
                    if (x.endpoint == ep && x.request == body) {
                        res.status = x.response.contains("error") ? 400 : 200;
                        res.set_content(x.response.dump(), "application/json");
                        return;
                    }
                res.status = 500;
                res.set_content("no recorded exchange", "text/plain");
            });
        }
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~TranscriptServer() {
        server_.stop();
        thread_.join();
    }
    std::string url(const std::string& prefix = "") const { return fmt::format("http://127.0.0.1:{}{}", port_, prefix); }

private:
    std::vector<Exchange> log_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

}  // namespace

TEST_CASE("protocol: recorded transcript satisfies the request builders and validators") {
    auto log = transcript();
    REQUIRE(log.size() == 7);
    CHECK(log[0].request == protocol::probe_request());
    CHECK(protocol::parse_probe(log[0].response) == 8);

    const auto texts = log[1].request["texts"].get<std::vector<std::string>>();
    CHECK(log[1].request == protocol::embed_request(texts));
    auto v1 = protocol::parse_embed(log[1].response, 3);
    CHECK(v1.size() == 3);
    for (const auto& v : v1) CHECK(v.size() == 8);
    CHECK(protocol::parse_embed(log[2].response, 3) == v1);  // identical request, identical vectors
    CHECK_THROWS_AS(protocol::parse_embed(log[1].response, 4), Error);

    auto w = window3();
    CHECK(log[3].request == protocol::rerank_request(w.query, w.candidates, "rank"));
    CHECK(protocol::parse_rerank(log[3].response).size() == 3);
    try {
        protocol::parse_rerank(log[4].response);
        FAIL("expected a schema error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::backend);
        CHECK(std::string(e.what()).find("missing candidates") != std::string::npos);
    }
    CHECK(log[5].request == protocol::judge_request("add two numbers", "def f():  # add two numbers", "judge"));
    CHECK(protocol::parse_judge(log[5].response) == "yes");
    CHECK(protocol::parse_judge(log[6].response) == "no");
}

TEST_CASE("protocol: malformed responses are backend errors") {
    CHECK_THROWS_AS(protocol::parse_probe(json{{"dimension", 0}}), Error);
    CHECK_THROWS_AS(protocol::parse_probe(json::array()), Error);
    CHECK_THROWS_AS(protocol::parse_embed(json{{"embeddings", {{1.0, 2.0}, {1.0}}}}, 2), Error);
    CHECK_THROWS_AS(protocol::parse_embed(json{{"embeddings", {{"x"}}}}, 1), Error);
    CHECK_THROWS_AS(protocol::parse_rerank(json{{"ranking", {1, "two"}}}), Error);
    CHECK_THROWS_AS(protocol::parse_judge(json{{"answer", 1}}), Error);
    CHECK_THROWS_AS(protocol::parse_judge(json{{"error", "overloaded"}}), Error);
}

TEST_CASE("process transport: embedding, rerank and judge against the fake provider") {
    auto log = transcript();
    auto provider = make_embedding_provider(provider_cmd(), 0);
    CHECK(provider->dimension() == 8);
    const auto texts = log[1].request["texts"].get<std::vector<std::string>>();
    auto a = provider->embed(texts);
    CHECK(a == protocol::parse_embed(log[1].response, 3));
    CHECK(provider->embed(texts) == a);

    auto reranker = make_rerank_backend(provider_cmd(), 0);
    const auto raw = reranker->rank(window3(), "rank");
    CHECK(raw == format_ranking(protocol::parse_rerank(log[3].response)));

    auto judge = make_judge_backend(provider_cmd(), 0, 0.0);
    CHECK(judge->judge("judge", "add two numbers", "def f():  # add two numbers") == "yes");
    CHECK(judge->judge("judge", "add two numbers", "def g(): pass") == "no");
}

TEST_CASE("process transport: a crashed provider is restarted on the next call") {
    ProcessTransport t("python3 " + (kData / "fake_provider.py").string());
    CHECK(t.call("embed", protocol::probe_request())["dimension"] == 8);
    CHECK_THROWS_AS(t.call("judge", json{{"query", "__exit__"}, {"code", "x"}}), Error);
    CHECK(t.call("embed", protocol::probe_request())["dimension"] == 8);
}

TEST_CASE("process transport: silence, garbage and missing commands are backend errors") {
    ProcessTransport slow("sleep 5", std::chrono::milliseconds(200));
    CHECK_THROWS_AS(slow.call("embed", protocol::probe_request()), Error);
    ProcessTransport garbage("while read l; do echo not-json; done");
    CHECK_THROWS_AS(garbage.call("embed", protocol::probe_request()), Error);
    ProcessTransport missing("/nonexistent/provider-binary");
    try {
        missing.call("embed", protocol::probe_request());
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::backend);
    }
}

TEST_CASE("http transport: recorded exchanges over /embed, /rerank and /judge") {
    TranscriptServer server;
    auto log = transcript();
    auto provider = make_embedding_provider(server.url(), 0);
    CHECK(provider->dimension() == 8);
    const auto texts = log[1].request["texts"].get<std::vector<std::string>>();
    CHECK(provider->embed(texts) == protocol::parse_embed(log[1].response, 3));
    auto reranker = make_rerank_backend(server.url(), 0);
    CHECK(reranker->rank(window3(), "rank") == format_ranking(protocol::parse_rerank(log[3].response)));
    auto judge = make_judge_backend(server.url(), 0, 0.0);
    CHECK(judge->judge("judge", "add two numbers", "def g(): pass") == "no");

    HttpTransport t(server.url());
    try {
        protocol::parse_rerank(t.call("rerank", log[4].request));
        FAIL("expected a schema error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("missing candidates") != std::string::npos);
    }
    CHECK_THROWS_AS(t.call("embed", json{{"texts", {"never recorded"}}}), Error);
}

TEST_CASE("http transport: base URL prefixes and unreachable servers") {
    TranscriptServer server("/v1");
    auto provider = make_embedding_provider(server.url("/v1/"), 0);
    CHECK(provider->dimension() == 8);
    HttpTransport dead("http://127.0.0.1:9", std::chrono::seconds(2));
    CHECK_THROWS_AS(dead.call("embed", protocol::probe_request()), Error);
    CHECK_THROWS_AS(make_transport("ftp://x"), Error);
    CHECK_THROWS_AS(make_embedding_provider("magic", 8), Error);
}

TEST_CASE("local backends") {
    IdentityReranker id;
    CHECK(id.rank(window3(), "") == "[1] > [2] > [3]");
    StubScoreReranker stub(256);
    CHECK(stub.rank(window3(), "").starts_with("[2]"));
    StubJudge j(256, 0.3);
    CHECK(j.judge("", "parse the config file", "parse the config file") == "yes");
    CHECK(j.judge("", "parse the config file", "zzz qqq") == "no");
}
