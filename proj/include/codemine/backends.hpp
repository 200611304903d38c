#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "codemine/common.hpp"
#include "codemine/curation.hpp"
#include "codemine/embedder.hpp"
#include "codemine/rerank.hpp"

namespace codemine {

// Request builders and response validators for the provider protocol.
// Every validator throws a backend error on a malformed or error response.
namespace protocol {

json probe_request();
std::size_t parse_probe(const json& response);

json embed_request(std::span<const std::string> texts);
std::vector<std::vector<float>> parse_embed(const json& response, std::size_t expected_count);

json rerank_request(const std::string& query, std::span<const WindowCandidate> candidates, const std::string& prompt);
std::vector<int> parse_rerank(const json& response);

json judge_request(const std::string& query, const std::string& code, const std::string& prompt);
std::string parse_judge(const json& response);

}  // namespace protocol

// One JSON request, one JSON response.
class Transport {
public:
    virtual ~Transport() = default;
    virtual json call(const std::string& endpoint, const json& request) = 0;
    virtual std::string describe() const = 0;
    virtual bool concurrent() const = 0;
};

// A child process speaking one JSON object per line on stdin and stdout.
// Calls are serialized.
class ProcessTransport : public Transport {
public:
    explicit ProcessTransport(std::string command, std::chrono::milliseconds timeout = std::chrono::seconds(120));
    ~ProcessTransport() override;
    ProcessTransport(const ProcessTransport&) = delete;
    ProcessTransport& operator=(const ProcessTransport&) = delete;

    json call(const std::string& endpoint, const json& request) override;
    std::string describe() const override { return "process:" + command_; }
    bool concurrent() const override { return false; }

private:
    void spawn();
    void shutdown();
    std::string read_line();

    std::string command_;
    std::chrono::milliseconds timeout_;
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
    std::mutex mu_;
};

// POST <base>/<endpoint> with a JSON body.
class HttpTransport : public Transport {
public:
    explicit HttpTransport(std::string base_url, std::chrono::seconds timeout = std::chrono::seconds(120));
    json call(const std::string& endpoint, const json& request) override;
    std::string describe() const override { return base_url_; }
    bool concurrent() const override { return true; }

private:
    std::string base_url_;
    std::chrono::seconds timeout_;
};

class RemoteEmbeddingProvider : public EmbeddingProvider {
public:
    explicit RemoteEmbeddingProvider(std::unique_ptr<Transport> transport);
    std::string identity() const override;
    std::size_t dimension() override;
    std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;
    bool concurrent() const override { return transport_->concurrent(); }

private:
    std::unique_ptr<Transport> transport_;
    std::size_t dim_ = 0;
    std::once_flag probed_;
};

class RemoteRerankBackend : public RerankBackend {
public:
    explicit RemoteRerankBackend(std::unique_ptr<Transport> transport) : transport_(std::move(transport)) {}
    std::string identity() const override { return "remote:" + transport_->describe(); }
    std::string rank(const Window& window, const std::string& prompt) override;
    bool concurrent() const override { return transport_->concurrent(); }

private:
    std::unique_ptr<Transport> transport_;
};

class RemoteJudgeBackend : public JudgeBackend {
public:
    explicit RemoteJudgeBackend(std::unique_ptr<Transport> transport) : transport_(std::move(transport)) {}
    std::string identity() const override { return "remote:" + transport_->describe(); }
    std::string judge(const std::string& prompt, const std::string& query, const std::string& code) override;

private:
    std::unique_ptr<Transport> transport_;
};

// Local backends usable without any model.

// Returns the window in its input order.
class IdentityReranker : public RerankBackend {
public:
    std::string identity() const override { return "identity"; }
    std::string rank(const Window& window, const std::string& prompt) override;
    bool concurrent() const override { return true; }
};

// Orders candidates by stub-embedding cosine with the query.
class StubScoreReranker : public RerankBackend {
public:
    explicit StubScoreReranker(std::size_t dim) : dim_(dim) {}
    std::string identity() const override { return fmt::format("stub-score/d={}", dim_); }
    std::string rank(const Window& window, const std::string& prompt) override;
    bool concurrent() const override { return true; }

private:
    std::size_t dim_;
};

// Answers yes when the stub cosine of query and code reaches a threshold.
class StubJudge : public JudgeBackend {
public:
    StubJudge(std::size_t dim, double threshold) : dim_(dim), threshold_(threshold) {}
    std::string identity() const override { return fmt::format("stub-judge/d={}/t={}", dim_, threshold_); }
    std::string judge(const std::string& prompt, const std::string& query, const std::string& code) override;

private:
    std::size_t dim_;
    double threshold_;
};

// Provider strings: "stub", "process:<command>", "http://host:port[/prefix]".
std::unique_ptr<Transport> make_transport(const std::string& spec);
std::unique_ptr<EmbeddingProvider> make_embedding_provider(const std::string& spec, std::size_t stub_dim);
// Rerankers also accept "identity".
std::unique_ptr<RerankBackend> make_rerank_backend(const std::string& spec, std::size_t stub_dim);
std::unique_ptr<JudgeBackend> make_judge_backend(const std::string& spec, std::size_t stub_dim,
                                                 double stub_threshold);

}  // namespace codemine
