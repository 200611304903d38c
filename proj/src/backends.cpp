#include "codemine/backends.hpp"

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstring>

#include <poll.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "codemine/prompts.hpp"

namespace codemine {

namespace protocol {

namespace {

void check_error(const json& response, std::string_view what) {
    if (!response.is_object()) throw_backend("{} response is not a JSON object", what);
    if (response.contains("error")) {
        const auto& e = response["error"];
        throw_backend("{} backend reported an error: {}", what, e.is_string() ? e.get<std::string>() : e.dump());
    }
}

}  // namespace

json probe_request() { return {{"probe", true}}; }

std::size_t parse_probe(const json& response) {
    check_error(response, "probe");
    if (!response.contains("dimension") || !response["dimension"].is_number_integer())
        throw_backend("probe response lacks an integer \"dimension\"");
    const auto d = response["dimension"].get<long long>();
    if (d <= 0) throw_backend("probe response reports dimension {}", d);
    return static_cast<std::size_t>(d);
}

json embed_request(std::span<const std::string> texts) {
    return {{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
}

std::vector<std::vector<float>> parse_embed(const json& response, std::size_t expected_count) {
    check_error(response, "embed");
    if (!response.contains("embeddings") || !response["embeddings"].is_array())
        throw_backend("embed response lacks an \"embeddings\" array");
    const auto& rows = response["embeddings"];
    if (rows.size() != expected_count)
        throw_backend("embed response has {} vectors for {} texts", rows.size(), expected_count);
    std::vector<std::vector<float>> out;
    out.reserve(rows.size());
    for (const auto& row : rows) {
        if (!row.is_array()) throw_backend("embed response row is not an array");
        std::vector<float> v;
        v.reserve(row.size());
        for (const auto& x : row) {
            if (!x.is_number()) throw_backend("embed response contains a non-numeric value");
            v.push_back(x.get<float>());
        }
        if (!out.empty() && v.size() != out.front().size())
            throw_backend("embed response rows have different lengths ({} and {})", out.front().size(), v.size());
        out.push_back(std::move(v));
    }
    return out;
}

json rerank_request(const std::string& query, std::span<const WindowCandidate> candidates, const std::string& prompt) {
    json cands = json::array();
    for (const auto& c : candidates) cands.push_back({{"identifier", c.identifier}, {"text", c.text}});
    return {{"query", query}, {"candidates", cands}, {"prompt", prompt}};
}

std::vector<int> parse_rerank(const json& response) {
    check_error(response, "rerank");
    if (!response.contains("ranking") || !response["ranking"].is_array())
        throw_backend("rerank response lacks a \"ranking\" array");
    std::vector<int> out;
    for (const auto& x : response["ranking"]) {
        if (!x.is_number_integer()) throw_backend("rerank response ranking holds a non-integer");
        out.push_back(x.get<int>());
    }
    return out;
}

json judge_request(const std::string& query, const std::string& code, const std::string& prompt) {
    return {{"query", query}, {"code", code}, {"prompt", prompt}};
}

std::string parse_judge(const json& response) {
    check_error(response, "judge");
    if (!response.contains("answer") || !response["answer"].is_string())
        throw_backend("judge response lacks a string \"answer\"");
    return response["answer"].get<std::string>();
}

}  // namespace protocol

// --- process transport ---

ProcessTransport::ProcessTransport(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
    if (command_.empty()) throw_usage("process backend needs a command");
}

ProcessTransport::~ProcessTransport() { shutdown(); }

void ProcessTransport::spawn() {
    int in_pair[2], out_pair[2];
    if (socketpair(AF_UNIX, SOCK_STREAM, 0, in_pair) != 0) throw_backend("socketpair: {}", std::strerror(errno));
    if (socketpair(AF_UNIX, SOCK_STREAM, 0, out_pair) != 0) {
        ::close(in_pair[0]);
        ::close(in_pair[1]);
        throw_backend("socketpair: {}", std::strerror(errno));
    }
    const pid_t pid = fork();
    if (pid < 0) throw_backend("fork: {}", std::strerror(errno));
    if (pid == 0) {
        ::dup2(in_pair[1], STDIN_FILENO);
        ::dup2(out_pair[1], STDOUT_FILENO);
        ::close(in_pair[0]);
        ::close(in_pair[1]);
        ::close(out_pair[0]);
        ::close(out_pair[1]);
        ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(in_pair[1]);
    ::close(out_pair[1]);
    pid_ = pid;
    to_child_ = in_pair[0];
    from_child_ = out_pair[0];
    buffer_.clear();
}

void ProcessTransport::shutdown() {
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
        int status = 0;
        // Give the child a moment to exit on EOF before forcing it.
        for (int i = 0; i < 50; ++i) {
            if (::waitpid(pid_, &status, WNOHANG) == pid_) {
                pid_ = -1;
                return;
            }
            ::usleep(2000);
        }
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
    }
    pid_ = -1;
}

std::string ProcessTransport::read_line() {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
        if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return line;
        }
        const auto left =
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) throw_backend("{}: no response within {} ms", describe(), timeout_.count());
        pollfd p{from_child_, POLLIN, 0};
        const int r = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
        if (r < 0 && errno == EINTR) continue;
        if (r < 0) throw_backend("{}: poll: {}", describe(), std::strerror(errno));
        if (r == 0) continue;
        char chunk[65536];
        const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) throw_backend("{}: process closed its output", describe());
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

json ProcessTransport::call(const std::string& endpoint, const json& request) {
    std::lock_guard lock(mu_);
    try {
        if (pid_ < 0) spawn();
        const std::string line = request.dump() + "\n";
        std::size_t sent = 0;
        while (sent < line.size()) {
            const ssize_t n = ::send(to_child_, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) throw_backend("{}: write failed: {}", describe(), std::strerror(errno));
            sent += static_cast<std::size_t>(n);
        }
        const std::string reply = read_line();
        try {
            return json::parse(reply);
        } catch (const json::exception&) {
            throw_backend("{}: {} response is not JSON: {}", describe(), endpoint, reply.substr(0, 200));
        }
    } catch (const Error&) {
        // A half-finished exchange leaves the stream out of sync; restart next time.
        shutdown();
        throw;
    }
}

// --- http transport ---

HttpTransport::HttpTransport(std::string base_url, std::chrono::seconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
    if (!base_url_.starts_with("http://")) throw_usage("http backend URL must start with http://, got \"{}\"", base_url_);
}

json HttpTransport::call(const std::string& endpoint, const json& request) {
    const auto slash = base_url_.find('/', 7);
    const std::string host = slash == std::string::npos ? base_url_ : base_url_.substr(0, slash);
    const std::string prefix = slash == std::string::npos ? "" : base_url_.substr(slash);
    httplib::Client client(host);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    auto res = client.Post(prefix + "/" + endpoint, request.dump(), "application/json");
    if (!res) throw_backend("{}/{}: request failed: {}", base_url_, endpoint, httplib::to_string(res.error()));
    json body;
    try {
        body = json::parse(res->body);
    } catch (const json::exception&) {
        throw_backend("{}/{}: HTTP {} with a non-JSON body", base_url_, endpoint, res->status);
    }
    if (res->status != 200) {
        if (body.is_object() && body.contains("error")) return body;  // reported by the validators
        throw_backend("{}/{}: HTTP {}", base_url_, endpoint, res->status);
    }
    return body;
}

// --- remote backends ---

RemoteEmbeddingProvider::RemoteEmbeddingProvider(std::unique_ptr<Transport> transport)
    : transport_(std::move(transport)) {}

std::string RemoteEmbeddingProvider::identity() const { return "remote:" + transport_->describe(); }

std::size_t RemoteEmbeddingProvider::dimension() {
    std::call_once(probed_, [&] { dim_ = protocol::parse_probe(transport_->call("embed", protocol::probe_request())); });
    return dim_;
}

std::vector<std::vector<float>> RemoteEmbeddingProvider::embed(std::span<const std::string> texts) {
    return protocol::parse_embed(transport_->call("embed", protocol::embed_request(texts)), texts.size());
}

std::string RemoteRerankBackend::rank(const Window& window, const std::string& prompt) {
    const auto ranking = protocol::parse_rerank(
        transport_->call("rerank", protocol::rerank_request(window.query, window.candidates, prompt)));
    return format_ranking(ranking);
}

std::string RemoteJudgeBackend::judge(const std::string& prompt, const std::string& query, const std::string& code) {
    return protocol::parse_judge(transport_->call("judge", protocol::judge_request(query, code, prompt)));
}

// --- local backends ---

std::string IdentityReranker::rank(const Window& window, const std::string&) {
    std::vector<int> ids;
    for (const auto& c : window.candidates) ids.push_back(c.identifier);
    return format_ranking(ids);
}

std::string StubScoreReranker::rank(const Window& window, const std::string&) {
    const auto q = stub_embed(window.query, dim_);
    std::vector<std::pair<float, int>> scored;
    for (const auto& c : window.candidates) scored.emplace_back(dot_score(q, stub_embed(c.text, dim_)), c.identifier);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<int> ids;
    for (const auto& s : scored) ids.push_back(s.second);
    return format_ranking(ids);
}

std::string StubJudge::judge(const std::string&, const std::string& query, const std::string& code) {
    const double s = dot_score(stub_embed(query, dim_), stub_embed(code, dim_));
    return s >= threshold_ ? "yes" : "no";
}

std::unique_ptr<Transport> make_transport(const std::string& spec) {
    if (spec.starts_with("process:")) return std::make_unique<ProcessTransport>(spec.substr(8));
    if (spec.starts_with("http://")) return std::make_unique<HttpTransport>(spec);
    throw_usage("unknown backend \"{}\" (expected stub, process:<command> or http://host:port)", spec);
}

std::unique_ptr<EmbeddingProvider> make_embedding_provider(const std::string& spec, std::size_t stub_dim) {
    if (spec == "stub") return std::make_unique<StubProvider>(stub_dim);
    return std::make_unique<RemoteEmbeddingProvider>(make_transport(spec));
}

std::unique_ptr<RerankBackend> make_rerank_backend(const std::string& spec, std::size_t stub_dim) {
    if (spec == "identity") return std::make_unique<IdentityReranker>();
    if (spec == "stub") return std::make_unique<StubScoreReranker>(stub_dim);
    return std::make_unique<RemoteRerankBackend>(make_transport(spec));
}

std::unique_ptr<JudgeBackend> make_judge_backend(const std::string& spec, std::size_t stub_dim,
                                                 double stub_threshold) {
    if (spec == "stub") return std::make_unique<StubJudge>(stub_dim, stub_threshold);
    return std::make_unique<RemoteJudgeBackend>(make_transport(spec));
}

}  // namespace codemine
