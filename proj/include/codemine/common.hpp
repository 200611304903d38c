#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

namespace codemine {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Error categories map onto the CLI exit codes (usage=1, data=2, backend=3).
enum class ErrorKind { usage = 1, data = 2, backend = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

template <typename... Args>
[[noreturn]] void throw_data(fmt::format_string<Args...> f, Args&&... args) {
    throw Error(ErrorKind::data, fmt::format(f, std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void throw_usage(fmt::format_string<Args...> f, Args&&... args) {
    throw Error(ErrorKind::usage, fmt::format(f, std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void throw_backend(fmt::format_string<Args...> f, Args&&... args) {
    throw Error(ErrorKind::backend, fmt::format(f, std::forward<Args>(args)...));
}

// 64-bit FNV-1a. Used for feature hashing, content hashes and RNG keys, so
// it must never change.
constexpr std::uint64_t fnv1a(std::string_view bytes,
                              std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string hex64(std::uint64_t v);

// Streaming content hash (FNV-1a over raw bytes).
class ContentHash {
public:
    void update(std::string_view bytes) { h_ = fnv1a(bytes, h_); }
    void update(const void* data, std::size_t n) {
        update(std::string_view(static_cast<const char*>(data), n));
    }
    std::uint64_t value() const noexcept { return h_; }
    std::string hex() const { return hex64(h_); }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::uint64_t hash_file(const fs::path& path);

// Deterministic RNG. Distributions are implemented here rather than via
// <random> distributions, whose output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    // Independent stream for (seed, key, step).
    static Rng keyed(std::uint64_t seed, std::string_view key, std::uint64_t step = 0) {
        std::uint64_t s = splitmix64(seed);
        s = splitmix64(s ^ fnv1a(key));
        s = splitmix64(s ^ (step * 0xd1342543de82ef95ULL + 1));
        return Rng(s);
    }

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, 1) with 53 bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n), rejection sampling.
    std::size_t below(std::size_t n);

    // Uniform integer in [lo, hi].
    std::size_t between(std::size_t lo, std::size_t hi) { return lo + below(hi - lo + 1); }

    // Standard normal (Box-Muller).
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// Cosine of two unit-norm rows. Accumulates in double in index order and
// rounds once, so every kernel that calls it produces bit-identical scores.
inline float dot_score(std::span<const float> a, std::span<const float> b) noexcept {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return static_cast<float>(acc);
}

// Line-delimited JSON.
void read_jsonl(const fs::path& path,
                const std::function<void(const json&, std::size_t line_no)>& fn);

class JsonlWriter {
public:
    explicit JsonlWriter(const fs::path& path);
    void write(const json& j);
    void close();
    ~JsonlWriter();

    JsonlWriter(const JsonlWriter&) = delete;
    JsonlWriter& operator=(const JsonlWriter&) = delete;

private:
    std::FILE* f_ = nullptr;
    fs::path path_;
};

std::string read_text_file(const fs::path& path);
void write_text_file(const fs::path& path, std::string_view content);

// Field accessors with errors naming the field.
std::string require_string(const json& j, std::string_view field, std::size_t line_no);
std::string optional_string(const json& j, std::string_view field);

}  // namespace codemine
