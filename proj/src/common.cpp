#include "codemine/common.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace codemine {

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::uint64_t hash_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_data("cannot open {}", path.string());
    ContentHash h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        auto got = in.gcount();
        if (got > 0) h.update(buf.data(), static_cast<std::size_t>(got));
    }
    return h.value();
}

std::size_t Rng::below(std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t bound = n;
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void read_jsonl(const fs::path& path,
                const std::function<void(const json&, std::size_t)>& fn) {
    std::ifstream in(path);
    if (!in) throw_data("cannot open {}", path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw_data("{}:{}: malformed record: {}", path.string(), line_no, e.what());
        }
        if (!j.is_object()) throw_data("{}:{}: record is not an object", path.string(), line_no);
        fn(j, line_no);
    }
}

JsonlWriter::JsonlWriter(const fs::path& path) : path_(path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    f_ = std::fopen(path.string().c_str(), "wb");
    if (!f_) throw_data("cannot write {}", path.string());
}

void JsonlWriter::write(const json& j) {
    std::string s = j.dump();
    s.push_back('\n');
    if (std::fwrite(s.data(), 1, s.size(), f_) != s.size()) throw_data("write failed: {}", path_.string());
}

void JsonlWriter::close() {
    if (f_) {
        std::fclose(f_);
        f_ = nullptr;
    }
}

JsonlWriter::~JsonlWriter() { close(); }

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_data("cannot open {}", path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw_data("cannot write {}", path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::string require_string(const json& j, std::string_view field, std::size_t line_no) {
    auto it = j.find(field);
    if (it == j.end() || it->is_null())
        throw_data("line {}: missing required field \"{}\"", line_no, field);
    if (!it->is_string()) throw_data("line {}: field \"{}\" must be a string", line_no, field);
    return it->get<std::string>();
}

std::string optional_string(const json& j, std::string_view field) {
    auto it = j.find(field);
    if (it == j.end() || !it->is_string()) return {};
    return it->get<std::string>();
}

}  // namespace codemine
