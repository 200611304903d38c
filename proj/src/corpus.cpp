#include "codemine/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <unordered_map>

#include <sys/wait.h>
#include <unistd.h>

#include <spdlog/spdlog.h>

namespace codemine {

namespace {

constexpr std::string_view kReasonNames[] = {
    "passed", "non_english", "too_short", "bad_unicode_or_markup", "unparseable_code", "duplicate",
};

struct CodePoint {
    char32_t value;
    std::size_t length;
    bool valid;
};

CodePoint decode_utf8(std::string_view s, std::size_t i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) return {b0, 1, true};
    std::size_t len = 0;
    char32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        return {0xFFFD, 1, false};
    }
    if (i + len > s.size()) return {0xFFFD, 1, false};
    for (std::size_t k = 1; k < len; ++k) {
        const auto b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) return {0xFFFD, 1, false};
        cp = (cp << 6) | (b & 0x3F);
    }
    // Overlong encodings and surrogates.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF)
        return {0xFFFD, len, false};
    return {cp, len, true};
}

bool is_ascii_letter(char32_t c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

// Coarse letter test for non-ASCII code points: everything from Latin-1
// letters upward except punctuation, symbol, and emoji blocks.
bool is_non_ascii_letter(char32_t c) {
    if (c < 0xC0) return false;
    if (c == 0xD7 || c == 0xF7) return false;
    if (c >= 0x2000 && c <= 0x2BFF) return false;
    if (c >= 0x3000 && c <= 0x303F) return false;
    if (c >= 0xFE00 && c <= 0xFE0F) return false;
    if (c >= 0xFF00 && c <= 0xFF20) return false;
    if (c >= 0x1F000) return false;
    return true;
}

bool is_invisible_or_control(char32_t c) {
    if (c < 0x20) return c != '\n' && c != '\t' && c != '\r';
    if (c == 0x7F) return true;
    if (c >= 0x80 && c < 0xA0) return true;
    if (c >= 0x200B && c <= 0x200F) return true;
    if (c == 0xFEFF || c == 0xFFFD) return true;
    return false;
}

bool starts_with_ci(std::string_view s, std::size_t i, std::string_view prefix) {
    if (i + prefix.size() > s.size()) return false;
    for (std::size_t k = 0; k < prefix.size(); ++k) {
        char a = s[i + k];
        if (a >= 'A' && a <= 'Z') a = static_cast<char>(a - 'A' + 'a');
        if (a != prefix[k]) return false;
    }
    return true;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Length of an HTML/XML tag starting at i, or 0.
std::size_t tag_length(std::string_view s, std::size_t i) {
    if (s[i] != '<' || i + 1 >= s.size()) return 0;
    std::size_t j = i + 1;
    if (s[j] == '/' || s[j] == '!' || s[j] == '?') ++j;
    if (j >= s.size() || !is_ascii_letter(static_cast<unsigned char>(s[j]))) {
        if (!(s[i + 1] == '!' && j < s.size() && s[j] == '-')) return 0;
    }
    auto close = s.find('>', j);
    if (close == std::string_view::npos) return 0;
    if (s.substr(i, close - i).find('\n') != std::string_view::npos) return 0;
    return close - i + 1;
}

// Length of an HTML entity (&amp; &#39; &#x27;) starting at i, or 0.
std::size_t entity_length(std::string_view s, std::size_t i) {
    if (s[i] != '&') return 0;
    std::size_t j = i + 1;
    if (j < s.size() && s[j] == '#') ++j;
    std::size_t start = j;
    while (j < s.size() && j - start < 10 && std::isalnum(static_cast<unsigned char>(s[j]))) ++j;
    if (j == start || j >= s.size() || s[j] != ';') return 0;
    return j - i + 1;
}

std::size_t url_length(std::string_view s, std::size_t i) {
    if (!(starts_with_ci(s, i, "http://") || starts_with_ci(s, i, "https://") ||
          starts_with_ci(s, i, "ftp://") || starts_with_ci(s, i, "www.")))
        return 0;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j]) && s[j] != '<' && s[j] != '>' && s[j] != '"') ++j;
    return j - i;
}

bool hash_comment_language(std::string_view lang) {
    return lang == "python" || lang == "ruby" || lang == "php" || lang == "shell" ||
           lang == "bash" || lang == "perl" || lang == "r";
}

bool slash_comment_language(std::string_view lang) {
    return lang != "python" && lang != "ruby" && lang != "shell" && lang != "bash" &&
           lang != "perl" && lang != "r";
}

bool run_parser_hook(const std::string& command, const std::string& code) {
    char tmpl[] = "/tmp/codemine-parse-XXXXXX";
    int fd = ::mkstemp(tmpl);
    if (fd < 0) throw ParserHookError("parser hook: cannot create temporary file");
    const std::string tmp = tmpl;
    std::size_t off = 0;
    while (off < code.size()) {
        auto n = ::write(fd, code.data() + off, code.size() - off);
        if (n <= 0) {
            ::close(fd);
            ::unlink(tmp.c_str());
            throw ParserHookError("parser hook: cannot write temporary file");
        }
        off += static_cast<std::size_t>(n);
    }
    ::close(fd);
    // The subshell makes the redirections apply to compound commands too.
    const std::string full = "(" + command + "\n) < '" + tmp + "' > /dev/null 2>&1";
    int status = std::system(full.c_str());
    ::unlink(tmp.c_str());
    if (status == -1 || !WIFEXITED(status))
        throw ParserHookError(fmt::format("parser hook '{}' did not exit normally", command));
    int code_rc = WEXITSTATUS(status);
    if (code_rc == 0) return true;
    if (code_rc == 1) return false;
    throw ParserHookError(fmt::format("parser hook '{}' failed with exit code {}", command, code_rc));
}

std::string generated_id(const std::string& language, const std::string& text, const std::string& code) {
    ContentHash h;
    h.update(text);
    h.update(std::string_view("\0", 1));
    h.update(code);
    return fmt::format("{}-{}", language.empty() ? "pair" : language, h.hex());
}

}  // namespace

std::string_view to_string(DropReason r) { return kReasonNames[static_cast<int>(r)]; }

DropReason drop_reason_from_string(std::string_view s) {
    for (int i = 0; i < 6; ++i)
        if (kReasonNames[i] == s) return static_cast<DropReason>(i);
    throw_data("unknown drop reason \"{}\"", s);
}

void CorpusStats::record(const std::string& language, const FilterDecision& d) {
    auto& c = languages[language];
    ++c.ingested;
    if (d.kept) {
        ++c.kept;
    } else {
        ++c.dropped;
        ++c.by_reason[std::string(to_string(d.reason))];
    }
}

std::string CorpusStats::to_table() const {
    std::string out = fmt::format("{:<12} {:>9} {:>9} {:>9}  {}\n", "language", "ingested", "kept", "dropped", "drop reasons");
    LanguageCounts total;
    for (const auto& [lang, c] : languages) {
        std::string reasons;
        for (const auto& [r, n] : c.by_reason) {
            reasons += fmt::format("{}{}={}", reasons.empty() ? "" : " ", r, n);
            total.by_reason[r] += n;
        }
        out += fmt::format("{:<12} {:>9} {:>9} {:>9}  {}\n", lang, c.ingested, c.kept, c.dropped, reasons);
        total.ingested += c.ingested;
        total.kept += c.kept;
        total.dropped += c.dropped;
    }
    std::string reasons;
    for (const auto& [r, n] : total.by_reason) reasons += fmt::format("{}{}={}", reasons.empty() ? "" : " ", r, n);
    out += fmt::format("{:<12} {:>9} {:>9} {:>9}  {}\n", "total", total.ingested, total.kept, total.dropped, reasons);
    return out;
}

json CorpusStats::to_json() const {
    json j = json::object();
    for (const auto& [lang, c] : languages) {
        j[lang] = {{"ingested", c.ingested}, {"kept", c.kept}, {"dropped", c.dropped}, {"by_reason", c.by_reason}};
    }
    return j;
}

Corpus ingest_records(std::vector<PairRecord> records) {
    Corpus corpus;
    std::unordered_map<std::string, std::size_t> seen_ids;
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto [it, inserted] = seen_ids.emplace(records[i].id, i);
        if (!inserted)
            throw_data("line {}: duplicate id \"{}\" (first seen on line {})", i + 1, records[i].id, it->second + 1);
    }

    // Group exact duplicates; the smallest id of each group survives, so the
    // outcome does not depend on input order.
    std::sort(records.begin(), records.end(), [](const PairRecord& a, const PairRecord& b) { return a.id < b.id; });
    std::unordered_map<std::string, std::size_t> first_of;
    std::vector<bool> duplicate(records.size(), false);
    for (std::size_t i = 0; i < records.size(); ++i) {
        std::string key = records[i].text;
        key.push_back('\0');
        key += records[i].code;
        if (!first_of.emplace(std::move(key), i).second) duplicate[i] = true;
    }

    for (std::size_t i = 0; i < records.size(); ++i) {
        FilterDecision d{records[i].id, !duplicate[i], duplicate[i] ? DropReason::duplicate : DropReason::passed};
        corpus.stats.record(records[i].language, d);
        corpus.decisions.push_back(d);
        if (!duplicate[i]) corpus.records.push_back(std::move(records[i]));
    }
    return corpus;
}

Corpus ingest_pairs(const fs::path& path, const std::string& language) {
    std::vector<PairRecord> records;
    read_jsonl(path, [&](const json& j, std::size_t line_no) {
        PairRecord r;
        r.text = require_string(j, "text", line_no);
        r.code = require_string(j, "code", line_no);
        r.language = optional_string(j, "language");
        if (r.language.empty()) r.language = language;
        if (r.language.empty()) throw_data("line {}: missing required field \"language\"", line_no);
        r.repo = optional_string(j, "repo");
        r.path = optional_string(j, "path");
        if (j.contains("id") && !j["id"].is_null()) {
            if (j["id"].is_string()) {
                r.id = j["id"].get<std::string>();
            } else if (j["id"].is_number_integer()) {
                r.id = std::to_string(j["id"].get<long long>());
            } else {
                throw_data("line {}: field \"id\" must be a string", line_no);
            }
            if (r.id.empty()) throw_data("line {}: field \"id\" is empty", line_no);
        } else {
            r.id = generated_id(r.language, r.text, r.code);
        }
        records.push_back(std::move(r));
    });
    return ingest_records(std::move(records));
}

std::size_t count_tokens(std::string_view text) {
    std::size_t n = 0;
    bool in_token = false;
    for (char c : text) {
        if (is_space(c)) {
            in_token = false;
        } else if (!in_token) {
            in_token = true;
            ++n;
        }
    }
    return n;
}

std::string scrub_markup(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (auto n = url_length(text, i)) {
            i += n;
            continue;
        }
        if (auto n = tag_length(text, i)) {
            i += n;
            out.push_back(' ');
            continue;
        }
        if (auto n = entity_length(text, i)) {
            i += n;
            out.push_back(' ');
            continue;
        }
        auto cp = decode_utf8(text, i);
        if (!cp.valid || is_invisible_or_control(cp.value)) {
            i += cp.length;
            continue;
        }
        out.append(text.substr(i, cp.length));
        i += cp.length;
    }
    return out;
}

bool balanced_delimiters(std::string_view code, std::string_view language) {
    const bool hash_comments = hash_comment_language(language);
    const bool slash_comments = slash_comment_language(language);
    const bool python = language == "python";
    std::vector<char> stack;
    std::size_t i = 0;
    const std::size_t n = code.size();
    while (i < n) {
        const char c = code[i];
        if (hash_comments && c == '#') {
            while (i < n && code[i] != '\n') ++i;
            continue;
        }
        if (slash_comments && c == '/' && i + 1 < n && code[i + 1] == '/') {
            while (i < n && code[i] != '\n') ++i;
            continue;
        }
        if (slash_comments && c == '/' && i + 1 < n && code[i + 1] == '*') {
            auto end = code.find("*/", i + 2);
            if (end == std::string_view::npos) return false;
            i = end + 2;
            continue;
        }
        if (c == '\'' && language == "rust" && i + 2 < n &&
            (std::isalpha(static_cast<unsigned char>(code[i + 1])) || code[i + 1] == '_') && code[i + 2] != '\'') {
            // lifetime or label
            ++i;
            continue;
        }
        if (c == '"' || c == '\'' || c == '`') {
            const bool triple = python && i + 2 < n && code[i + 1] == c && code[i + 2] == c;
            const bool raw = c == '`';
            std::size_t j = i + (triple ? 3 : 1);
            bool closed = false;
            while (j < n) {
                if (!raw && code[j] == '\\') {
                    j += 2;
                    continue;
                }
                if (triple) {
                    if (j + 2 < n && code[j] == c && code[j + 1] == c && code[j + 2] == c) {
                        j += 3;
                        closed = true;
                        break;
                    }
                } else if (code[j] == c) {
                    ++j;
                    closed = true;
                    break;
                }
                ++j;
            }
            if (!closed) return false;
            i = j;
            continue;
        }
        if (c == '(' || c == '[' || c == '{') {
            stack.push_back(c);
        } else if (c == ')' || c == ']' || c == '}') {
            const char open = c == ')' ? '(' : c == ']' ? '[' : '{';
            if (stack.empty() || stack.back() != open) return false;
            stack.pop_back();
        }
        ++i;
    }
    return stack.empty();
}

FilterDecision prefilter(const PairRecord& record, const PrefilterConfig& rules) {
    auto drop = [&](DropReason r) { return FilterDecision{record.id, false, r}; };

    std::size_t ascii_letters = 0, other_letters = 0;
    for (std::size_t i = 0; i < record.text.size();) {
        auto cp = decode_utf8(record.text, i);
        if (cp.valid) {
            if (is_ascii_letter(cp.value))
                ++ascii_letters;
            else if (is_non_ascii_letter(cp.value))
                ++other_letters;
        }
        i += cp.length;
    }
    const std::size_t letters = ascii_letters + other_letters;
    if (letters == 0 ||
        static_cast<double>(ascii_letters) / static_cast<double>(letters) < rules.min_ascii_letter_ratio)
        return drop(DropReason::non_english);

    const std::string scrubbed = scrub_markup(record.text);
    const std::size_t tokens = count_tokens(scrubbed);
    if (scrubbed != record.text && tokens < rules.min_text_tokens) return drop(DropReason::bad_unicode_or_markup);
    if (tokens < rules.min_text_tokens) return drop(DropReason::too_short);

    const bool parseable = rules.parser_command.empty() ? balanced_delimiters(record.code, record.language)
                                                        : run_parser_hook(rules.parser_command, record.code);
    if (!parseable) return drop(DropReason::unparseable_code);
    return FilterDecision{record.id, true, DropReason::passed};
}

void apply_prefilter(Corpus& corpus, const PrefilterConfig& rules) {
    const auto n = static_cast<std::ptrdiff_t>(corpus.records.size());
    std::vector<FilterDecision> out(corpus.records.size());
    std::string hook_error;
#pragma omp parallel for schedule(dynamic, 64)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        try {
            out[i] = prefilter(corpus.records[i], rules);
        } catch (const ParserHookError& e) {
#pragma omp critical(codemine_prefilter_error)
            if (hook_error.empty()) hook_error = e.what();
        }
    }
    if (!hook_error.empty()) throw ParserHookError(hook_error);

    std::vector<PairRecord> kept;
    kept.reserve(corpus.records.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto& r = corpus.records[i];
        if (!out[i].kept) {
            auto it = std::lower_bound(corpus.decisions.begin(), corpus.decisions.end(), r.id,
                                       [](const FilterDecision& d, const std::string& id) { return d.record_id < id; });
            *it = out[i];
            auto& c = corpus.stats.languages[r.language];
            --c.kept;
            ++c.dropped;
            ++c.by_reason[std::string(to_string(out[i].reason))];
        } else {
            kept.push_back(std::move(r));
        }
    }
    corpus.records = std::move(kept);
}

std::optional<ExtractedPair> extract_docstring(std::string_view src) {
    // Locate the first `def` keyword at a line start.
    std::size_t def = std::string_view::npos;
    for (std::size_t pos = 0; pos < src.size();) {
        std::size_t line_end = src.find('\n', pos);
        if (line_end == std::string_view::npos) line_end = src.size();
        std::size_t k = pos;
        while (k < line_end && (src[k] == ' ' || src[k] == '\t')) ++k;
        if (src.substr(k, 4) == "def ") {
            def = k;
            break;
        }
        if (src.substr(k, 10) == "async def ") {
            def = k + 6;
            break;
        }
        pos = line_end + 1;
    }
    if (def == std::string_view::npos) return std::nullopt;

    // Header ends at the first ':' outside brackets and strings.
    int depth = 0;
    std::size_t i = def + 4;
    std::size_t colon = std::string_view::npos;
    while (i < src.size()) {
        char c = src[i];
        if (c == '(' || c == '[' || c == '{') {
            ++depth;
        } else if (c == ')' || c == ']' || c == '}') {
            --depth;
        } else if (c == '"' || c == '\'') {
            auto end = src.find(c, i + 1);
            if (end == std::string_view::npos) return std::nullopt;
            i = end;
        } else if (c == ':' && depth == 0) {
            colon = i;
            break;
        }
        ++i;
    }
    if (colon == std::string_view::npos) return std::nullopt;

    // First statement of the body.
    std::size_t p = colon + 1;
    while (p < src.size()) {
        if (is_space(src[p]) || src[p] == '\\') {
            ++p;
        } else if (src[p] == '#') {
            while (p < src.size() && src[p] != '\n') ++p;
        } else {
            break;
        }
    }
    if (p >= src.size()) return std::nullopt;

    const std::size_t literal_start = p;
    // String prefixes; raw strings still cannot end in an escaped quote.
    if (src[p] == 'r' || src[p] == 'R' || src[p] == 'u' || src[p] == 'U') ++p;
    if (p >= src.size() || (src[p] != '"' && src[p] != '\'')) return std::nullopt;
    const char q = src[p];
    const bool triple = p + 2 < src.size() && src[p + 1] == q && src[p + 2] == q;
    const std::size_t open_len = triple ? 3 : 1;
    const std::size_t content_start = p + open_len;
    std::size_t j = content_start;
    std::size_t content_end = std::string_view::npos;
    while (j < src.size()) {
        if (src[j] == '\\') {
            j += 2;
            continue;
        }
        if (triple) {
            if (j + 2 < src.size() && src[j] == q && src[j + 1] == q && src[j + 2] == q) {
                content_end = j;
                break;
            }
        } else {
            if (src[j] == '\n') return std::nullopt;
            if (src[j] == q) {
                content_end = j;
                break;
            }
        }
        ++j;
    }
    if (content_end == std::string_view::npos) return std::nullopt;
    const std::size_t literal_end = content_end + open_len;

    std::string_view inner = src.substr(content_start, content_end - content_start);
    std::size_t a = 0, b = inner.size();
    while (a < b && is_space(inner[a])) ++a;
    while (b > a && is_space(inner[b - 1])) --b;
    if (a == b) return std::nullopt;

    // Remove the literal; drop its line entirely when nothing else remains.
    std::size_t cut_begin = literal_start;
    std::size_t cut_end = literal_end;
    std::size_t line_begin = src.rfind('\n', literal_start == 0 ? 0 : literal_start - 1);
    line_begin = line_begin == std::string_view::npos ? 0 : line_begin + 1;
    std::size_t line_end = src.find('\n', literal_end);
    if (line_end == std::string_view::npos) line_end = src.size();
    auto blank = [&](std::size_t from, std::size_t to) {
        for (std::size_t k = from; k < to; ++k)
            if (!is_space(src[k])) return false;
        return true;
    };
    if (blank(line_begin, literal_start) && blank(literal_end, line_end)) {
        cut_begin = line_begin;
        cut_end = line_end < src.size() ? line_end + 1 : line_end;
    }

    ExtractedPair out;
    out.text = std::string(inner.substr(a, b - a));
    out.code = std::string(src.substr(0, cut_begin));
    out.code += src.substr(cut_end);
    if (out.code.find(src.substr(literal_start, literal_end - literal_start)) != std::string::npos)
        return std::nullopt;
    return out;
}

void write_corpus(const fs::path& path, const std::vector<PairRecord>& records) {
    JsonlWriter w(path);
    for (const auto& r : records) {
        json j = {{"id", r.id}, {"text", r.text}, {"code", r.code}, {"language", r.language}};
        if (!r.repo.empty()) j["repo"] = r.repo;
        if (!r.path.empty()) j["path"] = r.path;
        w.write(j);
    }
}

void write_decisions(const fs::path& path, const std::vector<FilterDecision>& decisions) {
    JsonlWriter w(path);
    for (const auto& d : decisions)
        w.write({{"record_id", d.record_id}, {"kept", d.kept}, {"reason", to_string(d.reason)}});
}

}  // namespace codemine
