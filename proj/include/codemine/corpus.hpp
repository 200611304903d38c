#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "codemine/common.hpp"

namespace codemine {

struct PairRecord {
    std::string id;
    std::string text;  // docstring, query side
    std::string code;  // function source, positive side
    std::string language;
    std::string repo;
    std::string path;

    bool operator==(const PairRecord&) const = default;
};

enum class DropReason {
    passed,
    non_english,
    too_short,
    bad_unicode_or_markup,
    unparseable_code,
    duplicate,
};

std::string_view to_string(DropReason r);
DropReason drop_reason_from_string(std::string_view s);

struct FilterDecision {
    std::string record_id;
    bool kept = true;
    DropReason reason = DropReason::passed;

    bool operator==(const FilterDecision&) const = default;
};

struct LanguageCounts {
    std::size_t ingested = 0;
    std::size_t kept = 0;
    std::size_t dropped = 0;
    std::map<std::string, std::size_t> by_reason;
};

struct CorpusStats {
    std::map<std::string, LanguageCounts> languages;

    void record(const std::string& language, const FilterDecision& d);
    std::string to_table() const;
    json to_json() const;
};

struct Corpus {
    std::vector<PairRecord> records;          // kept records, sorted by id
    std::vector<FilterDecision> decisions;    // one per ingested line, sorted by id
    CorpusStats stats;
};

// Reads a pair file. Exact (text, code) duplicates collapse onto the
// lexicographically smallest id. Records without an id receive
// "<language>-<hash of text and code>".
Corpus ingest_pairs(const fs::path& path, const std::string& language);

// Same as ingest_pairs for records already in memory (line numbers are
// positions + 1).
Corpus ingest_records(std::vector<PairRecord> records);

struct PrefilterConfig {
    double min_ascii_letter_ratio = 0.90;
    std::size_t min_text_tokens = 3;
    // Shell command receiving the code on stdin; exit 0 = parseable,
    // exit 1 = unparseable, anything else is a hook failure. Empty uses the
    // built-in delimiter check.
    std::string parser_command;
};

// Thrown when the external parser hook itself fails (distinct from an
// "unparseable" verdict).
class ParserHookError : public Error {
public:
    explicit ParserHookError(const std::string& what) : Error(ErrorKind::backend, what) {}
};

FilterDecision prefilter(const PairRecord& record, const PrefilterConfig& rules);

// Applies prefilter to every kept record (in parallel), moves dropped
// records out of corpus.records and updates decisions and stats.
void apply_prefilter(Corpus& corpus, const PrefilterConfig& rules);

// Helpers exposed for testing.
std::string scrub_markup(std::string_view text);
std::size_t count_tokens(std::string_view text);
bool balanced_delimiters(std::string_view code, std::string_view language);

struct ExtractedPair {
    std::string text;
    std::string code;
};

// Splits a function whose first body statement is a string literal
// (docstring convention) into (docstring, function without docstring).
std::optional<ExtractedPair> extract_docstring(std::string_view source);

void write_corpus(const fs::path& path, const std::vector<PairRecord>& records);
void write_decisions(const fs::path& path, const std::vector<FilterDecision>& decisions);

}  // namespace codemine
