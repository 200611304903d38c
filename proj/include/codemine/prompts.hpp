#pragma once

#include <span>
#include <string>
#include <string_view>

namespace codemine::prompts {

// Versioned so that instance files and audit reports can record which
// template produced them. Bump the version on any wording change.
inline constexpr std::string_view kRerankVersion = "listwise-code-v1";
inline constexpr std::string_view kJudgeVersion = "pair-judge-v1";

struct Passage {
    int identifier;
    std::string_view text;
};

// Identifier-window prompt: candidates tagged [1]..[m], answer expected as
// "[i] > [j] > ...".
std::string render_rerank(std::string_view query, std::span<const Passage> passages);

std::string render_judge(std::string_view query, std::string_view code);

}  // namespace codemine::prompts
