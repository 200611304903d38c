#include "codemine/prompts.hpp"

#include <fmt/format.h>

namespace codemine::prompts {

std::string render_rerank(std::string_view query, std::span<const Passage> passages) {
    std::string out = fmt::format(
        "I will provide you with {} code snippets, each indicated by a numerical identifier []. "
        "Rank the code snippets based on their relevance to the search query: {}.\n\n",
        passages.size(), query);
    for (const auto& p : passages) out += fmt::format("[{}] {}\n\n", p.identifier, p.text);
    out += fmt::format(
        "Search Query: {}.\n"
        "Rank the {} code snippets above based on their relevance to the search query. "
        "All the code snippets should be included and listed using identifiers, in descending order of relevance. "
        "The output format should be [] > [], e.g., [2] > [1]. Only respond with the ranking results, "
        "do not say any word or explain.",
        query, passages.size());
    return out;
}

std::string render_judge(std::string_view query, std::string_view code) {
    return fmt::format(
        "You are given a natural-language query and a code snippet.\n\n"
        "Query:\n{}\n\nCode:\n{}\n\n"
        "Does the code snippet fully answer the query? Answer with a single word: yes or no.",
        query, code);
}

}  // namespace codemine::prompts
