#include "codemine/simgraph.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

namespace codemine {

namespace {

constexpr char kCacheMagic[4] = {'C', 'M', 'S', 'C'};
constexpr std::uint32_t kCacheVersion = 1;
constexpr std::size_t kCodeTile = 256;

struct Prepared {
    std::vector<std::uint32_t> positive;   // per text row
    std::vector<std::uint32_t> id_rank;    // per code: rank of its id in sorted order
};

Prepared prepare(const VectorStore& texts, const VectorStore& codes) {
    if (texts.dim() != codes.dim())
        throw_data("dimension mismatch: text store d={}, code store d={}", texts.dim(), codes.dim());
    if (codes.size() == 0) throw_data("code store is empty");
    if (codes.size() > UINT32_MAX) throw_data("code store too large for 32-bit indices");
    Prepared p;
    p.positive.resize(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        auto pos = codes.find(texts.id(i));
        if (!pos) throw_data("text \"{}\" has no paired code in the code store", texts.id(i));
        p.positive[i] = static_cast<std::uint32_t>(*pos);
    }
    std::vector<std::uint32_t> order(codes.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return codes.id(a) < codes.id(b); });
    p.id_rank.resize(codes.size());
    for (std::size_t r = 0; r < order.size(); ++r) p.id_rank[order[r]] = static_cast<std::uint32_t>(r);
    return p;
}

std::uint64_t cache_lineage(const VectorStore& texts, const VectorStore& codes, std::size_t k_prime) {
    ContentHash h;
    h.update(hex64(texts.lineage()));
    h.update(hex64(codes.lineage()));
    h.update(std::to_string(k_prime));
    return h.value();
}

SimilarityCache empty_cache(const VectorStore& texts, const VectorStore& codes, const Prepared& p,
                            std::size_t k_prime) {
    SimilarityCache c;
    c.k_prime = k_prime;
    c.lineage = cache_lineage(texts, codes, k_prime);
    c.code_ids = codes.ids();
    c.rows.resize(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        c.rows[i].query_id = texts.id(i);
        c.rows[i].positive = p.positive[i];
        c.rows[i].s_pos = dot_score(texts.row(i), codes.row(p.positive[i]));
    }
    return c;
}

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const fs::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw_data("{}: truncated cache file", path.string());
    return v;
}

void put_string(std::ofstream& out, const std::string& s) {
    put(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& in, const fs::path& path) {
    const auto len = get<std::uint32_t>(in, path);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw_data("{}: truncated cache file", path.string());
    return s;
}

}  // namespace

SimilarityCache compute_neighbors(const VectorStore& texts, const VectorStore& codes, const NeighborParams& params) {
    if (params.block == 0) throw_usage("neighbors: block size must be at least 1");
    if (params.k_prime < params.required_min)
        throw_usage("neighbors: K'={} is below the required minimum {} (max of filter k and pool size + 1)",
                    params.k_prime, params.required_min);
    const Prepared p = prepare(texts, codes);
    SimilarityCache cache = empty_cache(texts, codes, p, params.k_prime);

    const std::size_t n_text = texts.size();
    const std::size_t n_code = codes.size();
    const std::size_t keep = std::min(params.k_prime, n_code);
    const std::size_t block = params.block;
    const auto n_blocks = static_cast<std::ptrdiff_t>((n_text + block - 1) / block);

    // comp(a, b) == "a ranks before b"; used as the heap's less-than, the
    // heap front is the current worst kept neighbor.
    auto better = [&](const Neighbor& a, const Neighbor& b) {
        if (a.score != b.score) return a.score > b.score;
        return p.id_rank[a.code] < p.id_rank[b.code];
    };

#pragma omp parallel
    {
        std::vector<float> tile;
        std::vector<std::vector<Neighbor>> heaps;
#pragma omp for schedule(dynamic, 1)
        for (std::ptrdiff_t b = 0; b < n_blocks; ++b) {
            const std::size_t r0 = static_cast<std::size_t>(b) * block;
            const std::size_t r1 = std::min(n_text, r0 + block);
            const std::size_t rows = r1 - r0;
            heaps.assign(rows, {});
            for (auto& h : heaps) h.reserve(keep);
            for (std::size_t c0 = 0; c0 < n_code; c0 += kCodeTile) {
                const std::size_t c1 = std::min(n_code, c0 + kCodeTile);
                const std::size_t cols = c1 - c0;
                tile.resize(rows * cols);
                for (std::size_t r = 0; r < rows; ++r) {
                    auto t = texts.row(r0 + r);
                    for (std::size_t c = 0; c < cols; ++c) tile[r * cols + c] = dot_score(t, codes.row(c0 + c));
                }
                for (std::size_t r = 0; r < rows; ++r) {
                    auto& h = heaps[r];
                    for (std::size_t c = 0; c < cols; ++c) {
                        Neighbor cand{static_cast<std::uint32_t>(c0 + c), tile[r * cols + c]};
                        if (h.size() < keep) {
                            h.push_back(cand);
                            std::push_heap(h.begin(), h.end(), better);
                        } else if (better(cand, h.front())) {
                            std::pop_heap(h.begin(), h.end(), better);
                            h.back() = cand;
                            std::push_heap(h.begin(), h.end(), better);
                        }
                    }
                }
            }
            for (std::size_t r = 0; r < rows; ++r) {
                std::sort_heap(heaps[r].begin(), heaps[r].end(), better);
                cache.rows[r0 + r].neighbors = std::move(heaps[r]);
            }
        }
    }
    return cache;
}

SimilarityCache brute_force_neighbors(const VectorStore& texts, const VectorStore& codes, std::size_t k_prime) {
    const Prepared p = prepare(texts, codes);
    SimilarityCache cache = empty_cache(texts, codes, p, k_prime);
    const std::size_t n_code = codes.size();
    std::vector<float> table(texts.size() * n_code);
    for (std::size_t i = 0; i < texts.size(); ++i)
        for (std::size_t j = 0; j < n_code; ++j) table[i * n_code + j] = dot_score(texts.row(i), codes.row(j));

    for (std::size_t i = 0; i < texts.size(); ++i) {
        std::vector<Neighbor> row(n_code);
        for (std::size_t j = 0; j < n_code; ++j) row[j] = {static_cast<std::uint32_t>(j), table[i * n_code + j]};
        std::sort(row.begin(), row.end(), [&](const Neighbor& a, const Neighbor& b) {
            return ranks_before(a.score, codes.id(a.code), b.score, codes.id(b.code));
        });
        row.resize(std::min(k_prime, n_code));
        cache.rows[i].neighbors = std::move(row);
    }
    return cache;
}

void SimilarityCache::save_jsonl(const fs::path& path) const {
    JsonlWriter w(path);
    w.write({{"kind", "similarity_cache"},
             {"version", kCacheVersion},
             {"k_prime", k_prime},
             {"lineage", hex64(lineage)},
             {"code_ids", code_ids}});
    for (const auto& r : rows) {
        json nb = json::array();
        for (const auto& n : r.neighbors) nb.push_back(json::array({code_ids[n.code], n.score}));
        w.write({{"query_id", r.query_id}, {"positive_id", code_ids[r.positive]}, {"s_pos", r.s_pos}, {"neighbors", nb}});
    }
}

SimilarityCache SimilarityCache::load_jsonl(const fs::path& path) {
    SimilarityCache c;
    std::unordered_map<std::string, std::uint32_t> index;
    bool have_header = false;
    auto lookup = [&](const std::string& id, std::size_t line_no) {
        auto it = index.find(id);
        if (it == index.end()) throw_data("{}:{}: code id \"{}\" not in cache id table", path.string(), line_no, id);
        return it->second;
    };
    read_jsonl(path, [&](const json& j, std::size_t line_no) {
        if (!have_header) {
            if (j.value("kind", std::string()) != "similarity_cache")
                throw_data("{}: missing similarity cache header", path.string());
            c.k_prime = j.at("k_prime").get<std::size_t>();
            c.lineage = std::stoull(j.at("lineage").get<std::string>(), nullptr, 16);
            c.code_ids = j.at("code_ids").get<std::vector<std::string>>();
            for (std::size_t i = 0; i < c.code_ids.size(); ++i) index.emplace(c.code_ids[i], static_cast<std::uint32_t>(i));
            have_header = true;
            return;
        }
        CacheRow r;
        r.query_id = require_string(j, "query_id", line_no);
        r.positive = lookup(require_string(j, "positive_id", line_no), line_no);
        r.s_pos = j.at("s_pos").get<float>();
        for (const auto& e : j.at("neighbors"))
            r.neighbors.push_back({lookup(e.at(0).get<std::string>(), line_no), e.at(1).get<float>()});
        c.rows.push_back(std::move(r));
    });
    if (!have_header) throw_data("{}: empty cache file", path.string());
    return c;
}

void SimilarityCache::save_binary(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw_data("cannot write {}", path.string());
    out.write(kCacheMagic, 4);
    put(out, kCacheVersion);
    put(out, static_cast<std::uint32_t>(k_prime));
    put(out, lineage);
    put(out, static_cast<std::uint64_t>(code_ids.size()));
    for (const auto& id : code_ids) put_string(out, id);
    put(out, static_cast<std::uint64_t>(rows.size()));
    for (const auto& r : rows) {
        put_string(out, r.query_id);
        put(out, r.positive);
        put(out, r.s_pos);
        put(out, static_cast<std::uint32_t>(r.neighbors.size()));
        for (const auto& n : r.neighbors) {
            put(out, n.code);
            put(out, n.score);
        }
    }
    if (!out) throw_data("write failed: {}", path.string());
}

SimilarityCache SimilarityCache::load_binary(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_data("cannot open {}", path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCacheMagic, 4) != 0) throw_data("{}: not a similarity cache", path.string());
    if (auto v = get<std::uint32_t>(in, path); v != kCacheVersion)
        throw_data("{}: unsupported cache version {}", path.string(), v);
    SimilarityCache c;
    c.k_prime = get<std::uint32_t>(in, path);
    c.lineage = get<std::uint64_t>(in, path);
    const auto n_codes = get<std::uint64_t>(in, path);
    c.code_ids.reserve(n_codes);
    for (std::uint64_t i = 0; i < n_codes; ++i) c.code_ids.push_back(get_string(in, path));
    const auto n_rows = get<std::uint64_t>(in, path);
    c.rows.resize(n_rows);
    for (auto& r : c.rows) {
        r.query_id = get_string(in, path);
        r.positive = get<std::uint32_t>(in, path);
        r.s_pos = get<float>(in, path);
        const auto count = get<std::uint32_t>(in, path);
        r.neighbors.resize(count);
        for (auto& n : r.neighbors) {
            n.code = get<std::uint32_t>(in, path);
            n.score = get<float>(in, path);
            if (n.code >= n_codes) throw_data("{}: neighbor index out of range", path.string());
        }
        if (r.positive >= n_codes) throw_data("{}: positive index out of range", path.string());
    }
    return c;
}

void SimilarityCache::save(const fs::path& path) const {
    if (path.extension() == ".bin")
        save_binary(path);
    else
        save_jsonl(path);
}

SimilarityCache SimilarityCache::load(const fs::path& path) {
    return path.extension() == ".bin" ? load_binary(path) : load_jsonl(path);
}

}  // namespace codemine
