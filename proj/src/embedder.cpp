#include "codemine/embedder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <future>

#include <spdlog/spdlog.h>

namespace codemine {

namespace {

constexpr char kStoreMagic[4] = {'C', 'M', 'V', 'S'};
constexpr std::uint32_t kStoreVersion = 1;

static_assert(std::endian::native == std::endian::little, "store files are little-endian");

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const fs::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw_data("{}: truncated store file", path.string());
    return v;
}

std::uint64_t store_lineage(const std::string& provider, Side side, std::span<const std::string> ids) {
    ContentHash h;
    h.update(provider);
    h.update(to_string(side));
    for (const auto& id : ids) {
        h.update(id);
        h.update(std::string_view("\n", 1));
    }
    return h.value();
}

}  // namespace

std::string_view to_string(Side s) { return s == Side::text ? "text" : "code"; }

double normalize(std::span<float> v) {
    double ss = 0.0;
    for (float x : v) ss += static_cast<double>(x) * x;
    const double norm = std::sqrt(ss);
    if (norm > 0.0)
        for (float& x : v) x = static_cast<float>(x / norm);
    return norm;
}

VectorStore::VectorStore(std::size_t dim, Side side) : dim_(dim), side_(side) {
    if (dim == 0) throw_usage("vector store dimension must be positive");
}

void VectorStore::append(std::string id, std::span<const float> raw) {
    if (raw.size() != dim_)
        throw_backend("dimension mismatch for \"{}\": got {}, store expects {}", id, raw.size(), dim_);
    const std::size_t offset = data_.size();
    data_.insert(data_.end(), raw.begin(), raw.end());
    std::span<float> row(data_.data() + offset, dim_);
    for (float x : row)
        if (!std::isfinite(x)) throw_backend("non-finite embedding for \"{}\"", id);
    if (normalize(row) == 0.0) throw_data("zero embedding for \"{}\"", id);
    index_.clear();
    ids_.push_back(std::move(id));
}

std::optional<std::size_t> VectorStore::find(const std::string& id) const {
    if (index_.size() != ids_.size()) {
        index_.clear();
        for (std::size_t i = 0; i < ids_.size(); ++i) index_.emplace(ids_[i], i);
    }
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

void VectorStore::save(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw_data("cannot write {}", path.string());
    out.write(kStoreMagic, 4);
    put(out, kStoreVersion);
    put(out, static_cast<std::uint32_t>(dim_));
    put(out, static_cast<std::uint64_t>(ids_.size()));
    put(out, static_cast<std::uint8_t>(side_));
    put(out, lineage_);
    out.write(reinterpret_cast<const char*>(data_.data()), static_cast<std::streamsize>(data_.size() * sizeof(float)));
    for (const auto& id : ids_) {
        put(out, static_cast<std::uint32_t>(id.size()));
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
    }
    if (!out) throw_data("write failed: {}", path.string());
}

VectorStore VectorStore::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_data("cannot open {}", path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kStoreMagic, 4) != 0) throw_data("{}: not a vector store", path.string());
    if (auto v = get<std::uint32_t>(in, path); v != kStoreVersion)
        throw_data("{}: unsupported store version {}", path.string(), v);
    VectorStore s;
    s.dim_ = get<std::uint32_t>(in, path);
    const auto count = get<std::uint64_t>(in, path);
    const auto side = get<std::uint8_t>(in, path);
    if (side > 1) throw_data("{}: bad side tag {}", path.string(), side);
    s.side_ = static_cast<Side>(side);
    s.lineage_ = get<std::uint64_t>(in, path);
    s.data_.resize(count * s.dim_);
    in.read(reinterpret_cast<char*>(s.data_.data()), static_cast<std::streamsize>(s.data_.size() * sizeof(float)));
    if (!in) throw_data("{}: truncated store file", path.string());
    s.ids_.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = get<std::uint32_t>(in, path);
        std::string id(len, '\0');
        in.read(id.data(), len);
        if (!in) throw_data("{}: truncated id table", path.string());
        s.ids_.push_back(std::move(id));
    }
    return s;
}

std::vector<float> stub_embed(std::string_view text, std::size_t d) {
    if (d < 8) throw_usage("stub embedding dimension must be at least 8 (got {})", d);
    if (text.empty()) throw_data("cannot embed empty input");
    std::string lower(text);
    for (char& c : lower)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');

    std::vector<double> acc(d, 0.0);
    auto add = [&](std::string_view gram) {
        const std::uint64_t h = fnv1a(gram);
        const double sign = (h >> 63) ? -1.0 : 1.0;
        acc[(h & 0x7fffffffffffffffULL) % d] += sign;
    };
    if (lower.size() < 3) {
        add(lower);
    } else {
        for (std::size_t i = 0; i + 3 <= lower.size(); ++i) add(std::string_view(lower).substr(i, 3));
    }

    double ss = 0.0;
    for (double x : acc) ss += x * x;
    if (ss == 0.0) throw_data("stub embedding cancelled to zero for input of length {}", text.size());
    const double norm = std::sqrt(ss);
    std::vector<float> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(acc[i] / norm);
    return out;
}

StubProvider::StubProvider(std::size_t dim) : dim_(dim) {
    if (dim < 8) throw_usage("stub embedding dimension must be at least 8 (got {})", dim);
}

std::string StubProvider::identity() const { return fmt::format("stub-3gram-v1/d={}", dim_); }

std::vector<std::vector<float>> StubProvider::embed(std::span<const std::string> texts) {
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(stub_embed(t, dim_));
    return out;
}

VectorStore embed_strings(std::span<const std::string> ids, std::span<const std::string> texts,
                          EmbeddingProvider& provider, Side side, const EmbedOptions& options) {
    if (ids.size() != texts.size()) throw_usage("embed: {} ids but {} texts", ids.size(), texts.size());
    if (options.batch_size == 0) throw_usage("embed: batch size must be positive");
    const std::size_t dim = provider.dimension();
    if (dim == 0) throw_backend("provider {} reported dimension 0", provider.identity());
    if (options.expected_dim != 0 && dim != options.expected_dim)
        throw_backend("dimension mismatch: provider {} reports {}, expected {}", provider.identity(), dim,
                      options.expected_dim);

    const std::uint64_t lineage = store_lineage(provider.identity(), side, ids);
    const std::size_t n = ids.size();
    const std::size_t batches = (n + options.batch_size - 1) / options.batch_size;
    std::vector<std::optional<std::vector<std::vector<float>>>> done(batches);

    if (options.checkpoint && fs::exists(*options.checkpoint)) {
        std::size_t resumed = 0;
        read_jsonl(*options.checkpoint, [&](const json& j, std::size_t line_no) {
            if (j.value("lineage", std::string()) != hex64(lineage))
                throw_data("{}:{}: checkpoint belongs to a different corpus or provider",
                           options.checkpoint->string(), line_no);
            const auto b = j.at("batch").get<std::size_t>();
            if (b >= batches) throw_data("{}:{}: batch {} out of range", options.checkpoint->string(), line_no, b);
            done[b] = j.at("embeddings").get<std::vector<std::vector<float>>>();
            ++resumed;
        });
        spdlog::info("embed: resuming with {} of {} batches already complete", resumed, batches);
    }

    std::unique_ptr<JsonlWriter> ckpt;
    if (options.checkpoint) {
        // Rewrite the checkpoint with what we already have, then append.
        std::vector<json> kept;
        for (std::size_t b = 0; b < batches; ++b)
            if (done[b]) kept.push_back({{"batch", b}, {"lineage", hex64(lineage)}, {"embeddings", *done[b]}});
        ckpt = std::make_unique<JsonlWriter>(*options.checkpoint);
        for (const auto& j : kept) ckpt->write(j);
    }

    auto run_batch = [&](std::size_t b) {
        const std::size_t lo = b * options.batch_size;
        const std::size_t hi = std::min(n, lo + options.batch_size);
        auto vecs = provider.embed(texts.subspan(lo, hi - lo));
        if (vecs.size() != hi - lo)
            throw_backend("provider {} returned {} vectors for a batch of {}", provider.identity(), vecs.size(), hi - lo);
        for (const auto& v : vecs)
            if (v.size() != dim)
                throw_backend("dimension mismatch: provider {} returned {} values, expected {}", provider.identity(),
                              v.size(), dim);
        return vecs;
    };

    const std::size_t in_flight = provider.concurrent() ? std::max<std::size_t>(1, options.max_in_flight) : 1;
    std::vector<std::size_t> pending;
    for (std::size_t b = 0; b < batches; ++b)
        if (!done[b]) pending.push_back(b);

    for (std::size_t w = 0; w < pending.size(); w += in_flight) {
        const std::size_t wave_end = std::min(pending.size(), w + in_flight);
        std::vector<std::future<std::vector<std::vector<float>>>> futures;
        for (std::size_t k = w; k < wave_end; ++k)
            futures.push_back(std::async(in_flight > 1 ? std::launch::async : std::launch::deferred, run_batch,
                                         pending[k]));
        std::exception_ptr failure;
        for (std::size_t k = w; k < wave_end; ++k) {
            try {
                done[pending[k]] = futures[k - w].get();
                if (ckpt)
                    ckpt->write({{"batch", pending[k]}, {"lineage", hex64(lineage)}, {"embeddings", *done[pending[k]]}});
            } catch (...) {
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);
    }
    if (ckpt) {
        ckpt->close();
        fs::remove(*options.checkpoint);
    }

    VectorStore store(dim, side);
    for (std::size_t b = 0; b < batches; ++b) {
        const std::size_t lo = b * options.batch_size;
        for (std::size_t k = 0; k < done[b]->size(); ++k) store.append(ids[lo + k], (*done[b])[k]);
    }
    store.set_lineage(lineage);
    return store;
}

VectorStore embed_corpus(const std::vector<PairRecord>& records, EmbeddingProvider& provider, Side side,
                         const EmbedOptions& options) {
    std::vector<std::string> ids, texts;
    ids.reserve(records.size());
    texts.reserve(records.size());
    for (const auto& r : records) {
        ids.push_back(r.id);
        texts.push_back(side == Side::text ? r.text : r.code);
    }
    return embed_strings(ids, texts, provider, side, options);
}

}  // namespace codemine
