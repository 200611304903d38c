#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "codemine/common.hpp"
#include "codemine/corpus.hpp"

namespace codemine {

enum class Side : std::uint8_t { text = 0, code = 1 };

std::string_view to_string(Side s);

// L2-normalizes in place and returns the original norm.
double normalize(std::span<float> v);

// Row-major matrix of unit-norm vectors keyed by record id. Rows are
// normalized on insertion, whatever the provider returned.
class VectorStore {
public:
    VectorStore() = default;
    VectorStore(std::size_t dim, Side side);

    void append(std::string id, std::span<const float> raw);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return ids_.size(); }
    Side side() const noexcept { return side_; }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    const std::string& id(std::size_t i) const { return ids_[i]; }
    std::span<const float> row(std::size_t i) const {
        return {data_.data() + i * dim_, dim_};
    }
    const std::vector<float>& data() const noexcept { return data_; }

    std::optional<std::size_t> find(const std::string& id) const;

    // Hash of (provider identity, side, ids) the store was built from.
    std::uint64_t lineage() const noexcept { return lineage_; }
    void set_lineage(std::uint64_t h) noexcept { lineage_ = h; }

    void save(const fs::path& path) const;
    static VectorStore load(const fs::path& path);

    bool operator==(const VectorStore& o) const {
        return dim_ == o.dim_ && side_ == o.side_ && lineage_ == o.lineage_ && ids_ == o.ids_ && data_ == o.data_;
    }

private:
    std::size_t dim_ = 0;
    Side side_ = Side::text;
    std::uint64_t lineage_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> data_;
    mutable std::unordered_map<std::string, std::size_t> index_;
};

// Signed feature hashing of lowercased character 3-grams into d buckets,
// L2-normalized.
std::vector<float> stub_embed(std::string_view text, std::size_t d);

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string identity() const = 0;
    virtual std::size_t dimension() = 0;
    // One raw (not necessarily normalized) vector per input.
    virtual std::vector<std::vector<float>> embed(std::span<const std::string> texts) = 0;
    // True if embed() may be called from several threads at once.
    virtual bool concurrent() const { return false; }
};

class StubProvider : public EmbeddingProvider {
public:
    explicit StubProvider(std::size_t dim);
    std::string identity() const override;
    std::size_t dimension() override { return dim_; }
    std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;
    bool concurrent() const override { return true; }

private:
    std::size_t dim_;
};

struct EmbedOptions {
    std::size_t batch_size = 64;
    std::size_t max_in_flight = 4;
    // When set, completed batches are appended here and a rerun resumes
    // after the last completed batch. Removed on success.
    std::optional<fs::path> checkpoint;
    // 0 accepts whatever the provider reports.
    std::size_t expected_dim = 0;
};

VectorStore embed_strings(std::span<const std::string> ids, std::span<const std::string> texts,
                          EmbeddingProvider& provider, Side side, const EmbedOptions& options = {});

VectorStore embed_corpus(const std::vector<PairRecord>& records, EmbeddingProvider& provider, Side side,
                         const EmbedOptions& options = {});

}  // namespace codemine
