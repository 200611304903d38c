#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sys/wait.h>

#include "codemine/pipeline.hpp"
#include "helpers.hpp"

using namespace codemine;
using testutil::TempDir;

namespace {

const fs::path kFixtures = CODEMINE_FIXTURE_DIR;

struct Outcome {
    int code = -1;
    std::string err;
};

// Runs the CLI with the bundled fixture configuration and returns the exit
// status together with whatever it wrote to stderr.
Outcome cli(const fs::path& workdir, const std::string& args) {
    const fs::path errfile = workdir.string() + ".stderr";
    // An explicit --pairs in `args` replaces the fixture's pair file.
    const std::string pairs =
        args.find("--pairs") == std::string::npos ? "--pairs '" + (kFixtures / "fixture_pairs.jsonl").string() + "'" : "";
    const std::string cmd = fmt::format(
        "'{}' --config '{}' --workdir '{}' {} --snapshot '{}' --gold '{}' --log-level warn {} 2> '{}'", CODEMINE_CLI,
        (kFixtures / "fixture.toml").string(), workdir.string(), pairs,
        (kFixtures / "fixture_snapshot.jsonl").string(), (kFixtures / "fixture_gold.jsonl").string(), args,
        errfile.string());
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (fs::exists(errfile)) o.err = read_text_file(errfile);
    return o;
}

std::map<std::string, std::uint64_t> tree_hashes(const fs::path& dir) {
    std::map<std::string, std::uint64_t> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = hash_file(e.path());
    return out;
}

}  // namespace

TEST_CASE("cli: exit codes distinguish usage, data and success") {
    TempDir tmp;
    const auto wd = tmp / "w";
    CHECK(cli(wd, "--no-such-flag ingest").code == 1);
    CHECK(cli(wd, "").code == 1);
    CHECK(cli(wd, "--provider magic ingest").code == 0);  // ingest never touches the provider
    CHECK(cli(wd, "--provider magic embed").code == 1);

    auto missing = cli(tmp / "empty", "neighbors");
    CHECK(missing.code == 2);
    CHECK(missing.err.find("run `codemine embed` first") != std::string::npos);

    CHECK(cli(tmp / "bad", "--pairs /nonexistent.jsonl ingest").code == 2);
    CHECK(cli(tmp / "hung", "--provider 'process:sleep 30' --embed-batch-size 1 embed").code != 0);
}

TEST_CASE("cli: existing artifacts need --force, and changes upstream are detected") {
    TempDir tmp;
    const auto wd = tmp / "w";
    REQUIRE(cli(wd, "ingest").code == 0);
    REQUIRE(cli(wd, "embed").code == 0);
    REQUIRE(cli(wd, "neighbors").code == 0);

    auto again = cli(wd, "neighbors");
    CHECK(again.code == 1);
    CHECK(again.err.find("--force") != std::string::npos);
    CHECK(cli(wd, "--force neighbors").code == 0);

    // Hand-editing an artifact is caught by the next consumer.
    {
        std::ofstream out(wd / "cache.jsonl", std::ios::app);
        out << "\n";
    }
    auto edited = cli(wd, "filter");
    CHECK(edited.code == 2);
    CHECK(edited.err.find("modified") != std::string::npos);

    // Regenerating an input with different settings makes its consumers stale.
    REQUIRE(cli(wd, "--force neighbors").code == 0);
    REQUIRE(cli(wd, "filter").code == 0);
    CHECK(cli(wd, "--force --k-prime 64 neighbors").code == 1);  // below the pool-size floor
    REQUIRE(cli(wd, "--force --k-prime 200 neighbors").code == 0);
    auto stale = cli(wd, "mine");
    CHECK(stale.code == 2);
    CHECK(stale.err.find("stale") != std::string::npos);
}

TEST_CASE("cli: two runs with the same seed write byte-identical artifacts") {
    TempDir tmp;
    for (const char* w : {"a", "b"})
        for (const auto& stage : stage_names()) REQUIRE_MESSAGE(cli(tmp / w, stage).code == 0, stage);
    const auto a = tree_hashes(tmp / "a");
    const auto b = tree_hashes(tmp / "b");
    CHECK(a.size() >= 20);
    CHECK(a == b);

    // Re-sampling in place reproduces the same batches.
    const auto before = hash_file(tmp / "a" / "batches.jsonl");
    REQUIRE(cli(tmp / "a", "--force sample").code == 0);
    CHECK(hash_file(tmp / "a" / "batches.jsonl") == before);

    // A different seed changes the batch stream.
    REQUIRE(cli(tmp / "a", "--force --seed 7 sample").code == 0);
    CHECK(hash_file(tmp / "a" / "batches.jsonl") != before);

    std::size_t tuples = 0;
    read_jsonl(tmp / "b" / "listwise.jsonl", [&](const json&, std::size_t) { ++tuples; });
    CHECK(tuples > 0);
}
