#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <spdlog/spdlog.h>

// Expected failures (scripted backend errors, rejected inputs) would
// otherwise flood the test log.
int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::off);
    return doctest::Context(argc, argv).run();
}
