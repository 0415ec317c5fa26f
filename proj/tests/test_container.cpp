#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "advknn/container.hpp"
#include "advknn/errors.hpp"

using namespace advknn;

namespace {
std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
} // namespace

TEST_CASE("crc32 matches the reference vector") {
    const char* s = "123456789";
    CHECK(crc32_ieee(s, 9) == 0xCBF43926u);
}

TEST_CASE("container round-trips blobs of every dtype") {
    Container c;
    c.kind = "unit-test";
    c.meta["alpha"] = "0.5";
    c.meta["note"] = "round trip";
    c.add_f32("a", {2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    c.add_f64("b", {3}, {0.25, -1.5, 9.75});
    c.add_i32("c", {2}, {-7, 42});

    std::string path = temp_path("advknn-container-rt.bin");
    c.save(path);
    Container back = Container::load(path);

    CHECK(back.kind == "unit-test");
    CHECK(back.meta_at("alpha") == "0.5");
    CHECK(back.f32("a") == std::vector<float>{1.0f, 2.0f, 3.0f, 4.0f});
    CHECK(back.f64("b") == std::vector<double>{0.25, -1.5, 9.75});
    CHECK(back.i32("c") == std::vector<std::int32_t>{-7, 42});
    CHECK(back.shape("a") == std::vector<std::size_t>{2, 2});
    std::remove(path.c_str());
}

TEST_CASE("truncated containers fail their checksum") {
    Container c;
    c.kind = "unit-test";
    c.add_f32("a", {8}, std::vector<float>(8, 1.0f));
    std::string path = temp_path("advknn-container-trunc.bin");
    c.save(path);

    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 5);
    CHECK_THROWS_AS((void)Container::load(path), TruncationError);
    std::remove(path.c_str());
}

TEST_CASE("flipping one payload byte fails the checksum") {
    Container c;
    c.kind = "unit-test";
    c.add_f32("a", {4}, {1.0f, 2.0f, 3.0f, 4.0f});
    std::string path = temp_path("advknn-container-flip.bin");
    c.save(path);

    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-12, std::ios::end);
    char byte = 0x5a;
    f.write(&byte, 1);
    f.close();
    CHECK_THROWS_AS((void)Container::load(path), TruncationError);
    std::remove(path.c_str());
}

TEST_CASE("dtype mismatches are format errors") {
    Container c;
    c.kind = "unit-test";
    c.add_f32("a", {1}, {1.0f});
    CHECK_THROWS_AS((void)c.f64("a"), FormatError);
    CHECK_THROWS_AS((void)c.f32("missing"), FormatError);
}
