#include <doctest.h>

#include <bit>
#include <cmath>
#include <limits>

#include "meshdex/archive.hpp"
#include "meshdex/error.hpp"
#include "support/test_support.hpp"

using namespace meshdex;
using namespace meshdex::testing;

namespace {

std::vector<NamedTensor> sample()
{
    return {
        {"a", {2, 3}, ElementType::float64, {1.5, -0.0, 1e-310, std::numeric_limits<double>::max(), 0.1, -7.25}},
        {"empty", {0, 4}, ElementType::float64, {}},
        {"f", {1, 2}, ElementType::float32, {0.5, -2.0}},
    };
}

}  // namespace

TEST_CASE("archive round-trips bit-exactly")
{
    const auto t = sample();
    const auto back = decode_archive(encode_archive(t));
    REQUIRE(back.size() == t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(back[i].name == t[i].name);
        CHECK(back[i].dims == t[i].dims);
        CHECK(back[i].type == t[i].type);
        REQUIRE(back[i].values.size() == t[i].values.size());
        for (std::size_t k = 0; k < t[i].values.size(); ++k) {
            CHECK(std::bit_cast<std::uint64_t>(back[i].values[k]) == std::bit_cast<std::uint64_t>(t[i].values[k]));
        }
    }
    CHECK(encode_archive(back) == encode_archive(t));
}

TEST_CASE("archive layout header")
{
    const std::string bytes = encode_archive({{"x", {1, 1}, ElementType::float64, {1.0}}});
    CHECK(bytes.substr(0, 4) == "MDXA");
    CHECK(static_cast<unsigned char>(bytes[4]) == kArchiveVersion);
    // magic + version + count + name len + name + rank + 2 dims + type + 1 value
    CHECK(bytes.size() == 4 + 4 + 8 + 4 + 1 + 4 + 16 + 1 + 8);
}

TEST_CASE("corrupt archives are rejected")
{
    const std::string good = encode_archive(sample());
    CHECK_THROWS_AS(decode_archive("NOPE" + good.substr(4)), DataError);
    CHECK_THROWS_AS(decode_archive(good.substr(0, good.size() - 3)), DataError);
    CHECK_THROWS_AS(decode_archive(good + "x"), DataError);
    std::string bad_version = good;
    bad_version[4] = 9;
    CHECK_THROWS_AS(decode_archive(bad_version), DataError);
}

TEST_CASE("file round trip and lookup")
{
    TempDir dir("arch");
    write_archive(dir / "t.bin", sample());
    const auto back = read_archive(dir / "t.bin");
    CHECK(find_tensor(back, "f").values == std::vector<double>{0.5, -2.0});
    CHECK_THROWS_AS(find_tensor(back, "zzz"), DataError);
    CHECK_THROWS_AS(read_archive(dir / "missing.bin"), DataError);
}

TEST_CASE("matrix conversion")
{
    const Matrix m(2, 2, std::vector<double>{1, 2, 3, 4});
    const NamedTensor t = tensor_from_matrix("m", m);
    CHECK(t.dims == std::vector<std::uint64_t>{2, 2});
    CHECK(matrix_from_tensor(t) == m);
    CHECK(matrix_from_tensor({"v", {4}, ElementType::float64, {1, 2, 3, 4}}) == Matrix(1, 4, std::vector<double>{1, 2, 3, 4}));
    CHECK_THROWS_AS(matrix_from_tensor({"c", {1, 2, 2}, ElementType::float64, {1, 2, 3, 4}}), DataError);
}
