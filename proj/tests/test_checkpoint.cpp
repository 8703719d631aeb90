#include <catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cxr/checkpoint.hpp"
#include "cxr/net.hpp"

using namespace cxr;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

fs::path temp_dir() {
    const auto dir = fs::temp_directory_path() / "cxr_ckpt_test";
    fs::create_directories(dir);
    return dir;
}

model_state<float> small_model(std::uint64_t seed) {
    hyper_params hp;
    hp.fc_units = 6;
    return build_model<float>(hp, architecture{1, {{4, 1}, {8, 1}}}, seed);
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("weights survive a save and load bit-exact", "[checkpoint]") {
    const auto path = temp_dir() / "roundtrip.ckpt";
    auto src = small_model(3);
    save_checkpoint(path, src);

    auto dst = small_model(4);
    REQUIRE(dst.params[0].data != src.params[0].data);
    load_checkpoint(path, dst);
    for (std::size_t t = 0; t < src.params.size(); ++t)
        REQUIRE(dst.params[t].data == src.params[t].data);
}

TEST_CASE("the file starts with the fixed header bytes", "[checkpoint]") {
    const auto path = temp_dir() / "header.ckpt";
    auto m = small_model(1);
    save_checkpoint(path, m);
    const std::string bytes = read_bytes(path);
    REQUIRE(bytes.size() > 12u);
    REQUIRE(bytes.substr(0, 4) == "CXRT");
    // version 1, then the tensor count, both little-endian u32
    const std::string version = {1, 0, 0, 0};
    REQUIRE(bytes.substr(4, 4) == version);
    const auto count = static_cast<unsigned>(m.params.size());
    REQUIRE(static_cast<unsigned char>(bytes[8]) == count);
    REQUIRE(bytes[9] == 0);
    // first record: name length u16 then the name itself
    REQUIRE(static_cast<unsigned char>(bytes[12]) == std::string("conv0.weight").size());
    REQUIRE(bytes.substr(14, 12) == "conv0.weight");
}

TEST_CASE("loading into a different layout names the first bad tensor", "[checkpoint]") {
    const auto path = temp_dir() / "mismatch.ckpt";
    auto src = small_model(3);
    save_checkpoint(path, src);

    hyper_params hp;
    hp.fc_units = 10;  // same names, different fc shapes
    auto other = build_model<float>(hp, architecture{1, {{4, 1}, {8, 1}}}, 5);
    REQUIRE_THROWS_MATCHES(load_checkpoint(path, other), checkpoint_error,
                           MessageMatches(ContainsSubstring("shape mismatch for fc1.weight")));

    hyper_params hp2;
    hp2.fc_units = 6;
    auto fewer = build_model<float>(hp2, architecture{1, {{4, 1}}}, 5);
    REQUIRE_THROWS_MATCHES(load_checkpoint(path, fewer), checkpoint_error,
                           MessageMatches(ContainsSubstring("tensors")));
}

TEST_CASE("a failed load leaves the model untouched", "[checkpoint]") {
    const auto dir = temp_dir();
    const auto good = dir / "good.ckpt";
    auto src = small_model(3);
    save_checkpoint(good, src);

    // corrupt copies truncated at several depths
    const std::string bytes = read_bytes(good);
    for (const std::size_t keep : {std::size_t{2}, std::size_t{9}, std::size_t{40}, bytes.size() - 3}) {
        const auto bad = dir / "truncated.ckpt";
        std::ofstream out(bad, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(keep));
        out.close();

        auto m = small_model(8);
        const auto before = m.params;
        REQUIRE_THROWS_MATCHES(load_checkpoint(bad, m), checkpoint_error,
                               MessageMatches(ContainsSubstring("truncated")));
        for (std::size_t t = 0; t < before.size(); ++t)
            REQUIRE(m.params[t].data == before[t].data);
    }
}

TEST_CASE("trailing bytes after the last tensor are rejected", "[checkpoint]") {
    const auto dir = temp_dir();
    const auto good = dir / "good2.ckpt";
    auto src = small_model(3);
    save_checkpoint(good, src);

    const auto padded = dir / "padded.ckpt";
    std::ofstream out(padded, std::ios::binary | std::ios::trunc);
    const std::string bytes = read_bytes(good);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.write("xx", 2);
    out.close();

    auto m = small_model(8);
    REQUIRE_THROWS_MATCHES(load_checkpoint(padded, m), checkpoint_error,
                           MessageMatches(ContainsSubstring("trailing bytes")));
}

TEST_CASE("bad magic and missing files are reported", "[checkpoint]") {
    const auto dir = temp_dir();
    const auto bogus = dir / "bogus.ckpt";
    std::ofstream(bogus, std::ios::binary | std::ios::trunc) << "PNG\x89 not a checkpoint";
    auto m = small_model(1);
    REQUIRE_THROWS_MATCHES(load_checkpoint(bogus, m), checkpoint_error,
                           MessageMatches(ContainsSubstring("bad magic")));
    REQUIRE_THROWS_MATCHES(load_checkpoint(dir / "no_such.ckpt", m), checkpoint_error,
                           MessageMatches(ContainsSubstring("no_such.ckpt")));
}

TEST_CASE("renamed tensors are caught by position", "[checkpoint]") {
    const auto dir = temp_dir();
    const auto good = dir / "good3.ckpt";
    auto src = small_model(3);
    save_checkpoint(good, src);

    std::string bytes = read_bytes(good);
    // first record name starts at offset 14: "conv0.weight" -> "convX.weight"
    bytes[14 + 4] = 'X';
    const auto renamed = dir / "renamed.ckpt";
    std::ofstream out(renamed, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();

    auto m = small_model(8);
    REQUIRE_THROWS_MATCHES(load_checkpoint(renamed, m), checkpoint_error,
                           MessageMatches(ContainsSubstring("convX.weight")));
}
