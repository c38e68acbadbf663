#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cfgat/checkpoint.hpp"
#include "cfgat/config.hpp"
#include "cfgat/dataset.hpp"
#include "cfgat/errors.hpp"
#include "cfgat/gat.hpp"

using namespace cfgat;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("cfgat_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void dump(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
    TempDir dir;
    GatParams p = init_params(6, 3);
    p.at("pre.beta")(2, 0) = 0.1 + 1e-17;
    p.at("layer2.norm.bias")(0, 5) = -3.0e-300;
    save_checkpoint(dir.path / "ck.bin", p, 9, 0xabcdef);
    const auto ck = load_checkpoint(dir.path / "ck.bin");
    CHECK(ck.params.M == 6);
    CHECK(ck.K_max == 9);
    CHECK(ck.config_hash == 0xabcdef);
    CHECK(ck.widths == std::vector<int>(kLayerWidths.begin(), kLayerWidths.end()));
    CHECK(ck.params.tensors == p.tensors);
    CHECK_FALSE(fs::exists(dir.path / "ck.bin.partial"));
}

TEST_CASE("checkpoint compatibility checks") {
    TempDir dir;
    save_checkpoint(dir.path / "ck.bin", init_params(16, 1), 8, 42);
    const auto ck = load_checkpoint(dir.path / "ck.bin");
    std::ostringstream warn;
    CHECK(check_compatible(ck, 16, 8, 42, &warn));
    CHECK(warn.str().empty());
    try {
        check_compatible(ck, 32, 8, 42, &warn);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("16") != std::string::npos);
        CHECK(msg.find("32") != std::string::npos);
    }
    CHECK_THROWS_AS(check_compatible(ck, 16, 20, 42, &warn), ShapeError);
    CHECK_FALSE(check_compatible(ck, 16, 8, 43, &warn));
    CHECK_FALSE(warn.str().empty());
}

TEST_CASE("corrupt checkpoints are rejected") {
    TempDir dir;
    save_checkpoint(dir.path / "ck.bin", init_params(4, 1), 3, 1);
    const std::string good = slurp(dir.path / "ck.bin");

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    dump(dir.path / "magic.bin", bad_magic);
    CHECK_THROWS_AS(load_checkpoint(dir.path / "magic.bin"), IoError);

    std::string bad_version = good;
    bad_version[8] = 99;
    dump(dir.path / "version.bin", bad_version);
    CHECK_THROWS_AS(load_checkpoint(dir.path / "version.bin"), IoError);

    dump(dir.path / "short.bin", good.substr(0, good.size() - 13));
    CHECK_THROWS_AS(load_checkpoint(dir.path / "short.bin"), IoError);

    CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.bin"), IoError);
}

TEST_CASE("dataset round trip and determinism") {
    TempDir dir;
    const auto cfg = scenario_preset(3);
    const auto ds = generate_dataset(cfg, 6, 7, 1);
    CHECK(ds.header.M == 32);
    CHECK(ds.header.K_max == 20);
    CHECK(ds.header.T_p == 18);
    CHECK(ds.header.count == 6);
    CHECK(ds.header.config_hash == config_hash(cfg));
    write_dataset(dir.path / "a.bin", ds);
    write_dataset(dir.path / "b.bin", generate_dataset(cfg, 6, 7, 3));
    CHECK(slurp(dir.path / "a.bin") == slurp(dir.path / "b.bin"));
    const auto back = read_dataset(dir.path / "a.bin");
    REQUIRE(back.samples.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(back.samples[i].B == ds.samples[i].B);
        CHECK(back.samples[i].Phi == ds.samples[i].Phi);
        CHECK(back.samples[i].K_act == ds.samples[i].K_act);
        CHECK(back.samples[i].B == generate_indexed_sample(cfg, 7, i).B);
    }
}

TEST_CASE("degenerate K sampling gives full records") {
    auto cfg = scenario_preset(3);
    cfg.K_min = cfg.K_max;
    for (const auto& s : generate_dataset(cfg, 5, 3, 1).samples) CHECK(s.K_act == cfg.K_max);
}

TEST_CASE("corrupt datasets are rejected") {
    TempDir dir;
    const auto ds = generate_dataset(scenario_preset(1), 3, 1, 1);
    write_dataset(dir.path / "d.bin", ds);
    const std::string good = slurp(dir.path / "d.bin");
    dump(dir.path / "trunc.bin", good.substr(0, good.size() - 8));
    CHECK_THROWS_AS(read_dataset(dir.path / "trunc.bin"), IoError);
    dump(dir.path / "trail.bin", good + "x");
    CHECK_THROWS_AS(read_dataset(dir.path / "trail.bin"), IoError);
    std::string magic = good;
    magic[2] = '?';
    dump(dir.path / "magic.bin", magic);
    CHECK_THROWS_AS(read_dataset(dir.path / "magic.bin"), IoError);
}

TEST_CASE("write failures leave no final file") {
    const auto ds = generate_dataset(scenario_preset(1), 2, 1, 1);
    CHECK_THROWS_AS(write_dataset("/nonexistent_dir_cfgat/x.bin", ds), IoError);
    CHECK_FALSE(fs::exists("/nonexistent_dir_cfgat/x.bin"));
}

TEST_CASE("held-out split takes the last records") {
    Dataset ds;
    ds.samples.resize(100);
    CHECK(ds.holdout_begin() == 95);
    ds.samples.resize(30);
    CHECK(ds.holdout_begin() == 28);
    ds.samples.resize(5000);
    CHECK(ds.holdout_begin() == 4750);
}

TEST_CASE("parallel_for covers every index once and rethrows") {
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
    CHECK_THROWS_AS(parallel_for(10, 3,
                                 [](std::size_t i) {
                                     if (i == 7) throw NumericError("boom");
                                 }),
                    NumericError);
}
