#include "cfgat/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include "binary_io.hpp"
#include "cfgat/config.hpp"
#include "cfgat/errors.hpp"

namespace cfgat {

namespace {

constexpr char kMagic[8] = {'C', 'F', 'G', 'A', 'T', 'D', 'S', 'T'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::size_t Dataset::holdout_begin(double fraction) const {
    const std::size_t n = samples.size();
    const auto held = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
    return n - std::min(held, n);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr first;
    std::mutex mu;
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!first) first = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
    const auto partial = std::filesystem::path(path.string() + ".partial");
    {
        std::ofstream os(partial, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + partial.string() + " for writing");
        const auto& h = ds.header;
        io::put_bytes(os, kMagic, sizeof kMagic);
        io::put<std::uint32_t>(os, kVersion);
        io::put<std::uint32_t>(os, static_cast<std::uint32_t>(h.M));
        io::put<std::uint32_t>(os, static_cast<std::uint32_t>(h.K_max));
        io::put<std::uint32_t>(os, static_cast<std::uint32_t>(h.T_p));
        io::put<std::uint64_t>(os, ds.samples.size());
        io::put<std::uint64_t>(os, h.config_hash);
        for (const auto& s : ds.samples) {
            if (s.M != h.M || s.K_max != h.K_max)
                throw ShapeError("dataset record " + shape_str(s.M, s.K_max) + " does not match header " +
                                 shape_str(h.M, h.K_max));
            io::put<std::uint64_t>(os, static_cast<std::uint64_t>(s.K_act));
            io::put_bytes(os, s.B.data(), s.B.size() * sizeof(double));
            io::put_bytes(os, s.Phi.data(), s.Phi.size() * sizeof(double));
        }
        os.flush();
        if (!os) throw IoError("write failed for " + partial.string());
    }
    std::error_code ec;
    std::filesystem::rename(partial, path, ec);
    if (ec) throw IoError("cannot move " + partial.string() + " to " + path.string() + ": " + ec.message());
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open dataset " + path.string());
    char magic[8];
    io::get_bytes(is, magic, sizeof magic, "dataset magic");
    if (!std::equal(magic, magic + 8, kMagic)) throw IoError(path.string() + " is not a dataset (bad magic)");
    const auto version = io::get<std::uint32_t>(is, "dataset version");
    if (version != kVersion) throw IoError("unsupported dataset version " + std::to_string(version));
    Dataset ds;
    auto& h = ds.header;
    h.M = static_cast<int>(io::get<std::uint32_t>(is, "M"));
    h.K_max = static_cast<int>(io::get<std::uint32_t>(is, "K_max"));
    h.T_p = static_cast<int>(io::get<std::uint32_t>(is, "T_p"));
    h.count = io::get<std::uint64_t>(is, "record count");
    h.config_hash = io::get<std::uint64_t>(is, "config hash");
    if (h.M < 1 || h.K_max < 1 || h.T_p < 1) throw IoError("dataset header has non-positive dimensions");
    const auto M = static_cast<std::size_t>(h.M), K = static_cast<std::size_t>(h.K_max);
    ds.samples.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(h.count, 1u << 24)));
    for (std::uint64_t r = 0; r < h.count; ++r) {
        const std::string what = "record " + std::to_string(r);
        ScenarioSample s;
        s.M = h.M;
        s.K_max = h.K_max;
        s.K_act = static_cast<int>(io::get<std::uint64_t>(is, what));
        s.B = Mat(M, K);
        s.Phi = Mat(K, K);
        io::get_bytes(is, s.B.data(), s.B.size() * sizeof(double), what);
        io::get_bytes(is, s.Phi.data(), s.Phi.size() * sizeof(double), what);
        try {
            validate_sample(s);
        } catch (const ShapeError& e) {
            throw ShapeError(what + ": " + e.what());
        }
        ds.samples.push_back(std::move(s));
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw IoError("dataset " + path.string() + " has trailing bytes after " + std::to_string(h.count) + " records");
    return ds;
}

Dataset generate_dataset(const RadioConfig& cfg, std::uint64_t count, std::uint64_t seed, int threads) {
    if (count < 1) throw ConfigError("generate_dataset: count must be >= 1");
    cfg.validate();
    Dataset ds;
    ds.header = {cfg.M, cfg.K_max, cfg.T_p, count, config_hash(cfg)};
    ds.samples.resize(static_cast<std::size_t>(count));
    parallel_for(ds.samples.size(), threads, [&](std::size_t i) {
        ds.samples[i] = generate_indexed_sample(cfg, seed, i);
    });
    return ds;
}

}  // namespace cfgat
