#include <fstream>
#include <ostream>

#include "binary_io.hpp"
#include "cfgat/checkpoint.hpp"
#include "cfgat/config.hpp"
#include "cfgat/errors.hpp"

namespace cfgat {

namespace {

constexpr char kMagic[8] = {'C', 'F', 'G', 'A', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const GatParams& params, int K_max, std::uint64_t config_hash) {
    const auto partial = std::filesystem::path(path.string() + ".partial");
    {
        std::ofstream os(partial, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + partial.string() + " for writing");
        io::put_bytes(os, kMagic, sizeof kMagic);
        io::put<std::uint32_t>(os, kVersion);
        io::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.M));
        io::put<std::uint32_t>(os, static_cast<std::uint32_t>(K_max));
        io::put<std::uint32_t>(os, static_cast<std::uint32_t>(kLayerWidths.size()));
        for (int w : kLayerWidths) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(w));
        io::put<std::uint64_t>(os, config_hash);
        io::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.tensors.size()));
        for (const auto& [name, t] : params.tensors) {
            io::put_string(os, name);
            io::put<std::uint64_t>(os, t.rows());
            io::put<std::uint64_t>(os, t.cols());
            io::put_bytes(os, t.data(), t.size() * sizeof(double));
        }
        os.flush();
        if (!os) throw IoError("write failed for " + partial.string());
    }
    std::error_code ec;
    std::filesystem::rename(partial, path, ec);
    if (ec) throw IoError("cannot move " + partial.string() + " to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    io::get_bytes(is, magic, sizeof magic, "checkpoint magic");
    if (!std::equal(magic, magic + 8, kMagic)) throw IoError(path.string() + " is not a checkpoint (bad magic)");
    const auto version = io::get<std::uint32_t>(is, "checkpoint version");
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kVersion));
    Checkpoint ck;
    ck.params.M = static_cast<int>(io::get<std::uint32_t>(is, "M"));
    ck.K_max = static_cast<int>(io::get<std::uint32_t>(is, "K_max"));
    const auto nw = io::get<std::uint32_t>(is, "layer count");
    if (nw > 64) throw IoError("implausible layer count in checkpoint");
    for (std::uint32_t i = 0; i < nw; ++i) ck.widths.push_back(static_cast<int>(io::get<std::uint32_t>(is, "width")));
    ck.config_hash = io::get<std::uint64_t>(is, "config hash");
    if (ck.params.M < 1 || ck.K_max < 1) throw IoError("checkpoint header has non-positive M or K_max");
    const std::vector<int> expected_widths(kLayerWidths.begin(), kLayerWidths.end());
    if (ck.widths != expected_widths) throw ShapeError("checkpoint layer widths differ from this build");

    const auto layout = param_layout(ck.params.M);
    const auto count = io::get<std::uint32_t>(is, "tensor count");
    if (count != layout.size())
        throw ShapeError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                         std::to_string(layout.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = io::get_string(is, "tensor name");
        const auto rows = io::get<std::uint64_t>(is, name + " rows");
        const auto cols = io::get<std::uint64_t>(is, name + " cols");
        auto it = std::find_if(layout.begin(), layout.end(), [&](const auto& e) { return e.first == name; });
        if (it == layout.end()) throw ShapeError("checkpoint has unknown tensor '" + name + "'");
        if (it->second.first != rows || it->second.second != cols)
            throw ShapeError("tensor '" + name + "': expected " + shape_str(it->second.first, it->second.second) +
                             ", file has " + shape_str(rows, cols));
        Mat t(rows, cols);
        io::get_bytes(is, t.data(), t.size() * sizeof(double), name);
        ck.params.tensors.emplace(std::move(name), std::move(t));
    }
    return ck;
}

bool check_compatible(const Checkpoint& ckpt, int M, int K_max, std::uint64_t config_hash, std::ostream* warn) {
    if (ckpt.params.M != M)
        throw ShapeError("checkpoint M mismatch: expected " + std::to_string(M) + ", checkpoint has " +
                         std::to_string(ckpt.params.M));
    if (ckpt.K_max != K_max)
        throw ShapeError("checkpoint K_max mismatch: expected " + std::to_string(K_max) + ", checkpoint has " +
                         std::to_string(ckpt.K_max));
    if (ckpt.config_hash != config_hash) {
        if (warn)
            *warn << "warning: checkpoint config hash " << hex64(ckpt.config_hash) << " differs from " << hex64(config_hash)
                  << '\n';
        return false;
    }
    return true;
}

}  // namespace cfgat
