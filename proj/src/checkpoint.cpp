#include "astromae/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace astromae {

namespace {

constexpr char kMagic[4] = {'A', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint16_t read_u16(std::istream& is, const std::string& what) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) {
        throw FileTruncationError("checkpoint truncated while reading " + what);
    }
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw FileTruncationError("checkpoint truncated while reading " + what);
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(ckpt.entries.size()));
    for (const auto& [name, entry] : ckpt.entries) {
        write_u16(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(entry.shape.size()));
        for (std::int64_t d : entry.shape) write_u32(os, static_cast<std::uint32_t>(d));
        static_assert(sizeof(float) == 4);
        os.write(reinterpret_cast<const char*>(entry.data.data()),
                 static_cast<std::streamsize>(entry.data.size() * 4));
    }
    os.close();
    if (!os) throw DataError("failed writing '" + path + "'");

    nlohmann::json manifest;
    manifest["format_version"] = kVersion;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& [name, entry] : ckpt.entries) {
        params.push_back({{"name", name}, {"shape", entry.shape}});
    }
    manifest["params"] = params;
    for (const auto& [k, v] : ckpt.metadata) manifest[k] = v;
    std::ofstream js(path + ".json");
    if (!js) throw DataError("cannot open '" + path + ".json' for writing");
    js << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint '" + path + "'");
    char magic[4];
    if (!is.read(magic, 4)) throw FileTruncationError("checkpoint '" + path + "' shorter than header");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FileMagicError("'" + path + "' is not an AMCK checkpoint");
    }
    const std::uint32_t version = read_u32(is, "version");
    if (version != kVersion) {
        throw FileVersionError("checkpoint '" + path + "' has version " + std::to_string(version) +
                               ", expected " + std::to_string(kVersion));
    }
    const std::uint32_t count = read_u32(is, "parameter count");
    Checkpoint ckpt;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = read_u16(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) {
            throw FileTruncationError("checkpoint truncated in parameter name");
        }
        int rank = is.get();
        if (rank == EOF) throw FileTruncationError("checkpoint truncated at rank byte");
        CheckpointEntry entry;
        std::int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            entry.shape.push_back(read_u32(is, "dimension"));
            numel *= entry.shape.back();
        }
        entry.data.resize(static_cast<std::size_t>(numel));
        if (!is.read(reinterpret_cast<char*>(entry.data.data()),
                     static_cast<std::streamsize>(numel * 4))) {
            throw FileTruncationError("checkpoint truncated in parameter '" + name + "'");
        }
        ckpt.entries.emplace_back(std::move(name), std::move(entry));
    }

    std::ifstream js(path + ".json");
    if (js) {
        nlohmann::json manifest = nlohmann::json::parse(js, nullptr, false);
        if (!manifest.is_discarded()) {
            for (auto& [k, v] : manifest.items()) {
                if (v.is_string()) ckpt.metadata[k] = v.get<std::string>();
            }
        }
    }
    return ckpt;
}

}  // namespace astromae
