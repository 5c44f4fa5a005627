#include "finnet/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "finnet/network.hpp"

namespace finnet {

namespace {

constexpr char kMagic[4] = {'F', 'N', 'C', 'K'};

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}
void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

struct Reader {
    std::ifstream& is;
    void bytes(void* p, size_t n) {
        is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(is.gcount()) != n)
            throw Error("checkpoint file truncated or corrupt");
    }
    std::uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    std::uint64_t u64() {
        std::uint64_t lo = u32();
        return lo | (static_cast<std::uint64_t>(u32()) << 32);
    }
    std::string str() {
        std::uint32_t n = u32();
        if (n > (1u << 28)) throw Error("checkpoint string length implausible, file corrupt");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
};

std::vector<unsigned char> payload_bytes(const Checkpoint& c) {
    std::vector<unsigned char> out;
    for (const auto& e : c.entries) {
        size_t base = out.size();
        out.resize(base + e.data.size() * 4);
        // values are stored little-endian float32
        for (size_t i = 0; i < e.data.size(); ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, &e.data[i], 4);
            out[base + 4 * i] = static_cast<unsigned char>(bits);
            out[base + 4 * i + 1] = static_cast<unsigned char>(bits >> 8);
            out[base + 4 * i + 2] = static_cast<unsigned char>(bits >> 16);
            out[base + 4 * i + 3] = static_cast<unsigned char>(bits >> 24);
        }
    }
    return out;
}

}  // namespace

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

std::uint32_t Checkpoint::payload_checksum() const {
    auto bytes = payload_bytes(*this);
    return static_cast<std::uint32_t>(
        crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

Checkpoint checkpoint_from(Network& net, std::map<std::string, std::string> metadata) {
    Checkpoint c;
    c.spec_text = net.spec().serialize();
    c.metadata = std::move(metadata);
    std::uint64_t offset = 0;
    for (auto& buf : net.buffers()) {
        Checkpoint::Entry e;
        e.name = buf.name;
        e.shape = buf.shape;
        e.offset = offset;
        e.data = *buf.data;
        offset += e.data.size();
        c.entries.push_back(std::move(e));
    }
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open checkpoint file for writing: " + path);
    os.write(kMagic, 4);
    os.put(static_cast<char>(c.version));
    put_str(os, c.spec_text);
    put_u32(os, static_cast<std::uint32_t>(c.metadata.size()));
    for (const auto& [k, v] : c.metadata) {
        put_str(os, k);
        put_str(os, v);
    }
    put_u32(os, static_cast<std::uint32_t>(c.entries.size()));
    for (const auto& e : c.entries) {
        put_str(os, e.name);
        put_u32(os, static_cast<std::uint32_t>(e.shape.size()));
        for (int d : e.shape) put_u32(os, static_cast<std::uint32_t>(d));
        put_u64(os, e.offset);
        put_u64(os, e.data.size());
    }
    auto bytes = payload_bytes(c);
    put_u64(os, bytes.size());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    put_u32(os, static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size()))));
    if (!os) throw Error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint file: " + path);
    Reader r{is};
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw Error("not a checkpoint file (bad magic): " + path);
    Checkpoint c;
    unsigned char ver;
    r.bytes(&ver, 1);
    if (ver != 1)
        throw Error("checkpoint version " + std::to_string(ver) + " is not supported (expected 1)");
    c.version = ver;
    c.spec_text = r.str();
    std::uint32_t nmeta = r.u32();
    for (std::uint32_t i = 0; i < nmeta; ++i) {
        std::string k = r.str();
        c.metadata[k] = r.str();
    }
    std::uint32_t nent = r.u32();
    std::uint64_t expected_offset = 0;
    for (std::uint32_t i = 0; i < nent; ++i) {
        Checkpoint::Entry e;
        e.name = r.str();
        std::uint32_t nd = r.u32();
        for (std::uint32_t d = 0; d < nd; ++d) e.shape.push_back(static_cast<int>(r.u32()));
        e.offset = r.u64();
        std::uint64_t count = r.u64();
        if (e.offset != expected_offset)
            throw Error("checkpoint manifest offsets overlap or leave gaps: " + path);
        if (static_cast<std::uint64_t>(numel(e.shape)) != count)
            throw Error("checkpoint manifest shape/count mismatch for '" + e.name + "'");
        expected_offset += count;
        e.data.resize(count);
        c.entries.push_back(std::move(e));
    }
    std::uint64_t payload_len = r.u64();
    if (payload_len != expected_offset * 4)
        throw Error("checkpoint payload length disagrees with manifest: " + path);
    std::vector<unsigned char> bytes(payload_len);
    r.bytes(bytes.data(), bytes.size());
    std::uint32_t stored = r.u32();
    std::uint32_t computed =
        static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
    if (stored != computed) throw Error("checkpoint payload checksum mismatch, file corrupt: " + path);
    for (auto& e : c.entries) {
        for (size_t i = 0; i < e.data.size(); ++i) {
            size_t b = (e.offset + i) * 4;
            std::uint32_t bits = static_cast<std::uint32_t>(bytes[b]) |
                                 (static_cast<std::uint32_t>(bytes[b + 1]) << 8) |
                                 (static_cast<std::uint32_t>(bytes[b + 2]) << 16) |
                                 (static_cast<std::uint32_t>(bytes[b + 3]) << 24);
            std::memcpy(&e.data[i], &bits, 4);
        }
    }
    return c;
}

}  // namespace finnet
