#include "frmlp/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace frmlp::io {

namespace {

constexpr std::uint32_t kSupportedVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    std::uint64_t pos = 0;
    const std::string& path;

    void need(std::uint64_t n, const char* what) const {
        if (pos + n > buf.size())
            throw FormatError(path + ": truncated file while reading " + std::string(what), pos);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::string bytes(std::uint64_t n, const char* what) {
        need(n, what);
        std::string out = buf.substr(pos, n);
        pos += n;
        return out;
    }
};

Tensor meta_scalar(double v) { return Tensor::scalar(v, DType::F64); }

}  // namespace

Tensor Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw UsageError("checkpoint has no tensor named " + name);
}

bool Checkpoint::contains(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::vector<std::pair<std::string, Tensor>> all = ckpt.tensors;
    all.emplace_back("__meta.config_hash", meta_scalar(static_cast<double>(ckpt.config_hash)));
    all.emplace_back("__meta.iteration", meta_scalar(static_cast<double>(ckpt.iteration)));
    all.emplace_back("__meta.optimizer_step",
                     meta_scalar(static_cast<double>(ckpt.optimizer_step)));

    std::string out;
    out += "FRMC";
    put_u32(out, ckpt.version);
    put_u32(out, static_cast<std::uint32_t>(all.size()));
    for (const auto& [name, t] : all) {
        if (name.size() > 0xffff) throw UsageError("tensor name too long: " + name);
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(t.dtype() == DType::F32 ? 0 : 1));
        out.push_back(static_cast<char>(t.rank()));
        for (auto d : t.dims()) put_u32(out, static_cast<std::uint32_t>(d));
        const auto* impl = t.impl();
        out.append(reinterpret_cast<const char*>(impl->data.data()), impl->data.size());
    }
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
    put_u32(out, crc);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf, 0, path};
    const std::string magic = r.bytes(4, "magic");
    if (magic != "FRMC") throw FormatError(path + ": bad magic", 0);
    Checkpoint ckpt;
    ckpt.version = r.u32("version");
    if (ckpt.version != kSupportedVersion)
        throw VersionError(path + ": unsupported checkpoint version " +
                           std::to_string(ckpt.version));
    const std::uint32_t count = r.u32("tensor count");

    if (buf.size() < 4) throw FormatError(path + ": missing checksum", buf.size());
    const std::uint64_t crc_offset = buf.size() - 4;
    {
        Reader cr{buf, crc_offset, path};
        const std::uint32_t stored = cr.u32("checksum");
        const std::uint32_t computed = static_cast<std::uint32_t>(crc32(
            0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(crc_offset)));
        if (stored != computed) throw FormatError(path + ": checksum mismatch", crc_offset);
    }

    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16("name length");
        const std::string name = r.bytes(name_len, "name");
        const std::uint8_t dtype_code = r.u8("dtype");
        if (dtype_code > 1) throw FormatError(path + ": unknown dtype code", r.pos - 1);
        const DType dt = dtype_code == 0 ? DType::F32 : DType::F64;
        const std::uint8_t rank = r.u8("rank");
        Shape dims;
        for (std::uint8_t k = 0; k < rank; ++k)
            dims.push_back(static_cast<std::int64_t>(r.u32("extent")));
        Tensor t = Tensor::zeros(dims, dt);
        const std::uint64_t payload = static_cast<std::uint64_t>(t.impl()->data.size());
        r.need(payload, "payload");
        std::memcpy(t.impl()->data.data(), buf.data() + r.pos, payload);
        r.pos += payload;

        if (name == "__meta.config_hash")
            ckpt.config_hash = static_cast<std::uint32_t>(t.item());
        else if (name == "__meta.iteration")
            ckpt.iteration = static_cast<std::int64_t>(t.item());
        else if (name == "__meta.optimizer_step")
            ckpt.optimizer_step = static_cast<std::int64_t>(t.item());
        else
            ckpt.tensors.emplace_back(name, t);
    }
    if (r.pos != crc_offset)
        throw FormatError(path + ": trailing bytes after tensor table", r.pos);
    return ckpt;
}

std::uint32_t fingerprint(const std::string& text) {
    std::uint32_t h = 2166136261u;
    for (unsigned char c : text) {
        h ^= c;
        h *= 16777619u;
    }
    return h;
}

}  // namespace frmlp::io
