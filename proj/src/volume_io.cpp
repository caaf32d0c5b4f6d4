#include "frmlp/volume_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace frmlp::io {

namespace {

struct Header {
    std::int64_t c, h, w, d;
    std::string dtype;
    std::uint64_t payload_offset;
};

Header read_header(std::istream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": missing FRV1 header", 0);
    std::istringstream hs(line);
    std::string magic;
    Header h{};
    hs >> magic >> h.c >> h.h >> h.w >> h.d >> h.dtype;
    if (magic != "FRV1") throw FormatError(path + ": bad magic '" + magic + "'", 0);
    if (hs.fail() || h.c <= 0 || h.h <= 0 || h.w <= 0 || h.d <= 0)
        throw FormatError(path + ": malformed FRV1 header", 0);
    h.payload_offset = line.size() + 1;
    return h;
}

void read_payload(std::istream& in, const std::string& path, void* dst, std::size_t bytes,
                  std::uint64_t offset) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in.gcount()) != bytes)
        throw FormatError(path + ": truncated payload",
                          offset + static_cast<std::uint64_t>(in.gcount()));
}

}  // namespace

void write_volume(const std::string& path, const Tensor& volume) {
    if (volume.rank() != 4) throw ShapeError("write_volume: expected [C,H,W,D]");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const Shape& d = volume.dims();
    out << "FRV1 " << d[0] << " " << d[1] << " " << d[2] << " " << d[3] << " "
        << dtype_name(volume.dtype()) << "\n";
    const auto* impl = volume.impl();
    out.write(reinterpret_cast<const char*>(impl->data.data()),
              static_cast<std::streamsize>(impl->data.size()));
    if (!out) throw IoError("write failed: " + path);
}

Tensor read_volume(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    const Header h = read_header(in, path);
    DType dt;
    if (h.dtype == "f32")
        dt = DType::F32;
    else if (h.dtype == "f64")
        dt = DType::F64;
    else
        throw FormatError(path + ": volume dtype must be f32 or f64, got " + h.dtype, 5);
    Tensor t = Tensor::zeros({h.c, h.h, h.w, h.d}, dt);
    read_payload(in, path, t.impl()->data.data(), t.impl()->data.size(), h.payload_offset);
    return t;
}

void write_labels(const std::string& path, const LabelMap& labels) {
    if (labels.dims.size() != 3) throw ShapeError("write_labels: expected [H,W,D]");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "FRV1 1 " << labels.dims[0] << " " << labels.dims[1] << " " << labels.dims[2]
        << " u16\n";
    out.write(reinterpret_cast<const char*>(labels.values.data()),
              static_cast<std::streamsize>(labels.values.size() * sizeof(std::uint16_t)));
    if (!out) throw IoError("write failed: " + path);
}

LabelMap read_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    const Header h = read_header(in, path);
    if (h.dtype != "u16") throw FormatError(path + ": label dtype must be u16, got " + h.dtype, 5);
    if (h.c != 1) throw FormatError(path + ": label maps are single-channel", 5);
    LabelMap m;
    m.dims = {h.h, h.w, h.d};
    m.values.resize(static_cast<std::size_t>(m.numel()));
    read_payload(in, path, m.values.data(), m.values.size() * sizeof(std::uint16_t),
                 h.payload_offset);
    return m;
}

}  // namespace frmlp::io
