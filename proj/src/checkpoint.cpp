#include "lora3d/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "lora3d/errors.hpp"

namespace lora3d {

namespace {

constexpr char kMagic[4] = {'L', '3', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

// Bounds-checked little-endian reader that tracks its byte offset for
// error reporting.
struct Reader {
    const std::string& buf;
    const std::string& origin;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size()) {
            throw FormatError("truncated checkpoint " + origin + " while reading " + what, pos);
        }
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
        pos += 2;
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
        pos += 4;
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) |
               (static_cast<std::uint32_t>(p[3]) << 24);
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

}  // namespace

std::size_t NamedTensor::numel() const {
    std::size_t n = 1;
    for (std::uint64_t e : extents) n *= static_cast<std::size_t>(e);
    return n;
}

NamedTensor NamedTensor::from(const Tensor& t) {
    NamedTensor nt;
    nt.extents.assign(t.shape().begin(), t.shape().end());
    nt.dtype = DType::f32;
    nt.raw.resize(t.size() * sizeof(float));
    std::memcpy(nt.raw.data(), t.data(), nt.raw.size());
    return nt;
}

NamedTensor NamedTensor::from(const TensorD& t) {
    NamedTensor nt;
    nt.extents.assign(t.shape().begin(), t.shape().end());
    nt.dtype = DType::f64;
    nt.raw.resize(t.size() * sizeof(double));
    std::memcpy(nt.raw.data(), t.data(), nt.raw.size());
    return nt;
}

Tensor NamedTensor::to_f32() const {
    if (dtype != DType::f32) throw ValueError("tensor is not 32-bit float");
    Shape shape(extents.begin(), extents.end());
    Tensor t(shape);
    std::memcpy(t.data(), raw.data(), raw.size());
    return t;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string meta;
    for (const auto& [key, value] : ckpt.metadata) {
        if (key.find('\n') != std::string::npos || key.find(" = ") != std::string::npos ||
            value.find('\n') != std::string::npos) {
            throw ValueError("metadata entry '" + key + "' contains reserved characters");
        }
        meta += key + " = " + value + "\n";
    }
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(meta.size()));
    out += meta;
    put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    // std::map iteration is already lexicographic by name.
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.size() > 0xffff) throw ValueError("tensor name too long: " + name);
        if (t.raw.size() != t.numel() * dtype_size(t.dtype)) {
            throw ValueError("tensor '" + name + "' raw size does not match extents");
        }
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(t.extents.size()));
        for (std::uint64_t e : t.extents) put_u64(out, e);
        out.push_back(static_cast<char>(t.dtype));
        out += t.raw;
    }
    return out;
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin) {
    Reader r{bytes, origin};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("bad checkpoint magic in " + origin, 0);
    }
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " +
                              origin,
                          4);
    }
    Checkpoint ckpt;
    const std::uint32_t meta_len = r.u32("metadata length");
    const std::string meta = r.bytes(meta_len, "metadata");
    std::size_t start = 0;
    while (start < meta.size()) {
        std::size_t end = meta.find('\n', start);
        if (end == std::string::npos) end = meta.size();
        const std::string line = meta.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        const std::size_t sep = line.find(" = ");
        if (sep == std::string::npos) {
            throw FormatError("malformed metadata line '" + line + "' in " + origin, r.pos);
        }
        ckpt.metadata[line.substr(0, sep)] = line.substr(sep + 3);
    }
    const std::uint32_t count = r.u32("tensor count");
    std::string prev_name;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t name_offset = r.pos;
        const std::uint16_t name_len = r.u16("tensor name length");
        const std::string name = r.bytes(name_len, "tensor name");
        if (i > 0 && !(prev_name < name)) {
            throw FormatError("tensor names out of lexicographic order at '" + name + "' in " +
                                  origin,
                              name_offset);
        }
        prev_name = name;
        NamedTensor t;
        const std::uint8_t rank = r.u8("tensor rank");
        t.extents.resize(rank);
        for (std::uint8_t a = 0; a < rank; ++a) t.extents[a] = r.u64("tensor extent");
        const std::uint8_t dtype = r.u8("dtype code");
        if (dtype > 1) {
            throw FormatError("unknown dtype code " + std::to_string(dtype) + " for tensor '" +
                                  name + "' in " + origin,
                              r.pos - 1);
        }
        t.dtype = static_cast<DType>(dtype);
        t.raw = r.bytes(t.numel() * dtype_size(t.dtype), "tensor data");
        ckpt.tensors.emplace(name, std::move(t));
    }
    if (r.pos != bytes.size()) {
        throw FormatError("trailing bytes after checkpoint payload in " + origin, r.pos);
    }
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    const std::string bytes = serialize_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes, path);
}

}  // namespace lora3d
