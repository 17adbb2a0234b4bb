#include "lora3d/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "lora3d/errors.hpp"

namespace fs = std::filesystem;

namespace lora3d {

namespace {

constexpr char kMagic[4] = {'V', 'O', 'L', '1'};
constexpr std::size_t kHeaderSize = 4 + 4 * 4 + 1;   // magic + c,D,H,W + dtype

void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    b[0] = static_cast<char>(v & 0xff);
    b[1] = static_cast<char>((v >> 8) & 0xff);
    b[2] = static_cast<char>((v >> 16) & 0xff);
    b[3] = static_cast<char>((v >> 24) & 0xff);
    out.append(b, 4);
}

std::uint32_t get_u32(const std::string& buf, std::size_t offset) {
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + offset);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("short write to " + path);
}

}  // namespace

void save_volume(const std::string& path, const Tensor& volume) {
    if (volume.rank() != 4) {
        throw ShapeError("save_volume: expected [c, D, H, W], got " + shape_str(volume.shape()));
    }
    std::string bytes;
    bytes.reserve(kHeaderSize + volume.size() * sizeof(float));
    bytes.append(kMagic, 4);
    for (int axis = 0; axis < 4; ++axis) {
        put_u32(bytes, static_cast<std::uint32_t>(volume.dim(static_cast<std::size_t>(axis))));
    }
    bytes.push_back('\0');   // dtype 0 = f32
    static_assert(sizeof(float) == 4);
    const std::size_t payload = volume.size() * sizeof(float);
    const std::size_t base = bytes.size();
    bytes.resize(base + payload);
    std::memcpy(bytes.data() + base, volume.data(), payload);   // host is little-endian
    write_file(path, bytes);
}

Tensor load_volume(const std::string& path) {
    const std::string buf = read_file(path);
    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw FormatError("bad volume magic in " + path, 0);
    }
    if (buf.size() < kHeaderSize) {
        throw FormatError("truncated volume header in " + path, buf.size());
    }
    const std::uint32_t c = get_u32(buf, 4);
    const std::uint32_t d = get_u32(buf, 8);
    const std::uint32_t h = get_u32(buf, 12);
    const std::uint32_t w = get_u32(buf, 16);
    if (c == 0 || d == 0 || h == 0 || w == 0) {
        throw FormatError("zero extent in volume header of " + path, 4);
    }
    if (buf[20] != 0) {
        throw FormatError("unsupported dtype code " + std::to_string(int(buf[20])) + " in " + path,
                          20);
    }
    const std::size_t numel = std::size_t(c) * d * h * w;
    const std::size_t expected = kHeaderSize + numel * sizeof(float);
    if (buf.size() != expected) {
        throw FormatError("volume payload of " + path + " has " +
                              std::to_string(buf.size() - kHeaderSize) + " bytes, expected " +
                              std::to_string(numel * sizeof(float)),
                          std::min(buf.size(), expected));
    }
    Tensor volume({c, d, h, w});
    std::memcpy(volume.data(), buf.data() + kHeaderSize, numel * sizeof(float));
    return volume;
}

Tensor resize_trilinear(const Tensor& volume, std::array<std::size_t, 3> target) {
    if (volume.rank() != 4) {
        throw ShapeError("resize_trilinear: expected [c, D, H, W], got " +
                         shape_str(volume.shape()));
    }
    for (std::size_t t : target) {
        if (t == 0) throw ValueError("resize_trilinear: target extents must be positive");
    }
    const std::size_t c = volume.dim(0);
    const std::array<std::size_t, 3> src{volume.dim(1), volume.dim(2), volume.dim(3)};
    Tensor out({c, target[0], target[1], target[2]});

    // Per-axis source coordinate and interpolation weights.
    struct AxisMap {
        std::vector<std::size_t> lo, hi;
        std::vector<float> frac;
    };
    std::array<AxisMap, 3> maps;
    for (int axis = 0; axis < 3; ++axis) {
        AxisMap& m = maps[static_cast<std::size_t>(axis)];
        const std::size_t T = target[static_cast<std::size_t>(axis)];
        const std::size_t S = src[static_cast<std::size_t>(axis)];
        m.lo.resize(T);
        m.hi.resize(T);
        m.frac.resize(T);
        for (std::size_t t = 0; t < T; ++t) {
            double pos = (T > 1) ? static_cast<double>(t) * static_cast<double>(S - 1) /
                                       static_cast<double>(T - 1)
                                 : static_cast<double>(S - 1) / 2.0;
            std::size_t lo = static_cast<std::size_t>(pos);
            if (lo >= S - 1 && S > 1) lo = S - 2;
            if (S == 1) lo = 0;
            const std::size_t hi = (S == 1) ? 0 : lo + 1;
            m.lo[t] = lo;
            m.hi[t] = hi;
            m.frac[t] = static_cast<float>(pos - static_cast<double>(lo));
        }
    }

    const std::size_t src_vox = src[0] * src[1] * src[2];
    const std::size_t dst_vox = target[0] * target[1] * target[2];
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float* vp = volume.data() + ch * src_vox;
        float* op = out.data() + ch * dst_vox;
        std::size_t o = 0;
        for (std::size_t td = 0; td < target[0]; ++td) {
            const std::size_t d0 = maps[0].lo[td], d1 = maps[0].hi[td];
            const float fd = maps[0].frac[td];
            for (std::size_t th = 0; th < target[1]; ++th) {
                const std::size_t h0 = maps[1].lo[th], h1 = maps[1].hi[th];
                const float fh = maps[1].frac[th];
                for (std::size_t tw = 0; tw < target[2]; ++tw, ++o) {
                    const std::size_t w0 = maps[2].lo[tw], w1 = maps[2].hi[tw];
                    const float fw = maps[2].frac[tw];
                    auto at = [&](std::size_t d, std::size_t h, std::size_t w) {
                        return vp[(d * src[1] + h) * src[2] + w];
                    };
                    const float c00 = at(d0, h0, w0) * (1 - fw) + at(d0, h0, w1) * fw;
                    const float c01 = at(d0, h1, w0) * (1 - fw) + at(d0, h1, w1) * fw;
                    const float c10 = at(d1, h0, w0) * (1 - fw) + at(d1, h0, w1) * fw;
                    const float c11 = at(d1, h1, w0) * (1 - fw) + at(d1, h1, w1) * fw;
                    const float c0 = c00 * (1 - fh) + c01 * fh;
                    const float c1 = c10 * (1 - fh) + c11 * fh;
                    op[o] = c0 * (1 - fd) + c1 * fd;
                }
            }
        }
    }
    return out;
}

Tensor normalize_volume(const Tensor& volume) {
    if (volume.rank() != 4) {
        throw ShapeError("normalize_volume: expected [c, D, H, W], got " +
                         shape_str(volume.shape()));
    }
    const std::size_t c = volume.dim(0);
    const std::size_t vox = volume.size() / c;
    Tensor out(volume.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float* src = volume.data() + ch * vox;
        float* dst = out.data() + ch * vox;
        double m = 0.0;
        for (std::size_t i = 0; i < vox; ++i) m += src[i];
        m /= static_cast<double>(vox);
        double var = 0.0;
        for (std::size_t i = 0; i < vox; ++i) {
            const double d = src[i] - m;
            var += d * d;
        }
        var /= static_cast<double>(vox);
        const double inv = 1.0 / (std::sqrt(var) + 1e-8);
        for (std::size_t i = 0; i < vox; ++i) {
            dst[i] = static_cast<float>((src[i] - m) * inv);
        }
    }
    return out;
}

std::string Manifest::volume_path(const ManifestRow& row) const {
    fs::path p(row.path);
    if (p.is_absolute() || base_dir.empty()) return row.path;
    return (fs::path(base_dir) / p).string();
}

std::size_t Manifest::count_label(int label) const {
    std::size_t n = 0;
    for (const auto& r : rows) n += (r.label == label) ? 1 : 0;
    return n;
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest: " + path);
    Manifest m;
    m.base_dir = fs::path(path).parent_path().string();
    std::string line;
    int line_no = 0;
    bool saw_header = false;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;   // provenance comments
        if (!saw_header) {
            if (line != "subject_id,label,path") {
                throw ConfigError("manifest header must be 'subject_id,label,path'", line_no);
            }
            saw_header = true;
            continue;
        }
        const std::size_t c1 = line.find(',');
        const std::size_t c2 = (c1 == std::string::npos) ? std::string::npos
                                                         : line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            throw ConfigError("manifest row needs 3 comma-separated fields", line_no);
        }
        ManifestRow row;
        row.id = line.substr(0, c1);
        const std::string label_str = line.substr(c1 + 1, c2 - c1 - 1);
        row.path = line.substr(c2 + 1);
        if (label_str != "0" && label_str != "1") {
            throw ConfigError("label must be 0 or 1, got '" + label_str + "'", line_no);
        }
        row.label = label_str == "1" ? 1 : 0;
        if (row.id.empty()) throw ConfigError("empty subject id", line_no);
        if (!seen.insert(row.id).second) {
            throw ConfigError("duplicate subject id '" + row.id + "'", line_no);
        }
        m.rows.push_back(std::move(row));
    }
    return m;
}

void save_manifest(const std::string& path, const Manifest& manifest) {
    std::string out = "subject_id,label,path\n";
    for (const auto& r : manifest.rows) {
        out += r.id + "," + std::to_string(r.label) + "," + r.path + "\n";
    }
    write_file(path, out);
}

FoldSplit stratified_kfold(const Manifest& manifest, int k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("stratified_kfold: k must be at least 2");
    std::map<int, std::vector<std::string>> by_class;
    for (const auto& r : manifest.rows) by_class[r.label].push_back(r.id);
    for (const auto& [label, ids] : by_class) {
        if (ids.size() < static_cast<std::size_t>(k)) {
            throw ConfigError("class " + std::to_string(label) + " has " +
                              std::to_string(ids.size()) + " subjects, fewer than k = " +
                              std::to_string(k));
        }
    }
    RandomSource rng(seed);
    FoldSplit split;
    split.seed = seed;
    split.val_folds.assign(static_cast<std::size_t>(k), {});
    for (auto& [label, ids] : by_class) {
        rng.shuffle(ids);
        for (std::size_t j = 0; j < ids.size(); ++j) {
            split.val_folds[j % static_cast<std::size_t>(k)].push_back(ids[j]);
        }
    }
    return split;
}

namespace {

// 3^3 box smoothing with valid-neighbor averaging at the borders.
void box_smooth(std::vector<float>& v, const std::array<std::size_t, 3>& e) {
    std::vector<float> out(v.size());
    for (std::size_t d = 0; d < e[0]; ++d)
        for (std::size_t h = 0; h < e[1]; ++h)
            for (std::size_t w = 0; w < e[2]; ++w) {
                double acc = 0.0;
                int count = 0;
                for (int dd = -1; dd <= 1; ++dd)
                    for (int dh = -1; dh <= 1; ++dh)
                        for (int dw = -1; dw <= 1; ++dw) {
                            const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(d) + dd;
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h) + dh;
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(w) + dw;
                            if (id < 0 || id >= static_cast<std::ptrdiff_t>(e[0]) || ih < 0 ||
                                ih >= static_cast<std::ptrdiff_t>(e[1]) || iw < 0 ||
                                iw >= static_cast<std::ptrdiff_t>(e[2]))
                                continue;
                            acc += v[(static_cast<std::size_t>(id) * e[1] +
                                      static_cast<std::size_t>(ih)) *
                                         e[2] +
                                     static_cast<std::size_t>(iw)];
                            ++count;
                        }
                out[(d * e[1] + h) * e[2] + w] = static_cast<float>(acc / count);
            }
    v = std::move(out);
}

}  // namespace

Manifest synth_generate(const std::string& dir, const SynthConfig& cfg) {
    if (cfg.n_per_class < 1) throw ValueError("synth_generate: n_per_class must be >= 1");
    if (cfg.separation < 0.0) throw ValueError("synth_generate: separation must be >= 0");
    fs::create_directories(fs::path(dir) / "volumes");

    const auto& e = cfg.extents;
    const std::size_t vox = e[0] * e[1] * e[2];

    // Class-1 pattern: normalized Gaussian blob at the volume center.
    std::vector<float> blob(vox);
    {
        const double cd = (static_cast<double>(e[0]) - 1.0) / 2.0;
        const double ch = (static_cast<double>(e[1]) - 1.0) / 2.0;
        const double cw = (static_cast<double>(e[2]) - 1.0) / 2.0;
        const double sigma = static_cast<double>(*std::max_element(e.begin(), e.end())) / 5.0;
        std::size_t i = 0;
        for (std::size_t d = 0; d < e[0]; ++d)
            for (std::size_t h = 0; h < e[1]; ++h)
                for (std::size_t w = 0; w < e[2]; ++w, ++i) {
                    const double r2 = (d - cd) * (d - cd) + (h - ch) * (h - ch) +
                                      (w - cw) * (w - cw);
                    blob[i] = static_cast<float>(std::exp(-r2 / (2.0 * sigma * sigma)));
                }
    }

    RandomSource rng(cfg.seed);
    Manifest manifest;
    manifest.base_dir = dir;
    char name[64];
    for (int label = 0; label <= 1; ++label) {
        for (int idx = 0; idx < cfg.n_per_class; ++idx) {
            Tensor volume({2, e[0], e[1], e[2]});
            for (std::size_t ch = 0; ch < 2; ++ch) {
                std::vector<float> noise(vox);
                for (float& x : noise) x = static_cast<float>(rng.gaussian());
                box_smooth(noise, e);
                std::copy(noise.begin(), noise.end(), volume.data() + ch * vox);
            }
            if (label == 1 && cfg.separation > 0.0) {
                float* ch0 = volume.data();
                float* ch1 = volume.data() + vox;
                const float add = static_cast<float>(0.5 * cfg.separation);
                const float atten =
                    static_cast<float>(std::min(0.9, 0.25 * cfg.separation));
                for (std::size_t i = 0; i < vox; ++i) {
                    ch0[i] += add * blob[i];
                    ch1[i] *= 1.0f - atten * blob[i];
                }
            }
            std::snprintf(name, sizeof(name), "%s_%03d", label == 0 ? "hv" : "adhd", idx);
            const std::string rel = std::string("volumes/") + name + ".vol";
            save_volume((fs::path(dir) / rel).string(), volume);
            manifest.rows.push_back({name, label, rel});
        }
    }
    save_manifest((fs::path(dir) / "manifest.csv").string(), manifest);
    return manifest;
}

}  // namespace lora3d
