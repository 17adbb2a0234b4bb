#include "lora3d/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "lora3d/errors.hpp"

namespace lora3d {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& v, int line) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') {
        throw ConfigError("expected a number, got '" + v + "'", line);
    }
    return x;
}

long long parse_int(const std::string& v, int line) {
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') {
        throw ConfigError("expected an integer, got '" + v + "'", line);
    }
    return x;
}

bool parse_bool(const std::string& v, int line) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("expected true/false, got '" + v + "'", line);
}

std::array<std::size_t, 3> parse_extents(const std::string& v, int line) {
    std::istringstream in(v);
    std::array<std::size_t, 3> e{};
    long long a = 0, b = 0, c = 0;
    if (!(in >> a >> b >> c) || a < 1 || b < 1 || c < 1) {
        throw ConfigError("expected three positive extents 'D H W', got '" + v + "'", line);
    }
    std::string rest;
    if (in >> rest) throw ConfigError("trailing text after extents: '" + rest + "'", line);
    e = {static_cast<std::size_t>(a), static_cast<std::size_t>(b), static_cast<std::size_t>(c)};
    return e;
}

std::vector<std::string> parse_list(const std::string& v) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= v.size()) {
        std::size_t end = v.find(',', start);
        if (end == std::string::npos) end = v.size();
        const std::string item = trim(v.substr(start, end - start));
        if (!item.empty()) out.push_back(item);
        start = end + 1;
    }
    return out;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("unterminated section header", line_no);
            section = trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "train") {
                throw ConfigError("unknown section [" + section + "]", line_no);
            }
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) throw ConfigError("key '" + key + "' outside any section", line_no);

        if (section == "model") {
            if (key == "preset") {
                cfg.model.preset = value;
            } else if (key == "rank") {
                const long long r = parse_int(value, line_no);
                if (r < 0) throw ConfigError("rank must be >= 0", line_no);
                cfg.model.rank = static_cast<int>(r);
            } else if (key == "lora_scale") {
                const double s = parse_double(value, line_no);
                if (s <= 0.0) throw ConfigError("lora_scale must be positive", line_no);
                cfg.model.lora_scale = static_cast<float>(s);
            } else if (key == "input_channels") {
                const long long c = parse_int(value, line_no);
                if (c < 1) throw ConfigError("input_channels must be >= 1", line_no);
                cfg.model.input_channels = static_cast<int>(c);
            } else if (key == "input_extents") {
                cfg.model.input_extents = parse_extents(value, line_no);
            } else if (key == "backbone_weights") {
                cfg.model.backbone_weights = value;
            } else if (key == "adapter_exclude") {
                cfg.model.adapter_exclude = parse_list(value);
            } else {
                throw ConfigError("unknown key '" + key + "' in [model]", line_no);
            }
        } else {
            if (key == "epochs") {
                const long long e = parse_int(value, line_no);
                if (e < 1) throw ConfigError("epochs must be >= 1", line_no);
                cfg.train.epochs = static_cast<int>(e);
            } else if (key == "batch_size") {
                const long long b = parse_int(value, line_no);
                if (b < 1) throw ConfigError("batch_size must be >= 1", line_no);
                cfg.train.batch_size = static_cast<int>(b);
            } else if (key == "seed") {
                cfg.train.seed = static_cast<std::uint64_t>(parse_int(value, line_no));
            } else if (key == "folds") {
                const long long k = parse_int(value, line_no);
                if (k < 2) throw ConfigError("folds must be >= 2", line_no);
                cfg.train.folds = static_cast<int>(k);
            } else if (key == "lr_lora") {
                cfg.train.lr_lora = parse_double(value, line_no);
            } else if (key == "lr_head") {
                cfg.train.lr_head = parse_double(value, line_no);
            } else if (key == "weight_decay") {
                cfg.train.weight_decay = parse_double(value, line_no);
            } else if (key == "beta1") {
                cfg.train.beta1 = parse_double(value, line_no);
            } else if (key == "beta2") {
                cfg.train.beta2 = parse_double(value, line_no);
            } else if (key == "eps") {
                cfg.train.eps = parse_double(value, line_no);
            } else if (key == "dropout") {
                const double d = parse_double(value, line_no);
                if (d < 0.0 || d >= 1.0) throw ConfigError("dropout must be in [0, 1)", line_no);
                cfg.train.dropout = d;
            } else if (key == "normalize") {
                cfg.train.normalize = parse_bool(value, line_no);
            } else if (key == "threshold") {
                cfg.train.threshold = parse_double(value, line_no);
            } else if (key == "include_backbone") {
                cfg.train.include_backbone = parse_bool(value, line_no);
            } else {
                throw ConfigError("unknown key '" + key + "' in [train]", line_no);
            }
        }
    }
    if (cfg.model.preset != "resnet50-3d" && cfg.model.preset != "tiny") {
        throw ConfigError("unknown preset '" + cfg.model.preset + "'");
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

std::string serialize_config(const RunConfig& cfg) {
    std::string s;
    s += "[model]\n";
    s += "preset = " + cfg.model.preset + "\n";
    s += "rank = " + std::to_string(cfg.model.rank) + "\n";
    s += "lora_scale = " + format_double(cfg.model.lora_scale) + "\n";
    s += "input_channels = " + std::to_string(cfg.model.input_channels) + "\n";
    s += "input_extents = " + std::to_string(cfg.model.input_extents[0]) + " " +
         std::to_string(cfg.model.input_extents[1]) + " " +
         std::to_string(cfg.model.input_extents[2]) + "\n";
    s += "backbone_weights = " + cfg.model.backbone_weights + "\n";
    s += "adapter_exclude = ";
    for (std::size_t i = 0; i < cfg.model.adapter_exclude.size(); ++i) {
        if (i) s += ",";
        s += cfg.model.adapter_exclude[i];
    }
    s += "\n";
    s += "[train]\n";
    s += "epochs = " + std::to_string(cfg.train.epochs) + "\n";
    s += "batch_size = " + std::to_string(cfg.train.batch_size) + "\n";
    s += "seed = " + std::to_string(cfg.train.seed) + "\n";
    s += "folds = " + std::to_string(cfg.train.folds) + "\n";
    s += "lr_lora = " + format_double(cfg.train.lr_lora) + "\n";
    s += "lr_head = " + format_double(cfg.train.lr_head) + "\n";
    s += "weight_decay = " + format_double(cfg.train.weight_decay) + "\n";
    s += "beta1 = " + format_double(cfg.train.beta1) + "\n";
    s += "beta2 = " + format_double(cfg.train.beta2) + "\n";
    s += "eps = " + format_double(cfg.train.eps) + "\n";
    s += "dropout = " + format_double(cfg.train.dropout) + "\n";
    s += "normalize = " + std::string(cfg.train.normalize ? "true" : "false") + "\n";
    s += "threshold = " + format_double(cfg.train.threshold) + "\n";
    s += "include_backbone = " + std::string(cfg.train.include_backbone ? "true" : "false") +
         "\n";
    return s;
}

std::string config_hash(const RunConfig& cfg) {
    const std::string text = serialize_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace lora3d
