#include "imo/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace imo {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("config: bad flag for " + key + ": '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        unsigned long long r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad seed for " + key + ": '" + v + "'");
    }
}

#define INT_KEY(name, help)                                                              \
    {#name, help, [](RunConfig& c, const std::string& v) { c.name = parse_int(#name, v); }, \
     [](const RunConfig& c) { return std::to_string(c.name); }}
#define DBL_KEY(name, help)                                                                 \
    {#name, help, [](RunConfig& c, const std::string& v) { c.name = parse_double(#name, v); }, \
     [](const RunConfig& c) { return fmt_double(c.name); }}
#define BOOL_KEY(name, help)                                                              \
    {#name, help, [](RunConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }, \
     [](const RunConfig& c) { return std::string(c.name ? "1" : "0"); }}
#define STR_KEY(name, help)                                                    \
    {#name, help, [](RunConfig& c, const std::string& v) { c.name = v; },      \
     [](const RunConfig& c) { return c.name; }}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        INT_KEY(image_size, "fundus image side length, multiple of 8"),
        INT_KEY(volume_d, "OCT depth"),
        INT_KEY(volume_h, "OCT height (image_size/2)"),
        INT_KEY(volume_w, "OCT width (image_size/2)"),
        DBL_KEY(disc_r_min, "min disc radius as image fraction"),
        DBL_KEY(disc_r_max, "max disc radius as image fraction"),
        DBL_KEY(cdr_min, "min cup-to-disc ratio"),
        DBL_KEY(cdr_max, "max cup-to-disc ratio"),
        DBL_KEY(noise_amp, "rendering noise amplitude, 0..0.2"),
        DBL_KEY(grade_t1, "grade 0/1 CDR threshold"),
        DBL_KEY(grade_t2, "grade 1/2 CDR threshold"),
        INT_KEY(fused_channels, "fused feature channels"),
        INT_KEY(cmfa_reduction, "channel-gate bottleneck ratio"),
        INT_KEY(se_reduction, "SE-block bottleneck ratio"),
        INT_KEY(eps_w0, "noise net width at full resolution"),
        INT_KEY(eps_w1, "noise net width at 1/2 resolution"),
        INT_KEY(eps_w2, "noise net width at 1/4 resolution"),
        INT_KEY(eps_cond_channels, "projected conditioning channels"),
        INT_KEY(temb_dim, "timestep embedding size"),
        INT_KEY(diffusion_steps, "training diffusion steps T"),
        DBL_KEY(beta_start, "linear beta schedule start"),
        DBL_KEY(beta_end, "linear beta schedule end"),
        INT_KEY(sample_steps, "DDIM inference steps (divides T)"),
        DBL_KEY(lr, "learning rate"),
        INT_KEY(batch_size, "training batch size"),
        INT_KEY(max_steps, "training steps"),
        DBL_KEY(lambda_diff, "noise-prediction loss weight"),
        DBL_KEY(lambda_cls, "grading loss weight"),
        DBL_KEY(lambda_x0, "reconstruction dice loss weight"),
        DBL_KEY(split_fraction, "train fraction of the dataset"),
        {"seed", "root seed for data, init, and training",
         [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
         [](const RunConfig& c) { return std::to_string(c.seed); }},
        BOOL_KEY(no_oct, "ablation: drop the OCT branch"),
        BOOL_KEY(no_grading, "ablation: drop the grading branch"),
        BOOL_KEY(no_segmentation, "ablation: drop the segmentation branch"),
        BOOL_KEY(no_cmfa, "ablation: concatenate features instead of CMFA"),
        BOOL_KEY(no_ird, "ablation: single-pass decoding instead of DDIM"),
        STR_KEY(data_dir, "dataset directory"),
        STR_KEY(out_dir, "output directory"),
        STR_KEY(ckpt_path, "checkpoint file"),
    };
    return keys;
}

#undef INT_KEY
#undef DBL_KEY
#undef BOOL_KEY
#undef STR_KEY

PhantomConfig RunConfig::phantom() const {
    PhantomConfig p;
    p.image_size = image_size;
    p.volume_d = volume_d;
    p.volume_h = volume_h;
    p.volume_w = volume_w;
    p.disc_r_min = disc_r_min;
    p.disc_r_max = disc_r_max;
    p.cdr_min = cdr_min;
    p.cdr_max = cdr_max;
    p.noise_amp = noise_amp;
    p.grade_t1 = grade_t1;
    p.grade_t2 = grade_t2;
    p.seed = seed;
    return p;
}

void RunConfig::validate() const {
    phantom().validate();
    if (volume_h != image_size / 2 || volume_w != image_size / 2)
        throw ValidationError("config: OCT height/width must be image_size/2 so encoder grids align");
    if (volume_d % 4 != 0) throw ValidationError("config: volume_d must be a multiple of 4");
    if (fused_channels < 4 || fused_channels % 4 != 0)
        throw ValidationError("config: fused_channels must be a positive multiple of 4");
    if (fused_channels % cmfa_reduction != 0)
        throw ValidationError("config: cmfa_reduction must divide fused_channels");
    if (fused_channels % se_reduction != 0)
        throw ValidationError("config: se_reduction must divide fused_channels");
    if (diffusion_steps < 1) throw ValidationError("config: diffusion_steps must be >= 1");
    if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
        throw ValidationError("config: need 0 < beta_start <= beta_end < 1");
    if (sample_steps < 1 || sample_steps > diffusion_steps ||
        diffusion_steps % sample_steps != 0)
        throw ValidationError("config: sample_steps must divide diffusion_steps");
    if (batch_size < 1 || max_steps < 0) throw ValidationError("config: bad batch_size/max_steps");
    if (!(split_fraction > 0 && split_fraction < 1))
        throw ValidationError("config: split_fraction must lie in (0,1)");
    if (lambda_diff < 0 || lambda_cls < 0 || lambda_x0 < 0)
        throw ValidationError("config: loss weights must be >= 0");
    if (no_grading && no_segmentation)
        throw ValidationError("config: both branches disabled, nothing to train");
    if (temb_dim < 2 || temb_dim % 2 != 0)
        throw ValidationError("config: temb_dim must be even");
}

std::string RunConfig::dump() const {
    std::string out;
    for (const auto& k : config_keys()) out += std::string(k.key) + "=" + k.get(*this) + "\n";
    return out;
}

void RunConfig::set_kv(const std::string& key, const std::string& value) {
    for (const auto& k : config_keys())
        if (key == k.key) {
            k.set(*this, value);
            return;
        }
    throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig RunConfig::parse_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const char* ws = " \t\r";
        const auto b = s.find_first_not_of(ws);
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(ws);
        return s.substr(b, e - b + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
        cfg.set_kv(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FileError("cannot open config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_text(ss.str());
}

}  // namespace imo
