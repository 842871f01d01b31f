#include "latref/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "latref/checkpoint.hpp"

namespace latref {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

struct Setter {
    std::function<void(PipelineConfig&, const std::string&)> apply;
    std::function<std::string(const PipelineConfig&)> render;
};

template <typename T>
T parse_num(const std::string& v, const std::string& key);

template <>
int parse_num<int>(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw Error("config", "bad integer for " + key + ": '" + v + "'");
    }
}

template <>
float parse_num<float>(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        float r = std::stof(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw Error("config", "bad number for " + key + ": '" + v + "'");
    }
}

template <>
double parse_num<double>(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw Error("config", "bad number for " + key + ": '" + v + "'");
    }
}

template <>
uint64_t parse_num<uint64_t>(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        unsigned long long r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw Error("config", "bad integer for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error("config", "bad boolean for " + key + ": '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_num<int>(trim(item), key));
    if (out.empty()) throw Error("config", "empty list for " + key);
    return out;
}

std::string render_int_list(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string render_float(float f) {
    std::ostringstream os;
    os.precision(9);
    os << f;
    return os.str();
}

std::string render_double(double f) {
    std::ostringstream os;
    os.precision(17);
    os << f;
    return os.str();
}

#define NUM_FIELD(key, type, field)                                                     \
    {key,                                                                               \
     {[](PipelineConfig& c, const std::string& v) { c.field = parse_num<type>(v, key); }, \
      [](const PipelineConfig& c) { return std::to_string(c.field); }}}

#define FLOAT_FIELD(key, field)                                                          \
    {key,                                                                                \
     {[](PipelineConfig& c, const std::string& v) { c.field = parse_num<float>(v, key); }, \
      [](const PipelineConfig& c) { return render_float(c.field); }}}

#define DOUBLE_FIELD(key, field)                                                          \
    {key,                                                                                 \
     {[](PipelineConfig& c, const std::string& v) { c.field = parse_num<double>(v, key); }, \
      [](const PipelineConfig& c) { return render_double(c.field); }}}

#define BOOL_FIELD(key, field)                                                      \
    {key,                                                                           \
     {[](PipelineConfig& c, const std::string& v) { c.field = parse_bool(v, key); }, \
      [](const PipelineConfig& c) { return c.field ? "true" : "false"; }}}

#define STR_FIELD(key, field)                                           \
    {key,                                                               \
     {[](PipelineConfig& c, const std::string& v) { c.field = v; },     \
      [](const PipelineConfig& c) { return c.field; }}}

#define PATH_FIELD(key, field)                                           \
    {key,                                                                \
     {[](PipelineConfig& c, const std::string& v) { c.field = v; },      \
      [](const PipelineConfig& c) { return c.field.string(); }}}

const std::map<std::string, Setter>& schema() {
    static const std::map<std::string, Setter> s = {
        NUM_FIELD("image.size", int, vq.image_size),
        NUM_FIELD("vq.f", int, vq.f),
        NUM_FIELD("vq.d", int, vq.d),
        NUM_FIELD("vq.codebook_size", int, vq.codebook_size),
        NUM_FIELD("vq.base_width", int, vq.base_width),
        {"vq.channel_mult",
         {[](PipelineConfig& c, const std::string& v) {
              c.vq.channel_mult = parse_int_list(v, "vq.channel_mult");
          },
          [](const PipelineConfig& c) { return render_int_list(c.vq.channel_mult); }}},
        FLOAT_FIELD("vq.lr", vq.lr),
        NUM_FIELD("vq.steps", int, vq.steps),
        NUM_FIELD("vq.batch", int, vq.batch),
        FLOAT_FIELD("vq.w_rec", vq.w_rec),
        FLOAT_FIELD("vq.w_perc", vq.w_perc),
        FLOAT_FIELD("vq.w_adv", vq.w_adv),
        FLOAT_FIELD("vq.w_codebook", vq.w_codebook),
        FLOAT_FIELD("vq.w_commit", vq.w_commit),
        NUM_FIELD("vq.disc_start", int, vq.disc_start),
        BOOL_FIELD("vq.dead_code_reinit", vq.dead_code_reinit),
        NUM_FIELD("vq.dead_code_patience", int, vq.dead_code_patience),

        FLOAT_FIELD("diffusion.sigma_min", diffusion.sigma_min),
        FLOAT_FIELD("diffusion.sigma_max", diffusion.sigma_max),
        FLOAT_FIELD("diffusion.rho", diffusion.rho),
        NUM_FIELD("diffusion.sampler_steps", int, diffusion.sampler_steps),
        NUM_FIELD("diffusion.width", int, diffusion.width),
        NUM_FIELD("diffusion.levels", int, diffusion.levels),
        NUM_FIELD("diffusion.emb_dim", int, diffusion.emb_dim),
        FLOAT_FIELD("diffusion.lr", diffusion.lr),
        NUM_FIELD("diffusion.steps", int, diffusion.steps),
        NUM_FIELD("diffusion.batch", int, diffusion.batch),
        NUM_FIELD("diffusion.variants_per_image", int, diffusion.variants_per_image),

        NUM_FIELD("irn.width", int, irn.width),
        NUM_FIELD("irn.blocks", int, irn.blocks),
        FLOAT_FIELD("irn.alpha", irn.alpha),
        FLOAT_FIELD("irn.lr", irn.lr),
        NUM_FIELD("irn.steps", int, irn.steps),
        NUM_FIELD("irn.batch", int, irn.batch),

        STR_FIELD("embedder.name", embedder.name),
        NUM_FIELD("embedder.dim", int, embedder.dim),
        FLOAT_FIELD("embedder.margin", embedder.margin),
        FLOAT_FIELD("embedder.scale", embedder.scale),
        FLOAT_FIELD("embedder.lr", embedder.lr),
        NUM_FIELD("embedder.steps", int, embedder.steps),
        NUM_FIELD("embedder.batch", int, embedder.batch),

        NUM_FIELD("mask.width", int, mask.width),
        FLOAT_FIELD("mask.w_feat", mask.w_feat),
        FLOAT_FIELD("mask.w_id", mask.w_id),
        FLOAT_FIELD("mask.w_sparse", mask.w_sparse),
        FLOAT_FIELD("mask.lr", mask.lr),
        NUM_FIELD("mask.steps", int, mask.steps),
        NUM_FIELD("mask.batch", int, mask.batch),

        FLOAT_FIELD("guidance.scale", guidance.scale),
        BOOL_FIELD("guidance.enabled", guidance.enabled),
        BOOL_FIELD("guidance.use_mask", guidance.use_mask),

        DOUBLE_FIELD("degrade.kernel_sigma_lo", ranges.kernel_sigma.lo),
        DOUBLE_FIELD("degrade.kernel_sigma_hi", ranges.kernel_sigma.hi),
        DOUBLE_FIELD("degrade.sigma_lo", ranges.sigma.lo),
        DOUBLE_FIELD("degrade.sigma_hi", ranges.sigma.hi),
        DOUBLE_FIELD("degrade.scale_lo", ranges.scale.lo),
        DOUBLE_FIELD("degrade.scale_hi", ranges.scale.hi),
        DOUBLE_FIELD("degrade.quality_lo", ranges.quality.lo),
        DOUBLE_FIELD("degrade.quality_hi", ranges.quality.hi),
        NUM_FIELD("degrade.kernel_max_radius", int, ranges.kernel_max_radius),

        PATH_FIELD("corpus.train_dir", train_dir),
        PATH_FIELD("corpus.eval_dir", eval_dir),
        PATH_FIELD("out.dir", out_dir),

        NUM_FIELD("seed.data", uint64_t, seed_data),
        NUM_FIELD("seed.init", uint64_t, seed_init),
        NUM_FIELD("seed.sampler", uint64_t, seed_sampler),
    };
    return s;
}

#undef NUM_FIELD
#undef FLOAT_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD
#undef STR_FIELD
#undef PATH_FIELD

}  // namespace

PipelineConfig parse_config_text(const std::string& text) {
    PipelineConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::string stripped = trim(line.substr(0, line.find('#')));
        if (stripped.empty()) continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw Error("config", "line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        auto it = schema().find(key);
        if (it == schema().end())
            throw Error("config", "unknown key '" + key + "' (line " + std::to_string(lineno) + ")");
        it->second.apply(cfg, value);
    }
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("config", "cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

void PipelineConfig::validate() const {
    if (vq.image_size < 16 || vq.image_size % 16 != 0)
        throw Error("config", "image.size must be a positive multiple of 16");
    const bool f_ok = vq.f == 2 || vq.f == 4 || vq.f == 8 || vq.f == 16 || vq.f == 32;
    if (!f_ok) throw Error("config", "vq.f must be one of {2,4,8,16,32}");
    if (vq.image_size % vq.f != 0) throw Error("config", "image.size not divisible by vq.f");
    if (vq.d < 1) throw Error("config", "vq.d must be >= 1");
    if (vq.codebook_size < 2) throw Error("config", "vq.codebook_size must be >= 2");
    for (float w : {vq.w_rec, vq.w_perc, vq.w_adv, vq.w_codebook, vq.w_commit})
        if (w < 0.0f) throw Error("config", "vq loss weights must be >= 0");
    if (vq.channel_mult.empty()) throw Error("config", "vq.channel_mult must be non-empty");

    if (diffusion.sigma_min <= 0.0f) throw Error("config", "diffusion.sigma_min must be > 0");
    if (diffusion.sigma_max != 0.0f && diffusion.sigma_max <= diffusion.sigma_min)
        throw Error("config", "diffusion.sigma_max must exceed sigma_min (or 0 for auto)");
    if (diffusion.sampler_steps < 2) throw Error("config", "diffusion.sampler_steps must be >= 2");
    if (diffusion.levels < 1 || diffusion.levels > 3)
        throw Error("config", "diffusion.levels must be in [1,3]");
    const int latent = vq.image_size / vq.f;
    if (latent % (1 << (diffusion.levels - 1)) != 0)
        throw Error("config", "latent grid not divisible by diffusion downsampling");

    if (guidance.scale < 0.0f) throw Error("config", "guidance.scale must be >= 0");
    if (irn.alpha < 0.0f) throw Error("config", "irn.alpha must be >= 0");
    for (float w : {mask.w_feat, mask.w_id, mask.w_sparse})
        if (w < 0.0f) throw Error("config", "mask loss weights must be >= 0");
    if (embedder.dim < 2) throw Error("config", "embedder.dim must be >= 2");
    ranges.validate();
}

std::string PipelineConfig::canonical_text() const {
    std::ostringstream os;
    for (const auto& [key, setter] : schema()) os << key << " = " << setter.render(*this) << "\n";
    return os.str();
}

std::string PipelineConfig::hash() const { return sha256_hex(canonical_text()); }

std::filesystem::path PipelineConfig::stage_path(const std::string& stage) const {
    return out_dir / (stage + ".ckpt");
}

}  // namespace latref
