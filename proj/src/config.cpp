#include "dehaze/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "dehaze/raster_io.hpp"

namespace dehaze {

namespace {

struct ConfigField {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const char* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
    Int out{};
    const char* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return out;
}

template <typename Get>
ConfigField real(std::string key, Get access) {
    return ConfigField{key, [access](const RunConfig& c) { return format_real(access(const_cast<RunConfig&>(c))); },
                 [access, key](RunConfig& c, const std::string& v) { access(c) = parse_real(key, v); }};
}

template <typename Get>
ConfigField integer(std::string key, Get access) {
    using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
    return ConfigField{key, [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); },
                 [access, key](RunConfig& c, const std::string& v) { access(c) = parse_int<T>(key, v); }};
}

template <typename Get>
ConfigField boolean(std::string key, Get access) {
    return ConfigField{key, [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)) ? "true" : "false"; },
                 [access, key](RunConfig& c, const std::string& v) {
                     if (v != "true" && v != "false") throw ConfigError(key + ": expected true or false, got '" + v + "'");
                     access(c) = v == "true";
                 }};
}

template <typename Get>
ConfigField text(std::string key, Get access) {
    return ConfigField{key, [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); },
                 [access](RunConfig& c, const std::string& v) { access(c) = v; }};
}

template <typename Get, typename Parse, typename Show>
ConfigField choice(std::string key, Get access, Parse parse, Show show) {
    return ConfigField{key, [access, show](const RunConfig& c) { return show(access(const_cast<RunConfig&>(c))); },
                 [access, parse, key](RunConfig& c, const std::string& v) {
                     try {
                         access(c) = parse(v);
                     } catch (const ParameterError& e) {
                         throw ConfigError(key + ": " + e.what());
                     }
                 }};
}

std::string sweep_params_text(const std::vector<SweepParam>& ps) {
    std::string out;
    for (const SweepParam& p : ps) {
        if (!out.empty()) out += ';';
        out += p.key + ':' + format_real(p.low) + ':' + format_real(p.high) + ':' + (p.log_scale ? "log" : "linear");
    }
    return out;
}

std::vector<SweepParam> parse_sweep_params(const std::string& key, const std::string& v) {
    std::vector<SweepParam> out;
    std::stringstream items(v);
    std::string item;
    while (std::getline(items, item, ';')) {
        item = trim(item);
        if (item.empty()) continue;
        std::vector<std::string> parts;
        std::stringstream fields(item);
        std::string f;
        while (std::getline(fields, f, ':')) parts.push_back(trim(f));
        if (parts.size() != 4 || (parts[3] != "log" && parts[3] != "linear"))
            throw ConfigError(key + ": expected name:low:high:log|linear, got '" + item + "'");
        out.push_back({parts[0], parse_real(key, parts[1]), parse_real(key, parts[2]), parts[3] == "log"});
    }
    return out;
}

#define REAL(k, m) real(k, [](RunConfig& c) -> double& { return c.m; })
#define INT(k, m) integer(k, [](RunConfig& c) -> auto& { return c.m; })
#define BOOL(k, m) boolean(k, [](RunConfig& c) -> bool& { return c.m; })
#define TEXT(k, m) text(k, [](RunConfig& c) -> std::string& { return c.m; })

const std::vector<ConfigField>& fields() {
    static const std::vector<ConfigField> table = {
        INT("seed", seed),
        REAL("seg.omega", seg.omega),
        REAL("seg.omega_v", seg.omega_v),
        REAL("seg.omega_s", seg.omega_s),
        REAL("seg.theta", seg.theta),
        REAL("seg.sigma_blur", seg.sigma_blur),
        INT("guidance.steps", guidance.steps),
        REAL("guidance.eta", guidance.eta),
        REAL("guidance.beta", guidance.beta),
        INT("guidance.fixed_top", guidance.fixed_top),
        INT("guidance.fixed_bottom", guidance.fixed_bottom),
        choice("guidance.gradient_mode", [](RunConfig& c) -> GradientMode& { return c.guidance.gradient_mode; },
               parse_gradient_mode, [](GradientMode m) { return to_string(m); }),
        choice("guidance.step_rule", [](RunConfig& c) -> StepRule& { return c.guidance.step_rule; }, parse_step_rule,
               [](StepRule r) { return to_string(r); }),
        choice("guidance.renoise", [](RunConfig& c) -> RenoiseRule& { return c.guidance.renoise; },
               parse_renoise_rule, [](RenoiseRule r) { return to_string(r); }),
        REAL("guidance.precision_scale", guidance.precision_scale),
        REAL("train.lambda_kid", train.lambda_kid),
        INT("train.n_kid", train.n_kid),
        REAL("train.ema_decay", train.ema_decay),
        REAL("train.lr_pretrain", train.lr_pretrain),
        REAL("train.lr_finetune", train.lr_finetune),
        INT("train.batch_size", train.batch_size),
        INT("train.steps", train.steps),
        INT("train.finetune_steps", train.finetune_steps),
        INT("train.kid_every", train.kid_every),
        INT("train.kid_batch", train.kid_batch),
        BOOL("train.kid_in_pretrain", train.kid_in_pretrain),
        INT("train.seed", train.seed),
        INT("model.base_channels", model.base_channels),
        INT("model.time_features", model.time_features),
        INT("model.time_dim", model.time_dim),
        INT("model.seed", model.seed),
        INT("segmenter.channels", segmenter.channels),
        REAL("segmenter.learning_rate", segmenter.learning_rate),
        INT("segmenter.steps", segmenter.steps),
        INT("segmenter.batch_size", segmenter.batch_size),
        INT("segmenter.seed", segmenter.seed),
        REAL("metrics.cnr_min", metrics.anchors.cnr.min),
        REAL("metrics.cnr_max", metrics.anchors.cnr.max),
        REAL("metrics.gcnr_min", metrics.anchors.gcnr.min),
        REAL("metrics.gcnr_max", metrics.anchors.gcnr.max),
        REAL("metrics.ks_min", metrics.anchors.ks.min),
        REAL("metrics.ks_max", metrics.anchors.ks.max),
        REAL("metrics.kid_min", metrics.anchors.kid.min),
        REAL("metrics.kid_max", metrics.anchors.kid.max),
        INT("metrics.gcnr_bins", metrics.gcnr_bins),
        REAL("metrics.downstream", metrics.downstream),
        INT("sweep.trials", sweep.trials),
        ConfigField{"sweep.params", [](const RunConfig& c) { return sweep_params_text(c.sweep.params); },
              [](RunConfig& c, const std::string& v) { c.sweep.params = parse_sweep_params("sweep.params", v); }},
        INT("sweep.images", sweep.images),
        INT("sweep.image_size", sweep.image_size),
        INT("sweep.data_seed", sweep.data_seed),
        INT("sweep.steps", sweep.steps),
        TEXT("paths.data", paths.data),
        TEXT("paths.pretrain_data", paths.pretrain_data),
        TEXT("paths.checkpoint", paths.checkpoint),
        TEXT("paths.segmenter", paths.segmenter),
        TEXT("paths.output", paths.output),
    };
    return table;
}

#undef REAL
#undef INT
#undef TEXT
#undef BOOL

const ConfigField& resolve(const std::string& key) {
    std::vector<const ConfigField*> matches;
    for (const ConfigField& f : fields()) {
        if (f.key == key) return f;
        const auto dot = f.key.rfind('.');
        if (dot != std::string::npos && f.key.compare(dot + 1, std::string::npos, key) == 0) matches.push_back(&f);
    }
    if (matches.empty()) throw ConfigError("unknown key '" + key + "'");
    if (matches.size() > 1) {
        std::string names;
        for (const ConfigField* f : matches) names += (names.empty() ? "" : ", ") + f->key;
        throw ConfigError("ambiguous key '" + key + "' (could be " + names + ")");
    }
    return *matches.front();
}

template <typename F>
void wrap(F&& check) {
    try {
        check();
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
}

} // namespace

std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void SweepConfig::validate() const {
    if (trials < 1) throw ConfigError("sweep.trials must be >= 1");
    if (params.empty()) throw ConfigError("sweep.params must name at least one parameter");
    for (const SweepParam& p : params) {
        resolve(p.key);
        if (!std::isfinite(p.low) || !std::isfinite(p.high) || !(p.low <= p.high))
            throw ConfigError("sweep.params: range for " + p.key + " must satisfy low <= high");
        if (p.log_scale && !(p.low > 0.0))
            throw ConfigError("sweep.params: log range for " + p.key + " must be positive");
    }
    if (images < 2) throw ConfigError("sweep.images must be >= 2");
    if (image_size < 32 || image_size % 16) throw ConfigError("sweep.image_size must be a multiple of 16, >= 32");
    if (steps < 0) throw ConfigError("sweep.steps must be >= 0");
}

void RunConfig::validate() const {
    wrap([&] { seg.validate(); });
    wrap([&] { guidance.validate(); });
    wrap([&] { train.validate(); });
    wrap([&] { segmenter.validate(); });
    if (model.base_channels < 1 || model.time_features < 2 || model.time_features % 2 || model.time_dim < 1)
        throw ConfigError("model.base_channels/time_dim must be >= 1 and model.time_features even and >= 2");
    wrap([&] { metrics.validate(); });
    sweep.validate();
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const ConfigField& f : fields()) keys.push_back(f.key);
    return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    resolve(key).set(config, value);
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return resolve(key).get(config); }

RunConfig parse_config(const std::string& text, const std::string& origin) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
        try {
            set_config_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
        }
    }
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text, path.string());
}

std::string to_text(const RunConfig& config) {
    std::string out;
    for (const ConfigField& f : fields()) out += f.key + " = " + f.get(config) + "\n";
    return out;
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
    write_file_atomic(path, to_text(config));
}

} // namespace dehaze
