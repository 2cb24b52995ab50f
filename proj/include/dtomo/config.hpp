#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dtomo/common.hpp"
#include "dtomo/rng.hpp"

namespace dtomo {

// Flat key/value run configuration with [section] headers. Every tunable of
// every stage lives here; unknown keys are rejected and all defaults are
// materialized on load, so the resolved copy written next to each output is
// complete provenance for the run.

struct RunConfig {
    int schema_version = 1;

    // [phantom]
    std::string phantom_kind = "gaussian-blobs";
    int size = 64;
    std::uint64_t phantom_seed = 11;
    int blob_count = 12;
    std::string mrc_path;

    // [geometry]
    int tilt_count = 41;
    double tilt_min_deg = -70.0;
    double tilt_max_deg = 70.0;
    int ray_samples = 0;  // 0 -> 2 * size

    // [deformation]
    bool deform_enabled = true;
    int elastic_grid = 5;
    double elastic_sigma_px = 0.0;  // 0 -> size / 8
    double elastic_max_px = 3.0;
    double shift_max_frac = 0.1;
    double rot_max_deg = 10.0;
    std::uint64_t deform_seed = 77;

    // [noise]
    bool noise_enabled = true;
    double noise_snr_db = 0.0;
    std::uint64_t noise_seed = 5;

    // [field]
    int vol_fourier = 48;
    double vol_freq_min = 0.75;
    double vol_freq_max = 8.0;  // <= 0: Gaussian frequencies with vol_sigma
    double vol_sigma = 5.0;
    int vol_hidden = 64;
    int vol_depth = 3;
    double vol_output_bias = -2.0;
    int loc_fourier = 16;
    double loc_sigma = 2.0;
    int loc_hidden = 32;
    int loc_depth = 2;
    std::uint64_t field_seed = 3;

    // [train]
    int iterations = 20000;
    int batch_pixels = 1024;
    int tilts_per_batch = 0;
    double lr_volume = 3e-3;
    double lr_global = 1e-3;
    double lr_local = 1e-4;
    int train_ray_samples = 0;  // 0 -> size
    int freq_ramp_iters = -1;   // -1 -> iterations/2, 0 -> curriculum off
    double freq_start = 1.5;    // opening cutoff, cycles per unit
    int log_every = 100;
    std::uint64_t train_seed = 99;

    // [fbp]
    std::string fbp_filter = "hann";
    double fbp_cutoff = 1.0;

    // [metrics]
    int fsc_shells = 0;      // 0 -> size / 2
    int register_search = 0;  // 0 -> size / 8
    double fsc_threshold = 0.5;

    void materialize() {
        if (ray_samples <= 0) ray_samples = 2 * size;
        if (train_ray_samples <= 0) train_ray_samples = size;
        if (elastic_sigma_px <= 0) elastic_sigma_px = size / 8.0;
        if (fsc_shells <= 0) fsc_shells = size / 2;
        if (register_search <= 0) register_search = size / 8;
        if (freq_ramp_iters < 0) freq_ramp_iters = iterations / 2;
    }

    void validate() const {
        if (size < 8) throw ConfigError("config: size must be >= 8");
        if (tilt_count < 1) throw ConfigError("config: tilt_count must be >= 1");
        if (iterations < 0) throw ConfigError("config: iterations must be >= 0");
        if (batch_pixels < 1) throw ConfigError("config: batch_pixels must be >= 1");
        if (fbp_filter != "hann" && fbp_filter != "ram-lak")
            throw ConfigError("config: fbp_filter must be hann or ram-lak");
        if (!(fsc_threshold > 0 && fsc_threshold < 1))
            throw ConfigError("config: fsc_threshold must be in (0,1)");
    }
};

namespace detail {

struct ConfigBinding {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& v, const std::string& key) {
    if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: bad numeric value '" + v + "' for " + key);
    }
}

inline long long parse_int(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        long long d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer value '" + v + "' for " + key);
    }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: bad boolean value '" + v + "' for " + key);
}

inline std::string fmt_double_cfg(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline const std::vector<std::pair<std::string, ConfigBinding>>& config_bindings() {
    using B = ConfigBinding;
    auto num = [](auto member) {
        return B{[member](const RunConfig& c) { return fmt_double_cfg(c.*member); },
                 [member](RunConfig& c, const std::string& v) {
                     c.*member = parse_double(v, "value");
                 }};
    };
    auto integer = [](auto member) {
        return B{[member](const RunConfig& c) { return std::to_string(c.*member); },
                 [member](RunConfig& c, const std::string& v) {
                     c.*member = static_cast<int>(parse_int(v, "value"));
                 }};
    };
    auto seed = [](auto member) {
        return B{[member](const RunConfig& c) { return std::to_string(c.*member); },
                 [member](RunConfig& c, const std::string& v) {
                     c.*member = static_cast<std::uint64_t>(parse_int(v, "value"));
                 }};
    };
    auto boolean = [](auto member) {
        return B{[member](const RunConfig& c) { return (c.*member) ? "true" : "false"; },
                 [member](RunConfig& c, const std::string& v) {
                     c.*member = parse_bool(v, "value");
                 }};
    };
    auto str = [](auto member) {
        return B{[member](const RunConfig& c) { return c.*member; },
                 [member](RunConfig& c, const std::string& v) { c.*member = v; }};
    };

    static const std::vector<std::pair<std::string, ConfigBinding>> bindings = {
        {"schema_version", integer(&RunConfig::schema_version)},
        {"phantom.kind", str(&RunConfig::phantom_kind)},
        {"phantom.size", integer(&RunConfig::size)},
        {"phantom.seed", seed(&RunConfig::phantom_seed)},
        {"phantom.blob_count", integer(&RunConfig::blob_count)},
        {"phantom.mrc_path", str(&RunConfig::mrc_path)},
        {"geometry.tilt_count", integer(&RunConfig::tilt_count)},
        {"geometry.tilt_min_deg", num(&RunConfig::tilt_min_deg)},
        {"geometry.tilt_max_deg", num(&RunConfig::tilt_max_deg)},
        {"geometry.ray_samples", integer(&RunConfig::ray_samples)},
        {"deformation.enabled", boolean(&RunConfig::deform_enabled)},
        {"deformation.elastic_grid", integer(&RunConfig::elastic_grid)},
        {"deformation.elastic_sigma_px", num(&RunConfig::elastic_sigma_px)},
        {"deformation.elastic_max_px", num(&RunConfig::elastic_max_px)},
        {"deformation.shift_max_frac", num(&RunConfig::shift_max_frac)},
        {"deformation.rot_max_deg", num(&RunConfig::rot_max_deg)},
        {"deformation.seed", seed(&RunConfig::deform_seed)},
        {"noise.enabled", boolean(&RunConfig::noise_enabled)},
        {"noise.snr_db", num(&RunConfig::noise_snr_db)},
        {"noise.seed", seed(&RunConfig::noise_seed)},
        {"field.volume_fourier_count", integer(&RunConfig::vol_fourier)},
        {"field.volume_freq_min", num(&RunConfig::vol_freq_min)},
        {"field.volume_freq_max", num(&RunConfig::vol_freq_max)},
        {"field.volume_fourier_sigma", num(&RunConfig::vol_sigma)},
        {"field.volume_hidden", integer(&RunConfig::vol_hidden)},
        {"field.volume_depth", integer(&RunConfig::vol_depth)},
        {"field.volume_output_bias", num(&RunConfig::vol_output_bias)},
        {"field.local_fourier_count", integer(&RunConfig::loc_fourier)},
        {"field.local_fourier_sigma", num(&RunConfig::loc_sigma)},
        {"field.local_hidden", integer(&RunConfig::loc_hidden)},
        {"field.local_depth", integer(&RunConfig::loc_depth)},
        {"field.seed", seed(&RunConfig::field_seed)},
        {"train.iterations", integer(&RunConfig::iterations)},
        {"train.batch_pixels", integer(&RunConfig::batch_pixels)},
        {"train.tilts_per_batch", integer(&RunConfig::tilts_per_batch)},
        {"train.lr_volume", num(&RunConfig::lr_volume)},
        {"train.lr_global", num(&RunConfig::lr_global)},
        {"train.lr_local", num(&RunConfig::lr_local)},
        {"train.ray_samples", integer(&RunConfig::train_ray_samples)},
        {"train.freq_ramp_iters", integer(&RunConfig::freq_ramp_iters)},
        {"train.freq_start", num(&RunConfig::freq_start)},
        {"train.log_every", integer(&RunConfig::log_every)},
        {"train.seed", seed(&RunConfig::train_seed)},
        {"fbp.filter", str(&RunConfig::fbp_filter)},
        {"fbp.cutoff", num(&RunConfig::fbp_cutoff)},
        {"metrics.fsc_shells", integer(&RunConfig::fsc_shells)},
        {"metrics.register_search", integer(&RunConfig::register_search)},
        {"metrics.fsc_threshold", num(&RunConfig::fsc_threshold)},
    };
    return bindings;
}

}  // namespace detail

inline RunConfig parse_config(std::istream& is) {
    RunConfig cfg;
    std::map<std::string, const detail::ConfigBinding*> lookup;
    for (const auto& [key, binding] : detail::config_bindings()) lookup[key] = &binding;

    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        std::string full = section.empty() ? key : section + "." + key;
        auto it = lookup.find(full);
        if (it == lookup.end())
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + full +
                              "'");
        it->second->set(cfg, value);
    }
    // "inf" SNR means noise off
    if (std::isinf(cfg.noise_snr_db) && cfg.noise_snr_db > 0) cfg.noise_enabled = false;
    cfg.materialize();
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    return parse_config(is);
}

inline RunConfig default_config() {
    RunConfig cfg;
    cfg.materialize();
    cfg.validate();
    return cfg;
}

inline void serialize_config(const RunConfig& cfg, std::ostream& os) {
    os << "# deformtomo run configuration (fully resolved)\n";
    std::string section;
    for (const auto& [key, binding] : detail::config_bindings()) {
        std::size_t dot = key.find('.');
        std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
        std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
        if (sec != section) {
            os << "\n[" << sec << "]\n";
            section = sec;
        }
        os << name << " = " << binding.get(cfg) << "\n";
    }
}

// --seed / DEFORMTOMO_SEED override: rederives every stage seed.
inline void apply_seed_override(RunConfig& cfg, std::uint64_t seed) {
    cfg.phantom_seed = derive_seed(seed, 1);
    cfg.deform_seed = derive_seed(seed, 2);
    cfg.noise_seed = derive_seed(seed, 3);
    cfg.field_seed = derive_seed(seed, 4);
    cfg.train_seed = derive_seed(seed, 5);
}

}  // namespace dtomo
