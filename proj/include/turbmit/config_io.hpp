#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "turbmit/core.hpp"

namespace turbmit {

// ---------------------------------------------------------------------------
// Key-value configuration files.  `key = value` lines, '#' comments.  Units
// are part of the key names; unknown keys are rejected so that typos cannot
// silently fall back to defaults.
// ---------------------------------------------------------------------------

struct LoadedConfig {
    OpticalConfig optics;
    Cn2Profile profile = Cn2Profile::constant(0.0);
    /// Optional pass-through command defaults (gamma, epsilon, seed, frames).
    std::map<std::string, double> options;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_number(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw DataError("config: key '" + key + "' has non-numeric value '" + value + "'");
    }
}

inline std::vector<double> parse_number_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_number(key, item));
    }
    if (out.empty()) throw DataError("config: key '" + key + "' has an empty list");
    return out;
}

}  // namespace detail

inline LoadedConfig parse_config_text(const std::string& text, const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("config: " + origin + ":" + std::to_string(lineno) +
                            ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw DataError("config: " + origin + ":" + std::to_string(lineno) +
                            ": empty key or value");
        if (!kv.emplace(key, value).second)
            throw DataError("config: duplicate key '" + key + "' in " + origin);
    }

    LoadedConfig out;
    auto take = [&](const char* key) -> std::string {
        auto it = kv.find(key);
        if (it == kv.end()) return {};
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    auto require = [&](const char* key) {
        std::string v = take(key);
        if (v.empty()) throw DataError(std::string("config: missing required key '") + key + "'");
        return v;
    };

    out.optics.aperture_diameter_m =
        detail::parse_number("aperture_diameter_m", require("aperture_diameter_m"));
    out.optics.focal_length_m = detail::parse_number("focal_length_m", require("focal_length_m"));
    out.optics.wavelength_m = detail::parse_number("wavelength_m", require("wavelength_m"));
    out.optics.path_length_m = detail::parse_number("path_length_m", require("path_length_m"));
    out.optics.pixel_pitch_m = detail::parse_number("pixel_pitch_m", require("pixel_pitch_m"));
    if (std::string v = take("f_number"); !v.empty())
        out.optics.f_number = detail::parse_number("f_number", v);
    if (std::string v = take("pixel_angle_rad"); !v.empty())
        out.optics.pixel_angle_rad = detail::parse_number("pixel_angle_rad", v);
    out.optics.validate();

    const std::string model = require("cn2_model");
    if (model == "constant") {
        out.profile = Cn2Profile::constant(
            detail::parse_number("cn2_constant_m23", require("cn2_constant_m23")));
    } else if (model == "linear") {
        out.profile = Cn2Profile::linear(
            detail::parse_number("cn2_source_m23", require("cn2_source_m23")),
            detail::parse_number("cn2_camera_m23", require("cn2_camera_m23")));
    } else if (model == "sampled") {
        out.profile = Cn2Profile::sampled(
            detail::parse_number_list("cn2_z_m", require("cn2_z_m")),
            detail::parse_number_list("cn2_values_m23", require("cn2_values_m23")));
        out.profile.validate_for_path(out.optics.path_length_m);
    } else {
        throw DataError("config: cn2_model must be constant, linear, or sampled");
    }

    for (const char* opt : {"gamma", "epsilon", "seed", "frames", "noise_sigma"}) {
        if (std::string v = take(opt); !v.empty())
            out.options[opt] = detail::parse_number(opt, v);
    }

    if (!kv.empty())
        throw DataError("config: unknown key '" + kv.begin()->first + "' in " + origin);
    return out;
}

inline LoadedConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

/// Canonical text form; parse(format(parse(x))) == parse(x).
inline std::string format_config(const LoadedConfig& c) {
    std::ostringstream out;
    out.precision(17);
    out << "aperture_diameter_m = " << c.optics.aperture_diameter_m << "\n";
    out << "focal_length_m = " << c.optics.focal_length_m << "\n";
    out << "f_number = " << c.optics.f_number << "\n";
    out << "wavelength_m = " << c.optics.wavelength_m << "\n";
    out << "path_length_m = " << c.optics.path_length_m << "\n";
    out << "pixel_pitch_m = " << c.optics.pixel_pitch_m << "\n";
    out << "pixel_angle_rad = " << c.optics.pixel_angle_rad << "\n";
    switch (c.profile.kind()) {
        case Cn2Profile::Kind::Constant:
            out << "cn2_model = constant\n";
            out << "cn2_constant_m23 = " << c.profile.sample_values()[0] << "\n";
            break;
        case Cn2Profile::Kind::Linear:
            out << "cn2_model = linear\n";
            out << "cn2_source_m23 = " << c.profile.sample_values()[0] << "\n";
            out << "cn2_camera_m23 = " << c.profile.sample_values()[1] << "\n";
            break;
        case Cn2Profile::Kind::Sampled: {
            out << "cn2_model = sampled\n";
            out << "cn2_z_m = ";
            for (std::size_t i = 0; i < c.profile.sample_z().size(); ++i)
                out << (i ? "," : "") << c.profile.sample_z()[i];
            out << "\ncn2_values_m23 = ";
            for (std::size_t i = 0; i < c.profile.sample_values().size(); ++i)
                out << (i ? "," : "") << c.profile.sample_values()[i];
            out << "\n";
            break;
        }
    }
    for (const auto& [k, v] : c.options) out << k << " = " << v << "\n";
    return out.str();
}

}  // namespace turbmit
