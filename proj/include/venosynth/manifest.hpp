/* SPDX-License-Identifier: Apache-2.0 */
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace venosynth {

enum class Domain { A, B };  // A: real scans, B: synthetic image/label pairs

struct Sample {
    std::string id;
    std::string scan_path;  // relative to the manifest directory unless absolute
    std::optional<std::string> label_path;
    Domain domain = Domain::B;
    double spacing_um = 0.0;
    nlohmann::json extra = nlohmann::json::object();  // unknown keys, kept verbatim
};

struct DatasetManifest {
    int version = 1;
    std::vector<Sample> samples;
    std::uint64_t rng_seed = 0;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json extra = nlohmann::json::object();
};

/// Checks unique ids and that every domain-B sample carries a label.
inline void validate_manifest(const DatasetManifest& m) {
    std::set<std::string> ids;
    for (const auto& s : m.samples) {
        if (s.id.empty()) throw ValidationError("manifest sample with empty id");
        if (!ids.insert(s.id).second) throw ValidationError("duplicate sample id '" + s.id + "'");
        if (s.domain == Domain::B && (!s.label_path || s.label_path->empty()))
            throw ValidationError("domain-B sample '" + s.id + "' has no label");
    }
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j = m.extra;
    j["version"] = m.version;
    j["rng_seed"] = m.rng_seed;
    j["config"] = m.config;
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : m.samples) {
        nlohmann::json js = s.extra;
        js["id"] = s.id;
        js["scan_path"] = s.scan_path;
        if (s.label_path) js["label_path"] = *s.label_path;
        js["domain"] = s.domain == Domain::A ? "A" : "B";
        js["spacing_um"] = s.spacing_um;
        samples.push_back(std::move(js));
    }
    j["samples"] = std::move(samples);
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    static const std::set<std::string> top_keys{"version", "rng_seed", "config", "samples"};
    static const std::set<std::string> sample_keys{"id", "scan_path", "label_path", "domain", "spacing_um"};
    try {
        DatasetManifest m;
        m.version = j.at("version").get<int>();
        m.rng_seed = j.value("rng_seed", std::uint64_t{0});
        m.config = j.value("config", nlohmann::json::object());
        for (const auto& [k, v] : j.items())
            if (!top_keys.count(k)) m.extra[k] = v;
        for (const auto& js : j.at("samples")) {
            Sample s;
            s.id = js.at("id").get<std::string>();
            s.scan_path = js.at("scan_path").get<std::string>();
            if (js.contains("label_path") && !js.at("label_path").is_null())
                s.label_path = js.at("label_path").get<std::string>();
            const auto domain = js.at("domain").get<std::string>();
            if (domain == "A") s.domain = Domain::A;
            else if (domain == "B") s.domain = Domain::B;
            else throw ValidationError("sample '" + s.id + "' has unknown domain '" + domain + "'");
            s.spacing_um = js.value("spacing_um", 0.0);
            for (const auto& [k, v] : js.items())
                if (!sample_keys.count(k)) s.extra[k] = v;
            m.samples.push_back(std::move(s));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed manifest: ") + e.what());
    }
}

namespace detail {
inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}
}  // namespace detail

/// Validates, checks that referenced files exist, then writes via a temporary
/// file and rename so a manifest on disk always describes a finished dataset.
inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    validate_manifest(m);
    const auto base = path.parent_path();
    for (const auto& s : m.samples) {
        if (!std::filesystem::exists(detail::resolve(base, s.scan_path)))
            throw ValidationError("sample '" + s.id + "': scan file missing: " + s.scan_path);
        if (s.label_path && !std::filesystem::exists(detail::resolve(base, *s.label_path)))
            throw ValidationError("sample '" + s.id + "': label file missing: " + *s.label_path);
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot write manifest: " + tmp.string());
        out << manifest_to_json(m).dump(2) << '\n';
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
    }
    auto m = manifest_from_json(j);
    validate_manifest(m);
    return m;
}

}  // namespace venosynth
