/* SPDX-License-Identifier: Apache-2.0 */
#pragma once

// Run configuration files and batch generation of synthetic (scan, label)
// pairs.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

#include <json.hpp>

#include "gco.hpp"
#include "manifest.hpp"
#include "nifti.hpp"
#include "rasterize.hpp"
#include "scangen.hpp"

namespace venosynth {

/// Per-tree parameter variation for dataset generation.
struct JitterRanges {
    int terminal_count_min = 150;
    int terminal_count_max = 250;
    std::vector<double> material_weights{5e-8, 6e-8, 7e-8};

    void validate() const {
        if (terminal_count_min < 1 || terminal_count_max < terminal_count_min)
            throw ValidationError("jitter field 'terminal_count' range must satisfy 1 <= min <= max");
        if (material_weights.empty()) throw ValidationError("jitter field 'material_weights' must not be empty");
        for (double w : material_weights)
            if (!(w > 0.0)) throw ValidationError("jitter field 'material_weights' must be positive");
    }
};

/// Contents of one JSON run configuration:
///
///   { "gco": {...}, "schedule": [...],
///     "prebuilt": {tree} | "prebuilt_path": "tree.json",
///     "domain": {"ellipsoid": {...}} | {"nifti": "mask.nii"},
///     "jitter": {"terminal_count": [min, max], "material_weights": [...]} }
///
/// Every section is optional. Relative paths are resolved against the
/// directory of the config file.
struct RunConfig {
    GcoConfig gco;
    GcoSchedule schedule = GcoSchedule::default_schedule();
    std::optional<VesselTree> prebuilt;
    std::optional<Ellipsoid> ellipsoid;
    std::optional<std::filesystem::path> mask_path;
    JitterRanges jitter;

    /// Fully resolved snapshot (defaults filled in), for provenance records.
    nlohmann::json to_json() const {
        nlohmann::json j{{"gco", config_to_json(gco)}, {"schedule", schedule_to_json(schedule)}};
        if (prebuilt) j["prebuilt"] = tree_to_json(*prebuilt);
        if (ellipsoid) j["domain"] = {{"ellipsoid", ellipsoid_to_json(*ellipsoid)}};
        else if (mask_path) j["domain"] = {{"nifti", mask_path->string()}};
        j["jitter"] = {{"terminal_count", {jitter.terminal_count_min, jitter.terminal_count_max}},
                       {"material_weights", jitter.material_weights}};
        return j;
    }
};

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": invalid JSON: " + e.what());
    }
}

inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    if (!j.is_object()) throw ValidationError("run config must be a JSON object");
    static const std::set<std::string> known{"gco", "schedule", "prebuilt", "prebuilt_path", "domain", "jitter"};
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw ValidationError("unknown run config section '" + k + "'");

    auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    RunConfig rc;
    try {
        if (j.contains("gco")) rc.gco = config_from_json(j.at("gco"));
        if (j.contains("schedule")) rc.schedule = schedule_from_json(j.at("schedule"));
        if (j.contains("prebuilt") && j.contains("prebuilt_path"))
            throw ValidationError("run config has both 'prebuilt' and 'prebuilt_path'");
        if (j.contains("prebuilt")) rc.prebuilt = tree_from_json(j.at("prebuilt"));
        if (j.contains("prebuilt_path"))
            rc.prebuilt = tree_from_json(read_json_file(resolve(j.at("prebuilt_path").get<std::string>())));
        if (j.contains("domain")) {
            const auto& d = j.at("domain");
            if (d.contains("ellipsoid") == d.contains("nifti"))
                throw ValidationError("run config 'domain' needs exactly one of 'ellipsoid' or 'nifti'");
            if (d.contains("ellipsoid")) rc.ellipsoid = ellipsoid_from_json(d.at("ellipsoid"));
            else rc.mask_path = resolve(d.at("nifti").get<std::string>());
        }
        if (j.contains("jitter")) {
            const auto& jj = j.at("jitter");
            if (jj.contains("terminal_count")) {
                rc.jitter.terminal_count_min = jj.at("terminal_count").at(0).get<int>();
                rc.jitter.terminal_count_max = jj.at("terminal_count").at(1).get<int>();
            }
            if (jj.contains("material_weights"))
                rc.jitter.material_weights = jj.at("material_weights").get<std::vector<double>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed run config: ") + e.what());
    }
    rc.gco.validate();
    rc.jitter.validate();
    return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    return run_config_from_json(read_json_file(path), path.parent_path());
}

/// Ellipsoid centered in the grid, filling 90% of its extent along x and
/// proportionally less along y and z (a kidney-like 1 : 0.8 : 0.7 shape).
inline Ellipsoid inscribed_ellipsoid(const GridSpec& g) {
    Vec3 center, half;
    for (int a = 0; a < 3; ++a) {
        const double lo = g.origin[a], hi = g.origin[a] + (g.dims[a] - 1) * g.spacing[a];
        (a == 0 ? center.x : a == 1 ? center.y : center.z) = 0.5 * (lo + hi);
        (a == 0 ? half.x : a == 1 ? half.y : half.z) = 0.5 * (hi - lo) * 0.9;
    }
    const double ref = std::min({half.x, half.y / 0.8, half.z / 0.7});
    return Ellipsoid{center, {ref, 0.8 * ref, 0.7 * ref}};
}

/// Domain and prebuilt tree for a run: config values when present, otherwise
/// an ellipsoid inscribed in `grid` and the default five-node seed.
inline std::pair<DomainMask, PrebuiltTree> resolve_domain(const RunConfig& rc, const std::optional<GridSpec>& grid) {
    std::optional<Ellipsoid> ell = rc.ellipsoid;
    if (!ell && !rc.mask_path) {
        if (!grid) throw ValidationError("run config needs a 'domain' section");
        ell = inscribed_ellipsoid(*grid);
    }
    if (ell) {
        DomainMask mask(*ell);
        return {std::move(mask), rc.prebuilt ? PrebuiltTree(*rc.prebuilt) : default_prebuilt(*ell)};
    }
    if (!rc.prebuilt) throw ValidationError("a NIfTI domain mask requires a 'prebuilt' tree");
    return {DomainMask(nifti::read_label(*rc.mask_path)), PrebuiltTree(*rc.prebuilt)};
}

// ---------------------------------------------------------------------------
// Dataset generation

struct DatasetRequest {
    int trees = 1;
    int grid = 64;
    double spacing_um = 22.6;
    std::uint64_t seed = 0;
    int threads = 1;
    std::filesystem::path out_dir;
};

struct SampleFailure {
    enum class Kind { Validation, Io, Other };
    int index = 0;
    Kind kind = Kind::Other;
    std::string message;
};

struct DatasetResult {
    DatasetManifest manifest;
    std::vector<SampleFailure> failures;
    std::filesystem::path manifest_path;
};

inline std::string sample_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth_%03d", index);
    return buf;
}

/// The jittered GCO config of tree `index`. Depends only on (seed, index).
inline GcoConfig jittered_config(const RunConfig& rc, std::uint64_t seed, int index) {
    const std::uint64_t tree_seed = derive_seed(seed, static_cast<std::uint64_t>(index));
    std::mt19937_64 eng(derive_seed(tree_seed, 2));
    GcoConfig c = rc.gco;
    const auto span = static_cast<std::uint64_t>(rc.jitter.terminal_count_max - rc.jitter.terminal_count_min + 1);
    c.terminal_count = rc.jitter.terminal_count_min + static_cast<int>(uniform_below(eng, span));
    c.material_weight = rc.jitter.material_weights[uniform_below(eng, rc.jitter.material_weights.size())];
    if (c.inlet_flow) c.terminal_flow.reset();
    c.rng_seed = derive_seed(tree_seed, 0);
    return c;
}

/// Synthesizes, voxelizes and writes `trees` (scan, label) pairs plus the
/// tree JSON of each, then writes manifest.json last. Samples are processed
/// in parallel; each depends only on (seed, index), so the output bytes do not
/// depend on `threads`. Failed samples are left out of the manifest and
/// reported in the result.
inline DatasetResult generate_dataset(const RunConfig& rc, const DatasetRequest& req) {
    if (req.trees < 1) throw ValidationError("--trees must be >= 1");
    if (req.grid < 1) throw ValidationError("--grid must be >= 1");
    if (!(req.spacing_um > 0.0)) throw ValidationError("--spacing must be > 0");
    const GridSpec grid = GridSpec::cube(req.grid, req.spacing_um);
    const auto domain = resolve_domain(rc, grid);
    const DomainMask& mask = domain.first;
    const PrebuiltTree& prebuilt = domain.second;

    std::error_code ec;
    std::filesystem::create_directories(req.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + req.out_dir.string() + ": " + ec.message());

    std::vector<std::optional<Sample>> samples(static_cast<std::size_t>(req.trees));
    std::vector<SampleFailure> failures;
    std::mutex failure_mutex;
    std::atomic<int> next{0};

    auto worker = [&] {
        for (int i = next++; i < req.trees; i = next++) {
            try {
                const GcoConfig cfg = jittered_config(rc, req.seed, i);
                const auto synth = synthesize(prebuilt, mask, cfg, rc.schedule);
                const LabelVolume label = voxelize(synth.tree, grid);
                const std::uint64_t scan_seed = derive_seed(derive_seed(req.seed, static_cast<std::uint64_t>(i)), 1);
                const ScanVolume scan = synth_scan(label, scan_seed);

                const std::string stem = sample_stem(i);
                Sample s;
                s.id = stem;
                s.scan_path = stem + "_scan.nii";
                s.label_path = stem + "_label.nii";
                s.domain = Domain::B;
                s.spacing_um = req.spacing_um;
                s.extra["tree_path"] = stem + "_tree.json";
                s.extra["terminal_count"] = cfg.terminal_count;
                s.extra["material_weight"] = cfg.material_weight;
                s.extra["gco_seed"] = cfg.rng_seed;
                s.extra["scan_seed"] = scan_seed;

                nifti::write_nifti(label, req.out_dir / *s.label_path);
                nifti::write_nifti(scan, req.out_dir / s.scan_path);
                std::ofstream tree_out(req.out_dir / (stem + "_tree.json"), std::ios::trunc);
                tree_out << tree_to_json(synth.tree).dump(1) << '\n';
                if (!tree_out) throw IoError("cannot write tree JSON for " + stem);
                samples[static_cast<std::size_t>(i)] = std::move(s);
            } catch (const ValidationError& e) {
                const std::lock_guard lock(failure_mutex);
                failures.push_back({i, SampleFailure::Kind::Validation, e.what()});
            } catch (const IoError& e) {
                const std::lock_guard lock(failure_mutex);
                failures.push_back({i, SampleFailure::Kind::Io, e.what()});
            } catch (const std::exception& e) {
                const std::lock_guard lock(failure_mutex);
                failures.push_back({i, SampleFailure::Kind::Other, e.what()});
            }
        }
    };

    const int threads = std::clamp(req.threads, 1, req.trees);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    std::sort(failures.begin(), failures.end(), [](const auto& a, const auto& b) { return a.index < b.index; });

    DatasetResult result;
    result.manifest.rng_seed = req.seed;
    result.manifest.config = rc.to_json();
    result.manifest.config["generation"] = {
        {"trees", req.trees}, {"grid", req.grid}, {"spacing_um", req.spacing_um}};
    for (auto& s : samples)
        if (s) result.manifest.samples.push_back(std::move(*s));
    result.failures = std::move(failures);
    result.manifest_path = req.out_dir / "manifest.json";
    write_manifest(result.manifest, result.manifest_path);
    return result;
}

}  // namespace venosynth
