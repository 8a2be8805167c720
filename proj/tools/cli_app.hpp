/* SPDX-License-Identifier: Apache-2.0 */
#pragma once

// venosynth command-line front end. `run` is kept separate from main() so the
// tests can drive every subcommand in-process.

#include <chrono>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <venosynth/venosynth.hpp>

namespace venosynth::cli {

enum ExitCode : int { kOk = 0, kValidation = 2, kIo = 3, kInternal = 4 };

namespace detail {

struct Logger {
    std::ostream& err;
    void operator()(const std::string& msg) const { err << "[venosynth] " << msg << '\n'; }
};

inline std::uint64_t entropy_seed() {
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

/// Tree files are either a bare tree or the synthesize output {"tree": ...}.
inline VesselTree load_tree_file(const std::filesystem::path& path) {
    const auto j = read_json_file(path);
    return tree_from_json(j.is_object() && j.contains("tree") ? j.at("tree") : j);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

template <class F>
auto with_any_volume(const nifti::AnyVolume& v, F&& f) {
    return std::visit(std::forward<F>(f), v);
}

}  // namespace detail

/// Runs the tool with argv-style arguments (args[0] is the program name).
/// Data go to files, human-readable summaries to `out`, logs to `err`.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    const detail::Logger log{err};

    CLI::App app{"Synthetic venous trees, paired scan/label datasets and segmentation metrics"};
    app.require_subcommand(1);
    app.fallthrough();

    std::optional<std::uint64_t> seed;
    std::string out_path;
    int threads = 1;
    app.add_option("--seed", seed, "RNG seed; drawn from entropy and reported when omitted");
    app.add_option("--out", out_path, "Output file or directory");
    app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

    // synthesize
    auto* synth_cmd = app.add_subcommand("synthesize", "Grow one tree with GCO and write it as JSON");
    std::string config_path;
    int grid_n = 64;
    double spacing = 22.6;
    synth_cmd->add_option("--config", config_path, "Run config JSON")->check(CLI::ExistingFile);
    synth_cmd->add_option("--grid", grid_n, "Cube grid size used to inscribe the default domain");
    synth_cmd->add_option("--spacing", spacing, "Voxel spacing in µm used to inscribe the default domain");

    // voxelize
    auto* vox_cmd = app.add_subcommand("voxelize", "Rasterize a tree JSON to a uint8 NIfTI label volume");
    std::string tree_path;
    std::vector<int> dims;
    std::vector<double> origin;
    vox_cmd->add_option("--tree", tree_path, "Tree JSON")->required()->check(CLI::ExistingFile);
    vox_cmd->add_option("--grid", grid_n, "Cube grid size");
    vox_cmd->add_option("--dims", dims, "Grid dims nx ny nz (overrides --grid)")->expected(3);
    vox_cmd->add_option("--spacing", spacing, "Voxel spacing in µm");
    vox_cmd->add_option("--origin", origin, "Center of voxel (0,0,0) in µm")->expected(3);

    // gen-dataset
    auto* gen_cmd = app.add_subcommand("gen-dataset", "Generate N synthetic (scan, label) pairs and a manifest");
    int trees = 1;
    gen_cmd->add_option("--config", config_path, "Run config JSON")->check(CLI::ExistingFile);
    gen_cmd->add_option("--trees", trees, "Number of trees")->required();
    gen_cmd->add_option("--grid", grid_n, "Cube grid size");
    gen_cmd->add_option("--spacing", spacing, "Voxel spacing in µm");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "Score a predicted mask against ground truth");
    std::string pred_path, gt_path;
    bool postprocess = false;
    int connectivity = 26;
    eval_cmd->add_option("--pred", pred_path, "Predicted mask (NIfTI)")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--gt", gt_path, "Ground-truth mask (NIfTI)")->required()->check(CLI::ExistingFile);
    eval_cmd->add_flag("--postprocess", postprocess, "Also score the largest connected component of pred");
    eval_cmd->add_option("--connectivity", connectivity, "Component connectivity")->check(CLI::IsMember({6, 18, 26}));

    // postprocess
    auto* post_cmd = app.add_subcommand("postprocess", "Keep the largest connected component of a mask");
    std::string in_path;
    post_cmd->add_option("--in", in_path, "Input mask (NIfTI)")->required()->check(CLI::ExistingFile);
    post_cmd->add_option("--connectivity", connectivity, "Component connectivity")->check(CLI::IsMember({6, 18, 26}));

    // scan-crop
    auto* crop_cmd = app.add_subcommand("scan-crop", "Otsu auto-crop (and optionally min-max normalize) a scan");
    int margin = 0;
    bool normalize = false;
    crop_cmd->add_option("--in", in_path, "Input scan (NIfTI)")->required()->check(CLI::ExistingFile);
    crop_cmd->add_option("--margin", margin, "Margin in voxels")->check(CLI::NonNegativeNumber);
    crop_cmd->add_flag("--normalize", normalize, "Min-max normalize the cropped scan to float32");

    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kValidation;
    }

    auto require_out = [&](const char* what) {
        if (out_path.empty()) throw ValidationError(std::string("--out is required (") + what + ")");
    };
    auto resolve_seed = [&] {
        if (seed) return *seed;
        const std::uint64_t s = detail::entropy_seed();
        log("no --seed given; using entropy seed " + std::to_string(s));
        out << "seed: " << s << '\n';
        return s;
    };

    try {
        if (*synth_cmd) {
            require_out("tree JSON path");
            RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
            rc.gco.rng_seed = resolve_seed();
            const auto domain = resolve_domain(rc, GridSpec::cube(grid_n, spacing));
            log("synthesizing " + std::to_string(rc.gco.terminal_count) + " terminals");
            const auto t0 = std::chrono::steady_clock::now();
            const auto res = synthesize(domain.second, domain.first, rc.gco, rc.schedule);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

            const auto stats = nlohmann::json{{"nodes", res.tree.nodes.size()},
                                              {"terminals", terminal_ids(res.tree).size()},
                                              {"total_length_um", total_length(res.tree)},
                                              {"cost_trace", res.cost_trace},
                                              {"rejected_sweeps", res.rejected_sweeps}};
            nlohmann::json doc{{"tree", tree_to_json(res.tree)},
                               {"stats", stats},
                               {"provenance", {{"seed", rc.gco.rng_seed}, {"config", rc.to_json()}}}};
            detail::write_text(out_path, doc.dump(1) + "\n");
            log("synthesis took " + std::to_string(secs) + " s");
            out << "nodes: " << stats["nodes"] << "\nterminals: " << stats["terminals"]
                << "\ntotal_length_um: " << stats["total_length_um"] << "\ncost_trace: " << stats["cost_trace"]
                << '\n';
            return kOk;
        }

        if (*vox_cmd) {
            require_out("label NIfTI path");
            GridSpec g = GridSpec::cube(grid_n, spacing);
            if (!dims.empty()) g.dims = {dims[0], dims[1], dims[2]};
            if (!origin.empty()) g.origin = {origin[0], origin[1], origin[2]};
            g.validate();
            const VesselTree tree = detail::load_tree_file(tree_path);
            const auto label = voxelize(tree, g, threads);
            nifti::write_nifti(label, out_path);
            out << "foreground_voxels: " << count_foreground(label) << '\n';
            return kOk;
        }

        if (*gen_cmd) {
            require_out("output directory");
            const RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
            DatasetRequest req;
            req.trees = trees;
            req.grid = grid_n;
            req.spacing_um = spacing;
            req.seed = resolve_seed();
            req.threads = threads;
            req.out_dir = out_path;
            log("generating " + std::to_string(trees) + " samples with " + std::to_string(threads) + " thread(s)");
            const auto res = generate_dataset(rc, req);
            out << "samples: " << res.manifest.samples.size() << "\nmanifest: " << res.manifest_path.string() << '\n';
            if (res.failures.empty()) return kOk;
            bool io = false;
            for (const auto& f : res.failures) {
                log("sample " + std::to_string(f.index) + " failed: " + f.message);
                io |= f.kind == SampleFailure::Kind::Io;
            }
            return io ? kIo : kValidation;
        }

        if (*eval_cmd) {
            const LabelVolume pred = nifti::read_label(pred_path);
            const LabelVolume gt = nifti::read_label(gt_path);
            if (pred.grid.dims != gt.grid.dims) throw ValidationError("--pred and --gt have different grid dims");
            std::vector<std::pair<std::string, MetricsReport>> rows{{"raw", evaluate(pred, gt)}};
            if (postprocess) rows.emplace_back("postprocess", evaluate(largest_component(pred, connectivity), gt));
            nlohmann::json report = nlohmann::json::object();
            for (const auto& [name, r] : rows) report[name] = report_to_json(r);
            out << format_table(rows);
            if (!out_path.empty()) detail::write_text(out_path, report.dump(2) + "\n");
            else out << report.dump(2) << '\n';
            return kOk;
        }

        if (*post_cmd) {
            require_out("output mask path");
            const LabelVolume mask = nifti::read_label(in_path);
            const LabelVolume kept = largest_component(mask, connectivity);
            nifti::write_nifti(kept, out_path);
            out << "components: " << count_components(mask, connectivity) << "\nkept_voxels: " << count_foreground(kept)
                << '\n';
            return kOk;
        }

        if (*crop_cmd) {
            require_out("output scan path");
            const auto vol = nifti::read_nifti(in_path);
            const CropBox box = detail::with_any_volume(vol, [&](const auto& v) {
                auto [cropped, b] = otsu_crop(v, margin);
                if (normalize) nifti::write_nifti(minmax_normalize(cropped), out_path);
                else nifti::write_nifti(cropped, out_path);
                return b;
            });
            out << "crop_lo: " << box.lo[0] << ' ' << box.lo[1] << ' ' << box.lo[2] << "\ncrop_hi: " << box.hi[0]
                << ' ' << box.hi[1] << ' ' << box.hi[2] << '\n';
            return kOk;
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kInternal;
    }
    return kInternal;
}

}  // namespace venosynth::cli
