/* SPDX-License-Identifier: Apache-2.0 */
#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace venosynth;
using vtest::TempDir;

namespace {

RunConfig small_config() {
    RunConfig rc;
    rc.jitter.terminal_count_min = 10;
    rc.jitter.terminal_count_max = 20;
    return rc;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p);
    out << s;
}

}  // namespace

TEST(RunConfig, DefaultsWhenEmpty) {
    const RunConfig rc = run_config_from_json(nlohmann::json::object());
    EXPECT_EQ(rc.gco.terminal_count, GcoConfig{}.terminal_count);
    EXPECT_EQ(rc.jitter.terminal_count_min, 150);
    EXPECT_EQ(rc.jitter.terminal_count_max, 250);
    EXPECT_EQ(rc.jitter.material_weights, (std::vector<double>{5e-8, 6e-8, 7e-8}));
    EXPECT_FALSE(rc.prebuilt);
    EXPECT_FALSE(rc.ellipsoid);
}

TEST(RunConfig, ShippedDefaultFileLoads) {
    const RunConfig rc = load_run_config(VENOSYNTH_SOURCE_DIR "/tools/configs/default.json");
    EXPECT_EQ(rc.gco.terminal_count, 200);
    EXPECT_EQ(schedule_to_json(rc.schedule), schedule_to_json(GcoSchedule::default_schedule()));
}

TEST(RunConfig, SectionsAndRelativePaths) {
    TempDir dir;
    std::filesystem::create_directories(dir / "cfg");
    write_text(dir / "cfg" / "tree.json", tree_to_json(vtest::y_tree()).dump());
    write_text(dir / "cfg" / "run.json", R"({
        "gco": {"terminal_count": 12},
        "prebuilt_path": "tree.json",
        "domain": {"nifti": "mask.nii"},
        "jitter": {"terminal_count": [3, 4], "material_weights": [1e-8]}
    })");
    const RunConfig rc = load_run_config(dir / "cfg" / "run.json");
    EXPECT_EQ(rc.gco.terminal_count, 12);
    ASSERT_TRUE(rc.prebuilt);
    EXPECT_EQ(*rc.prebuilt, vtest::y_tree());
    ASSERT_TRUE(rc.mask_path);
    EXPECT_EQ(*rc.mask_path, dir / "cfg" / "mask.nii");
    EXPECT_EQ(rc.jitter.terminal_count_min, 3);
    EXPECT_EQ(rc.jitter.material_weights, std::vector<double>{1e-8});
    const RunConfig again = run_config_from_json(rc.to_json());
    EXPECT_EQ(again.to_json(), rc.to_json());
}

TEST(RunConfig, Rejections) {
    using nlohmann::json;
    EXPECT_THROW(run_config_from_json(json::array()), ValidationError);
    EXPECT_THROW(run_config_from_json(json{{"gcoo", json::object()}}), ValidationError);
    EXPECT_THROW(run_config_from_json(json{{"gco", {{"terminal_count", 0}}}}), ValidationError);
    EXPECT_THROW(run_config_from_json(json{{"gco", {{"terminal_count", "many"}}}}), ValidationError);
    EXPECT_THROW(run_config_from_json(json{{"jitter", {{"terminal_count", {9, 3}}}}}), ValidationError);
    EXPECT_THROW(run_config_from_json(json{{"jitter", {{"material_weights", json::array()}}}}), ValidationError);
    EXPECT_THROW(run_config_from_json(json{{"domain", json::object()}}), ValidationError);
    EXPECT_THROW(run_config_from_json(json{{"prebuilt", json::object()}, {"prebuilt_path", "x"}}), ValidationError);
    TempDir dir;
    write_text(dir / "bad.json", "{");
    EXPECT_THROW(load_run_config(dir / "bad.json"), ValidationError);
    EXPECT_THROW(load_run_config(dir / "absent.json"), IoError);
}

TEST(RunConfig, TerminalCountErrorNamesField) {
    try {
        run_config_from_json(nlohmann::json{{"gco", {{"terminal_count", 0}}}});
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("terminal_count"), std::string::npos);
    }
}

TEST(Jitter, StaysInRangesAndDependsOnIndex) {
    const RunConfig rc = run_config_from_json(nlohmann::json::object());
    std::set<int> counts;
    std::set<double> weights;
    for (int i = 0; i < 200; ++i) {
        const GcoConfig c = jittered_config(rc, 42, i);
        EXPECT_GE(c.terminal_count, 150);
        EXPECT_LE(c.terminal_count, 250);
        counts.insert(c.terminal_count);
        weights.insert(c.material_weight);
        EXPECT_EQ(jittered_config(rc, 42, i).rng_seed, c.rng_seed);
    }
    EXPECT_GT(counts.size(), 50u);
    EXPECT_EQ(weights, (std::set<double>{5e-8, 6e-8, 7e-8}));
}

TEST(Domain, InscribedEllipsoidInsideGrid) {
    const GridSpec g = GridSpec::cube(64, 22.6);
    const Ellipsoid e = inscribed_ellipsoid(g);
    const double extent = 63 * 22.6;
    EXPECT_NEAR(e.center.x, extent / 2, 1e-9);
    EXPECT_NEAR(2 * e.semi_axes.x, 0.9 * extent, 1e-9);
    EXPECT_NEAR(e.semi_axes.y / e.semi_axes.x, 0.8, 1e-12);
    EXPECT_NEAR(e.semi_axes.z / e.semi_axes.x, 0.7, 1e-12);
}

TEST(Dataset, ThreadCountDoesNotChangeBytes) {
    TempDir a, b;
    const RunConfig rc = small_config();
    DatasetRequest req;
    req.trees = 4;
    req.grid = 24;
    req.spacing_um = 40.0;
    req.seed = 11;
    req.threads = 1;
    req.out_dir = a.path();
    const auto ra = generate_dataset(rc, req);
    req.threads = 4;
    req.out_dir = b.path();
    const auto rb = generate_dataset(rc, req);
    EXPECT_TRUE(ra.failures.empty());
    EXPECT_TRUE(rb.failures.empty());
    ASSERT_EQ(ra.manifest.samples.size(), 4u);

    std::vector<std::string> names;
    for (const auto& e : std::filesystem::directory_iterator(a.path())) names.push_back(e.path().filename().string());
    EXPECT_EQ(names.size(), 4u * 3u + 1u);
    for (const auto& n : names) EXPECT_EQ(vtest::slurp(a / n), vtest::slurp(b / n)) << n;

    for (const auto& s : ra.manifest.samples) {
        const LabelVolume label = nifti::read_label(a / *s.label_path);
        const auto scan = std::get<ScanVolume>(nifti::read_nifti(a / s.scan_path));
        EXPECT_EQ(label.grid.dims, (std::array<int, 3>{24, 24, 24}));
        EXPECT_GT(count_foreground(label), 0u);
        for (std::size_t i = 0; i < scan.data.size(); ++i) EXPECT_EQ(scan.data[i] >= 128, label.data[i] == 1);
        const int tc = s.extra.at("terminal_count");
        EXPECT_GE(tc, 10);
        EXPECT_LE(tc, 20);
    }
    const auto m = read_manifest(ra.manifest_path);
    EXPECT_EQ(m.rng_seed, 11u);
    EXPECT_EQ(m.config.at("generation").at("trees"), 4);
}

TEST(Dataset, DifferentSeedsDiffer) {
    TempDir a, b;
    DatasetRequest req;
    req.trees = 1;
    req.grid = 20;
    req.spacing_um = 40.0;
    req.seed = 1;
    req.out_dir = a.path();
    generate_dataset(small_config(), req);
    req.seed = 2;
    req.out_dir = b.path();
    generate_dataset(small_config(), req);
    EXPECT_NE(vtest::slurp(a / "synth_000_label.nii"), vtest::slurp(b / "synth_000_label.nii"));
}

TEST(Dataset, FailedSampleLeftOutOfManifest) {
    TempDir dir;
    std::filesystem::create_directories(dir / "synth_001_label.nii");
    DatasetRequest req;
    req.trees = 3;
    req.grid = 20;
    req.spacing_um = 40.0;
    req.seed = 5;
    req.threads = 2;
    req.out_dir = dir.path();
    const auto r = generate_dataset(small_config(), req);
    ASSERT_EQ(r.failures.size(), 1u);
    EXPECT_EQ(r.failures[0].index, 1);
    EXPECT_EQ(r.failures[0].kind, SampleFailure::Kind::Io);
    const auto m = read_manifest(r.manifest_path);
    ASSERT_EQ(m.samples.size(), 2u);
    EXPECT_EQ(m.samples[0].id, "synth_000");
    EXPECT_EQ(m.samples[1].id, "synth_002");
}

TEST(Dataset, RequestValidation) {
    TempDir dir;
    DatasetRequest req;
    req.out_dir = dir.path();
    req.trees = 0;
    EXPECT_THROW(generate_dataset(small_config(), req), ValidationError);
    req.trees = 1;
    req.spacing_um = 0;
    EXPECT_THROW(generate_dataset(small_config(), req), ValidationError);
}
