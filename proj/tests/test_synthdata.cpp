#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "fgs/dataset.hpp"
#include "fgs/rng.hpp"
#include "fgs/surrogate.hpp"
#include "fgs/synthdata.hpp"

namespace fs = std::filesystem;
using namespace fgs;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("fgs_synth_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ImageTile flat_tile(int s, float v) { return ImageTile::filled(s, s, 3, v); }

}  // namespace

TEST_CASE("extract_mask explicit") {
    ImageTile img = flat_tile(16, 0.5f);
    img.at(5, 5, 0) = 0.9f;
    SUBCASE("single coordinate copies the image value") {
        DefectMask m = extract_mask_explicit(img, {{5, 5, 0}});
        REQUIRE(m.pixels.size() == 1);
        CHECK(m.pixels[0].row == 5);
        CHECK(m.pixels[0].col == 5);
        CHECK(m.pixels[0].channel == 0);
        CHECK(m.pixels[0].value == 0.9f);
        CHECK(m.min_row == 5);
        CHECK(m.max_col == 5);
    }
    SUBCASE("empty coordinate list is an error") {
        CHECK_THROWS_WITH_AS(extract_mask_explicit(img, {}), doctest::Contains("no defect pixels"),
                             ContractError);
    }
}

TEST_CASE("extract_mask threshold") {
    SUBCASE("one outlier pixel against a flat background") {
        ImageTile img = flat_tile(16, 0.5f);
        for (int ch = 0; ch < 3; ++ch) img.at(7, 3, ch) = 0.9f;
        ThresholdExtract params;
        params.tau = 0.2f;
        DefectMask m = extract_mask_threshold(img, params);
        std::set<std::pair<int, int>> coords;
        for (const auto& px : m.pixels) {
            coords.insert({px.row, px.col});
            CHECK(px.value == 0.9f);
        }
        CHECK(coords == std::set<std::pair<int, int>>{{7, 3}});
    }
    SUBCASE("flat image yields no pixels and errors") {
        ImageTile img = flat_tile(16, 0.5f);
        ThresholdExtract params;
        params.tau = 0.2f;
        CHECK_THROWS_WITH_AS(extract_mask_threshold(img, params),
                             doctest::Contains("no defect pixels"), ContractError);
    }
    SUBCASE("paired clean reference") {
        ImageTile clean = flat_tile(12, 0.4f);
        ImageTile defect = clean;
        defect.at(2, 9, 1) = 0.8f;
        ThresholdExtract params;
        params.tau = 0.2f;
        params.clean_reference = &clean;
        DefectMask m = extract_mask_threshold(defect, params);
        REQUIRE(m.pixels.size() == 1);
        CHECK(m.pixels[0].row == 2);
        CHECK(m.pixels[0].col == 9);
        CHECK(m.pixels[0].channel == 1);
    }
}

TEST_CASE("cds") {
    ImageTile base = flat_tile(20, 0.45f);
    base.label = "no_defect";
    DefectMask mask;
    mask.source_class = "seeded_1";
    mask.pixels = {{3, 4, 0, 0.9f}, {3, 5, 0, 0.85f}, {4, 4, 1, 0.1f}};
    mask.recompute_bbox();

    SUBCASE("definitional check: mask coords carry mask values, everything else untouched") {
        ImageTile out = cds(base, mask);
        CHECK(out.label == "seeded_1");
        std::set<std::tuple<int, int, int>> touched;
        for (const auto& px : mask.pixels) {
            CHECK(out.at(px.row, px.col, px.channel) == px.value);
            touched.insert({px.row, px.col, px.channel});
        }
        for (int r = 0; r < 20; ++r)
            for (int c = 0; c < 20; ++c)
                for (int ch = 0; ch < 3; ++ch)
                    if (!touched.count({r, c, ch})) CHECK(out.at(r, c, ch) == base.at(r, c, ch));
    }
    SUBCASE("idempotence") {
        ImageTile once = cds(base, mask);
        ImageTile twice = cds(once, mask);
        CHECK(once.pixels == twice.pixels);
    }
    SUBCASE("out-of-bounds bbox is an error") {
        DefectMask big = mask;
        big.pixels.push_back({25, 2, 0, 0.5f});
        big.recompute_bbox();
        CHECK_THROWS_AS(cds(base, big), DimensionError);
    }
    SUBCASE("surrogate ground-truth round trip reproduces the defect tile") {
        auto dir = temp_dir("cds_rt");
        SurrogateConfig cfg;
        cfg.tile_size = 32;
        cfg.seed = 31;
        cfg.counts = {{"no_defect", 1}, {"seeded_1", 2}, {"seeded_3", 1}};
        SurrogateResult res = surrogate_generate(cfg, dir.string());
        int rebuilt = 0;
        for (std::size_t i = 0; i < res.manifest.entries.size(); ++i) {
            const auto& e = res.manifest.entries[i];
            if (e.class_name == "no_defect") continue;
            ImageTile defect = load_png(e.path);
            ImageTile clean = surrogate_clean_tile(cfg, i);
            ImageTile again = cds(clean, res.masks.at(e.path));
            for (std::size_t k = 0; k < defect.pixels.size(); ++k)
                CHECK(std::abs(again.pixels[k] - defect.pixels[k]) <= 1.0f / 255.0f + 1e-6f);
            ++rebuilt;
        }
        CHECK(rebuilt == 3);
    }
}

TEST_CASE("rds") {
    ImageTile base = flat_tile(24, 0.5f);
    DefectMask mask;
    mask.source_class = "seeded_2";
    mask.pixels = {{10, 10, 0, 0.9f}, {10, 12, 0, 0.8f}, {12, 10, 2, 0.1f}};
    mask.recompute_bbox();

    SUBCASE("same seed places identically") {
        CHECK(rds(base, mask, 5).pixels == rds(base, mask, 5).pixels);
    }
    SUBCASE("pairwise offsets are preserved") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            ImageTile out = rds(base, mask, seed);
            // Find the translation by locating the 0.9 pixel.
            int dr = -1000, dc = -1000;
            for (int r = 0; r < 24; ++r)
                for (int c = 0; c < 24; ++c)
                    if (out.at(r, c, 0) == 0.9f) {
                        dr = r - 10;
                        dc = c - 10;
                    }
            REQUIRE(dr != -1000);
            for (const auto& px : mask.pixels)
                CHECK(out.at(px.row + dr, px.col + dc, px.channel) == px.value);
        }
    }
    SUBCASE("single-pixel mask sweeps multiple in-bounds positions") {
        DefectMask dot;
        dot.source_class = "seeded_2";
        dot.pixels = {{0, 0, 0, 0.95f}};
        dot.recompute_bbox();
        std::set<std::pair<int, int>> positions;
        for (std::uint64_t seed = 0; seed < 64; ++seed) {
            ImageTile out = rds(base, dot, seed);
            for (int r = 0; r < 24; ++r)
                for (int c = 0; c < 24; ++c)
                    if (out.at(r, c, 0) == 0.95f) positions.insert({r, c});
        }
        CHECK(positions.size() > 10);
    }
    SUBCASE("mask larger than the image is an error") {
        ImageTile tiny = flat_tile(2, 0.5f);
        CHECK_THROWS_AS(rds(tiny, mask, 1), DimensionError);
    }
}

TEST_CASE("sam") {
    DatasetManifest m;
    m.labelset_id = "jbk75";
    for (int i = 0; i < 19; ++i)
        m.entries.push_back({"had_defect/" + std::to_string(i) + ".png", "had_defect", ""});
    for (int i = 0; i < 50; ++i)
        m.entries.push_back({"no_defect/" + std::to_string(i) + ".png", "no_defect", ""});

    SUBCASE("target equal to current count is a no-op") {
        DatasetManifest copy = m;
        sam(copy, "had_defect", 19, 3);
        CHECK(copy.entries.size() == m.entries.size());
    }
    SUBCASE("19 oversampled to 500 duplicates existing entries only") {
        DatasetManifest copy = m;
        std::set<std::string> originals;
        for (const auto& e : m.entries)
            if (e.class_name == "had_defect") originals.insert(e.path);
        sam(copy, "had_defect", 500, 3);
        std::size_t count = 0;
        for (const auto& e : copy.entries)
            if (e.class_name == "had_defect") {
                CHECK(originals.count(e.path) == 1);
                ++count;
            }
        CHECK(count == 500);
        // Other classes untouched.
        std::size_t clean = 0;
        for (const auto& e : copy.entries)
            if (e.class_name == "no_defect") ++clean;
        CHECK(clean == 50);
    }
    SUBCASE("same seed gives the identical duplicate sequence") {
        DatasetManifest a = m, b = m;
        sam(a, "had_defect", 100, 9);
        sam(b, "had_defect", 100, 9);
        REQUIRE(a.entries.size() == b.entries.size());
        for (std::size_t i = 0; i < a.entries.size(); ++i) CHECK(a.entries[i].path == b.entries[i].path);
    }
    SUBCASE("empty class is an error") {
        CHECK_THROWS_AS(sam(m, "short_feed", 10, 1), ContractError);
    }
    SUBCASE("target below current count is an error") {
        CHECK_THROWS_AS(sam(m, "no_defect", 10, 1), ContractError);
    }
}

TEST_CASE("mask file round trip") {
    auto dir = temp_dir("maskio");
    DefectMask mask;
    mask.source_class = "seeded_3";
    mask.pixels = {{1, 2, 0, 0.75f}, {3, 4, 2, 0.125f}};
    mask.recompute_bbox();
    std::string path = (dir / "m.mask").string();
    save_mask(mask, path);
    DefectMask back = load_mask(path);
    CHECK(back.source_class == "seeded_3");
    REQUIRE(back.pixels.size() == 2);
    CHECK(back.pixels[0].row == 1);
    CHECK(back.pixels[0].value == doctest::Approx(0.75));
    CHECK(back.pixels[1].channel == 2);
    CHECK(back.min_row == 1);
    CHECK(back.max_col == 4);
}

TEST_CASE("strategy parsing") {
    CHECK(parse_strategy("cds") == BalanceStrategy::Cds);
    CHECK(parse_strategy("rds") == BalanceStrategy::Rds);
    CHECK(parse_strategy("sam") == BalanceStrategy::Sam);
    CHECK(parse_strategy("gan") == BalanceStrategy::Gan);
    CHECK_THROWS_AS(parse_strategy("bogus"), ContractError);
    CHECK(strategy_name(BalanceStrategy::Rds) == "rds");
}

TEST_CASE("balance") {
    auto dir = temp_dir("balance");
    SurrogateConfig cfg;
    cfg.tile_size = 32;
    cfg.seed = 13;
    cfg.counts = {{"no_defect", 12}, {"seeded_1", 3}, {"seeded_2", 2}};
    SurrogateResult res = surrogate_generate(cfg, (dir / "corpus").string());

    BalanceResources resources;
    for (std::size_t i = 0; i < res.manifest.entries.size(); ++i) {
        const auto& e = res.manifest.entries[i];
        if (e.class_name == "no_defect")
            resources.clean_pool.push_back(load_png(e.path));
        else
            resources.masks[e.class_name].push_back(res.masks.at(e.path));
    }

    SUBCASE("targets equal to current counts are a no-op") {
        DatasetManifest m = res.manifest;
        balance(m, BalanceStrategy::Sam, {{"seeded_1", 3}}, 1, resources, (dir / "noop").string());
        CHECK(m.entries.size() == res.manifest.entries.size());
    }
    SUBCASE("sam balance reaches the target exactly and keeps the majority untouched") {
        DatasetManifest m = res.manifest;
        balance(m, BalanceStrategy::Sam, {{"seeded_1", 10}, {"seeded_2", 10}}, 2, resources,
                (dir / "sam").string());
        auto stats = class_stats(m);
        for (const auto& s : stats) {
            if (s.class_name == "no_defect") CHECK(s.count == 12);
            if (s.class_name == "seeded_1") CHECK(s.count == 10);
            if (s.class_name == "seeded_2") CHECK(s.count == 10);
        }
    }
    SUBCASE("cds balance writes tiles that pass the definitional check") {
        DatasetManifest m = res.manifest;
        balance(m, BalanceStrategy::Cds, {{"seeded_1", 6}}, 3, resources, (dir / "cds").string());
        int synthetic = 0;
        for (const auto& e : m.entries) {
            if (e.path.find("synthetic_") == std::string::npos) continue;
            REQUIRE(e.class_name == "seeded_1");
            ImageTile t = load_png(e.path);
            // Every synthetic tile must contain one of the source masks verbatim
            // (up to PNG quantization).
            bool matched = false;
            for (const auto& mask : resources.masks.at("seeded_1")) {
                bool all = true;
                for (const auto& px : mask.pixels)
                    if (std::abs(t.at(px.row, px.col, px.channel) - px.value) > 1.0f / 255.0f + 1e-6f)
                        all = false;
                if (all) matched = true;
            }
            CHECK(matched);
            ++synthetic;
        }
        CHECK(synthetic == 3);
    }
    SUBCASE("rds balance reaches targets deterministically") {
        DatasetManifest a = res.manifest, b = res.manifest;
        balance(a, BalanceStrategy::Rds, {{"seeded_2", 8}}, 4, resources, (dir / "rds_a").string());
        balance(b, BalanceStrategy::Rds, {{"seeded_2", 8}}, 4, resources, (dir / "rds_b").string());
        REQUIRE(a.entries.size() == b.entries.size());
        std::size_t count = 0;
        for (const auto& e : a.entries)
            if (e.class_name == "seeded_2") ++count;
        CHECK(count == 8);
        for (std::size_t i = 0; i < a.entries.size(); ++i) {
            if (a.entries[i].path.find("synthetic_") == std::string::npos) continue;
            ImageTile ta = load_png(a.entries[i].path);
            ImageTile tb = load_png(b.entries[i].path);
            CHECK(ta.pixels == tb.pixels);
        }
    }
    SUBCASE("missing resources produce an error naming the class") {
        DatasetManifest m = res.manifest;
        BalanceResources empty;
        CHECK_THROWS_WITH_AS(
            balance(m, BalanceStrategy::Cds, {{"seeded_1", 6}}, 5, empty, (dir / "err").string()),
            doctest::Contains("seeded_1"), ContractError);
        BalanceResources no_gen;
        no_gen.masks = resources.masks;
        no_gen.clean_pool = resources.clean_pool;
        CHECK_THROWS_WITH_AS(
            balance(m, BalanceStrategy::Gan, {{"seeded_1", 6}}, 5, no_gen, (dir / "err2").string()),
            doctest::Contains("gan"), ContractError);
    }
}
