#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fgs/dataset.hpp"
#include "fgs/rng.hpp"
#include "fgs/surrogate.hpp"

namespace fs = std::filesystem;
using namespace fgs;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("fgs_dataset_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ImageTile gradient_tile(int h, int w) {
    ImageTile t = ImageTile::filled(h, w, 3, 0.0f);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch)
                t.at(r, c, ch) = static_cast<float>((r * w + c + ch) % 256) / 255.0f;
    return t;
}

DatasetManifest counted_manifest(const std::string& labelset,
                                 const std::vector<std::pair<std::string, int>>& counts) {
    DatasetManifest m;
    m.labelset_id = labelset;
    for (const auto& [cls, n] : counts)
        for (int i = 0; i < n; ++i)
            m.entries.push_back({cls + "/" + std::to_string(i) + ".png", cls, ""});
    return m;
}

}  // namespace

TEST_CASE("tile_layer") {
    ImageTile layer = gradient_tile(64, 96);
    SUBCASE("full-size box reproduces the layer") {
        ImageTile square = gradient_tile(64, 64);
        auto tiles = tile_layer(square, {{0, 0, 64, 64}});
        REQUIRE(tiles.size() == 1);
        CHECK(tiles[0].pixels == square.pixels);
    }
    SUBCASE("offset crop equals direct indexing") {
        auto tiles = tile_layer(layer, {{10, 5, 32, 16}});
        REQUIRE(tiles.size() == 1);
        const ImageTile& t = tiles[0];
        CHECK(t.h == 16);
        CHECK(t.w == 32);
        for (int r = 0; r < t.h; ++r)
            for (int c = 0; c < t.w; ++c)
                for (int ch = 0; ch < 3; ++ch)
                    CHECK(t.at(r, c, ch) == layer.at(5 + r, 10 + c, ch));
    }
    SUBCASE("order preserving over several boxes") {
        auto tiles = tile_layer(layer, {{0, 0, 8, 8}, {8, 0, 8, 8}, {16, 0, 8, 8}});
        REQUIRE(tiles.size() == 3);
        CHECK(tiles[1].at(0, 0, 0) == layer.at(0, 8, 0));
        CHECK(tiles[2].at(0, 0, 0) == layer.at(0, 16, 0));
    }
    SUBCASE("out-of-bounds box throws an error naming the box") {
        CHECK_THROWS_WITH_AS(tile_layer(layer, {{90, 0, 32, 32}}),
                             doctest::Contains("(90,0,32,32)"), DimensionError);
    }
}

TEST_CASE("split") {
    SUBCASE("100 items split 75/25") {
        auto m = counted_manifest("hr1", {{"no_defect", 100}});
        split(m, 1, false);
        CHECK(entries_for_split(m, "train").size() == 75);
        CHECK(entries_for_split(m, "test").size() == 25);
    }
    SUBCASE("stratified 96+4 puts exactly one defect in test") {
        auto m = counted_manifest("hr1", {{"no_defect", 96}, {"seeded_1", 4}});
        split(m, 2, true);
        int defect_test = 0;
        for (const auto& e : entries_for_split(m, "test"))
            if (e.class_name == "seeded_1") ++defect_test;
        CHECK(defect_test == 1);
        CHECK(entries_for_split(m, "train").size() == 75);
    }
    SUBCASE("train and test partition the manifest") {
        auto m = counted_manifest("hr1", {{"no_defect", 41}, {"seeded_2", 13}});
        split(m, 3, true);
        std::set<std::string> train, test;
        for (const auto& e : m.entries) {
            REQUIRE((e.split == "train" || e.split == "test"));
            (e.split == "train" ? train : test).insert(e.path);
        }
        CHECK(train.size() + test.size() == 54);
        for (const auto& p : test) CHECK(train.count(p) == 0);
    }
    SUBCASE("same seed gives the identical split") {
        auto a = counted_manifest("hr1", {{"no_defect", 50}, {"seeded_3", 10}});
        auto b = a;
        split(a, 7, true);
        split(b, 7, true);
        for (std::size_t i = 0; i < a.entries.size(); ++i)
            CHECK(a.entries[i].split == b.entries[i].split);
    }
}

TEST_CASE("class_stats") {
    SUBCASE("published HR-1 percentages") {
        auto m = counted_manifest(
            "hr1", {{"no_defect", 16738}, {"seeded_1", 376}, {"seeded_2", 188}, {"seeded_3", 188}});
        auto stats = class_stats(m);
        REQUIRE(stats.size() == 4);
        CHECK(std::round(stats[0].percent * 10.0) / 10.0 == doctest::Approx(95.7));
        CHECK(std::round(stats[1].percent * 10.0) / 10.0 == doctest::Approx(2.1));
        CHECK(std::round(stats[2].percent * 10.0) / 10.0 == doctest::Approx(1.1));
        CHECK(std::round(stats[3].percent * 10.0) / 10.0 == doctest::Approx(1.1));
    }
    SUBCASE("published JBK-75 defect-free share") {
        auto m = counted_manifest("jbk75", {{"no_defect", 19899},
                                            {"short_feed", 957},
                                            {"had_defect", 19},
                                            {"short_feed_had_defect", 12}});
        auto stats = class_stats(m);
        CHECK(std::round(stats[0].percent * 10.0) / 10.0 == doctest::Approx(95.3));
        std::size_t total = 0;
        double pct = 0.0;
        for (const auto& s : stats) {
            total += s.count;
            pct += s.percent;
        }
        CHECK(total == 20887);
        CHECK(pct == doctest::Approx(100.0).epsilon(1e-3));
    }
    SUBCASE("single class is 100 percent") {
        auto m = counted_manifest("hr1", {{"seeded_2", 7}});
        auto stats = class_stats(m);
        bool found = false;
        for (const auto& s : stats)
            if (s.class_name == "seeded_2") {
                CHECK(s.percent == doctest::Approx(100.0));
                found = true;
            }
        CHECK(found);
    }
    SUBCASE("permutation invariance over manifest order") {
        auto m = counted_manifest("hr1", {{"no_defect", 9}, {"seeded_1", 4}, {"seeded_3", 2}});
        auto shuffled = m;
        Rng rng(5);
        for (std::size_t i = shuffled.entries.size(); i > 1; --i)
            std::swap(shuffled.entries[i - 1], shuffled.entries[rng.uniform_int(i)]);
        auto a = class_stats(m);
        auto b = class_stats(shuffled);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].class_name == b[i].class_name);
            CHECK(a[i].count == b[i].count);
        }
    }
}

TEST_CASE("add_noise") {
    ImageTile img = ImageTile::filled(100, 100, 1, 0.5f);
    SUBCASE("sigma zero is the identity") {
        CHECK(add_noise(img, 0.0f, 3).pixels == img.pixels);
    }
    SUBCASE("same seed twice is identical") {
        CHECK(add_noise(img, 0.3f, 11).pixels == add_noise(img, 0.3f, 11).pixels);
    }
    SUBCASE("clipping keeps range and shrinks the std") {
        ImageTile big = ImageTile::filled(1000, 1000, 1, 0.5f);
        ImageTile noisy = add_noise(big, 0.5f, 13);
        double sum = 0.0, sum2 = 0.0;
        float lo = 1.0f, hi = 0.0f;
        for (float v : noisy.pixels) {
            sum += v;
            sum2 += static_cast<double>(v) * v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        double n = static_cast<double>(noisy.pixels.size());
        double mean = sum / n;
        double stddev = std::sqrt(sum2 / n - mean * mean);
        CHECK(lo >= 0.0f);
        CHECK(hi <= 1.0f);
        CHECK(stddev < 0.5);
        // Clipping is symmetric around 0.5, so the mean stays put (3-sigma MC bound).
        CHECK(std::abs(mean - 0.5) < 3.0 * 0.5 / std::sqrt(n));
    }
}

TEST_CASE("png round trip") {
    auto dir = temp_dir("png");
    SUBCASE("save then load differs by at most 1/255") {
        ImageTile t = gradient_tile(32, 32);
        Rng rng(9);
        for (auto& v : t.pixels) v = rng.uniform();
        std::string path = (dir / "rt.png").string();
        save_png(t, path);
        ImageTile back = load_png(path);
        REQUIRE(back.pixels.size() == t.pixels.size());
        float max_diff = 0.0f;
        for (std::size_t i = 0; i < t.pixels.size(); ++i)
            max_diff = std::max(max_diff, std::abs(t.pixels[i] - back.pixels[i]));
        CHECK(max_diff <= 1.0f / 255.0f + 1e-6f);
    }
    SUBCASE("grayscale is replicated to three channels") {
        ImageTile g = ImageTile::filled(8, 8, 1, 0.25f);
        std::string path = (dir / "gray.png").string();
        save_png(g, path);
        ImageTile back = load_png(path);
        CHECK(back.c == 3);
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) {
                CHECK(back.at(r, c, 0) == back.at(r, c, 1));
                CHECK(back.at(r, c, 1) == back.at(r, c, 2));
            }
    }
    SUBCASE("truncated file raises an I/O error") {
        ImageTile t = gradient_tile(16, 16);
        std::string path = (dir / "trunc.png").string();
        save_png(t, path);
        auto size = fs::file_size(path);
        fs::resize_file(path, size / 2);
        CHECK_THROWS_AS(load_png(path), IoError);
    }
    SUBCASE("missing file raises an I/O error naming the path") {
        CHECK_THROWS_WITH_AS(load_png((dir / "absent.png").string()),
                             doctest::Contains("absent.png"), IoError);
    }
}

TEST_CASE("manifest round trip") {
    auto dir = temp_dir("manifest");
    DatasetManifest m = counted_manifest("jbk75", {{"no_defect", 3}, {"short_feed", 2}});
    m.seed = 42;
    m.entries[0].split = "train";
    m.entries[1].split = "test";
    std::string path = (dir / "m.tsv").string();
    save_manifest(m, path);
    DatasetManifest back = load_manifest(path);
    CHECK(back.labelset_id == "jbk75");
    CHECK(back.seed == 42);
    REQUIRE(back.entries.size() == m.entries.size());
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        CHECK(back.entries[i].path == m.entries[i].path);
        CHECK(back.entries[i].class_name == m.entries[i].class_name);
        CHECK(back.entries[i].split == m.entries[i].split);
    }
}

TEST_CASE("label sets") {
    CHECK(LabelSet::get("jbk75").names ==
          std::vector<std::string>{"no_defect", "short_feed", "had_defect", "short_feed_had_defect"});
    CHECK(LabelSet::get("hr1").names ==
          std::vector<std::string>{"no_defect", "seeded_1", "seeded_2", "seeded_3"});
    CHECK(LabelSet::get("combined").names.size() == 7);
    CHECK(LabelSet::get("hr1").index_of("seeded_2") == 2);
    CHECK_THROWS_AS(LabelSet::get("hr1").index_of("bogus"), ContractError);
    CHECK_THROWS_AS(LabelSet::get("nope"), ContractError);
}

TEST_CASE("surrogate generation") {
    auto dir = temp_dir("surrogate");
    SUBCASE("class counts match the config exactly") {
        SurrogateConfig cfg;
        cfg.tile_size = 32;
        cfg.seed = 5;
        cfg.counts = {{"no_defect", 9}, {"seeded_1", 2}, {"seeded_2", 1}, {"seeded_3", 2}};
        SurrogateResult res = surrogate_generate(cfg, (dir / "c").string());
        auto stats = class_stats(res.manifest);
        std::size_t total = 0;
        for (const auto& s : stats) {
            CHECK(s.count == cfg.counts[s.class_name]);
            total += s.count;
        }
        CHECK(total == 14);
        CHECK(res.masks.size() == 5);  // one mask per defect tile
    }
    SUBCASE("only no-defect tiles means no masks") {
        SurrogateConfig cfg;
        cfg.tile_size = 32;
        cfg.counts = {{"no_defect", 10}};
        SurrogateResult res = surrogate_generate(cfg, (dir / "clean").string());
        CHECK(res.manifest.entries.size() == 10);
        CHECK(res.masks.empty());
    }
    SUBCASE("zero total count is an error") {
        SurrogateConfig cfg;
        cfg.counts.clear();
        CHECK_THROWS_AS(cfg.validate(), ContractError);
    }
    SUBCASE("masked pixels respect the contrast floor; unmasked pixels match the clean tile") {
        SurrogateConfig cfg;
        cfg.tile_size = 48;
        cfg.seed = 21;
        cfg.contrast = 0.25f;
        cfg.counts = {{"no_defect", 2}, {"seeded_1", 2}, {"seeded_2", 2}, {"seeded_3", 2}};
        SurrogateResult res = surrogate_generate(cfg, (dir / "k").string());
        int checked_tiles = 0;
        for (const auto& e : res.manifest.entries) {
            if (e.class_name == "no_defect") continue;
            auto it = res.masks.find(e.path);
            REQUIRE(it != res.masks.end());
            const DefectMask& mask = it->second;
            ImageTile defect = load_png(e.path);
            // Clean counterpart regenerated via the tile's global generation
            // index, which matches manifest order.
            std::size_t index = static_cast<std::size_t>(&e - res.manifest.entries.data());
            ImageTile clean = surrogate_clean_tile(cfg, index);
            std::vector<char> masked(static_cast<std::size_t>(cfg.tile_size) * cfg.tile_size, 0);
            for (const auto& px : mask.pixels) {
                masked[static_cast<std::size_t>(px.row) * cfg.tile_size + px.col] = 1;
                float diff = std::abs(px.value - clean.at(px.row, px.col, px.channel));
                CHECK(diff >= cfg.contrast - 1.0f / 255.0f);
            }
            for (int r = 0; r < cfg.tile_size; ++r)
                for (int c = 0; c < cfg.tile_size; ++c)
                    if (!masked[static_cast<std::size_t>(r) * cfg.tile_size + c])
                        for (int ch = 0; ch < 3; ++ch)
                            CHECK(std::abs(defect.at(r, c, ch) - clean.at(r, c, ch)) <=
                                  1.0f / 255.0f + 1e-6f);
            ++checked_tiles;
        }
        CHECK(checked_tiles == 6);
    }
    SUBCASE("same config regenerates byte-identical tiles") {
        SurrogateConfig cfg;
        cfg.tile_size = 32;
        cfg.seed = 77;
        cfg.counts = {{"no_defect", 3}, {"seeded_2", 2}};
        surrogate_generate(cfg, (dir / "d1").string());
        surrogate_generate(cfg, (dir / "d2").string());
        for (const auto& f : fs::recursive_directory_iterator(dir / "d1")) {
            if (!f.is_regular_file()) continue;
            auto rel = fs::relative(f.path(), dir / "d1");
            std::ifstream a(f.path(), std::ios::binary), b(dir / "d2" / rel, std::ios::binary);
            std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
            std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
            CHECK(sa == sb);
        }
    }
    SUBCASE("surrogate config round trip") {
        SurrogateConfig cfg;
        cfg.tile_size = 96;
        cfg.labelset_id = "combined";
        cfg.contrast = 0.3f;
        cfg.seed = 1234;
        cfg.counts = {{"no_defect", 50}, {"short_feed", 5}};
        std::string path = (dir / "s.cfg").string();
        save_surrogate_config(cfg, path);
        SurrogateConfig back = load_surrogate_config(path);
        CHECK(back.tile_size == 96);
        CHECK(back.labelset_id == "combined");
        CHECK(back.contrast == doctest::Approx(0.3));
        CHECK(back.seed == 1234);
        CHECK(back.counts == cfg.counts);
    }
}
