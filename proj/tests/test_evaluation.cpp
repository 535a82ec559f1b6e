#include <doctest.h>

#include <cmath>

#include "fgs/evaluation.hpp"
#include "fgs/rng.hpp"

using namespace fgs;

namespace {

ImageTile random_tile(int h, int w, int c, std::uint64_t seed) {
    ImageTile t = ImageTile::filled(h, w, c, 0.0f);
    Rng rng(seed);
    for (auto& v : t.pixels) v = rng.uniform();
    return t;
}

// Independent brute-force SSIM: recompute every window's moments from
// scratch with double loops, no sliding tricks.
double ssim_brute(const ImageTile& a, const ImageTile& b, int win) {
    double acc = 0.0;
    std::size_t windows = 0;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    for (int ch = 0; ch < a.c; ++ch)
        for (int r0 = 0; r0 + win <= a.h; ++r0)
            for (int c0 = 0; c0 + win <= a.w; ++c0) {
                double mx = 0, my = 0;
                for (int r = r0; r < r0 + win; ++r)
                    for (int c = c0; c < c0 + win; ++c) {
                        mx += a.at(r, c, ch);
                        my += b.at(r, c, ch);
                    }
                double n = static_cast<double>(win) * win;
                mx /= n;
                my /= n;
                double vx = 0, vy = 0, cov = 0;
                for (int r = r0; r < r0 + win; ++r)
                    for (int c = c0; c < c0 + win; ++c) {
                        vx += (a.at(r, c, ch) - mx) * (a.at(r, c, ch) - mx);
                        vy += (b.at(r, c, ch) - my) * (b.at(r, c, ch) - my);
                        cov += (a.at(r, c, ch) - mx) * (b.at(r, c, ch) - my);
                    }
                vx /= n;
                vy /= n;
                cov /= n;
                acc += ((2 * mx * my + c1) * (2 * cov + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++windows;
            }
    return acc / static_cast<double>(windows);
}

}  // namespace

TEST_CASE("accuracy") {
    CHECK(accuracy({0, 1, 2}, {0, 1, 2}) == 1.0f);
    CHECK(accuracy({1, 2, 0}, {0, 1, 2}) == 0.0f);
    CHECK(accuracy({0, 1, 2, 2}, {0, 1, 2, 3}) == 0.75f);
    CHECK_THROWS_AS(accuracy({0, 1}, {0}), ContractError);
    CHECK_THROWS_AS(accuracy({}, {}), ContractError);
}

TEST_CASE("confusion") {
    SUBCASE("perfect predictions give a diagonal matrix") {
        auto m = confusion({0, 1, 2, 0, 1}, {0, 1, 2, 0, 1}, 3);
        CHECK(m.trace() == 5);
        CHECK(m.total() == 5);
        CHECK(m.at(0, 1) == 0);
    }
    SUBCASE("hand-tallied 6 pairs") {
        // (truth, pred): (0,0),(0,1),(1,1),(1,1),(1,0),(2,2)
        auto m = confusion({0, 1, 1, 1, 0, 2}, {0, 0, 1, 1, 1, 2}, 3);
        CHECK(m.at(0, 0) == 1);
        CHECK(m.at(0, 1) == 1);
        CHECK(m.at(1, 1) == 2);
        CHECK(m.at(1, 0) == 1);
        CHECK(m.at(2, 2) == 1);
        CHECK(m.at(2, 0) == 0);
    }
    SUBCASE("row sums equal per-class truth counts") {
        std::vector<int> truth = {0, 0, 0, 1, 1, 2, 2, 2, 2};
        std::vector<int> preds = {0, 1, 2, 1, 1, 0, 2, 2, 1};
        auto m = confusion(preds, truth, 3);
        auto sums = m.row_sums();
        CHECK(sums == std::vector<std::size_t>{3, 2, 4});
    }
    SUBCASE("trace over total equals accuracy exactly") {
        Rng rng(2);
        std::vector<int> truth, preds;
        for (int i = 0; i < 200; ++i) {
            truth.push_back(static_cast<int>(rng.uniform_int(4)));
            preds.push_back(static_cast<int>(rng.uniform_int(4)));
        }
        auto m = confusion(preds, truth, 4);
        CHECK(accuracy(preds, truth) ==
              static_cast<float>(static_cast<double>(m.trace()) / static_cast<double>(m.total())));
    }
    SUBCASE("out-of-range label throws") {
        CHECK_THROWS_AS(confusion({0, 4}, {0, 1}, 3), ContractError);
        CHECK_THROWS_AS(confusion({0, 1}, {0, -1}, 3), ContractError);
    }
}

TEST_CASE("ssim") {
    SUBCASE("identical images score 1") {
        ImageTile x = random_tile(16, 16, 3, 4);
        CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("constant images 0.5 and 0.7 hit the luminance-only closed form") {
        ImageTile a = ImageTile::filled(16, 16, 1, 0.5f);
        ImageTile b = ImageTile::filled(16, 16, 1, 0.7f);
        double expect = (2.0 * 0.5 * 0.7 + 1e-4) / (0.25 + 0.49 + 1e-4);
        CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-4));
        CHECK(ssim(a, b) == doctest::Approx(0.9460).epsilon(1e-3));
    }
    SUBCASE("symmetry on random pairs") {
        for (std::uint64_t s = 0; s < 5; ++s) {
            ImageTile a = random_tile(12, 12, 3, s * 2);
            ImageTile b = random_tile(12, 12, 3, s * 2 + 1);
            CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-9));
        }
    }
    SUBCASE("matches the brute-force reference within 1e-6 on 16x16 pairs") {
        for (std::uint64_t s = 0; s < 8; ++s) {
            ImageTile a = random_tile(16, 16, 3, 100 + s * 2);
            ImageTile b = random_tile(16, 16, 3, 101 + s * 2);
            CHECK(ssim(a, b) == doctest::Approx(ssim_brute(a, b, 8)).epsilon(1e-6));
        }
    }
    SUBCASE("stays within [-1, 1]") {
        for (std::uint64_t s = 0; s < 10; ++s) {
            ImageTile a = random_tile(10, 10, 1, s);
            ImageTile b = random_tile(10, 10, 1, 77 + s);
            double v = ssim(a, b);
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    }
    SUBCASE("shape mismatch throws") {
        CHECK_THROWS_AS(ssim(random_tile(8, 8, 3, 1), random_tile(8, 9, 3, 1)), DimensionError);
    }
}

TEST_CASE("ssim_report") {
    std::vector<ImageTile> as, bs;
    for (std::uint64_t s = 0; s < 4; ++s) {
        as.push_back(random_tile(10, 10, 1, s));
        bs.push_back(random_tile(10, 10, 1, 50 + s));
    }
    SsimReport rep = ssim_report(as, bs);
    REQUIRE(rep.per_pair.size() == 4);
    double lo = *std::min_element(rep.per_pair.begin(), rep.per_pair.end());
    double hi = *std::max_element(rep.per_pair.begin(), rep.per_pair.end());
    CHECK(rep.mean >= lo);
    CHECK(rep.mean <= hi);
    CHECK_THROWS_AS(ssim_report(as, {}), ContractError);
}

TEST_CASE("eval report") {
    // hr1 labels; truth has 3 no_defect, 2 seeded_1, 1 seeded_2.
    std::vector<int> truth = {0, 0, 0, 1, 1, 2};
    std::vector<int> preds = {0, 0, 1, 1, 1, 2};
    EvalReport rep = make_report(preds, truth, "hr1");
    CHECK(rep.accuracy == doctest::Approx(5.0 / 6.0));
    REQUIRE(rep.per_class_recall.size() == 4);
    CHECK(rep.per_class_recall[0] == doctest::Approx(2.0 / 3.0));
    CHECK(rep.per_class_recall[1] == doctest::Approx(1.0));
    CHECK(rep.per_class_precision[1] == doctest::Approx(2.0 / 3.0));
    CHECK(rep.per_class_recall[2] == doctest::Approx(1.0));

    SUBCASE("json output carries the headline fields") {
        std::string j = rep.to_json();
        CHECK(j.find("\"accuracy\"") != std::string::npos);
        CHECK(j.find("\"accuracy_percent\": 83.3") != std::string::npos);
        CHECK(j.find("\"confusion\"") != std::string::npos);
        CHECK(j.find("\"ssim_variant\"") != std::string::npos);
        CHECK(j.find("hr1") != std::string::npos);
    }
    SUBCASE("table output mirrors the published layout") {
        std::string t = rep.to_table();
        CHECK(t.find("Testing Accuracy (%): 83.3") != std::string::npos);
        CHECK(t.find("no_defect") != std::string::npos);
    }
}
