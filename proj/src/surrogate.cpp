#include "fgs/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fgs/rng.hpp"

namespace fs = std::filesystem;

namespace fgs {

namespace {

constexpr float kPi = 3.14159265358979f;

// Smooth textured plate: a base level plus a few random-phase sinusoids with
// amplitudes small enough that defect deltas never clip.
ImageTile background_tile(const SurrogateConfig& cfg, Rng rng) {
    const int s = cfg.tile_size;
    ImageTile t = ImageTile::filled(s, s, 3, 0.0f);
    float base = 0.42f + 0.06f * rng.uniform();
    struct Wave {
        float fx, fy, phase, amp;
    };
    Wave waves[3];
    for (auto& w : waves) {
        w.fx = rng.uniform(0.5f, 3.0f) / static_cast<float>(s);
        w.fy = rng.uniform(0.5f, 3.0f) / static_cast<float>(s);
        w.phase = rng.uniform(0.0f, 2.0f * kPi);
        w.amp = rng.uniform(0.01f, 0.03f);
    }
    for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c) {
            float v = base;
            for (const auto& w : waves)
                v += w.amp * std::sin(2.0f * kPi * (w.fx * c + w.fy * r) + w.phase);
            for (int ch = 0; ch < 3; ++ch) t.at(r, c, ch) = std::clamp(v, 0.0f, 1.0f);
        }
    return t;
}

struct Stamper {
    ImageTile& tile;
    DefectMask& mask;
    std::vector<char> visited;

    Stamper(ImageTile& t, DefectMask& m)
        : tile(t), mask(m), visited(static_cast<std::size_t>(t.h) * t.w, 0) {}

    void stamp(int r, int c, float delta) {
        if (r < 0 || r >= tile.h || c < 0 || c >= tile.w) return;
        char& seen = visited[static_cast<std::size_t>(r) * tile.w + c];
        if (seen) return;
        seen = 1;
        for (int ch = 0; ch < 3; ++ch) {
            float v = std::clamp(tile.at(r, c, ch) + delta, 0.0f, 1.0f);
            tile.at(r, c, ch) = v;
            mask.pixels.push_back({r, c, ch, v});
        }
    }
};

void stamp_blob(Stamper& st, int cr, int cc, int radius, float delta) {
    for (int r = cr - radius; r <= cr + radius; ++r)
        for (int c = cc - radius; c <= cc + radius; ++c)
            if ((r - cr) * (r - cr) + (c - cc) * (c - cc) <= radius * radius)
                st.stamp(r, c, delta);
}

void stamp_band(Stamper& st, int y0, int height, float delta) {
    for (int r = y0; r < y0 + height; ++r)
        for (int c = 0; c < st.tile.w; ++c) st.stamp(r, c, delta);
}

void stamp_blob_cluster(Stamper& st, Rng& rng, int count, int r_min, int r_max, float delta) {
    const int s = st.tile.h;
    for (int i = 0; i < count; ++i) {
        int radius = r_min + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(r_max - r_min + 1)));
        int margin = radius + 1;
        int cr = margin + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(s - 2 * margin)));
        int cc = margin + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(s - 2 * margin)));
        stamp_blob(st, cr, cc, radius, delta);
    }
}

// Class-specific defect geometry, scaled to the tile size.
void apply_defect(ImageTile& tile, DefectMask& mask, const std::string& cls,
                  const SurrogateConfig& cfg, Rng rng) {
    const int s = cfg.tile_size;
    const float dark = -cfg.contrast;
    const float bright = cfg.contrast;
    const int unit = std::max(1, s / 64);

    if (cls == "no_defect") return;
    Stamper st(tile, mask);
    if (cls == "short_feed" || cls == "short_feed_had_defect") {
        int height = std::max(2, s / 10);
        int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(s - height)));
        stamp_band(st, y0, height, dark);
    }
    if (cls == "had_defect" || cls == "short_feed_had_defect") {
        stamp_blob_cluster(st, rng, 2 + static_cast<int>(rng.uniform_int(2)), 2 * unit,
                           3 * unit, dark);
    }
    if (cls == "seeded_1") {
        // Pockets of unfused powder: one or two large dark regions.
        stamp_blob_cluster(st, rng, 1 + static_cast<int>(rng.uniform_int(2)), 4 * unit,
                           7 * unit, dark);
    }
    if (cls == "seeded_2") {
        // Lack-of-fusion pores: scattered small dark dots.
        stamp_blob_cluster(st, rng, 4 + static_cast<int>(rng.uniform_int(5)), 1 * unit,
                           2 * unit, dark);
    }
    if (cls == "seeded_3") {
        // Keyhole defects: a few medium bright spots.
        stamp_blob_cluster(st, rng, 2 + static_cast<int>(rng.uniform_int(3)), 2 * unit,
                           4 * unit, bright);
    }
    mask.recompute_bbox();
    mask.source_class = cls;
}

}  // namespace

void SurrogateConfig::validate() const {
    if (tile_size < 8) throw ContractError("surrogate tile_size must be >= 8");
    if (contrast <= 0.0f || contrast > 0.3f)
        throw ContractError("surrogate contrast must be in (0, 0.3]");
    std::size_t total = 0;
    const LabelSet& ls = LabelSet::get(labelset_id);
    for (const auto& [cls, cnt] : counts) {
        ls.index_of(cls);  // throws on unknown class
        total += cnt;
    }
    if (total == 0) throw ContractError("surrogate config has zero total tile count");
}

ImageTile surrogate_clean_tile(const SurrogateConfig& cfg, std::size_t index) {
    Rng root(cfg.seed);
    return background_tile(cfg, root.fork(2 * index));
}

SurrogateResult surrogate_generate(const SurrogateConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    Rng root(cfg.seed);
    SurrogateResult res;
    res.manifest.labelset_id = cfg.labelset_id;
    res.manifest.seed = cfg.seed;

    const LabelSet& ls = LabelSet::get(cfg.labelset_id);
    std::size_t index = 0;
    for (const auto& cls : ls.names) {
        auto it = cfg.counts.find(cls);
        if (it == cfg.counts.end() || it->second == 0) continue;
        fs::create_directories(fs::path(out_dir) / cls);
        for (std::size_t i = 0; i < it->second; ++i, ++index) {
            ImageTile tile = background_tile(cfg, root.fork(2 * index));
            DefectMask mask;
            apply_defect(tile, mask, cls, cfg, root.fork(2 * index + 1));
            tile.label = cls;
            tile.source_id = "surrogate:" + std::to_string(cfg.seed) + ":" + std::to_string(index);

            std::ostringstream name;
            name << cls << "_" << std::setw(5) << std::setfill('0') << i << ".png";
            std::string path = (fs::path(out_dir) / cls / name.str()).string();
            save_png(tile, path);
            res.manifest.entries.push_back({path, cls, ""});
            if (!mask.pixels.empty()) {
                save_mask(mask, path + ".mask");
                res.masks[path] = std::move(mask);
            }
        }
    }
    return res;
}

SurrogateConfig load_surrogate_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read surrogate config: " + path);
    SurrogateConfig cfg;
    cfg.counts.clear();
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("malformed config line: " + line);
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "tile_size")
            cfg.tile_size = std::stoi(val);
        else if (key == "labelset")
            cfg.labelset_id = val;
        else if (key == "contrast")
            cfg.contrast = std::stof(val);
        else if (key == "seed")
            cfg.seed = std::stoull(val);
        else if (key.rfind("count.", 0) == 0)
            cfg.counts[key.substr(6)] = std::stoull(val);
        else
            throw IoError("unknown surrogate config key: " + key);
    }
    return cfg;
}

void save_surrogate_config(const SurrogateConfig& cfg, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write surrogate config: " + path);
    f << "tile_size=" << cfg.tile_size << "\n";
    f << "labelset=" << cfg.labelset_id << "\n";
    f << "contrast=" << cfg.contrast << "\n";
    f << "seed=" << cfg.seed << "\n";
    for (const auto& [cls, cnt] : cfg.counts) f << "count." << cls << "=" << cnt << "\n";
}

}  // namespace fgs
