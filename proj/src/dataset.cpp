#include "fgs/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fgs/rng.hpp"

namespace fgs {

ImageTile ImageTile::filled(int h, int w, int c, float v) {
    ImageTile t;
    t.h = h;
    t.w = w;
    t.c = c;
    t.pixels.assign(static_cast<std::size_t>(h) * w * c, v);
    return t;
}

namespace {

const LabelSet kJbk75{"jbk75", {"no_defect", "short_feed", "had_defect", "short_feed_had_defect"}};
const LabelSet kHr1{"hr1", {"no_defect", "seeded_1", "seeded_2", "seeded_3"}};
const LabelSet kCombined{"combined",
                         {"no_defect", "had_defect", "short_feed_had_defect", "short_feed",
                          "seeded_1", "seeded_2", "seeded_3"}};

}  // namespace

int LabelSet::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    throw ContractError("label '" + name + "' not in label set '" + id + "'");
}

const LabelSet& LabelSet::get(const std::string& id) {
    if (id == kJbk75.id) return kJbk75;
    if (id == kHr1.id) return kHr1;
    if (id == kCombined.id) return kCombined;
    throw ContractError("unknown label set '" + id + "'");
}

std::vector<ImageTile> tile_layer(const ImageTile& layer, const std::vector<CropBox>& boxes) {
    std::vector<ImageTile> out;
    out.reserve(boxes.size());
    for (const CropBox& b : boxes) {
        if (b.x < 0 || b.y < 0 || b.w <= 0 || b.h <= 0 || b.x + b.w > layer.w ||
            b.y + b.h > layer.h) {
            std::ostringstream os;
            os << "crop box (" << b.x << "," << b.y << "," << b.w << "," << b.h
               << ") outside layer " << layer.w << "x" << layer.h;
            throw DimensionError(os.str());
        }
        ImageTile t;
        t.h = b.h;
        t.w = b.w;
        t.c = layer.c;
        t.pixels.resize(static_cast<std::size_t>(b.h) * b.w * layer.c);
        for (int r = 0; r < b.h; ++r)
            for (int col = 0; col < b.w; ++col)
                for (int ch = 0; ch < layer.c; ++ch)
                    t.at(r, col, ch) = layer.at(b.y + r, b.x + col, ch);
        t.source_id = layer.source_id;
        out.push_back(std::move(t));
    }
    return out;
}

ImageTile add_noise(const ImageTile& img, float sigma, std::uint64_t seed) {
    if (sigma < 0.0f) throw ContractError("noise sigma must be >= 0");
    ImageTile out = img;
    if (sigma == 0.0f) return out;
    Rng rng(seed);
    for (auto& v : out.pixels) v = std::clamp(v + sigma * rng.normal(), 0.0f, 1.0f);
    return out;
}

void split(DatasetManifest& manifest, std::uint64_t seed, bool stratified) {
    if (manifest.entries.empty()) throw ContractError("split on empty manifest");
    const std::size_t n = manifest.entries.size();
    const std::size_t n_train = static_cast<std::size_t>(std::llround(0.75 * static_cast<double>(n)));
    Rng rng(seed);
    manifest.seed = seed;

    auto shuffle = [&rng](std::vector<std::size_t>& idx) {
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    };

    for (auto& e : manifest.entries) e.split = "test";
    if (!stratified) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        shuffle(idx);
        for (std::size_t i = 0; i < n_train; ++i) manifest.entries[idx[i]].split = "train";
        return;
    }

    // Per-class rounding, then nudge the largest classes so the overall
    // train size is exactly round(0.75 N).
    std::map<std::string, std::vector<std::size_t>> per_class;
    for (std::size_t i = 0; i < n; ++i) per_class[manifest.entries[i].class_name].push_back(i);

    std::vector<std::pair<std::string, std::size_t>> take;  // class -> train count
    std::size_t total = 0;
    for (auto& [cls, idx] : per_class) {
        std::size_t t = static_cast<std::size_t>(std::llround(0.75 * static_cast<double>(idx.size())));
        take.emplace_back(cls, t);
        total += t;
    }
    std::sort(take.begin(), take.end(), [&](const auto& a, const auto& b) {
        return per_class[a.first].size() > per_class[b.first].size();
    });
    std::size_t k = 0;
    while (total != n_train && k < take.size()) {
        auto& [cls, t] = take[k];
        if (total < n_train && t < per_class[cls].size()) {
            ++t;
            ++total;
        } else if (total > n_train && t > 0) {
            --t;
            --total;
        } else {
            ++k;
        }
    }
    for (auto& [cls, t] : take) {
        auto& idx = per_class[cls];
        shuffle(idx);
        for (std::size_t i = 0; i < t; ++i) manifest.entries[idx[i]].split = "train";
    }
}

std::vector<ClassStat> class_stats(const DatasetManifest& manifest) {
    std::map<std::string, std::size_t> counts;
    for (const auto& e : manifest.entries) counts[e.class_name]++;
    std::vector<ClassStat> out;
    const double n = static_cast<double>(manifest.entries.size());
    // Report in label-set order when the set is known, appending unknowns.
    std::vector<std::string> order;
    if (!manifest.labelset_id.empty()) {
        try {
            order = LabelSet::get(manifest.labelset_id).names;
        } catch (const ContractError&) {
        }
    }
    for (const auto& name : order) {
        auto it = counts.find(name);
        if (it != counts.end()) {
            out.push_back({name, it->second, 100.0 * static_cast<double>(it->second) / n});
            counts.erase(it);
        }
    }
    for (const auto& [name, cnt] : counts)
        out.push_back({name, cnt, 100.0 * static_cast<double>(cnt) / n});
    return out;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write manifest: " + path);
    f << "#labelset\t" << m.labelset_id << "\n";
    f << "#seed\t" << m.seed << "\n";
    for (const auto& e : m.entries) f << e.path << "\t" << e.class_name << "\t" << e.split << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read manifest: " + path);
    DatasetManifest m;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string a, b, c;
        std::getline(is, a, '\t');
        std::getline(is, b, '\t');
        std::getline(is, c, '\t');
        if (a == "#labelset") {
            m.labelset_id = b;
        } else if (a == "#seed") {
            m.seed = std::stoull(b);
        } else {
            if (b.empty()) throw IoError("malformed manifest line in " + path + ": " + line);
            m.entries.push_back({a, b, c});
        }
    }
    return m;
}

std::vector<ManifestEntry> entries_for_split(const DatasetManifest& m, const std::string& tag) {
    std::vector<ManifestEntry> out;
    for (const auto& e : m.entries)
        if (e.split == tag) out.push_back(e);
    return out;
}

}  // namespace fgs
