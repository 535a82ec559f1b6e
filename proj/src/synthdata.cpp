#include "fgs/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fgs/rng.hpp"

namespace fs = std::filesystem;

namespace fgs {

void DefectMask::recompute_bbox() {
    if (pixels.empty()) throw ContractError("defect mask has no pixels");
    min_row = max_row = pixels[0].row;
    min_col = max_col = pixels[0].col;
    for (const auto& p : pixels) {
        min_row = std::min(min_row, p.row);
        max_row = std::max(max_row, p.row);
        min_col = std::min(min_col, p.col);
        max_col = std::max(max_col, p.col);
    }
}

DefectMask extract_mask_explicit(const ImageTile& defect_img,
                                 const std::vector<std::tuple<int, int, int>>& coords) {
    if (coords.empty()) throw ContractError("no defect pixels found");
    DefectMask mask;
    for (const auto& [r, c, ch] : coords) {
        if (r < 0 || r >= defect_img.h || c < 0 || c >= defect_img.w || ch < 0 ||
            ch >= defect_img.c)
            throw ContractError("explicit mask coordinate outside image bounds");
        mask.pixels.push_back({r, c, ch, defect_img.at(r, c, ch)});
    }
    mask.source_class = defect_img.label;
    mask.recompute_bbox();
    return mask;
}

namespace {

// 5x5 median filter, clamped at borders; per channel.
float median5x5(const ImageTile& img, int r, int c, int ch) {
    float vals[25];
    int n = 0;
    for (int dr = -2; dr <= 2; ++dr)
        for (int dc = -2; dc <= 2; ++dc) {
            int rr = std::clamp(r + dr, 0, img.h - 1);
            int cc = std::clamp(c + dc, 0, img.w - 1);
            vals[n++] = img.at(rr, cc, ch);
        }
    std::nth_element(vals, vals + 12, vals + 25);
    return vals[12];
}

}  // namespace

DefectMask extract_mask_threshold(const ImageTile& defect_img, const ThresholdExtract& params) {
    if (params.clean_reference &&
        (params.clean_reference->h != defect_img.h || params.clean_reference->w != defect_img.w ||
         params.clean_reference->c != defect_img.c))
        throw DimensionError("threshold extraction reference shape mismatch");
    DefectMask mask;
    for (int r = 0; r < defect_img.h; ++r)
        for (int c = 0; c < defect_img.w; ++c)
            for (int ch = 0; ch < defect_img.c; ++ch) {
                float bg = params.clean_reference ? params.clean_reference->at(r, c, ch)
                                                  : median5x5(defect_img, r, c, ch);
                if (std::fabs(defect_img.at(r, c, ch) - bg) > params.tau)
                    mask.pixels.push_back({r, c, ch, defect_img.at(r, c, ch)});
            }
    if (mask.pixels.empty()) throw ContractError("no defect pixels found");
    mask.source_class = defect_img.label;
    mask.recompute_bbox();
    return mask;
}

ImageTile cds(const ImageTile& base, const DefectMask& mask) {
    if (mask.pixels.empty()) throw ContractError("defect mask has no pixels");
    if (mask.min_row < 0 || mask.min_col < 0 || mask.max_row >= base.h || mask.max_col >= base.w)
        throw DimensionError("mask bounding box outside base image bounds");
    ImageTile out = base;
    for (const auto& p : mask.pixels) out.at(p.row, p.col, p.channel) = p.value;
    out.label = mask.source_class;
    return out;
}

ImageTile rds(const ImageTile& base, const DefectMask& mask, std::uint64_t seed) {
    if (mask.pixels.empty()) throw ContractError("defect mask has no pixels");
    if (mask.height() > base.h || mask.width() > base.w)
        throw DimensionError("mask larger than base image");
    Rng rng(seed);
    // Uniform over all in-bounds placements of the bounding box.
    int dr = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(base.h - mask.height() + 1))) -
             mask.min_row;
    int dc = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(base.w - mask.width() + 1))) -
             mask.min_col;
    ImageTile out = base;
    for (const auto& p : mask.pixels) out.at(p.row + dr, p.col + dc, p.channel) = p.value;
    out.label = mask.source_class;
    return out;
}

void sam(DatasetManifest& manifest, const std::string& class_name, std::size_t target_count,
         std::uint64_t seed) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        if (manifest.entries[i].class_name == class_name) members.push_back(i);
    if (members.empty()) throw ContractError("oversampling empty class '" + class_name + "'");
    if (target_count < members.size())
        throw ContractError("oversampling target below current count for '" + class_name + "'");
    Rng rng(seed);
    for (std::size_t i = members.size(); i < target_count; ++i) {
        const ManifestEntry& src = manifest.entries[members[rng.uniform_int(members.size())]];
        manifest.entries.push_back(src);
    }
}

void save_mask(const DefectMask& mask, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write mask: " + path);
    f << "#class\t" << mask.source_class << "\n";
    f << std::setprecision(9);
    for (const auto& p : mask.pixels)
        f << p.row << "\t" << p.col << "\t" << p.channel << "\t" << p.value << "\n";
}

DefectMask load_mask(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read mask: " + path);
    DefectMask mask;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        if (line[0] == '#') {
            std::string key;
            std::getline(is, key, '\t');
            if (key == "#class") std::getline(is, mask.source_class, '\t');
            continue;
        }
        std::string f0, f1, f2, f3;
        if (!(std::getline(is, f0, '\t') && std::getline(is, f1, '\t') &&
              std::getline(is, f2, '\t') && std::getline(is, f3)))
            throw IoError("malformed mask line in " + path + ": " + line);
        mask.pixels.push_back({std::stoi(f0), std::stoi(f1), std::stoi(f2), std::stof(f3)});
    }
    if (mask.pixels.empty()) throw ContractError("no defect pixels found");
    mask.recompute_bbox();
    return mask;
}

BalanceStrategy parse_strategy(const std::string& name) {
    if (name == "cds") return BalanceStrategy::Cds;
    if (name == "rds") return BalanceStrategy::Rds;
    if (name == "sam") return BalanceStrategy::Sam;
    if (name == "gan") return BalanceStrategy::Gan;
    throw ContractError("unknown balance strategy '" + name + "'");
}

std::string strategy_name(BalanceStrategy s) {
    switch (s) {
        case BalanceStrategy::Cds: return "cds";
        case BalanceStrategy::Rds: return "rds";
        case BalanceStrategy::Sam: return "sam";
        case BalanceStrategy::Gan: return "gan";
    }
    return "?";
}

void balance(DatasetManifest& manifest, BalanceStrategy strategy,
             const std::map<std::string, std::size_t>& targets, std::uint64_t seed,
             const BalanceResources& resources, const std::string& out_dir) {
    Rng root(seed);
    std::size_t class_tag = 0;
    for (const auto& [cls, target] : targets) {
        Rng rng = root.fork(class_tag++);
        std::size_t current = 0;
        for (const auto& e : manifest.entries)
            if (e.class_name == cls) ++current;
        if (current >= target) continue;

        if (strategy == BalanceStrategy::Sam) {
            sam(manifest, cls, target, rng.next_u64());
            continue;
        }

        std::size_t need = target - current;
        std::vector<ImageTile> fresh;
        if (strategy == BalanceStrategy::Gan) {
            if (!resources.generate)
                throw ContractError("gan strategy needs a trained generator for class '" + cls + "'");
            fresh = resources.generate(cls, need, rng.next_u64());
            if (fresh.size() != need)
                throw ContractError("generator for class '" + cls + "' returned wrong tile count");
        } else {
            auto mit = resources.masks.find(cls);
            if (mit == resources.masks.end() || mit->second.empty())
                throw ContractError(strategy_name(strategy) + " strategy needs masks for class '" +
                                    cls + "'");
            if (resources.clean_pool.empty())
                throw ContractError(strategy_name(strategy) + " strategy needs a clean-tile pool");
            for (std::size_t i = 0; i < need; ++i) {
                const DefectMask& mask = mit->second[rng.uniform_int(mit->second.size())];
                const ImageTile& base =
                    resources.clean_pool[rng.uniform_int(resources.clean_pool.size())];
                fresh.push_back(strategy == BalanceStrategy::Cds ? cds(base, mask)
                                                                 : rds(base, mask, rng.next_u64()));
            }
        }

        fs::create_directories(fs::path(out_dir) / cls);
        for (std::size_t i = 0; i < fresh.size(); ++i) {
            std::ostringstream name;
            name << "synthetic_" << strategy_name(strategy) << "_" << std::setw(5)
                 << std::setfill('0') << current + i << ".png";
            std::string path = (fs::path(out_dir) / cls / name.str()).string();
            save_png(fresh[i], path);
            manifest.entries.push_back({path, cls, "train"});
        }
    }
}

}  // namespace fgs
