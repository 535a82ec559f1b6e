#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "fgs/dataset.hpp"

namespace fgs {

struct MaskPixel {
    int row, col, channel;
    float value;
};

// Defect pixels lifted from a source tile, plus their bounding box.
struct DefectMask {
    std::vector<MaskPixel> pixels;
    int min_row = 0, min_col = 0, max_row = 0, max_col = 0;
    std::string source_class;

    int height() const { return max_row - min_row + 1; }
    int width() const { return max_col - min_col + 1; }
    void recompute_bbox();
};

// Threshold-based extraction parameters: |pixel - background| > tau, with the
// background taken from a 5x5 median filter unless a paired clean tile is given.
struct ThresholdExtract {
    float tau = 0.15f;
    const ImageTile* clean_reference = nullptr;
};

DefectMask extract_mask_explicit(const ImageTile& defect_img,
                                 const std::vector<std::tuple<int, int, int>>& coords);
DefectMask extract_mask_threshold(const ImageTile& defect_img, const ThresholdExtract& params);

// Pixel transplants. cds keeps original coordinates; rds translates the whole
// mask to a seeded uniform-random in-bounds position.
ImageTile cds(const ImageTile& base, const DefectMask& mask);
ImageTile rds(const ImageTile& base, const DefectMask& mask, std::uint64_t seed);

// Oversampling: appends seeded random duplicates of class c until it reaches
// target_count entries.
void sam(DatasetManifest& manifest, const std::string& class_name, std::size_t target_count,
         std::uint64_t seed);

void save_mask(const DefectMask& mask, const std::string& path);
DefectMask load_mask(const std::string& path);

enum class BalanceStrategy { Cds, Rds, Sam, Gan };
BalanceStrategy parse_strategy(const std::string& name);
std::string strategy_name(BalanceStrategy s);

// Resources a balance run may need: mask/clean pools for cds/rds, a
// per-class sampler for gan.
struct BalanceResources {
    // Masks per minority class (cds/rds).
    std::map<std::string, std::vector<DefectMask>> masks;
    // Clean (no-defect) tiles to transplant onto.
    std::vector<ImageTile> clean_pool;
    // gan: draws n fresh tiles of the given class.
    std::function<std::vector<ImageTile>(const std::string& class_name, std::size_t n,
                                         std::uint64_t seed)>
        generate;
};

// Raises each listed class to its target count using the strategy; generated
// tiles are written under out_dir/<class>/synthetic_*.png and appended to the
// manifest. The majority class is never touched.
void balance(DatasetManifest& manifest, BalanceStrategy strategy,
             const std::map<std::string, std::size_t>& targets, std::uint64_t seed,
             const BalanceResources& resources, const std::string& out_dir);

}  // namespace fgs
