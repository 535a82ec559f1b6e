#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "fgs/dataset.hpp"
#include "fgs/synthdata.hpp"

namespace fgs {

// Procedural stand-in for the non-public alloy-layer datasets: smooth
// textured background tiles with class-specific defect geometry stamped on
// top, plus exact ground-truth masks.
struct SurrogateConfig {
    int tile_size = 64;
    std::string labelset_id = "hr1";
    std::map<std::string, std::size_t> counts;
    float contrast = 0.25f;  // min |defect - background| at every masked pixel
    std::uint64_t seed = 1;

    void validate() const;
};

struct SurrogateResult {
    DatasetManifest manifest;
    // Ground-truth mask per defect tile, keyed by tile path.
    std::map<std::string, DefectMask> masks;
};

// Writes PNG tiles under out_dir/<class>/ and mask files next to them.
SurrogateResult surrogate_generate(const SurrogateConfig& cfg, const std::string& out_dir);

// Deterministic clean background for global tile index `index`; tiles carry
// source_id "surrogate:<seed>:<index>" so the clean counterpart of any
// emitted tile can be regenerated.
ImageTile surrogate_clean_tile(const SurrogateConfig& cfg, std::size_t index);

SurrogateConfig load_surrogate_config(const std::string& path);
void save_surrogate_config(const SurrogateConfig& cfg, const std::string& path);

}  // namespace fgs
