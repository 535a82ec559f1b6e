#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fgs/tensor.hpp"

namespace fgs {

struct IoError : Error {
    using Error::Error;
};

// H x W x C image, values in [0,1], channel-interleaved row-major.
struct ImageTile {
    int h = 0, w = 0, c = 0;
    std::vector<float> pixels;
    std::string source_id;
    std::string label;

    std::size_t numel() const { return pixels.size(); }
    float& at(int r, int col, int ch) {
        return pixels[(static_cast<std::size_t>(r) * w + col) * c + ch];
    }
    float at(int r, int col, int ch) const {
        return pixels[(static_cast<std::size_t>(r) * w + col) * c + ch];
    }
    static ImageTile filled(int h, int w, int c, float v);
};

// Declared label sets: the two per-alloy 4-class sets and the combined
// 7-class set.
struct LabelSet {
    std::string id;
    std::vector<std::string> names;

    int index_of(const std::string& name) const;
    static const LabelSet& get(const std::string& id);
};

struct ManifestEntry {
    std::string path;
    std::string class_name;
    std::string split;  // "train", "test", or "" before splitting
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::string labelset_id;
    std::uint64_t seed = 0;
};

struct ClassStat {
    std::string class_name;
    std::size_t count;
    double percent;
};

struct CropBox {
    int x, y, w, h;
};

// --- image ops ---
std::vector<ImageTile> tile_layer(const ImageTile& layer, const std::vector<CropBox>& boxes);
ImageTile add_noise(const ImageTile& img, float sigma, std::uint64_t seed);

// --- manifest ops ---
void split(DatasetManifest& manifest, std::uint64_t seed, bool stratified);
std::vector<ClassStat> class_stats(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);
std::vector<ManifestEntry> entries_for_split(const DatasetManifest& m, const std::string& tag);

// --- PNG I/O (8-bit RGB or grayscale; grayscale replicated to 3 channels) ---
ImageTile load_png(const std::string& path);
ImageTile decode_png(const std::uint8_t* data, std::size_t len);
void save_png(const ImageTile& img, const std::string& path);

}  // namespace fgs
