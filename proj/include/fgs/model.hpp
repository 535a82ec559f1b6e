#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgs/dataset.hpp"
#include "fgs/rng.hpp"
#include "fgs/tensor.hpp"
#include "fgs/training.hpp"

namespace fgs {

struct FormatError : Error {
    using Error::Error;
};
struct VersionError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};

// One layer: kind tag, hyperparameters, and owned parameter tensors.
// Serialized 1:1 into the checkpoint spec block.
struct Layer {
    std::string kind;  // rescale|conv2d|relu|sigmoid|softmax|maxpool2|upsample2|
                       // dense|dropout|batchnorm2d|flatten|reshape
    float factor = 1.0f;          // rescale
    int filters = 0, kernel = 3;  // conv2d
    int stride = 1;
    Padding padding = Padding::Same;
    int units = 0;       // dense
    float rate = 0.0f;   // dropout
    Shape target_shape;  // reshape (per-sample, batch dim excluded)

    Tensor weight, bias;  // conv/dense kernels, batchnorm gamma/beta
    std::vector<float> running_mean, running_var;

    bool has_params() const { return weight.defined(); }
};

struct ModelSpec {
    std::string arch;  // cnn | dae | gan_generator | gan_discriminator
    Shape input_shape;  // per-sample (H,W,C) or (F)
    std::string labelset_id;  // classifiers
    std::string class_name;   // gan generators: the class they synthesize
    int num_classes = 0;
    int latent_dim = 0;
};

struct TrainMeta {
    std::uint64_t seed = 0;
    int epochs = 0;
    float final_loss = 0.0f;
};

class Network {
public:
    ModelSpec spec;
    std::vector<Layer> layers;
    TrainMeta meta;

    // Forward through all layers. Dropout draws its masks from `rng` in
    // train mode; batchnorm updates running moments in train mode.
    Tensor forward(const Tensor& x, Mode mode, Rng* rng = nullptr);
    // Same but stops before a trailing softmax (stable loss path).
    Tensor forward_logits(const Tensor& x, Mode mode, Rng* rng = nullptr);

    std::vector<Tensor> parameters();
    std::size_t parameter_count();
    // Snapshot of all parameter values (used for isolation checks and
    // best-epoch restore).
    std::vector<std::vector<float>> parameter_values();
};

struct CnnOptions {
    std::vector<int> filters = {16, 32, 64};
    int kernel = 3;
    float dropout_rate = 0.5f;
    float rescale_factor = 1.0f;  // 1/255 when fed 8-bit inputs
};

Network build_cnn(const Shape& input_shape, int num_classes, const std::string& labelset_id,
                  std::uint64_t seed, const CnnOptions& opts = {});
Network build_dae(const Shape& input_shape, std::uint64_t seed);

struct GanPair {
    Network generator;
    Network discriminator;
};
GanPair build_gan(int latent_dim, const Shape& image_shape, std::uint64_t seed);

// --- training entry points ---
TrainHistory fit_classifier(Network& net, const std::vector<ImageTile>& tiles,
                            const std::vector<int>& labels, const TrainConfig& cfg);
TrainHistory fit_autoencoder(Network& net, const std::vector<ImageTile>& noisy,
                             const std::vector<ImageTile>& clean, const TrainConfig& cfg);

struct GanHistory {
    std::vector<float> d_loss;
    std::vector<float> g_loss;
};
// Alternating 1:1 discriminator/generator steps on a single class's tiles.
GanHistory train_gan(GanPair& gan, const std::vector<ImageTile>& real_tiles,
                     const TrainConfig& cfg, int steps);

std::vector<ImageTile> gan_sample(Network& generator, std::size_t n, std::uint64_t seed);

// --- inference ---
struct Prediction {
    std::vector<float> probabilities;
    int label = 0;
};
std::vector<Prediction> predict(Network& cnn, const std::vector<ImageTile>& tiles);
std::vector<ImageTile> denoise(Network& dae, const std::vector<ImageTile>& noisy);

// --- checkpoints (magic FGS1, bit-exact little-endian f32 arrays) ---
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

Tensor stack_tiles(const std::vector<ImageTile>& tiles);
Tensor stack_tiles(const std::vector<ImageTile>& tiles, const std::vector<std::size_t>& indices);

}  // namespace fgs
