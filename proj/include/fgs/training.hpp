#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fgs/dataset.hpp"
#include "fgs/rng.hpp"
#include "fgs/tensor.hpp"

namespace fgs {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-7f;
};

struct EarlyStopConfig {
    float min_delta = 0.002f;
    int patience = 10;
};

struct AugmentConfig {
    float rotation_max_deg = 15.0f;
    float zoom_max_frac = 0.10f;
    float shift_max_frac = 0.10f;

    bool enabled() const {
        return rotation_max_deg > 0.0f || zoom_max_frac > 0.0f || shift_max_frac > 0.0f;
    }
    static AugmentConfig off() { return {0.0f, 0.0f, 0.0f}; }
};

struct TrainConfig {
    int batch_size = 32;
    int max_epochs = 100;
    AdamConfig adam;
    EarlyStopConfig early_stop;
    std::uint64_t seed = 0;
    AugmentConfig augment;

    void validate() const;
};

void save_train_config(const TrainConfig& cfg, const std::string& path);
TrainConfig load_train_config(const std::string& path);

// First/second-moment accumulators for one parameter set.
struct AdamState {
    std::vector<std::vector<float>> m, v;
    std::int64_t t = 0;

    static AdamState init(const std::vector<Tensor>& params);
};

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg);

enum class StopReason { Completed, EarlyStopped };

struct TrainHistory {
    std::vector<float> loss;
    std::vector<float> accuracy;  // empty for reconstruction objectives
    StopReason stop_reason = StopReason::Completed;
    int best_epoch = -1;
};

// Pure function of the loss sequence: stop once `patience` consecutive epochs
// fail to improve on the best-so-far by at least min_delta.
bool early_stop_check(const std::vector<float>& losses, float min_delta, int patience);

// Loss surfaces mirrored from the graph ops (eval-friendly entry points).
Tensor sparse_cce(const Tensor& probs, const std::vector<int>& labels);
Tensor bce(const Tensor& pred, const std::vector<float>& target);
Tensor mse(const Tensor& pred, const Tensor& target);

// Rotation/zoom/shift with nearest-neighbor resampling and zero fill;
// augment draws the transform parameters from the seed.
ImageTile apply_affine(const ImageTile& img, float rotation_deg, float zoom, float shift_r,
                       float shift_c);
ImageTile augment(const ImageTile& img, const AugmentConfig& cfg, std::uint64_t seed);

// Generic mini-batch loop. `batch_loss` builds the loss graph for the given
// sample indices; `epoch_accuracy`, when set, is evaluated after each epoch.
// Restores the best-epoch parameters before returning.
TrainHistory fit_loop(std::vector<Tensor>& params,
                      const std::function<Tensor(const std::vector<std::size_t>&, Rng&)>& batch_loss,
                      std::size_t n_samples, const TrainConfig& cfg,
                      const std::function<float()>& epoch_accuracy = nullptr,
                      const std::function<void(int, float)>& on_epoch = nullptr);

}  // namespace fgs
