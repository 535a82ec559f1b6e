#include "fgs/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace fgs {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ContractError("batch_size must be >= 1");
    if (max_epochs < 0) throw ContractError("max_epochs must be >= 0");
    if (adam.beta1 <= 0.0f || adam.beta1 >= 1.0f || adam.beta2 <= 0.0f || adam.beta2 >= 1.0f)
        throw ContractError("adam betas must lie in (0,1)");
    if (early_stop.patience < 1) throw ContractError("early-stop patience must be >= 1");
    if (early_stop.min_delta < 0.0f) throw ContractError("early-stop min_delta must be >= 0");
    if (augment.rotation_max_deg < 0.0f || augment.zoom_max_frac < 0.0f ||
        augment.shift_max_frac < 0.0f)
        throw ContractError("augment ranges must be nonnegative");
}

void save_train_config(const TrainConfig& cfg, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write train config: " + path);
    f << "batch_size=" << cfg.batch_size << "\n";
    f << "max_epochs=" << cfg.max_epochs << "\n";
    f << "adam.lr=" << cfg.adam.lr << "\n";
    f << "adam.beta1=" << cfg.adam.beta1 << "\n";
    f << "adam.beta2=" << cfg.adam.beta2 << "\n";
    f << "adam.eps=" << cfg.adam.eps << "\n";
    f << "early_stop.min_delta=" << cfg.early_stop.min_delta << "\n";
    f << "early_stop.patience=" << cfg.early_stop.patience << "\n";
    f << "seed=" << cfg.seed << "\n";
    f << "augment.rotation_max_deg=" << cfg.augment.rotation_max_deg << "\n";
    f << "augment.zoom_max_frac=" << cfg.augment.zoom_max_frac << "\n";
    f << "augment.shift_max_frac=" << cfg.augment.shift_max_frac << "\n";
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read train config: " + path);
    TrainConfig cfg;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("malformed config line: " + line);
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "batch_size")
            cfg.batch_size = std::stoi(val);
        else if (key == "max_epochs")
            cfg.max_epochs = std::stoi(val);
        else if (key == "adam.lr")
            cfg.adam.lr = std::stof(val);
        else if (key == "adam.beta1")
            cfg.adam.beta1 = std::stof(val);
        else if (key == "adam.beta2")
            cfg.adam.beta2 = std::stof(val);
        else if (key == "adam.eps")
            cfg.adam.eps = std::stof(val);
        else if (key == "early_stop.min_delta")
            cfg.early_stop.min_delta = std::stof(val);
        else if (key == "early_stop.patience")
            cfg.early_stop.patience = std::stoi(val);
        else if (key == "seed")
            cfg.seed = std::stoull(val);
        else if (key == "augment.rotation_max_deg")
            cfg.augment.rotation_max_deg = std::stof(val);
        else if (key == "augment.zoom_max_frac")
            cfg.augment.zoom_max_frac = std::stof(val);
        else if (key == "augment.shift_max_frac")
            cfg.augment.shift_max_frac = std::stof(val);
        else
            throw IoError("unknown train config key: " + key);
    }
    cfg.validate();
    return cfg;
}

AdamState AdamState::init(const std::vector<Tensor>& params) {
    AdamState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.numel(), 0.0f);
        s.v.emplace_back(p.numel(), 0.0f);
    }
    return s;
}

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg) {
    if (state.m.size() != params.size()) throw ContractError("adam state/parameter count mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].mutable_data();
        const auto& g = params[i].grad();
        if (g.size() != p.size()) throw ContractError("missing gradient for parameter " + std::to_string(i));
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0f - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0f - cfg.beta2) * g[j] * g[j];
            float mhat = static_cast<float>(m[j] / bc1);
            float vhat = static_cast<float>(v[j] / bc2);
            p[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

bool early_stop_check(const std::vector<float>& losses, float min_delta, int patience) {
    if (losses.empty()) throw ContractError("early_stop_check on empty loss history");
    float best = losses[0];
    int stale = 0;
    for (std::size_t i = 1; i < losses.size(); ++i) {
        if (best - losses[i] >= min_delta) {
            best = losses[i];
            stale = 0;
        } else {
            ++stale;
            if (stale >= patience) return true;
        }
    }
    return false;
}

Tensor sparse_cce(const Tensor& probs, const std::vector<int>& labels) {
    // Training paths prefer cross_entropy_from_logits; this entry point takes
    // ready probabilities with clamped logs.
    return nll_from_probs(probs, labels);
}

Tensor bce(const Tensor& pred, const std::vector<float>& target) { return bce_loss(pred, target); }

Tensor mse(const Tensor& pred, const Tensor& target) { return mse_loss(pred, target); }

ImageTile apply_affine(const ImageTile& img, float rotation_deg, float zoom, float shift_r,
                       float shift_c) {
    const float theta = rotation_deg * 3.14159265358979f / 180.0f;
    const float cos_t = std::cos(theta), sin_t = std::sin(theta);
    const float ctr_r = 0.5f * static_cast<float>(img.h - 1);
    const float ctr_c = 0.5f * static_cast<float>(img.w - 1);

    ImageTile out = ImageTile::filled(img.h, img.w, img.c, 0.0f);
    out.source_id = img.source_id;
    out.label = img.label;
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w; ++c) {
            // Inverse map: undo shift, then rotation and zoom about the center.
            float yr = static_cast<float>(r) - ctr_r - shift_r;
            float xc = static_cast<float>(c) - ctr_c - shift_c;
            float src_r = (cos_t * yr + sin_t * xc) / zoom + ctr_r;
            float src_c = (-sin_t * yr + cos_t * xc) / zoom + ctr_c;
            int sr = static_cast<int>(std::lround(src_r));
            int sc = static_cast<int>(std::lround(src_c));
            if (sr < 0 || sr >= img.h || sc < 0 || sc >= img.w) continue;
            for (int ch = 0; ch < img.c; ++ch) out.at(r, c, ch) = img.at(sr, sc, ch);
        }
    return out;
}

ImageTile augment(const ImageTile& img, const AugmentConfig& cfg, std::uint64_t seed) {
    if (!cfg.enabled()) return img;
    Rng rng(seed);
    const float deg = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg);
    const float zoom = rng.uniform(1.0f - cfg.zoom_max_frac, 1.0f + cfg.zoom_max_frac);
    const float shift_c = rng.uniform(-cfg.shift_max_frac, cfg.shift_max_frac) * static_cast<float>(img.w);
    const float shift_r = rng.uniform(-cfg.shift_max_frac, cfg.shift_max_frac) * static_cast<float>(img.h);
    return apply_affine(img, deg, zoom, shift_r, shift_c);
}

TrainHistory fit_loop(std::vector<Tensor>& params,
                      const std::function<Tensor(const std::vector<std::size_t>&, Rng&)>& batch_loss,
                      std::size_t n_samples, const TrainConfig& cfg,
                      const std::function<float()>& epoch_accuracy,
                      const std::function<void(int, float)>& on_epoch) {
    cfg.validate();
    if (n_samples == 0) throw ContractError("fit on empty dataset");

    TrainHistory hist;
    AdamState adam = AdamState::init(params);
    Rng root(cfg.seed);

    float best_loss = std::numeric_limits<float>::infinity();
    std::vector<std::vector<float>> best_params;

    std::vector<std::size_t> order(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        Rng erng = root.fork(static_cast<std::uint64_t>(epoch));
        for (std::size_t i = n_samples; i > 1; --i)
            std::swap(order[i - 1], order[erng.uniform_int(i)]);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n_samples; start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end = std::min(n_samples, start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
            Tensor loss = batch_loss(batch, erng);
            backward(loss);
            adam_step(params, adam, cfg.adam);
            epoch_loss += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
        }
        float mean_loss = static_cast<float>(epoch_loss / static_cast<double>(n_samples));
        hist.loss.push_back(mean_loss);
        if (epoch_accuracy) hist.accuracy.push_back(epoch_accuracy());
        if (on_epoch) on_epoch(epoch, mean_loss);

        if (mean_loss < best_loss) {
            best_loss = mean_loss;
            hist.best_epoch = epoch;
            best_params.clear();
            for (const auto& p : params) best_params.push_back(p.data());
        }
        if (early_stop_check(hist.loss, cfg.early_stop.min_delta, cfg.early_stop.patience)) {
            hist.stop_reason = StopReason::EarlyStopped;
            break;
        }
    }
    if (!best_params.empty())
        for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_data() = best_params[i];
    return hist;
}

}  // namespace fgs
