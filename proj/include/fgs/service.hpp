#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fgs/model.hpp"

namespace fgs {

struct ServiceConfig {
    std::string model_path;           // CNN checkpoint, required
    std::string dae_path;             // optional denoiser checkpoint
    std::string bind = "127.0.0.1";
    int port = 8080;                  // 0 = pick a free port
    int max_batch = 50;
};

struct PredictItem {
    int index = 0;
    std::string status;  // "ok" | "decode_error"
    std::string class_name;
    std::vector<float> probabilities;
    bool resized = false;
    std::string error;  // decode_error detail
};

struct PredictResult {
    std::vector<PredictItem> items;
    bool denoised = false;
    double elapsed_ms = 0.0;
    std::string batch_id;
};

// Loads the checkpoints up front (throws on failure) and serves
// POST /api/predict, GET /api/health, GET /api/labels over HTTP/1.1.
class InferenceService {
public:
    explicit InferenceService(const ServiceConfig& cfg);
    ~InferenceService();

    // Blocks until stop(). Returns false if the bind fails.
    bool run();
    void stop();
    // Valid once run() has bound; with cfg.port == 0 this is the chosen port.
    int port() const { return port_; }
    bool wait_until_ready(int timeout_ms = 2000) const;

    const std::string& model_id() const { return model_id_; }
    const LabelSet& labels() const;

    // Core batch path, exposed for in-process tests: one entry per payload,
    // order preserved, corrupt payloads isolated as decode_error.
    PredictResult predict_batch(const std::vector<std::string>& png_payloads, bool denoise,
                                const std::string& batch_id);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::string model_id_;
    std::atomic<int> port_{0};
};

std::string base64_encode(const std::string& bytes);
// Throws FormatError on non-base64 input.
std::string base64_decode(const std::string& text);

}  // namespace fgs
