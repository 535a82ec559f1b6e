#include "fgs/service.hpp"

#include <chrono>
#include <cstring>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

using nlohmann::json;

namespace fgs {

namespace {

constexpr const char* kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
    const char* p = std::strchr(kB64, c);
    return (p && c != '\0') ? static_cast<int>(p - kB64) : -1;
}

ImageTile resize_nearest(const ImageTile& src, int h, int w) {
    ImageTile out = ImageTile::filled(h, w, src.c, 0.0f);
    out.source_id = src.source_id;
    out.label = src.label;
    for (int r = 0; r < h; ++r) {
        int sr = static_cast<int>(static_cast<long long>(r) * src.h / h);
        for (int c = 0; c < w; ++c) {
            int sc = static_cast<int>(static_cast<long long>(c) * src.w / w);
            for (int ch = 0; ch < src.c; ++ch) out.at(r, c, ch) = src.at(sr, sc, ch);
        }
    }
    return out;
}

}  // namespace

std::string base64_encode(const std::string& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
        unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                     (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                     static_cast<unsigned char>(bytes[i + 2]);
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += kB64[(v >> 6) & 63];
        out += kB64[v & 63];
    }
    std::size_t rem = bytes.size() - i;
    if (rem == 1) {
        unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += "==";
    } else if (rem == 2) {
        unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                     (static_cast<unsigned char>(bytes[i + 1]) << 8);
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += kB64[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::string base64_decode(const std::string& text) {
    std::string out;
    int acc = 0, bits = 0;
    bool done = false;
    for (char c : text) {
        if (c == '\n' || c == '\r' || c == ' ') continue;
        if (c == '=') {
            done = true;
            continue;
        }
        if (done) throw FormatError("base64 data after padding");
        int v = b64_value(c);
        if (v < 0) throw FormatError(std::string("invalid base64 character '") + c + "'");
        acc = (acc << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out += static_cast<char>((acc >> bits) & 0xFF);
        }
    }
    return out;
}

struct InferenceService::Impl {
    ServiceConfig cfg;
    Network cnn;
    std::optional<Network> dae;
    const LabelSet* labelset = nullptr;
    std::string model_id;
    std::chrono::steady_clock::time_point started;
    httplib::Server server;
    // Single inference queue: forward passes share scratch-free tensors but
    // the batchnorm running buffers live in the Network, so serialize.
    std::mutex infer_mu;
};

InferenceService::InferenceService(const ServiceConfig& cfg) : impl_(std::make_unique<Impl>()) {
    impl_->cfg = cfg;
    impl_->cnn = load_checkpoint(cfg.model_path);  // throws with diagnostic on failure
    if (impl_->cnn.spec.arch != "cnn")
        throw ContractError("--model must point at a classifier checkpoint (got arch '" +
                            impl_->cnn.spec.arch + "')");
    impl_->labelset = &LabelSet::get(impl_->cnn.spec.labelset_id);
    if (!cfg.dae_path.empty()) {
        impl_->dae = load_checkpoint(cfg.dae_path);
        if (impl_->dae->spec.arch != "dae")
            throw ContractError("--dae must point at a denoiser checkpoint (got arch '" +
                                impl_->dae->spec.arch + "')");
    }
    impl_->model_id = impl_->cnn.spec.arch + ":" + impl_->cnn.spec.labelset_id + ":seed" +
                      std::to_string(impl_->cnn.meta.seed);
    model_id_ = impl_->model_id;
    impl_->started = std::chrono::steady_clock::now();

    auto& srv = impl_->server;
    srv.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
        json j;
        j["status"] = "ok";
        j["model"] = impl_->model_id;
        j["version"] = 1;
        j["denoiser_loaded"] = impl_->dae.has_value();
        j["uptime_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - impl_->started).count();
        res.set_content(j.dump(), "application/json");
    });

    srv.Get("/api/labels", [this](const httplib::Request&, httplib::Response& res) {
        json j;
        j["labelset"] = impl_->labelset->id;
        j["labels"] = impl_->labelset->names;
        res.set_content(j.dump(), "application/json");
    });

    srv.Post("/api/predict", [this](const httplib::Request& req, httplib::Response& res) {
        std::vector<std::string> payloads;
        bool denoise_flag = false;
        std::string batch_id;
        try {
            if (req.is_multipart_form_data()) {
                auto files = req.files.equal_range("images");
                for (auto it = files.first; it != files.second; ++it)
                    payloads.push_back(it->second.content);
                if (req.has_file("denoise")) {
                    const auto& v = req.get_file_value("denoise").content;
                    denoise_flag = (v == "true" || v == "1");
                }
                if (req.has_file("batch_id")) batch_id = req.get_file_value("batch_id").content;
            } else {
                json body = json::parse(req.body);
                for (const auto& b64 : body.at("images"))
                    payloads.push_back(base64_decode(b64.get<std::string>()));
                denoise_flag = body.value("denoise", false);
                batch_id = body.value("batch_id", "");
            }
        } catch (const std::exception& e) {
            res.status = 400;
            json err;
            err["error"] = std::string("malformed request: ") + e.what();
            res.set_content(err.dump(), "application/json");
            return;
        }

        if (payloads.empty()) {
            res.status = 400;
            res.set_content(json{{"error", "empty batch: at least one image is required"}}.dump(),
                            "application/json");
            return;
        }
        if (payloads.size() > static_cast<std::size_t>(impl_->cfg.max_batch)) {
            res.status = 413;
            json err;
            err["error"] = "batch of " + std::to_string(payloads.size()) +
                           " images exceeds the limit of " + std::to_string(impl_->cfg.max_batch);
            res.set_content(err.dump(), "application/json");
            return;
        }

        try {
            PredictResult result = predict_batch(payloads, denoise_flag, batch_id);
            json j;
            j["model"] = impl_->model_id;
            j["labelset"] = impl_->labelset->id;
            j["denoised"] = result.denoised;
            j["elapsed_ms"] = result.elapsed_ms;
            if (!result.batch_id.empty()) j["batch_id"] = result.batch_id;
            json items = json::array();
            for (const auto& it : result.items) {
                json e;
                e["index"] = it.index;
                e["status"] = it.status;
                if (it.status == "ok") {
                    e["class"] = it.class_name;
                    e["probabilities"] = it.probabilities;
                    e["resized"] = it.resized;
                } else {
                    e["error"] = it.error;
                }
                items.push_back(std::move(e));
            }
            j["results"] = std::move(items);
            res.set_content(j.dump(), "application/json");
        } catch (const std::exception& e) {
            // Opaque id to the client; detail on the server log.
            auto id = std::to_string(std::chrono::steady_clock::now().time_since_epoch().count());
            std::fprintf(stderr, "[predict %s] internal error: %s\n", id.c_str(), e.what());
            res.status = 500;
            res.set_content(json{{"error", "internal error"}, {"id", id}}.dump(), "application/json");
        }
    });
}

InferenceService::~InferenceService() { stop(); }

PredictResult InferenceService::predict_batch(const std::vector<std::string>& png_payloads,
                                              bool denoise_flag, const std::string& batch_id) {
    auto t0 = std::chrono::steady_clock::now();
    PredictResult out;
    out.batch_id = batch_id;
    out.denoised = denoise_flag && impl_->dae.has_value();

    const Shape& in = impl_->cnn.spec.input_shape;
    std::vector<ImageTile> tiles;
    std::vector<std::size_t> ok_slots;  // response index per decoded tile
    out.items.resize(png_payloads.size());
    for (std::size_t i = 0; i < png_payloads.size(); ++i) {
        PredictItem& item = out.items[i];
        item.index = static_cast<int>(i);
        try {
            ImageTile t = decode_png(reinterpret_cast<const std::uint8_t*>(png_payloads[i].data()),
                                     png_payloads[i].size());
            if (t.h != in[0] || t.w != in[1]) {
                t = resize_nearest(t, in[0], in[1]);
                item.resized = true;
            }
            item.status = "ok";
            ok_slots.push_back(i);
            tiles.push_back(std::move(t));
        } catch (const std::exception& e) {
            item.status = "decode_error";
            item.error = e.what();
        }
    }

    if (!tiles.empty()) {
        std::lock_guard<std::mutex> lock(impl_->infer_mu);
        if (out.denoised) tiles = denoise(*impl_->dae, tiles);
        auto preds = predict(impl_->cnn, tiles);
        for (std::size_t k = 0; k < preds.size(); ++k) {
            PredictItem& item = out.items[ok_slots[k]];
            item.probabilities = preds[k].probabilities;
            item.class_name = impl_->labelset->names[static_cast<std::size_t>(preds[k].label)];
        }
    }

    out.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

const LabelSet& InferenceService::labels() const { return *impl_->labelset; }

bool InferenceService::run() {
    auto& srv = impl_->server;
    int p = impl_->cfg.port;
    if (p == 0) {
        p = srv.bind_to_any_port(impl_->cfg.bind);
        if (p < 0) return false;
    } else {
        if (!srv.bind_to_port(impl_->cfg.bind, p)) return false;
    }
    port_.store(p);
    return srv.listen_after_bind();
}

void InferenceService::stop() {
    if (impl_) impl_->server.stop();
}

bool InferenceService::wait_until_ready(int timeout_ms) const {
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (std::chrono::steady_clock::now() < deadline) {
        if (port_.load() != 0 && impl_->server.is_running()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return port_.load() != 0 && impl_->server.is_running();
}

}  // namespace fgs
