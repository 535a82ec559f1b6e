#include "fgs/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

using nlohmann::json;

namespace fgs {

namespace {

// Seeded He-style uniform fan-in init.
std::vector<float> he_uniform(std::size_t n, std::size_t fan_in, Rng& rng) {
    float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
    std::vector<float> v(n);
    for (auto& x : v) x = rng.uniform(-limit, limit);
    return v;
}

Layer make_conv(int in_c, int filters, int kernel, int stride, Padding pad, Rng& rng) {
    Layer l;
    l.kind = "conv2d";
    l.filters = filters;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = pad;
    std::size_t fan_in = static_cast<std::size_t>(kernel) * kernel * in_c;
    l.weight = Tensor({kernel, kernel, in_c, filters},
                      he_uniform(fan_in * static_cast<std::size_t>(filters), fan_in, rng), true);
    l.bias = Tensor::zeros({filters}, true);
    return l;
}

Layer make_dense(int in_f, int units, Rng& rng) {
    Layer l;
    l.kind = "dense";
    l.units = units;
    l.weight = Tensor({in_f, units},
                      he_uniform(static_cast<std::size_t>(in_f) * units, static_cast<std::size_t>(in_f), rng),
                      true);
    l.bias = Tensor::zeros({units}, true);
    return l;
}

Layer make_batchnorm(int channels) {
    Layer l;
    l.kind = "batchnorm2d";
    l.weight = Tensor::full({channels}, 1.0f, true);  // gamma
    l.bias = Tensor::zeros({channels}, true);         // beta
    l.running_mean.assign(static_cast<std::size_t>(channels), 0.0f);
    l.running_var.assign(static_cast<std::size_t>(channels), 1.0f);
    return l;
}

Layer make_simple(const std::string& kind) {
    Layer l;
    l.kind = kind;
    return l;
}

constexpr float kBatchnormEps = 1e-5f;
constexpr float kBatchnormMomentum = 0.99f;

}  // namespace

Tensor Network::forward(const Tensor& x, Mode mode, Rng* rng) {
    Tensor h = x;
    for (auto& l : layers) {
        if (l.kind == "rescale") {
            h = l.factor == 1.0f ? h : scale(h, l.factor);
        } else if (l.kind == "conv2d") {
            h = conv2d(h, l.weight, l.bias, l.stride, l.padding);
        } else if (l.kind == "relu") {
            h = relu(h);
        } else if (l.kind == "sigmoid") {
            h = sigmoid(h);
        } else if (l.kind == "softmax") {
            h = softmax(h);
        } else if (l.kind == "maxpool2") {
            h = maxpool2d(h);
        } else if (l.kind == "upsample2") {
            h = upsample2d(h);
        } else if (l.kind == "dense") {
            h = dense(h, l.weight, l.bias);
        } else if (l.kind == "flatten") {
            h = flatten(h);
        } else if (l.kind == "reshape") {
            Shape s = l.target_shape;
            s.insert(s.begin(), h.dim(0));
            h = reshape(h, s);
        } else if (l.kind == "dropout") {
            std::uint64_t seed = (mode == Mode::Train && rng) ? rng->next_u64() : 0;
            h = dropout(h, l.rate, mode, seed);
        } else if (l.kind == "batchnorm2d") {
            h = batchnorm2d(h, l.weight, l.bias, mode, kBatchnormEps, kBatchnormMomentum,
                            l.running_mean, l.running_var);
        } else {
            throw ContractError("unknown layer kind '" + l.kind + "'");
        }
    }
    return h;
}

Tensor Network::forward_logits(const Tensor& x, Mode mode, Rng* rng) {
    if (layers.empty() || layers.back().kind != "softmax")
        throw ContractError("forward_logits requires a trailing softmax layer");
    Tensor h = x;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
        auto& l = layers[i];
        Network one;
        // Reuse forward() for a single layer without copying parameters.
        one.layers.push_back(l);
        h = one.forward(h, mode, rng);
        layers[i].running_mean = one.layers[0].running_mean;
        layers[i].running_var = one.layers[0].running_var;
    }
    return h;
}

std::vector<Tensor> Network::parameters() {
    std::vector<Tensor> out;
    for (auto& l : layers)
        if (l.has_params()) {
            out.push_back(l.weight);
            out.push_back(l.bias);
        }
    return out;
}

std::size_t Network::parameter_count() {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
}

std::vector<std::vector<float>> Network::parameter_values() {
    std::vector<std::vector<float>> out;
    for (const auto& p : parameters()) out.push_back(p.data());
    return out;
}

Network build_cnn(const Shape& input_shape, int num_classes, const std::string& labelset_id,
                  std::uint64_t seed, const CnnOptions& opts) {
    if (input_shape.size() != 3)
        throw DimensionError("build_cnn expects (H,W,C) input shape");
    int h = input_shape[0], w = input_shape[1], c = input_shape[2];
    if (h % 8 != 0 || w % 8 != 0)
        throw DimensionError("build_cnn input dims must be divisible by 8 (three 2x pools)");
    if (opts.filters.size() != 3) throw ContractError("build_cnn expects three conv filter counts");

    Rng rng(seed);
    Network net;
    net.spec = {"cnn", input_shape, labelset_id, "", num_classes, 0};

    Layer rescale;
    rescale.kind = "rescale";
    rescale.factor = opts.rescale_factor;
    net.layers.push_back(rescale);

    int in_c = c;
    for (int f : opts.filters) {
        net.layers.push_back(make_conv(in_c, f, opts.kernel, 1, Padding::Same, rng));
        net.layers.push_back(make_simple("relu"));
        net.layers.push_back(make_simple("maxpool2"));
        in_c = f;
    }
    Layer drop;
    drop.kind = "dropout";
    drop.rate = opts.dropout_rate;
    net.layers.push_back(drop);
    net.layers.push_back(make_simple("flatten"));
    int feat = (h / 8) * (w / 8) * in_c;
    net.layers.push_back(make_dense(feat, 128, rng));
    net.layers.push_back(make_simple("relu"));
    net.layers.push_back(make_dense(128, num_classes, rng));
    net.layers.push_back(make_simple("softmax"));
    return net;
}

Network build_dae(const Shape& input_shape, std::uint64_t seed) {
    if (input_shape.size() != 3)
        throw DimensionError("build_dae expects (H,W,C) input shape");
    int c = input_shape[2];
    if (input_shape[0] % 4 != 0 || input_shape[1] % 4 != 0)
        throw DimensionError("build_dae input dims must be divisible by 4 (two 2x pools)");

    Rng rng(seed);
    Network net;
    net.spec = {"dae", input_shape, "", "", 0, 0};
    // Encoder: two conv32+relu blocks, each pooled 2x.
    net.layers.push_back(make_conv(c, 32, 3, 1, Padding::Same, rng));
    net.layers.push_back(make_simple("relu"));
    net.layers.push_back(make_simple("maxpool2"));
    net.layers.push_back(make_conv(32, 32, 3, 1, Padding::Same, rng));
    net.layers.push_back(make_simple("relu"));
    net.layers.push_back(make_simple("maxpool2"));
    // Decoder mirrors the encoder; final conv maps back to the input depth.
    net.layers.push_back(make_conv(32, 32, 3, 1, Padding::Same, rng));
    net.layers.push_back(make_simple("relu"));
    net.layers.push_back(make_simple("upsample2"));
    net.layers.push_back(make_conv(32, 32, 3, 1, Padding::Same, rng));
    net.layers.push_back(make_simple("relu"));
    net.layers.push_back(make_simple("upsample2"));
    net.layers.push_back(make_conv(32, c, 3, 1, Padding::Same, rng));
    net.layers.push_back(make_simple("sigmoid"));
    return net;
}

GanPair build_gan(int latent_dim, const Shape& image_shape, std::uint64_t seed) {
    if (latent_dim < 1) throw ContractError("latent_dim must be >= 1");
    if (image_shape.size() != 3)
        throw DimensionError("build_gan expects (H,W,C) image shape");
    int h = image_shape[0], w = image_shape[1], c = image_shape[2];
    if (h % 4 != 0 || w % 4 != 0)
        throw DimensionError("build_gan image dims must be divisible by 4");

    Rng rng(seed);
    GanPair gan;

    // Generator: dense seed map at quarter resolution, then three convs with
    // nearest-neighbor upsampling in between; batchnorm after the first
    // three parameterized layers, sigmoid output.
    Network& g = gan.generator;
    g.spec = {"gan_generator", {latent_dim}, "", "", 0, latent_dim};
    int sh = h / 4, sw = w / 4, sc = 64;
    g.layers.push_back(make_dense(latent_dim, sh * sw * sc, rng));
    g.layers.push_back(make_simple("relu"));
    Layer reshape_l;
    reshape_l.kind = "reshape";
    reshape_l.target_shape = {sh, sw, sc};
    g.layers.push_back(reshape_l);
    g.layers.push_back(make_batchnorm(sc));
    g.layers.push_back(make_simple("upsample2"));
    g.layers.push_back(make_conv(sc, 32, 3, 1, Padding::Same, rng));
    g.layers.push_back(make_simple("relu"));
    g.layers.push_back(make_batchnorm(32));
    g.layers.push_back(make_simple("upsample2"));
    g.layers.push_back(make_conv(32, 16, 3, 1, Padding::Same, rng));
    g.layers.push_back(make_simple("relu"));
    g.layers.push_back(make_batchnorm(16));
    g.layers.push_back(make_conv(16, c, 3, 1, Padding::Same, rng));
    g.layers.push_back(make_simple("sigmoid"));

    // Discriminator: three strided conv+relu+dropout blocks, then dense(1).
    Network& d = gan.discriminator;
    d.spec = {"gan_discriminator", image_shape, "", "", 0, latent_dim};
    int in_c = c;
    for (int f : {16, 32, 64}) {
        d.layers.push_back(make_conv(in_c, f, 3, 2, Padding::Same, rng));
        d.layers.push_back(make_simple("relu"));
        Layer drop;
        drop.kind = "dropout";
        drop.rate = 0.3f;
        d.layers.push_back(drop);
        in_c = f;
    }
    d.layers.push_back(make_simple("flatten"));
    int fh = (h + 7) / 8, fw = (w + 7) / 8;
    d.layers.push_back(make_dense(fh * fw * in_c, 1, rng));
    d.layers.push_back(make_simple("sigmoid"));
    return gan;
}

Tensor stack_tiles(const std::vector<ImageTile>& tiles) {
    std::vector<std::size_t> idx(tiles.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return stack_tiles(tiles, idx);
}

Tensor stack_tiles(const std::vector<ImageTile>& tiles, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ContractError("stack_tiles on empty batch");
    const ImageTile& first = tiles[indices[0]];
    std::vector<float> data;
    data.reserve(indices.size() * first.numel());
    for (std::size_t i : indices) {
        const ImageTile& t = tiles[i];
        if (t.h != first.h || t.w != first.w || t.c != first.c)
            throw DimensionError("stack_tiles shape mismatch at tile " + std::to_string(i));
        data.insert(data.end(), t.pixels.begin(), t.pixels.end());
    }
    return Tensor({static_cast<int>(indices.size()), first.h, first.w, first.c}, std::move(data));
}

TrainHistory fit_classifier(Network& net, const std::vector<ImageTile>& tiles,
                            const std::vector<int>& labels, const TrainConfig& cfg) {
    if (tiles.empty()) throw ContractError("fit on empty dataset");
    if (tiles.size() != labels.size()) throw ContractError("tile/label count mismatch");

    auto params = net.parameters();
    Rng drop_rng(cfg.seed ^ 0x5eedf00dULL);

    auto batch_loss = [&](const std::vector<std::size_t>& batch, Rng& erng) {
        Tensor x;
        if (cfg.augment.enabled()) {
            std::vector<ImageTile> aug;
            aug.reserve(batch.size());
            for (std::size_t i : batch) aug.push_back(augment(tiles[i], cfg.augment, erng.next_u64()));
            x = stack_tiles(aug);
        } else {
            x = stack_tiles(tiles, batch);
        }
        std::vector<int> y;
        y.reserve(batch.size());
        for (std::size_t i : batch) y.push_back(labels[i]);
        Tensor logits = net.forward_logits(x, Mode::Train, &drop_rng);
        return cross_entropy_from_logits(logits, y);
    };

    auto epoch_accuracy = [&]() {
        auto preds = predict(net, tiles);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < preds.size(); ++i)
            if (preds[i].label == labels[i]) ++correct;
        return static_cast<float>(static_cast<double>(correct) / static_cast<double>(tiles.size()));
    };

    TrainHistory hist = fit_loop(params, batch_loss, tiles.size(), cfg, epoch_accuracy);
    net.meta = {cfg.seed, static_cast<int>(hist.loss.size()),
                hist.loss.empty() ? 0.0f : hist.loss.back()};
    return hist;
}

TrainHistory fit_autoencoder(Network& net, const std::vector<ImageTile>& noisy,
                             const std::vector<ImageTile>& clean, const TrainConfig& cfg) {
    if (noisy.empty()) throw ContractError("fit on empty dataset");
    if (noisy.size() != clean.size()) throw ContractError("noisy/clean pair count mismatch");

    auto params = net.parameters();
    auto batch_loss = [&](const std::vector<std::size_t>& batch, Rng&) {
        Tensor x = stack_tiles(noisy, batch);
        Tensor target = stack_tiles(clean, batch);
        Tensor recon = net.forward(x, Mode::Train, nullptr);
        return mse_loss(recon, target);
    };
    TrainHistory hist = fit_loop(params, batch_loss, noisy.size(), cfg);
    net.meta = {cfg.seed, static_cast<int>(hist.loss.size()),
                hist.loss.empty() ? 0.0f : hist.loss.back()};
    return hist;
}

GanHistory train_gan(GanPair& gan, const std::vector<ImageTile>& real_tiles,
                     const TrainConfig& cfg, int steps) {
    cfg.validate();
    if (real_tiles.size() < static_cast<std::size_t>(cfg.batch_size))
        throw ContractError("train_gan needs at least batch_size real tiles");

    const int latent = gan.generator.spec.latent_dim;
    auto g_params = gan.generator.parameters();
    auto d_params = gan.discriminator.parameters();
    AdamState g_adam = AdamState::init(g_params);
    AdamState d_adam = AdamState::init(d_params);

    Rng rng(cfg.seed);
    GanHistory hist;
    const int b = cfg.batch_size;

    auto latent_batch = [&](Rng& r) {
        std::vector<float> z(static_cast<std::size_t>(b) * latent);
        for (auto& v : z) v = r.normal();
        return Tensor({b, latent}, std::move(z));
    };

    for (int step = 0; step < steps; ++step) {
        // Discriminator step: real batch labeled 1, detached fakes labeled 0.
        std::vector<std::size_t> idx(static_cast<std::size_t>(b));
        for (auto& i : idx) i = rng.uniform_int(real_tiles.size());
        Tensor real = stack_tiles(real_tiles, idx);
        Tensor fake_detached;
        {
            Tensor fake = gan.generator.forward(latent_batch(rng), Mode::Train, &rng);
            fake_detached = Tensor(fake.shape(), fake.data());
        }
        Tensor d_real = gan.discriminator.forward(real, Mode::Train, &rng);
        Tensor d_fake = gan.discriminator.forward(fake_detached, Mode::Train, &rng);
        Tensor d_loss = scale(add(bce_loss(d_real, std::vector<float>(static_cast<std::size_t>(b), 1.0f)),
                                  bce_loss(d_fake, std::vector<float>(static_cast<std::size_t>(b), 0.0f))),
                              0.5f);
        backward(d_loss);
        adam_step(d_params, d_adam, cfg.adam);
        hist.d_loss.push_back(d_loss.item());

        // Generator step: fresh fakes against label 1.
        Tensor fake = gan.generator.forward(latent_batch(rng), Mode::Train, &rng);
        Tensor d_out = gan.discriminator.forward(fake, Mode::Train, &rng);
        Tensor g_loss = bce_loss(d_out, std::vector<float>(static_cast<std::size_t>(b), 1.0f));
        backward(g_loss);
        adam_step(g_params, g_adam, cfg.adam);
        hist.g_loss.push_back(g_loss.item());
    }
    gan.generator.meta = {cfg.seed, steps, hist.g_loss.empty() ? 0.0f : hist.g_loss.back()};
    gan.discriminator.meta = {cfg.seed, steps, hist.d_loss.empty() ? 0.0f : hist.d_loss.back()};
    return hist;
}

std::vector<ImageTile> gan_sample(Network& generator, std::size_t n, std::uint64_t seed) {
    std::vector<ImageTile> out;
    if (n == 0) return out;
    Rng rng(seed);
    const int latent = generator.spec.latent_dim;
    std::vector<float> z(n * static_cast<std::size_t>(latent));
    for (auto& v : z) v = rng.normal();
    Tensor img = generator.forward(Tensor({static_cast<int>(n), latent}, std::move(z)), Mode::Infer);
    int h = img.dim(1), w = img.dim(2), c = img.dim(3);
    for (std::size_t i = 0; i < n; ++i) {
        ImageTile t;
        t.h = h;
        t.w = w;
        t.c = c;
        t.label = generator.spec.class_name;
        t.source_id = "gan:" + generator.spec.class_name + ":" + std::to_string(seed) + ":" + std::to_string(i);
        auto begin = img.data().begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(h) * w * c);
        t.pixels.assign(begin, begin + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(h) * w * c));
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<Prediction> predict(Network& cnn, const std::vector<ImageTile>& tiles) {
    std::vector<Prediction> out;
    if (tiles.empty()) return out;
    const Shape& in = cnn.spec.input_shape;
    for (std::size_t i = 0; i < tiles.size(); ++i)
        if (tiles[i].h != in[0] || tiles[i].w != in[1] || tiles[i].c != in[2])
            throw DimensionError("predict: tile " + std::to_string(i) + " shape " +
                                 std::to_string(tiles[i].h) + "x" + std::to_string(tiles[i].w) +
                                 " does not match model input " + shape_str(in));

    // Per-image so a tile's probabilities never depend on its batch position
    // (BLAS accumulation order varies with matrix row offsets).
    const std::size_t chunk = 1;
    for (std::size_t start = 0; start < tiles.size(); start += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(tiles.size(), start + chunk); ++i) idx.push_back(i);
        Tensor probs = cnn.forward(stack_tiles(tiles, idx), Mode::Infer);
        int k = probs.dim(1);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            Prediction p;
            auto begin = probs.data().begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(k));
            p.probabilities.assign(begin, begin + k);
            p.label = static_cast<int>(std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                                       p.probabilities.begin());
            out.push_back(std::move(p));
        }
    }
    return out;
}

std::vector<ImageTile> denoise(Network& dae, const std::vector<ImageTile>& noisy) {
    std::vector<ImageTile> out;
    if (noisy.empty()) return out;
    const Shape& in = dae.spec.input_shape;
    for (std::size_t i = 0; i < noisy.size(); ++i)
        if (noisy[i].h != in[0] || noisy[i].w != in[1] || noisy[i].c != in[2])
            throw DimensionError("denoise: tile " + std::to_string(i) + " does not match model input " +
                                 shape_str(in));
    const std::size_t chunk = 1;  // position-independent reconstructions
    for (std::size_t start = 0; start < noisy.size(); start += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(noisy.size(), start + chunk); ++i) idx.push_back(i);
        Tensor recon = dae.forward(stack_tiles(noisy, idx), Mode::Infer);
        int h = recon.dim(1), w = recon.dim(2), c = recon.dim(3);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            ImageTile t;
            t.h = h;
            t.w = w;
            t.c = c;
            t.label = noisy[idx[r]].label;
            t.source_id = noisy[idx[r]].source_id;
            auto begin = recon.data().begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(h) * w * c);
            t.pixels.assign(begin, begin + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(h) * w * c));
            out.push_back(std::move(t));
        }
    }
    return out;
}

// --- checkpoints ---

namespace {

constexpr char kMagic[4] = {'F', 'G', 'S', '1'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("truncated checkpoint while reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_array(std::ostream& os, const std::string& name, const std::vector<float>& data) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(data.size()));
    // Little-endian f32; this build targets little-endian hosts.
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(float)));
}

json shape_to_json(const Shape& s) { return json(s); }

Shape shape_from_json(const json& j) { return j.get<Shape>(); }

json layer_to_json(const Layer& l) {
    json j;
    j["kind"] = l.kind;
    if (l.kind == "rescale") j["factor"] = l.factor;
    if (l.kind == "conv2d") {
        j["filters"] = l.filters;
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        j["padding"] = l.padding == Padding::Same ? "same" : "valid";
        j["weight_shape"] = shape_to_json(l.weight.shape());
    }
    if (l.kind == "dense") {
        j["units"] = l.units;
        j["weight_shape"] = shape_to_json(l.weight.shape());
    }
    if (l.kind == "dropout") j["rate"] = l.rate;
    if (l.kind == "batchnorm2d") j["channels"] = static_cast<int>(l.weight.numel());
    if (l.kind == "reshape") j["target_shape"] = shape_to_json(l.target_shape);
    return j;
}

Layer layer_from_json(const json& j) {
    Layer l;
    l.kind = j.at("kind").get<std::string>();
    if (l.kind == "rescale") l.factor = j.at("factor").get<float>();
    if (l.kind == "conv2d") {
        l.filters = j.at("filters").get<int>();
        l.kernel = j.at("kernel").get<int>();
        l.stride = j.at("stride").get<int>();
        l.padding = j.at("padding").get<std::string>() == "same" ? Padding::Same : Padding::Valid;
        Shape ws = shape_from_json(j.at("weight_shape"));
        l.weight = Tensor::zeros(ws, true);
        l.bias = Tensor::zeros({ws[3]}, true);
    }
    if (l.kind == "dense") {
        l.units = j.at("units").get<int>();
        Shape ws = shape_from_json(j.at("weight_shape"));
        l.weight = Tensor::zeros(ws, true);
        l.bias = Tensor::zeros({ws[1]}, true);
    }
    if (l.kind == "dropout") l.rate = j.at("rate").get<float>();
    if (l.kind == "batchnorm2d") {
        int c = j.at("channels").get<int>();
        l.weight = Tensor::zeros({c}, true);
        l.bias = Tensor::zeros({c}, true);
        l.running_mean.assign(static_cast<std::size_t>(c), 0.0f);
        l.running_var.assign(static_cast<std::size_t>(c), 1.0f);
    }
    if (l.kind == "reshape") l.target_shape = shape_from_json(j.at("target_shape"));
    return l;
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path);

    json spec;
    spec["arch"] = net.spec.arch;
    spec["input_shape"] = shape_to_json(net.spec.input_shape);
    spec["labelset"] = net.spec.labelset_id;
    spec["class_name"] = net.spec.class_name;
    spec["num_classes"] = net.spec.num_classes;
    spec["latent_dim"] = net.spec.latent_dim;
    spec["meta"] = {{"seed", net.meta.seed}, {"epochs", net.meta.epochs}, {"final_loss", net.meta.final_loss}};
    json jlayers = json::array();
    for (const auto& l : net.layers) jlayers.push_back(layer_to_json(l));
    spec["layers"] = jlayers;
    std::string spec_str = spec.dump();

    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(spec_str.size()));
    os.write(spec_str.data(), static_cast<std::streamsize>(spec_str.size()));

    std::uint32_t count = 0;
    for (const auto& l : net.layers) {
        if (l.has_params()) count += 2;
        if (l.kind == "batchnorm2d") count += 2;
    }
    write_u32(os, count);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        std::string prefix = "L" + std::to_string(i) + ".";
        if (l.has_params()) {
            write_array(os, prefix + "weight", l.weight.data());
            write_array(os, prefix + "bias", l.bias.data());
        }
        if (l.kind == "batchnorm2d") {
            write_array(os, prefix + "running_mean", l.running_mean);
            write_array(os, prefix + "running_var", l.running_var);
        }
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

Network load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read checkpoint: " + path);

    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("bad checkpoint magic in " + path);
    std::uint32_t version = read_u32(is, "version");
    if (version != kVersion)
        throw VersionError("unsupported checkpoint version " + std::to_string(version));

    std::uint32_t spec_len = read_u32(is, "spec length");
    std::string spec_str(spec_len, '\0');
    if (!is.read(spec_str.data(), spec_len)) throw FormatError("truncated checkpoint spec block");
    json spec;
    try {
        spec = json::parse(spec_str);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("unparseable checkpoint spec: ") + e.what());
    }

    Network net;
    try {
        net.spec.arch = spec.at("arch").get<std::string>();
        net.spec.input_shape = shape_from_json(spec.at("input_shape"));
        net.spec.labelset_id = spec.at("labelset").get<std::string>();
        net.spec.class_name = spec.at("class_name").get<std::string>();
        net.spec.num_classes = spec.at("num_classes").get<int>();
        net.spec.latent_dim = spec.at("latent_dim").get<int>();
        net.meta.seed = spec.at("meta").at("seed").get<std::uint64_t>();
        net.meta.epochs = spec.at("meta").at("epochs").get<int>();
        net.meta.final_loss = spec.at("meta").at("final_loss").get<float>();
        for (const auto& jl : spec.at("layers")) net.layers.push_back(layer_from_json(jl));
    } catch (const json::exception& e) {
        throw FormatError(std::string("invalid checkpoint spec: ") + e.what());
    }

    std::uint32_t count = read_u32(is, "array count");
    for (std::uint32_t a = 0; a < count; ++a) {
        std::uint32_t name_len = read_u32(is, "array name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw FormatError("truncated array name");
        std::uint32_t elems = read_u32(is, "array length");

        auto dot = name.find('.');
        if (dot == std::string::npos || name[0] != 'L')
            throw FormatError("malformed array name '" + name + "'");
        std::size_t li = std::stoul(name.substr(1, dot - 1));
        if (li >= net.layers.size()) throw FormatError("array for unknown layer '" + name + "'");
        Layer& l = net.layers[li];
        std::string field = name.substr(dot + 1);

        std::vector<float>* dst = nullptr;
        if (field == "weight" && l.has_params()) dst = &l.weight.mutable_data();
        else if (field == "bias" && l.has_params()) dst = &l.bias.mutable_data();
        else if (field == "running_mean") dst = &l.running_mean;
        else if (field == "running_var") dst = &l.running_var;
        if (!dst) throw FormatError("unexpected array '" + name + "'");
        if (dst->size() != elems)
            throw ShapeError("array '" + name + "' length " + std::to_string(elems) +
                             " does not match spec shape (" + std::to_string(dst->size()) + ")");
        if (!is.read(reinterpret_cast<char*>(dst->data()),
                     static_cast<std::streamsize>(elems * sizeof(float))))
            throw FormatError("truncated array data for '" + name + "'");
    }
    return net;
}

}  // namespace fgs
