// forgesight pipeline CLI: every stage of the defect-detection pipeline as a
// verb. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fgs/dataset.hpp"
#include "fgs/evaluation.hpp"
#include "fgs/experiment.hpp"
#include "fgs/model.hpp"
#include "fgs/service.hpp"
#include "fgs/surrogate.hpp"
#include "fgs/synthdata.hpp"
#include "fgs/training.hpp"

namespace fs = std::filesystem;
using namespace fgs;

namespace {

// Reproducibility record: the exact invocation, written into --out.
void write_run_meta(const std::string& out_dir, int argc, char** argv, std::uint64_t seed) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "run.meta");
    std::ostringstream cmd;
    for (int i = 0; i < argc; ++i) cmd << (i ? " " : "") << argv[i];
    f << "command=" << cmd.str() << "\n";
    f << "seed=" << seed << "\n";
}

std::vector<int> parse_filters(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

std::map<std::string, std::size_t> parse_counts(const std::vector<std::string>& specs) {
    std::map<std::string, std::size_t> out;
    for (const auto& s : specs) {
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ContractError("expected class=count, got '" + s + "'");
        out[s.substr(0, eq)] = std::stoul(s.substr(eq + 1));
    }
    return out;
}

// Loads train-split tiles (all entries if the manifest is unsplit).
void load_split_tiles(const DatasetManifest& m, const std::string& tag,
                      std::vector<ImageTile>& tiles, std::vector<int>& labels) {
    const LabelSet& ls = LabelSet::get(m.labelset_id);
    bool has_split = false;
    for (const auto& e : m.entries)
        if (!e.split.empty()) has_split = true;
    for (const auto& e : m.entries) {
        if (has_split && e.split != tag) continue;
        ImageTile t = load_png(e.path);
        t.label = e.class_name;
        tiles.push_back(std::move(t));
        labels.push_back(ls.index_of(e.class_name));
    }
    if (tiles.empty()) throw ContractError("no '" + tag + "' entries in manifest");
}

int cmd_surrogate(const std::string& config_path, const std::string& out_dir) {
    SurrogateConfig cfg = load_surrogate_config(config_path);
    SurrogateResult res = surrogate_generate(cfg, out_dir);
    save_manifest(res.manifest, (fs::path(out_dir) / "manifest.tsv").string());
    std::cout << "wrote " << res.manifest.entries.size() << " tiles and "
              << res.masks.size() << " masks under " << out_dir << "\n";
    return 0;
}

int cmd_tile(const std::string& image, const std::string& boxes_path, const std::string& cls,
             const std::string& labelset, const std::string& out_dir) {
    ImageTile layer = load_png(image);
    std::vector<CropBox> boxes;
    std::ifstream bf(boxes_path);
    if (!bf) throw IoError("cannot read boxes file: " + boxes_path);
    CropBox b;
    while (bf >> b.x >> b.y >> b.w >> b.h) boxes.push_back(b);
    auto tiles = tile_layer(layer, boxes);

    DatasetManifest m;
    m.labelset_id = labelset;
    fs::create_directories(fs::path(out_dir) / cls);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        std::ostringstream name;
        name << "tile_" << std::setw(5) << std::setfill('0') << i << ".png";
        std::string path = (fs::path(out_dir) / cls / name.str()).string();
        save_png(tiles[i], path);
        m.entries.push_back({path, cls, ""});
    }
    save_manifest(m, (fs::path(out_dir) / "manifest.tsv").string());
    std::cout << "wrote " << tiles.size() << " tiles under " << out_dir << "\n";
    return 0;
}

int cmd_stats(const std::string& manifest_path) {
    DatasetManifest m = load_manifest(manifest_path);
    auto stats = class_stats(m);
    std::cout << std::fixed << std::setprecision(1);
    for (const auto& s : stats)
        std::cout << std::setw(22) << std::left << s.class_name << std::right << std::setw(8)
                  << s.count << std::setw(8) << s.percent << "%\n";
    return 0;
}

int cmd_split(const std::string& manifest_path, std::uint64_t seed, bool stratified,
              const std::string& out_dir) {
    DatasetManifest m = load_manifest(manifest_path);
    split(m, seed, stratified);
    fs::create_directories(out_dir);
    save_manifest(m, (fs::path(out_dir) / "manifest.tsv").string());
    std::size_t train = entries_for_split(m, "train").size();
    std::cout << "split " << m.entries.size() << " entries: " << train << " train, "
              << m.entries.size() - train << " test\n";
    return 0;
}

int cmd_balance(const std::string& manifest_path, const std::string& strategy,
                const std::vector<std::string>& target_specs, std::uint64_t seed,
                int gan_steps, int gan_latent, const std::string& out_dir) {
    DatasetManifest m = load_manifest(manifest_path);
    const LabelSet& ls = LabelSet::get(m.labelset_id);
    BalanceStrategy strat = parse_strategy(strategy);
    auto targets = parse_counts(target_specs);

    BalanceResources res;
    if (strat == BalanceStrategy::Cds || strat == BalanceStrategy::Rds) {
        for (const auto& e : m.entries) {
            if (e.class_name == ls.names[0]) {
                res.clean_pool.push_back(load_png(e.path));
            } else if (fs::exists(e.path + ".mask")) {
                res.masks[e.class_name].push_back(load_mask(e.path + ".mask"));
            }
        }
    }
    if (strat == BalanceStrategy::Gan) {
        std::map<std::string, std::vector<ImageTile>> real_by_class;
        for (const auto& e : m.entries)
            if (targets.count(e.class_name)) {
                ImageTile t = load_png(e.path);
                real_by_class[e.class_name].push_back(std::move(t));
            }
        auto trained = std::make_shared<std::map<std::string, Network>>();
        res.generate = [trained, real_by_class, gan_steps, gan_latent](
                           const std::string& cls, std::size_t n, std::uint64_t gseed) {
            if (!trained->count(cls)) {
                auto it = real_by_class.find(cls);
                if (it == real_by_class.end() || it->second.empty())
                    throw ContractError("gan balance: no real tiles for class " + cls);
                std::vector<ImageTile> real = it->second;
                const int batch = 8;
                for (std::size_t i = 0; real.size() < batch; ++i) real.push_back(real[i % real.size()]);
                GanPair gan = build_gan(gan_latent, {real[0].h, real[0].w, real[0].c}, gseed);
                TrainConfig tc;
                tc.batch_size = batch;
                tc.seed = gseed;
                tc.augment = AugmentConfig::off();
                train_gan(gan, real, tc, gan_steps);
                gan.generator.spec.class_name = cls;
                trained->emplace(cls, std::move(gan.generator));
            }
            return gan_sample(trained->at(cls), n, gseed);
        };
    }

    balance(m, strat, targets, seed, res, out_dir);
    save_manifest(m, (fs::path(out_dir) / "manifest.tsv").string());
    std::cout << "balanced manifest has " << m.entries.size() << " entries\n";
    return 0;
}

int cmd_train_cnn(const std::string& manifest_path, int epochs, int batch, std::uint64_t seed,
                  const std::string& filters_csv, float dropout, bool augment_on,
                  const std::string& out_dir) {
    DatasetManifest m = load_manifest(manifest_path);
    const LabelSet& ls = LabelSet::get(m.labelset_id);
    std::vector<ImageTile> tiles;
    std::vector<int> labels;
    load_split_tiles(m, "train", tiles, labels);

    CnnOptions opts;
    opts.filters = parse_filters(filters_csv);
    opts.dropout_rate = dropout;
    Network cnn = build_cnn({tiles[0].h, tiles[0].w, tiles[0].c},
                            static_cast<int>(ls.names.size()), ls.id, seed, opts);
    TrainConfig tc;
    tc.batch_size = batch;
    tc.max_epochs = epochs;
    tc.seed = seed;
    if (!augment_on) tc.augment = AugmentConfig::off();
    TrainHistory hist = fit_classifier(cnn, tiles, labels, tc);

    fs::create_directories(out_dir);
    save_checkpoint(cnn, (fs::path(out_dir) / "model.fgs").string());
    std::ofstream hf(fs::path(out_dir) / "history.tsv");
    hf << "epoch\tloss\taccuracy\n";
    for (std::size_t i = 0; i < hist.loss.size(); ++i)
        hf << i << "\t" << hist.loss[i] << "\t"
           << (i < hist.accuracy.size() ? hist.accuracy[i] : 0.0f) << "\n";
    std::cout << "trained " << hist.loss.size() << " epochs ("
              << (hist.stop_reason == StopReason::EarlyStopped ? "early stop" : "completed")
              << "), checkpoint at " << out_dir << "/model.fgs\n";
    return 0;
}

int cmd_train_dae(const std::string& manifest_path, float sigma, int epochs, int batch,
                  std::uint64_t seed, const std::string& out_dir) {
    DatasetManifest m = load_manifest(manifest_path);
    std::vector<ImageTile> clean;
    std::vector<int> labels_unused;
    load_split_tiles(m, "train", clean, labels_unused);
    std::vector<ImageTile> noisy;
    Rng rng(seed);
    for (const auto& t : clean) noisy.push_back(add_noise(t, sigma, rng.next_u64()));

    Network dae = build_dae({clean[0].h, clean[0].w, clean[0].c}, seed);
    TrainConfig tc;
    tc.batch_size = batch;
    tc.max_epochs = epochs;
    tc.seed = seed;
    tc.augment = AugmentConfig::off();
    TrainHistory hist = fit_autoencoder(dae, noisy, clean, tc);

    fs::create_directories(out_dir);
    save_checkpoint(dae, (fs::path(out_dir) / "dae.fgs").string());
    std::cout << "trained " << hist.loss.size() << " epochs, final loss "
              << (hist.loss.empty() ? 0.0f : hist.loss.back()) << ", checkpoint at " << out_dir
              << "/dae.fgs\n";
    return 0;
}

int cmd_train_gan(const std::string& manifest_path, const std::string& cls, int steps, int latent,
                  int batch, std::uint64_t seed, const std::string& out_dir) {
    DatasetManifest m = load_manifest(manifest_path);
    std::vector<ImageTile> real;
    for (const auto& e : m.entries)
        if (e.class_name == cls && (e.split.empty() || e.split == "train"))
            real.push_back(load_png(e.path));
    if (real.empty()) throw ContractError("no tiles of class '" + cls + "' in manifest");
    for (std::size_t i = 0; real.size() < static_cast<std::size_t>(batch); ++i)
        real.push_back(real[i % real.size()]);

    GanPair gan = build_gan(latent, {real[0].h, real[0].w, real[0].c}, seed);
    TrainConfig tc;
    tc.batch_size = batch;
    tc.seed = seed;
    tc.augment = AugmentConfig::off();
    GanHistory hist = train_gan(gan, real, tc, steps);
    gan.generator.spec.class_name = cls;

    fs::create_directories(out_dir);
    save_checkpoint(gan.generator, (fs::path(out_dir) / "generator.fgs").string());
    save_checkpoint(gan.discriminator, (fs::path(out_dir) / "discriminator.fgs").string());
    std::cout << "trained " << hist.g_loss.size() << " generator steps, checkpoints at " << out_dir
              << "\n";
    return 0;
}

int cmd_denoise(const std::string& model_path, const std::vector<std::string>& inputs,
                const std::string& out_dir) {
    Network dae = load_checkpoint(model_path);
    if (dae.spec.arch != "dae") throw ContractError("--model must be a denoiser checkpoint");
    std::vector<ImageTile> noisy;
    for (const auto& p : inputs) noisy.push_back(load_png(p));
    auto recon = denoise(dae, noisy);
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < recon.size(); ++i) {
        std::string name = fs::path(inputs[i]).stem().string() + "_denoised.png";
        save_png(recon[i], (fs::path(out_dir) / name).string());
    }
    std::cout << "denoised " << recon.size() << " images into " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& manifest_path,
             const std::string& pred_path, const std::string& truth_path,
             const std::string& labelset, const std::string& out_dir) {
    EvalReport report;
    if (!pred_path.empty()) {
        // Label-file mode: one class name per line, paired by line number.
        if (truth_path.empty() || labelset.empty())
            throw ContractError("eval label-file mode needs --pred, --truth and --labelset");
        const LabelSet& ls = LabelSet::get(labelset);
        auto read_labels = [&](const std::string& path) {
            std::ifstream f(path);
            if (!f) throw IoError("cannot read label file: " + path);
            std::vector<int> out;
            std::string line;
            while (std::getline(f, line))
                if (!line.empty()) out.push_back(ls.index_of(line));
            return out;
        };
        report = make_report(read_labels(pred_path), read_labels(truth_path), labelset);
    } else {
        if (model_path.empty() || manifest_path.empty())
            throw ContractError("eval needs either --pred/--truth or --model/--manifest");
        Network cnn = load_checkpoint(model_path);
        DatasetManifest m = load_manifest(manifest_path);
        std::vector<ImageTile> tiles;
        std::vector<int> truth;
        load_split_tiles(m, "test", tiles, truth);
        auto preds = predict(cnn, tiles);
        std::vector<int> pred_labels;
        for (const auto& p : preds) pred_labels.push_back(p.label);
        report = make_report(pred_labels, truth, m.labelset_id);
    }
    std::cout << report.to_table();
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream jf(fs::path(out_dir) / "report.json");
        jf << report.to_json() << "\n";
    }
    return 0;
}

int cmd_predict(const std::string& model_path, const std::vector<std::string>& inputs) {
    Network cnn = load_checkpoint(model_path);
    const LabelSet& ls = LabelSet::get(cnn.spec.labelset_id);
    std::vector<ImageTile> tiles;
    for (const auto& p : inputs) tiles.push_back(load_png(p));
    auto preds = predict(cnn, tiles);
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < preds.size(); ++i) {
        nlohmann::ordered_json e;
        e["path"] = inputs[i];
        e["class"] = ls.names[static_cast<std::size_t>(preds[i].label)];
        e["probabilities"] = preds[i].probabilities;
        j.push_back(std::move(e));
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_serve(const ServiceConfig& cfg) {
    InferenceService service(cfg);
    std::cerr << "serving model " << service.model_id() << " on " << cfg.bind << ":" << cfg.port
              << "\n";
    return service.run() ? 0 : 1;
}

int cmd_experiment(const std::string& protocol_path, const std::string& out_dir) {
    ExperimentProtocol protocol = load_protocol(protocol_path);
    ExperimentReport report = run_experiment(protocol, out_dir);
    std::cout << report.to_table();
    fs::create_directories(out_dir);
    std::ofstream jf(fs::path(out_dir) / "report.json");
    jf << report.to_json() << "\n";
    std::ofstream tf(fs::path(out_dir) / "report.txt");
    tf << report.to_table();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"forgesight: layer-image defect-detection pipeline"};
    app.require_subcommand(1);

    std::uint64_t seed = 1;
    std::string out_dir;
    std::string manifest_path, config_path, model_path, dae_path;
    std::string image, boxes, cls, labelset = "hr1", filters_csv = "16,32,64";
    std::string strategy, protocol_path, pred_path, truth_path;
    std::vector<std::string> inputs, target_specs;
    int epochs = 10, batch = 32, gan_steps = 200, gan_latent = 100;
    float dropout = 0.5f, sigma = 0.3f;
    bool augment_on = false, stratified = true;
    ServiceConfig scfg;

    auto* c_surrogate = app.add_subcommand("surrogate", "generate a procedural tile corpus");
    c_surrogate->add_option("--config", config_path, "surrogate config file")->required();
    c_surrogate->add_option("--out", out_dir, "output directory")->required();

    auto* c_tile = app.add_subcommand("tile", "crop a layer image into tiles");
    c_tile->add_option("--image", image)->required();
    c_tile->add_option("--boxes", boxes, "text file of x y w h crop boxes")->required();
    c_tile->add_option("--class", cls, "class label for every tile")->required();
    c_tile->add_option("--labelset", labelset);
    c_tile->add_option("--out", out_dir)->required();

    auto* c_stats = app.add_subcommand("stats", "per-class manifest counts");
    c_stats->add_option("--manifest", manifest_path)->required();

    auto* c_split = app.add_subcommand("split", "3:1 train/test split");
    c_split->add_option("--manifest", manifest_path)->required();
    c_split->add_option("--seed", seed);
    c_split->add_flag("--stratified,!--no-stratified", stratified, "per-class proportional split");
    c_split->add_option("--out", out_dir)->required();

    auto* c_balance = app.add_subcommand("balance", "raise minority classes to target counts");
    c_balance->add_option("--manifest", manifest_path)->required();
    c_balance->add_option("--strategy", strategy, "cds|rds|sam|gan")->required();
    c_balance->add_option("--target", target_specs, "class=count (repeatable)")->required();
    c_balance->add_option("--seed", seed);
    c_balance->add_option("--gan-steps", gan_steps);
    c_balance->add_option("--gan-latent", gan_latent);
    c_balance->add_option("--out", out_dir)->required();

    auto* c_cnn = app.add_subcommand("train-cnn", "train the defect classifier");
    c_cnn->add_option("--manifest", manifest_path)->required();
    c_cnn->add_option("--max-epochs", epochs);
    c_cnn->add_option("--batch", batch);
    c_cnn->add_option("--seed", seed);
    c_cnn->add_option("--filters", filters_csv, "three conv widths, e.g. 16,32,64");
    c_cnn->add_option("--dropout", dropout);
    c_cnn->add_flag("--augment", augment_on, "rotation/zoom/shift augmentation");
    c_cnn->add_option("--out", out_dir)->required();

    auto* c_dae = app.add_subcommand("train-dae", "train the denoising autoencoder");
    c_dae->add_option("--manifest", manifest_path)->required();
    c_dae->add_option("--sigma", sigma, "noise sigma applied to training inputs");
    c_dae->add_option("--max-epochs", epochs);
    c_dae->add_option("--batch", batch);
    c_dae->add_option("--seed", seed);
    c_dae->add_option("--out", out_dir)->required();

    auto* c_gan = app.add_subcommand("train-gan", "train a per-class generator");
    c_gan->add_option("--manifest", manifest_path)->required();
    c_gan->add_option("--class", cls)->required();
    c_gan->add_option("--steps", gan_steps);
    c_gan->add_option("--latent", gan_latent);
    c_gan->add_option("--batch", batch);
    c_gan->add_option("--seed", seed);
    c_gan->add_option("--out", out_dir)->required();

    auto* c_denoise = app.add_subcommand("denoise", "run images through a denoiser checkpoint");
    c_denoise->add_option("--model", model_path)->required();
    c_denoise->add_option("--input", inputs, "PNG paths")->required();
    c_denoise->add_option("--out", out_dir)->required();

    auto* c_eval = app.add_subcommand("eval", "score predictions against ground truth");
    c_eval->add_option("--model", model_path);
    c_eval->add_option("--manifest", manifest_path);
    c_eval->add_option("--pred", pred_path, "predicted class names, one per line");
    c_eval->add_option("--truth", truth_path, "true class names, one per line");
    c_eval->add_option("--labelset", labelset);
    c_eval->add_option("--out", out_dir);

    auto* c_predict = app.add_subcommand("predict", "classify PNG files");
    c_predict->add_option("--model", model_path)->required();
    c_predict->add_option("--input", inputs, "PNG paths")->required();

    auto* c_serve = app.add_subcommand("serve", "HTTP batch-prediction service");
    c_serve->add_option("--model", scfg.model_path)->required();
    c_serve->add_option("--dae", scfg.dae_path);
    c_serve->add_option("--bind", scfg.bind);
    c_serve->add_option("--port", scfg.port);
    c_serve->add_option("--max-batch", scfg.max_batch);

    auto* c_exp = app.add_subcommand("experiment", "repeated split/balance/train/eval protocol");
    c_exp->add_option("--protocol", protocol_path)->required();
    c_exp->add_option("--out", out_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // help/version exit 0, bad flags exit 2
    }

    try {
        if (!out_dir.empty()) write_run_meta(out_dir, argc, argv, seed);
        if (c_surrogate->parsed()) return cmd_surrogate(config_path, out_dir);
        if (c_tile->parsed()) return cmd_tile(image, boxes, cls, labelset, out_dir);
        if (c_stats->parsed()) return cmd_stats(manifest_path);
        if (c_split->parsed()) return cmd_split(manifest_path, seed, stratified, out_dir);
        if (c_balance->parsed())
            return cmd_balance(manifest_path, strategy, target_specs, seed, gan_steps, gan_latent,
                               out_dir);
        if (c_cnn->parsed())
            return cmd_train_cnn(manifest_path, epochs, batch, seed, filters_csv, dropout,
                                 augment_on, out_dir);
        if (c_dae->parsed()) return cmd_train_dae(manifest_path, sigma, epochs, batch, seed, out_dir);
        if (c_gan->parsed())
            return cmd_train_gan(manifest_path, cls, gan_steps, gan_latent, batch, seed, out_dir);
        if (c_denoise->parsed()) return cmd_denoise(model_path, inputs, out_dir);
        if (c_eval->parsed())
            return cmd_eval(model_path, manifest_path, pred_path, truth_path, labelset, out_dir);
        if (c_predict->parsed()) return cmd_predict(model_path, inputs);
        if (c_serve->parsed()) return cmd_serve(scfg);
        if (c_exp->parsed()) return cmd_experiment(protocol_path, out_dir);
    } catch (const ProtocolError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
