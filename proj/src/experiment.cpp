#include "fgs/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "fgs/evaluation.hpp"
#include "fgs/rng.hpp"
#include "fgs/synthdata.hpp"

namespace fs = std::filesystem;

namespace fgs {

namespace {

const std::vector<std::string> kKnownStrategies = {"original", "cds", "rds", "sam", "gan"};

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace

void ExperimentProtocol::validate() const {
    if (dataset.empty()) throw ProtocolError("protocol missing 'dataset'");
    if (strategies.empty()) throw ProtocolError("protocol lists no strategies");
    for (const auto& s : strategies)
        if (std::find(kKnownStrategies.begin(), kKnownStrategies.end(), s) == kKnownStrategies.end())
            throw ProtocolError("unknown strategy '" + s + "' (expected original|cds|rds|sam|gan)");
    if (repetitions < 1) throw ProtocolError("repetitions must be >= 1");
    if (max_epochs < 0) throw ProtocolError("max_epochs must be >= 0");
    if (batch_size < 1) throw ProtocolError("batch_size must be >= 1");
    if (filters.size() != 3) throw ProtocolError("filters must list three conv widths");
    if (gan_steps < 0 || gan_latent < 1 || gan_batch < 1)
        throw ProtocolError("gan_steps/gan_latent/gan_batch out of range");
}

ExperimentProtocol load_protocol(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read protocol file: " + path);
    ExperimentProtocol p;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ProtocolError("protocol line " + std::to_string(lineno) + " is not key=value: " + line);
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        try {
            if (key == "dataset") p.dataset = val;
            else if (key == "strategies") p.strategies = split_csv(val);
            else if (key == "repetitions") p.repetitions = std::stoi(val);
            else if (key == "seed") p.seed = std::stoull(val);
            else if (key == "max_epochs") p.max_epochs = std::stoi(val);
            else if (key == "batch_size") p.batch_size = std::stoi(val);
            else if (key == "filters") {
                p.filters.clear();
                for (const auto& t : split_csv(val)) p.filters.push_back(std::stoi(t));
            } else if (key == "dropout") p.dropout = std::stof(val);
            else if (key == "augment") p.augment = (val == "1" || val == "true");
            else if (key == "balance_target") p.balance_target = std::stoul(val);
            else if (key == "gan_steps") p.gan_steps = std::stoi(val);
            else if (key == "gan_latent") p.gan_latent = std::stoi(val);
            else if (key == "gan_batch") p.gan_batch = std::stoi(val);
            else throw ProtocolError("unknown protocol key '" + key + "'");
        } catch (const ProtocolError&) {
            throw;
        } catch (const std::exception&) {
            throw ProtocolError("bad value for protocol key '" + key + "': " + val);
        }
    }
    p.validate();
    return p;
}

namespace {

struct Corpus {
    DatasetManifest manifest;
    const LabelSet* labelset = nullptr;
    std::map<std::string, ImageTile> tiles;                   // by path
    std::map<std::string, std::vector<DefectMask>> masks;     // by class
};

Corpus load_corpus(const ExperimentProtocol& p) {
    Corpus c;
    c.manifest = load_manifest(p.dataset);
    c.labelset = &LabelSet::get(c.manifest.labelset_id);
    bool needs_masks = false;
    for (const auto& s : p.strategies)
        if (s == "cds" || s == "rds") needs_masks = true;
    for (const auto& e : c.manifest.entries) {
        if (!fs::exists(e.path)) throw IoError("dataset tile missing: " + e.path);
        ImageTile t = load_png(e.path);
        t.label = e.class_name;
        c.tiles.emplace(e.path, std::move(t));
        if (needs_masks && e.class_name != c.labelset->names[0]) {
            std::string mp = e.path + ".mask";
            if (fs::exists(mp)) c.masks[e.class_name].push_back(load_mask(mp));
        }
    }
    if (needs_masks) {
        for (const auto& name : c.labelset->names) {
            if (name == c.labelset->names[0]) continue;
            bool present = std::any_of(c.manifest.entries.begin(), c.manifest.entries.end(),
                                       [&](const ManifestEntry& e) { return e.class_name == name; });
            if (present && c.masks[name].empty())
                throw IoError("cds/rds requested but no .mask files found for class " + name);
        }
    }
    return c;
}

// One split/balance/train/eval pass.
RunResult run_once(const ExperimentProtocol& p, const Corpus& corpus, const std::string& strategy,
                   int rep, const std::string& out_dir) {
    std::uint64_t seed = p.seed + static_cast<std::uint64_t>(rep);
    const LabelSet& ls = *corpus.labelset;

    DatasetManifest m = corpus.manifest;
    split(m, seed, /*stratified=*/true);

    // Training manifest starts as the train split; balancing appends to it.
    DatasetManifest train_m;
    train_m.labelset_id = m.labelset_id;
    train_m.seed = seed;
    train_m.entries = entries_for_split(m, "train");
    auto test_entries = entries_for_split(m, "test");

    std::map<std::string, ImageTile> extra_tiles;  // synthetic, by path
    if (strategy != "original") {
        std::map<std::string, std::size_t> counts;
        for (const auto& e : train_m.entries) counts[e.class_name]++;
        std::size_t majority = 0;
        for (const auto& [name, n] : counts) majority = std::max(majority, n);
        std::size_t target = p.balance_target ? p.balance_target : majority;
        std::map<std::string, std::size_t> targets;
        for (const auto& name : ls.names)
            if (counts.count(name) && counts[name] < target) targets[name] = target;

        BalanceResources res;
        res.masks = corpus.masks;
        for (const auto& e : train_m.entries)
            if (e.class_name == ls.names[0]) res.clean_pool.push_back(corpus.tiles.at(e.path));
        if (strategy == "gan") {
            // Train one small generator per requested class on its real tiles.
            auto trained = std::make_shared<std::map<std::string, Network>>();
            const ImageTile& probe = corpus.tiles.begin()->second;
            Shape img_shape = {probe.h, probe.w, probe.c};
            std::vector<ManifestEntry> train_entries = train_m.entries;
            res.generate = [trained, img_shape, train_entries, &corpus, &p](
                               const std::string& cls, std::size_t n, std::uint64_t gseed) {
                if (!trained->count(cls)) {
                    std::vector<ImageTile> real;
                    for (const auto& e : train_entries)
                        if (e.class_name == cls) real.push_back(corpus.tiles.at(e.path));
                    if (real.empty())
                        throw ContractError("gan balance: no real tiles for class " + cls);
                    // Pad tiny classes so a batch can always be drawn.
                    for (std::size_t i = 0; real.size() < static_cast<std::size_t>(p.gan_batch); ++i)
                        real.push_back(real[i % real.size()]);
                    GanPair gan = build_gan(p.gan_latent, img_shape, gseed);
                    TrainConfig tc;
                    tc.batch_size = p.gan_batch;
                    tc.max_epochs = 1;
                    tc.seed = gseed;
                    tc.augment = AugmentConfig::off();
                    train_gan(gan, real, tc, p.gan_steps);
                    gan.generator.spec.class_name = cls;
                    trained->emplace(cls, std::move(gan.generator));
                }
                return gan_sample(trained->at(cls), n, gseed);
            };
        }
        std::string synth_dir = out_dir + "/rep" + std::to_string(rep) + "/" + strategy;
        balance(train_m, parse_strategy(strategy), targets, seed, res, synth_dir);
        for (const auto& e : train_m.entries)
            if (!corpus.tiles.count(e.path)) {
                ImageTile t = load_png(e.path);
                t.label = e.class_name;
                extra_tiles.emplace(e.path, std::move(t));
            }
    }

    std::vector<ImageTile> train_tiles;
    std::vector<int> train_labels;
    for (const auto& e : train_m.entries) {
        auto it = corpus.tiles.find(e.path);
        train_tiles.push_back(it != corpus.tiles.end() ? it->second : extra_tiles.at(e.path));
        train_labels.push_back(ls.index_of(e.class_name));
    }

    CnnOptions opts;
    opts.filters = p.filters;
    opts.dropout_rate = p.dropout;
    const ImageTile& probe = train_tiles.front();
    Network cnn = build_cnn({probe.h, probe.w, probe.c}, static_cast<int>(ls.names.size()),
                            ls.id, seed, opts);

    TrainConfig tc;
    tc.batch_size = p.batch_size;
    tc.max_epochs = p.max_epochs;
    tc.seed = seed;
    if (!p.augment) tc.augment = AugmentConfig::off();
    TrainHistory hist = fit_classifier(cnn, train_tiles, train_labels, tc);

    std::vector<ImageTile> test_tiles;
    std::vector<int> truth;
    for (const auto& e : test_entries) {
        test_tiles.push_back(corpus.tiles.at(e.path));
        truth.push_back(ls.index_of(e.class_name));
    }
    auto preds = predict(cnn, test_tiles);
    std::vector<int> pred_labels;
    for (const auto& pr : preds) pred_labels.push_back(pr.label);
    EvalReport rep_eval = make_report(pred_labels, truth, ls.id);

    RunResult r;
    r.strategy = strategy;
    r.repetition = rep;
    r.seed = seed;
    r.accuracy = rep_eval.accuracy;
    r.per_class_recall = rep_eval.per_class_recall;
    r.epochs_ran = static_cast<int>(hist.loss.size());
    return r;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentProtocol& protocol, const std::string& out_dir) {
    protocol.validate();
    Corpus corpus = load_corpus(protocol);  // fails before any run starts
    fs::create_directories(out_dir);

    ExperimentReport report;
    report.labelset_id = corpus.manifest.labelset_id;
    for (const auto& strategy : protocol.strategies) {
        std::vector<double> accs;
        std::vector<double> minority_recalls;
        for (int rep = 0; rep < protocol.repetitions; ++rep) {
            RunResult r = run_once(protocol, corpus, strategy, rep, out_dir);
            accs.push_back(r.accuracy);
            double acc_rec = 0.0;
            int n_min = 0;
            for (std::size_t i = 1; i < r.per_class_recall.size(); ++i) {
                acc_rec += r.per_class_recall[i];
                ++n_min;
            }
            if (n_min) minority_recalls.push_back(acc_rec / n_min);
            report.runs.push_back(std::move(r));
        }
        StrategySummary s;
        s.strategy = strategy;
        s.mean_accuracy = mean_of(accs);
        s.std_accuracy = std_of(accs);
        s.mean_minority_recall = mean_of(minority_recalls);
        report.summary.push_back(std::move(s));
    }
    return report;
}

std::string ExperimentReport::to_table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    os << "Strategy     Testing Accuracy (%)   Minority Recall (%)\n";
    for (const auto& s : summary) {
        os << std::setw(10) << std::left << s.strategy << std::right << std::setw(10)
           << s.mean_accuracy * 100.0 << " +/- " << s.std_accuracy * 100.0 << std::setw(14)
           << s.mean_minority_recall * 100.0 << "\n";
    }
    return os.str();
}

std::string ExperimentReport::to_json() const {
    nlohmann::ordered_json j;
    j["labelset"] = labelset_id;
    nlohmann::ordered_json runs_j = nlohmann::ordered_json::array();
    for (const auto& r : runs) {
        nlohmann::ordered_json e;
        e["strategy"] = r.strategy;
        e["repetition"] = r.repetition;
        e["seed"] = r.seed;
        e["accuracy"] = r.accuracy;
        e["accuracy_percent"] = std::round(r.accuracy * 1000.0) / 10.0;
        e["per_class_recall"] = r.per_class_recall;
        e["epochs_ran"] = r.epochs_ran;
        runs_j.push_back(std::move(e));
    }
    j["runs"] = std::move(runs_j);
    nlohmann::ordered_json sum_j = nlohmann::ordered_json::array();
    for (const auto& s : summary) {
        nlohmann::ordered_json e;
        e["strategy"] = s.strategy;
        e["mean_accuracy"] = s.mean_accuracy;
        e["std_accuracy"] = s.std_accuracy;
        e["mean_minority_recall"] = s.mean_minority_recall;
        sum_j.push_back(std::move(e));
    }
    j["summary"] = std::move(sum_j);
    return j.dump(2);
}

}  // namespace fgs
