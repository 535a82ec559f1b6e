#include "fgs/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace fgs {

std::size_t ConfusionMatrix::total() const {
    std::size_t t = 0;
    for (auto v : counts) t += v;
    return t;
}

std::size_t ConfusionMatrix::trace() const {
    std::size_t t = 0;
    for (int i = 0; i < k; ++i) t += at(i, i);
    return t;
}

std::vector<std::size_t> ConfusionMatrix::row_sums() const {
    std::vector<std::size_t> sums(static_cast<std::size_t>(k), 0);
    for (int t = 0; t < k; ++t)
        for (int p = 0; p < k; ++p) sums[static_cast<std::size_t>(t)] += at(t, p);
    return sums;
}

float accuracy(const std::vector<int>& preds, const std::vector<int>& truth) {
    if (preds.size() != truth.size() || preds.empty())
        throw ContractError("accuracy needs equal-length non-empty label arrays");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == truth[i]) ++correct;
    return static_cast<float>(static_cast<double>(correct) / static_cast<double>(preds.size()));
}

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& truth, int k) {
    if (preds.size() != truth.size())
        throw ContractError("confusion needs equal-length label arrays");
    ConfusionMatrix m;
    m.k = k;
    m.counts.assign(static_cast<std::size_t>(k) * k, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= k || preds[i] < 0 || preds[i] >= k)
            throw ContractError("confusion label out of range at index " + std::to_string(i));
        m.at(truth[i], preds[i])++;
    }
    return m;
}

namespace {

constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2, L=1
constexpr double kC2 = 0.03 * 0.03;  // (K2*L)^2

double ssim_window(const ImageTile& a, const ImageTile& b, int r0, int c0, int win, int ch) {
    const double n = static_cast<double>(win) * win;
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (int r = r0; r < r0 + win; ++r)
        for (int c = c0; c < c0 + win; ++c) {
            double x = a.at(r, c, ch);
            double y = b.at(r, c, ch);
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
    double mx = sx / n, my = sy / n;
    double vx = sxx / n - mx * mx;
    double vy = syy / n - my * my;
    double cov = sxy / n - mx * my;
    return ((2.0 * mx * my + kC1) * (2.0 * cov + kC2)) /
           ((mx * mx + my * my + kC1) * (vx + vy + kC2));
}

}  // namespace

double ssim(const ImageTile& a, const ImageTile& b) {
    if (a.h != b.h || a.w != b.w || a.c != b.c)
        throw DimensionError("ssim shape mismatch");
    const int win = std::min({8, a.h, a.w});
    double acc = 0.0;
    std::size_t windows = 0;
    for (int ch = 0; ch < a.c; ++ch)
        for (int r = 0; r + win <= a.h; ++r)
            for (int c = 0; c + win <= a.w; ++c) {
                acc += ssim_window(a, b, r, c, win, ch);
                ++windows;
            }
    return acc / static_cast<double>(windows);
}

SsimReport ssim_report(const std::vector<ImageTile>& as, const std::vector<ImageTile>& bs) {
    if (as.size() != bs.size()) throw ContractError("ssim_report pair count mismatch");
    SsimReport rep;
    double acc = 0.0;
    for (std::size_t i = 0; i < as.size(); ++i) {
        double s = ssim(as[i], bs[i]);
        rep.per_pair.push_back(s);
        acc += s;
    }
    if (!rep.per_pair.empty()) rep.mean = acc / static_cast<double>(rep.per_pair.size());
    return rep;
}

EvalReport make_report(const std::vector<int>& preds, const std::vector<int>& truth,
                       const std::string& labelset_id) {
    const LabelSet& ls = LabelSet::get(labelset_id);
    EvalReport rep;
    rep.accuracy = accuracy(preds, truth);
    rep.confusion = confusion(preds, truth, static_cast<int>(ls.names.size()));
    rep.confusion.labelset_id = labelset_id;
    const int k = rep.confusion.k;
    for (int i = 0; i < k; ++i) {
        std::size_t row = 0, col = 0;
        for (int j = 0; j < k; ++j) {
            row += rep.confusion.at(i, j);
            col += rep.confusion.at(j, i);
        }
        rep.per_class_recall.push_back(row ? static_cast<double>(rep.confusion.at(i, i)) / static_cast<double>(row) : 0.0);
        rep.per_class_precision.push_back(col ? static_cast<double>(rep.confusion.at(i, i)) / static_cast<double>(col) : 0.0);
    }
    return rep;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["accuracy"] = accuracy;
    j["accuracy_percent"] = std::round(accuracy * 1000.0) / 10.0;
    j["labelset"] = confusion.labelset_id;
    j["ssim_variant"] = "uniform 8x8 sliding window, stride 1, per-channel mean, K1=0.01 K2=0.03 L=1";
    std::vector<std::vector<std::size_t>> rows;
    for (int t = 0; t < confusion.k; ++t) {
        std::vector<std::size_t> row;
        for (int p = 0; p < confusion.k; ++p) row.push_back(confusion.at(t, p));
        rows.push_back(std::move(row));
    }
    j["confusion"] = rows;
    j["per_class_recall"] = per_class_recall;
    j["per_class_precision"] = per_class_precision;
    if (!ssim.per_pair.empty()) {
        j["ssim_mean"] = ssim.mean;
        j["ssim_min"] = *std::min_element(ssim.per_pair.begin(), ssim.per_pair.end());
        j["ssim_max"] = *std::max_element(ssim.per_pair.begin(), ssim.per_pair.end());
        j["ssim_pairs"] = ssim.per_pair.size();
    }
    return j.dump(2);
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    os << "Testing Accuracy (%): " << accuracy * 100.0 << "\n";
    if (!ssim.per_pair.empty())
        os << "Testing SSIM: " << std::setprecision(3) << ssim.mean << "\n";
    if (confusion.k > 0) {
        const auto& names = LabelSet::get(confusion.labelset_id).names;
        os << "Confusion matrix (rows = true class, cols = predicted):\n";
        for (int t = 0; t < confusion.k; ++t) {
            os << "  " << std::setw(22) << std::left << names[static_cast<std::size_t>(t)] << std::right;
            for (int p = 0; p < confusion.k; ++p) os << std::setw(8) << confusion.at(t, p);
            os << "\n";
        }
    }
    return os.str();
}

}  // namespace fgs
