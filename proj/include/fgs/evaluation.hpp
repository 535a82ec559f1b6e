#pragma once

#include <string>
#include <vector>

#include "fgs/dataset.hpp"

namespace fgs {

// K x K counts; rows are true classes, columns predictions.
struct ConfusionMatrix {
    int k = 0;
    std::vector<std::size_t> counts;
    std::string labelset_id;

    std::size_t& at(int truth, int pred) {
        return counts[static_cast<std::size_t>(truth) * k + pred];
    }
    std::size_t at(int truth, int pred) const {
        return counts[static_cast<std::size_t>(truth) * k + pred];
    }
    std::size_t total() const;
    std::size_t trace() const;
    std::vector<std::size_t> row_sums() const;
};

struct SsimReport {
    std::vector<double> per_pair;
    double mean = 0.0;
};

struct EvalReport {
    double accuracy = 0.0;
    ConfusionMatrix confusion;
    std::vector<double> per_class_recall;
    std::vector<double> per_class_precision;
    SsimReport ssim;  // empty unless a reconstruction pass ran

    std::string to_json() const;
    std::string to_table() const;
};

float accuracy(const std::vector<int>& preds, const std::vector<int>& truth);
ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& truth, int k);

// SSIM with an 8x8 uniform sliding window (stride 1), K1=0.01, K2=0.03, L=1,
// averaged over windows and channels. Images smaller than the window fall
// back to a single global window.
double ssim(const ImageTile& a, const ImageTile& b);

SsimReport ssim_report(const std::vector<ImageTile>& as, const std::vector<ImageTile>& bs);
EvalReport make_report(const std::vector<int>& preds, const std::vector<int>& truth,
                       const std::string& labelset_id);

}  // namespace fgs
